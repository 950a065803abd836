#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flsim/ledger.hpp"
#include "flsim/ledger_io.hpp"

using namespace flsim;

namespace {

Chain make_chain(std::size_t blocks) {
    Chain chain;
    chain.genesis_model_digest = model_digest_of(std::vector<double>{0.5, -1.25});
    for (std::size_t i = 0; i < blocks; ++i) {
        const Decision d = i % 3 == 2 ? Decision::reject : Decision::accept;
        std::vector<std::pair<std::uint32_t, std::int8_t>> votes = {
            {1, std::int8_t{1}}, {2, static_cast<std::int8_t>(i % 2 == 0 ? 1 : -1)}};
        std::vector<std::pair<std::uint32_t, double>> deltas = {
            {1, 8.0 + static_cast<double>(i)}, {2, -8.0 - static_cast<double>(i)}};
        append_block(chain, d, model_digest_of(std::vector<double>{double(i)}),
                     std::move(votes), std::move(deltas), 4.0 * double(i % 2), 0.0);
    }
    return chain;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("genesis convention: first block links to all-zero prev hash") {
    Chain chain;
    const auto& b = append_block(chain, Decision::accept, Digest{}, {}, {}, 0.0, 0.0);
    CHECK(b.index == 0);
    CHECK(b.prev_hash == Digest{});
    CHECK(verify_chain(chain).valid);
}

TEST_CASE("append links to the previous head") {
    Chain chain = make_chain(3);
    const auto& b =
        append_block(chain, Decision::accept, Digest{}, {}, {{7, 0.0}}, 0.0, 0.0);
    CHECK(b.index == 3);
    CHECK(b.prev_hash == chain.blocks[2].hash);
    CHECK(verify_chain(chain).valid);
}

TEST_CASE("token deltas that cancel sum to zero in the recorded block") {
    Chain chain;
    append_block(chain, Decision::accept, Digest{},
                 {{1, std::int8_t{1}}, {2, std::int8_t{1}}}, {{1, 8.0}, {2, -8.0}}, 0.0, 0.0);
    double sum = 0;
    for (const auto& [id, d] : chain.blocks[0].token_deltas) sum += d;
    CHECK(sum == 0.0);
}

TEST_CASE("verify: untampered chain is valid, empty chain vacuously valid") {
    CHECK(verify_chain(Chain{}).valid);
    Chain chain = make_chain(10);
    const auto check = verify_chain(chain);
    CHECK(check.valid);
    CHECK(!check.first_bad_index);
}

TEST_CASE("verify: tampering with a recorded field is pinned to that block") {
    Chain chain = make_chain(10);

    SUBCASE("token delta bit flip") {
        chain.blocks[4].token_deltas[0].second += 1e-9;
        const auto check = verify_chain(chain);
        CHECK(!check.valid);
        CHECK(check.first_bad_index == 4);
    }
    SUBCASE("vote flip") {
        chain.blocks[7].vote_summary[1].second = -chain.blocks[7].vote_summary[1].second;
        CHECK(verify_chain(chain).first_bad_index == 7);
    }
    SUBCASE("decision flip") {
        chain.blocks[0].decision = Decision::reject;
        CHECK(verify_chain(chain).first_bad_index == 0);
    }
    SUBCASE("pool snapshot nudge") {
        chain.blocks[9].pool_p += 1e-12;
        CHECK(verify_chain(chain).first_bad_index == 9);
    }
    SUBCASE("model digest byte flip") {
        chain.blocks[5].model_digest[31] ^= 0x01;
        CHECK(verify_chain(chain).first_bad_index == 5);
    }
    SUBCASE("every single-byte flip of a block's canonical bytes changes its hash") {
        const auto bytes = canonical_block_bytes(chain.blocks[3]);
        const auto original = chain.blocks[3].hash;
        for (std::size_t i = 0; i < bytes.size(); ++i) {
            auto copy = bytes;
            copy[i] ^= 0x01;
            CHECK(Sha256::digest(copy) != original);
        }
    }
}

TEST_CASE("canonical serialization is deterministic and vote-sensitive") {
    Chain a = make_chain(2), b = make_chain(2);
    CHECK(canonical_block_bytes(a.blocks[1]) == canonical_block_bytes(b.blocks[1]));
    CHECK(a.blocks[1].hash == b.blocks[1].hash);
    b.blocks[1].vote_summary[0].second = -1;
    CHECK(block_hash(a.blocks[1]) != block_hash(b.blocks[1]));
}

TEST_CASE("chain file round-trip preserves every block") {
    const Chain chain = make_chain(6);
    const auto path = temp_file("flsim_test_chain.jsonl");
    write_chain(chain, path.string());

    const auto loaded = load_chain(path.string());
    REQUIRE(loaded.ok);
    CHECK(loaded.chain.genesis_model_digest == chain.genesis_model_digest);
    REQUIRE(loaded.chain.blocks.size() == chain.blocks.size());
    for (std::size_t i = 0; i < chain.blocks.size(); ++i) {
        CHECK(loaded.chain.blocks[i].hash == chain.blocks[i].hash);
        CHECK(loaded.chain.blocks[i].token_deltas == chain.blocks[i].token_deltas);
        CHECK(loaded.chain.blocks[i].pool_p == chain.blocks[i].pool_p);
    }
    CHECK(verify_chain_file(path.string()).valid);

    // re-export is byte-identical
    CHECK(chain_to_text(loaded.chain) == chain_to_text(chain));
    std::filesystem::remove(path);
}

TEST_CASE("file verification reports the corrupted block") {
    const Chain chain = make_chain(5);
    const auto path = temp_file("flsim_test_chain_corrupt.jsonl");
    const std::string text = chain_to_text(chain);

    // find the line for block 2 and flip a byte inside its hash field
    std::size_t line_start = 0;
    for (int skip = 0; skip < 3; ++skip) line_start = text.find('\n', line_start) + 1;
    const std::size_t hash_pos = text.find("\"hash\":\"", line_start) + 8;
    std::string corrupted = text;
    corrupted[hash_pos] = corrupted[hash_pos] == 'a' ? 'b' : 'a';

    std::ofstream(path, std::ios::binary) << corrupted;
    const auto res = verify_chain_file(path.string());
    CHECK(!res.valid);
    CHECK(res.first_bad_index == 2);
    std::filesystem::remove(path);
}
