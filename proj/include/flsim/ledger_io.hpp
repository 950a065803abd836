#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "flsim/errors.hpp"
#include "flsim/ledger.hpp"

namespace flsim {

/// Chain file format: newline-delimited JSON. Line 1 is a header object, each
/// following line is one block; digests are lowercase hex.
inline constexpr const char* kChainFormat = "flsim-chain-v1";

inline std::string chain_to_text(const Chain& chain) {
    using nlohmann::json;
    std::string out;
    json header;
    header["format"] = kChainFormat;
    header["genesis_model_digest"] = to_hex(chain.genesis_model_digest);
    out += header.dump();
    out += '\n';
    for (const Block& b : chain.blocks) {
        json j;
        j["index"] = b.index;
        j["prev_hash"] = to_hex(b.prev_hash);
        j["hash"] = to_hex(b.hash);
        j["decision"] = b.decision == Decision::accept ? "accept" : "reject";
        j["model_digest"] = to_hex(b.model_digest);
        json votes = json::array();
        for (const auto& [id, v] : b.vote_summary) votes.push_back({id, v});
        j["votes"] = std::move(votes);
        json deltas = json::array();
        for (const auto& [id, d] : b.token_deltas) deltas.push_back({id, d});
        j["token_deltas"] = std::move(deltas);
        j["pool_p"] = b.pool_p;
        j["pool_v"] = b.pool_v;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline void write_chain(const Chain& chain, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_chain: cannot open " + path);
    out << chain_to_text(chain);
    if (!out) throw IoError("write_chain: write failed for " + path);
}

struct ChainLoad {
    Chain chain;
    bool ok = true;
    // On parse failure: the chain holds every block before the bad line, and
    // bad_block_index names the block the unparseable line would have been.
    std::optional<std::uint64_t> bad_block_index;
    std::string error;
};

inline ChainLoad load_chain(const std::string& path) {
    using nlohmann::json;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_chain: cannot open " + path);

    ChainLoad out;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& why) {
        out.ok = false;
        out.bad_block_index = line_no >= 2 ? std::optional<std::uint64_t>{line_no - 2}
                                           : std::optional<std::uint64_t>{0};
        out.error = "line " + std::to_string(line_no) + ": " + why;
        return out;
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            return fail(e.what());
        }
        try {
            if (line_no == 1) {
                if (j.at("format").get<std::string>() != kChainFormat)
                    return fail("unknown chain format");
                out.chain.genesis_model_digest =
                    digest_from_hex(j.at("genesis_model_digest").get<std::string>());
                if (j.size() != 2) return fail("unexpected header field");
                continue;
            }
            if (j.size() != 9) return fail("unexpected block field count");
            Block b;
            b.index = j.at("index").get<std::uint64_t>();
            b.prev_hash = digest_from_hex(j.at("prev_hash").get<std::string>());
            b.hash = digest_from_hex(j.at("hash").get<std::string>());
            const std::string dec = j.at("decision").get<std::string>();
            if (dec == "accept") b.decision = Decision::accept;
            else if (dec == "reject") b.decision = Decision::reject;
            else return fail("bad decision value");
            b.model_digest = digest_from_hex(j.at("model_digest").get<std::string>());
            for (const auto& v : j.at("votes")) {
                if (!v.is_array() || v.size() != 2) return fail("bad vote entry");
                const int vote = v[1].get<int>();
                if (vote != 1 && vote != -1) return fail("bad vote value");
                b.vote_summary.emplace_back(v[0].get<std::uint32_t>(),
                                            static_cast<std::int8_t>(vote));
            }
            for (const auto& d : j.at("token_deltas")) {
                if (!d.is_array() || d.size() != 2) return fail("bad token delta entry");
                b.token_deltas.emplace_back(d[0].get<std::uint32_t>(), d[1].get<double>());
            }
            b.pool_p = j.at("pool_p").get<double>();
            b.pool_v = j.at("pool_v").get<double>();
            out.chain.blocks.push_back(std::move(b));
        } catch (const std::exception& e) {
            return fail(e.what());
        }
    }
    if (line_no == 0) {
        out.ok = false;
        out.error = "empty chain file";
    }
    return out;
}

struct FileVerifyResult {
    bool valid = false;
    std::optional<std::uint64_t> first_bad_index;
    std::string detail;
};

/// Loads an exported chain and verifies it; reports the lowest bad block.
inline FileVerifyResult verify_chain_file(const std::string& path) {
    const ChainLoad loaded = load_chain(path);
    if (!loaded.ok) return {false, loaded.bad_block_index, loaded.error};
    const ChainCheck check = verify_chain(loaded.chain);
    if (!check.valid)
        return {false, check.first_bad_index,
                "block " + std::to_string(*check.first_bad_index) + " fails verification"};
    return {true, std::nullopt, ""};
}

}  // namespace flsim
