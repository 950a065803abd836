#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "flsim/bytes.hpp"
#include "flsim/errors.hpp"
#include "flsim/sha256.hpp"

namespace flsim {

enum class Decision : std::int8_t { reject = -1, accept = 1 };

/// Hash-chained ledger entry recording one round's accepted state transition.
/// Rejected rounds are recorded too (decision = reject, model digest
/// unchanged) so award/slash history is readable straight off the chain.
struct Block {
    std::uint64_t index = 0;
    Digest prev_hash{};
    Digest hash{};
    Decision decision = Decision::accept;
    Digest model_digest{};
    std::vector<std::pair<std::uint32_t, std::int8_t>> vote_summary;   // (client, +1/-1)
    std::vector<std::pair<std::uint32_t, double>> token_deltas;        // (client, signed change)
    double pool_p = 0.0;
    double pool_v = 0.0;
};

struct Chain {
    Digest genesis_model_digest{};
    std::vector<Block> blocks;
};

inline Digest model_digest_of(std::span<const double> values) {
    ByteWriter w;
    w.put_u64(values.size());
    for (double v : values) w.put_f64(v);
    return Sha256::digest(w.bytes());
}

/// Canonical serialization of everything the block hash covers.
inline std::vector<std::uint8_t> canonical_block_bytes(const Block& b) {
    ByteWriter w;
    w.put_u64(b.index);
    w.put_bytes(b.prev_hash);
    w.put_u8(b.decision == Decision::accept ? 1 : 0);
    w.put_bytes(b.model_digest);
    w.put_u32(static_cast<std::uint32_t>(b.vote_summary.size()));
    for (const auto& [id, vote] : b.vote_summary) {
        w.put_u32(id);
        w.put_i8(vote);
    }
    w.put_u32(static_cast<std::uint32_t>(b.token_deltas.size()));
    for (const auto& [id, delta] : b.token_deltas) {
        w.put_u32(id);
        w.put_f64(delta);
    }
    w.put_f64(b.pool_p);
    w.put_f64(b.pool_v);
    return w.bytes();
}

inline Digest block_hash(const Block& b) {
    const auto bytes = canonical_block_bytes(b);
    return Sha256::digest(bytes);
}

/// Appends a settled round to the chain and returns the new head.
inline const Block& append_block(Chain& chain, Decision decision, const Digest& model_digest,
                                 std::vector<std::pair<std::uint32_t, std::int8_t>> vote_summary,
                                 std::vector<std::pair<std::uint32_t, double>> token_deltas,
                                 double pool_p, double pool_v) {
    Block b;
    b.index = chain.blocks.size();
    b.prev_hash = chain.blocks.empty() ? Digest{} : chain.blocks.back().hash;
    b.decision = decision;
    b.model_digest = model_digest;
    b.vote_summary = std::move(vote_summary);
    b.token_deltas = std::move(token_deltas);
    b.pool_p = pool_p;
    b.pool_v = pool_v;
    b.hash = block_hash(b);
    chain.blocks.push_back(std::move(b));
    return chain.blocks.back();
}

struct ChainCheck {
    bool valid = true;
    std::optional<std::uint64_t> first_bad_index;
};

/// Recomputes every block hash and checks the hash links. Returns the lowest
/// violating index if any. An empty chain is valid.
inline ChainCheck verify_chain(const Chain& chain) {
    for (std::size_t i = 0; i < chain.blocks.size(); ++i) {
        const Block& b = chain.blocks[i];
        const Digest expected_prev = i == 0 ? Digest{} : chain.blocks[i - 1].hash;
        if (b.index != i || b.prev_hash != expected_prev || block_hash(b) != b.hash)
            return {false, i};
    }
    return {true, std::nullopt};
}

}  // namespace flsim
