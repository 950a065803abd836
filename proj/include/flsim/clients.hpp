#pragma once

#include <cstdint>
#include <utility>

#include "flsim/dataset.hpp"
#include "flsim/errors.hpp"
#include "flsim/learner.hpp"

namespace flsim {

/// One participant: token balance, fixed honesty policy, private data split,
/// and the reference score used by the vote rule.
struct ClientState {
    std::uint32_t id = 0;
    double tokens = 0.0;
    bool malicious = false;
    bool active = true;
    Dataset train_data;
    Dataset validation_data;
    double last_score = 0.0;   // s_k^{t-1} on the accepted lineage
    std::uint64_t n_k = 0;     // training example count, reported truthfully
};

/// Data-poisoning attack: train on flipped labels while a proximal term keeps
/// the update close to the current global weights.
struct AttackConfig {
    double flip_rate = 1.0;
    double proximal_weight = 0.1;

    bool operator==(const AttackConfig&) const = default;
};

namespace detail {

inline Dataset flip_labels(const Dataset& ds, double flip_rate, std::uint64_t seed) {
    Dataset out = ds;
    Rng rng(seed);
    for (auto& label : out.y)
        if (rng.unit() < flip_rate) label = static_cast<std::int8_t>(1 - label);
    return out;
}

}  // namespace detail

/// Produces a proposer's local update. Honest behavior trains on the clean
/// local training split. Acting maliciously trains on a label-flipped copy
/// with the proximal pull toward the global weights. n_k is truthful either
/// way.
inline std::pair<ParamVector, std::uint64_t> propose(const ClientState& client,
                                                     const ParamVector& global_params,
                                                     const TrainConfig& cfg,
                                                     const AttackConfig& attack,
                                                     bool act_malicious) {
    if (!client.active) throw ProtocolError("propose: inactive client selected");
    if (!act_malicious) {
        return {local_train(global_params, client.train_data, cfg), client.n_k};
    }
    const Dataset poisoned = detail::flip_labels(client.train_data, attack.flip_rate,
                                                 derive_seed(cfg.seed, 0xF11Bull));
    const Proximal prox{&global_params, attack.proximal_weight};
    return {local_train(global_params, poisoned, cfg, prox), client.n_k};
}

/// Scores a candidate model on the client's private validation split.
/// Does not touch last_score; the engine commits scores at round end.
inline EvalScore local_validate(const ClientState& client, const Architecture& arch,
                                const ParamVector& candidate) {
    if (!client.active) throw ProtocolError("local_validate: inactive client selected");
    return evaluate(arch, candidate, client.validation_data);
}

/// Vote rule: approve iff the new score is within the epsilon tolerance of
/// the client's reference score. A dishonest vote is the exact inversion.
inline std::int8_t cast_vote(const ClientState& client, EvalScore s_new, double epsilon,
                             bool act_malicious) {
    const std::int8_t honest =
        s_new.value >= (1.0 - epsilon) * client.last_score ? std::int8_t{1} : std::int8_t{-1};
    return act_malicious ? static_cast<std::int8_t>(-honest) : honest;
}

}  // namespace flsim
