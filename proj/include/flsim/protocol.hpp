#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "flsim/clients.hpp"
#include "flsim/errors.hpp"
#include "flsim/learner.hpp"
#include "flsim/ledger.hpp"
#include "flsim/rng.hpp"

namespace flsim {

struct RoundConfig {
    double proposer_fraction = 0.10;
    double voter_fraction = 1.0;   // share of the remaining clients
    double epsilon = 0.05;
    double gamma_p = 8.0;
    double gamma_v = 4.0;
    double initial_tokens = 64.0;
    std::uint32_t rounds = 200;
    std::uint64_t seed = 1;

    bool operator==(const RoundConfig&) const = default;
};

/// Escrow pools. pool_v is emptied every round; pool_p carries over rejected
/// rounds until the next accepted one.
struct Pools {
    double pool_p = 0.0;
    double pool_v = 0.0;
};

/// Which behaviors malicious clients actually exercise in a run, and whether
/// the voting/settlement machinery is active at all (off = plain FedAVG).
struct BehaviorPolicy {
    bool poison_proposals = true;
    bool dishonest_votes = false;
    bool voting_enabled = true;
};

struct VoteRecord {
    std::uint32_t id = 0;
    double score = 0.0;
    std::int8_t vote = 0;
};

struct RoundReport {
    std::uint32_t round_index = 0;
    std::vector<std::uint32_t> proposers;
    std::vector<std::uint32_t> voters;
    std::vector<VoteRecord> votes;  // aligned with voters
    std::int8_t decision = 1;
    std::vector<std::uint32_t> majority_set;  // voters with vote == decision
    std::vector<std::pair<std::uint32_t, double>> token_deltas;
    std::vector<std::uint32_t> removed;
    double global_score_snapshot = 0.0;  // mean honest validation score, diagnostic
};

struct Selection {
    std::vector<std::uint32_t> proposers;
    std::vector<std::uint32_t> voters;
};

namespace detail {

inline std::vector<std::uint32_t> sorted_sample(Rng& rng,
                                                const std::vector<std::uint32_t>& pool,
                                                std::size_t k) {
    auto picked = rng.sample(pool, k);
    std::sort(picked.begin(), picked.end());
    return picked;
}

inline std::size_t fraction_count(double fraction, std::size_t n) {
    const auto rounded = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    return std::clamp<std::size_t>(std::max<std::size_t>(1, rounded), 1, n);
}

}  // namespace detail

/// Disjoint random selection: proposers are a proposer_fraction sample of the
/// active clients (at least 1, at most all-but-one), voters a voter_fraction
/// sample of the remainder. Deterministic per rng state.
inline Selection select_participants(const std::vector<std::uint32_t>& active_ids,
                                     const RoundConfig& cfg, Rng& rng) {
    if (active_ids.size() < 2) throw ProtocolError("population exhausted");
    const std::size_t n_prop =
        std::min(detail::fraction_count(cfg.proposer_fraction, active_ids.size()),
                 active_ids.size() - 1);
    Selection sel;
    sel.proposers = detail::sorted_sample(rng, active_ids, n_prop);
    std::vector<std::uint32_t> remaining;
    remaining.reserve(active_ids.size() - n_prop);
    for (std::uint32_t id : active_ids)
        if (!std::binary_search(sel.proposers.begin(), sel.proposers.end(), id))
            remaining.push_back(id);
    sel.voters = detail::sorted_sample(
        rng, remaining, detail::fraction_count(cfg.voter_fraction, remaining.size()));
    return sel;
}

/// Majority decision: accept iff the vote sum is strictly positive; ties
/// reject.
inline std::int8_t tally_votes(std::span<const std::int8_t> votes) {
    if (votes.empty()) throw ProtocolError("tally_votes: no votes cast");
    int sum = 0;
    for (std::int8_t v : votes) sum += v;
    return sum > 0 ? std::int8_t{1} : std::int8_t{-1};
}

struct SettleResult {
    std::vector<std::pair<std::uint32_t, double>> deltas;
    std::vector<std::uint32_t> removed;
};

namespace detail {

// Slash `stake` from a client into `pool`. Clients who cannot cover the stake
// forfeit everything; a balance that reaches exactly 0 means the client can
// never stake again, so both paths count as removal.
inline void slash(ClientState& c, double stake, double& pool,
                  std::vector<std::pair<std::uint32_t, double>>& deltas,
                  std::vector<std::uint32_t>& removed) {
    const double paid = c.tokens >= stake ? stake : c.tokens;
    c.tokens -= paid;
    pool += paid;
    deltas.emplace_back(c.id, -paid);
    if (c.tokens <= 0.0) {
        c.tokens = 0.0;
        c.active = false;
        removed.push_back(c.id);
    }
}

// Split `pool` equally among `ids`; the rounding residual goes to the first
// recipient so the economy stays closed to fp precision. Leaves pool at 0.
inline void distribute(double& pool, std::span<const std::uint32_t> ids,
                       std::vector<ClientState>& clients,
                       std::vector<std::pair<std::uint32_t, double>>& deltas) {
    const double share = pool / static_cast<double>(ids.size());
    const double residual = std::fma(-share, static_cast<double>(ids.size()), pool);
    bool first = true;
    for (std::uint32_t id : ids) {
        const double gain = share + (first ? residual : 0.0);
        clients[id].tokens += gain;
        deltas.emplace_back(id, gain);
        first = false;
    }
    pool = 0.0;
}

}  // namespace detail

/// Proposer settlement. On rejection every proposer is slashed gamma_p (or
/// forfeits what is left and is removed). On acceptance a nonempty proposer
/// pool is split equally among the round's proposers and zeroed.
inline SettleResult settle_proposers(std::int8_t decision,
                                     std::span<const std::uint32_t> proposers, Pools& pools,
                                     std::vector<ClientState>& clients,
                                     const RoundConfig& cfg) {
    if (proposers.empty()) throw ProtocolError("settle_proposers: no proposers");
    SettleResult res;
    if (decision == -1) {
        for (std::uint32_t id : proposers)
            detail::slash(clients[id], cfg.gamma_p, pools.pool_p, res.deltas, res.removed);
    } else if (pools.pool_p > 0.0) {
        detail::distribute(pools.pool_p, proposers, clients, res.deltas);
    } else {
        for (std::uint32_t id : proposers) res.deltas.emplace_back(id, 0.0);
    }
    return res;
}

/// Voter settlement. Minority voters (vote != decision) are slashed gamma_v
/// with the same forfeit-and-remove rule; the voter pool is then split among
/// the majority and zeroed. Majority stakes are never deducted.
inline SettleResult settle_voters(std::int8_t decision,
                                  std::span<const std::uint32_t> voters,
                                  std::span<const std::int8_t> votes, Pools& pools,
                                  std::vector<ClientState>& clients, const RoundConfig& cfg) {
    if (voters.empty()) throw ProtocolError("settle_voters: no voters");
    if (voters.size() != votes.size())
        throw ProtocolError("settle_voters: votes misaligned with voters");
    SettleResult res;
    std::vector<std::uint32_t> majority;
    for (std::size_t i = 0; i < voters.size(); ++i) {
        if (votes[i] != decision)
            detail::slash(clients[voters[i]], cfg.gamma_v, pools.pool_v, res.deltas, res.removed);
        else
            majority.push_back(voters[i]);
    }
    if (majority.empty()) {
        if (pools.pool_v > 0.0)
            throw ProtocolError("settle_voters: staked pool with no majority voter");
        return res;
    }
    detail::distribute(pools.pool_v, majority, clients, res.deltas);
    return res;
}

/// Everything the round engine owns while a simulation runs.
struct SimState {
    std::vector<ClientState> clients;  // indexed by id
    Pools pools;
    ParamVector global;
    Architecture arch;
    Chain chain;

    std::vector<std::uint32_t> active_ids() const {
        std::vector<std::uint32_t> ids;
        for (const auto& c : clients)
            if (c.active) ids.push_back(c.id);
        return ids;
    }

    double total_tokens() const {
        double sum = pools.pool_p + pools.pool_v;
        for (const auto& c : clients) sum += c.tokens;
        return sum;
    }
};

/// Per-(round, client) training seed; exposed so tests can reproduce proposals.
inline std::uint64_t proposer_train_seed(std::uint64_t run_seed, std::uint32_t round,
                                         std::uint32_t client_id) {
    return derive_seed(run_seed, 0x7EA1ull, round, client_id);
}

/// One full round: selection, proposer training, candidate aggregation,
/// validation and voting, tally, conditional commit, settlement, block
/// creation. With voting disabled the candidate is always committed and no
/// tokens move.
inline RoundReport run_round(SimState& state, std::uint32_t round_index,
                             const RoundConfig& cfg, const TrainConfig& train_cfg,
                             const AttackConfig& attack, const BehaviorPolicy& policy,
                             Rng& rng) {
    RoundReport report;
    report.round_index = round_index;

    const auto active = state.active_ids();
    const Selection sel = select_participants(active, cfg, rng);
    report.proposers = sel.proposers;
    report.voters = policy.voting_enabled ? sel.voters : std::vector<std::uint32_t>{};

    std::vector<WeightedUpdate> updates;
    updates.reserve(sel.proposers.size());
    for (std::uint32_t id : sel.proposers) {
        TrainConfig local_cfg = train_cfg;
        local_cfg.seed = proposer_train_seed(cfg.seed, round_index, id);
        const bool poison = policy.poison_proposals && state.clients[id].malicious;
        auto [params, n_k] = propose(state.clients[id], state.global, local_cfg, attack, poison);
        updates.push_back({std::move(params), n_k});
    }
    ParamVector candidate = fedavg(updates);

    std::int8_t decision = 1;
    std::vector<std::int8_t> votes;
    if (policy.voting_enabled) {
        report.votes.reserve(report.voters.size());
        for (std::uint32_t id : report.voters) {
            const EvalScore s = local_validate(state.clients[id], state.arch, candidate);
            const bool dishonest = policy.dishonest_votes && state.clients[id].malicious;
            const std::int8_t v = cast_vote(state.clients[id], s, cfg.epsilon, dishonest);
            report.votes.push_back({id, s.value, v});
            votes.push_back(v);
        }
        decision = tally_votes(votes);
    }
    report.decision = decision;

    if (decision == 1) {
        state.global = std::move(candidate);
        for (const VoteRecord& v : report.votes) state.clients[v.id].last_score = v.score;
    }
    // a rejected candidate is discarded; reference scores stay on the accepted lineage

    if (policy.voting_enabled) {
        SettleResult prop =
            settle_proposers(decision, report.proposers, state.pools, state.clients, cfg);
        SettleResult vot = settle_voters(decision, report.voters, votes, state.pools,
                                         state.clients, cfg);
        for (const VoteRecord& v : report.votes)
            if (v.vote == decision) report.majority_set.push_back(v.id);
        report.token_deltas = std::move(prop.deltas);
        report.token_deltas.insert(report.token_deltas.end(), vot.deltas.begin(),
                                   vot.deltas.end());
        std::sort(report.token_deltas.begin(), report.token_deltas.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        report.removed = std::move(prop.removed);
        report.removed.insert(report.removed.end(), vot.removed.begin(), vot.removed.end());
        std::sort(report.removed.begin(), report.removed.end());
    }

    double honest_sum = 0.0;
    std::size_t honest_n = 0;
    for (const auto& c : state.clients) {
        if (!c.active || c.malicious) continue;
        honest_sum += evaluate(state.arch, state.global, c.validation_data).value;
        ++honest_n;
    }
    report.global_score_snapshot = honest_n > 0 ? honest_sum / static_cast<double>(honest_n) : 0.0;

    std::vector<std::pair<std::uint32_t, std::int8_t>> vote_summary;
    vote_summary.reserve(report.votes.size());
    for (const VoteRecord& v : report.votes) vote_summary.emplace_back(v.id, v.vote);
    append_block(state.chain, decision == 1 ? Decision::accept : Decision::reject,
                 model_digest_of(state.global.values), std::move(vote_summary),
                 report.token_deltas, state.pools.pool_p, state.pools.pool_v);
    return report;
}

struct SimResult {
    Chain chain;
    std::vector<RoundReport> reports;
    std::vector<ClientState> final_clients;
    Pools final_pools;
};

/// Observer invoked after each committed round with the report and the
/// current global parameters; used for diagnostics like test-set accuracy.
using RoundObserver = std::function<void(const RoundReport&, const ParamVector&)>;

/// Round-0 state: freshly initialized global parameters, full token balances,
/// and every client's reference score evaluated on the initial model.
inline SimState make_sim_state(std::vector<ClientState> clients, const Architecture& arch,
                               std::size_t input_dim, const RoundConfig& cfg) {
    SimState state;
    state.clients = std::move(clients);
    state.arch = arch;
    state.global = init_params(arch, input_dim, derive_seed(cfg.seed, 0x1217ull));
    state.chain.genesis_model_digest = model_digest_of(state.global.values);
    for (auto& c : state.clients) {
        c.tokens = cfg.initial_tokens;
        if (!c.validation_data.empty())
            c.last_score = evaluate(arch, state.global, c.validation_data).value;
    }
    return state;
}

/// Runs cfg.rounds rounds (or stops early once fewer than two clients remain)
/// and returns the full audit trail. Population ratios above the 50%
/// malicious assumption are allowed but warned about by the caller.
inline SimResult run_simulation(std::vector<ClientState> clients, const Architecture& arch,
                                std::size_t input_dim, const RoundConfig& cfg,
                                const TrainConfig& train_cfg, const AttackConfig& attack,
                                const BehaviorPolicy& policy,
                                const RoundObserver& observer = {}) {
    SimState state = make_sim_state(std::move(clients), arch, input_dim, cfg);
    Rng rng(derive_seed(cfg.seed, 0x5E1Cull));
    SimResult result;
    result.reports.reserve(cfg.rounds);
    for (std::uint32_t t = 0; t < cfg.rounds; ++t) {
        if (state.active_ids().size() < 2) break;  // population exhausted
        RoundReport report = run_round(state, t, cfg, train_cfg, attack, policy, rng);
        if (observer) observer(report, state.global);
        result.reports.push_back(std::move(report));
    }
    result.chain = std::move(state.chain);
    result.final_clients = std::move(state.clients);
    result.final_pools = state.pools;
    return result;
}

}  // namespace flsim
