#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "flsim/config.hpp"
#include "flsim/experiment.hpp"
#include "flsim/ledger_io.hpp"
#include "flsim/protocol.hpp"

using namespace flsim;

namespace {

// Bare clients for settlement tests; no data needed.
std::vector<ClientState> bare_clients(std::size_t n, double tokens) {
    std::vector<ClientState> cs(n);
    for (std::size_t i = 0; i < n; ++i) {
        cs[i].id = static_cast<std::uint32_t>(i);
        cs[i].tokens = tokens;
        cs[i].active = true;
    }
    return cs;
}

double delta_of(const SettleResult& res, std::uint32_t id) {
    for (const auto& [cid, d] : res.deltas)
        if (cid == id) return d;
    FAIL("no delta for client ", id);
    return 0;
}

ExperimentSpec small_spec(Scenario scenario, double eta, std::uint32_t rounds,
                          std::uint32_t clients = 20) {
    ExperimentSpec spec;
    spec.scenario = scenario;
    spec.eta = eta;
    spec.clients = clients;
    spec.round.rounds = rounds;
    spec.dataset.n = 50 * clients;
    spec.dataset.d = 6;
    spec.dataset.separation = 4.0;
    spec.train.local_epochs = 3;
    return spec;
}

// Brute-force vote counter, independent of tally_votes.
int count_oracle(const std::vector<std::int8_t>& votes) {
    int pos = 0, neg = 0;
    for (auto v : votes) (v == 1 ? pos : neg) += 1;
    return pos > neg ? 1 : -1;
}

}  // namespace

TEST_CASE("select_participants: fractions, disjointness, determinism") {
    RoundConfig cfg;
    std::vector<std::uint32_t> active(50);
    for (std::uint32_t i = 0; i < 50; ++i) active[i] = i;

    Rng rng(9);
    const auto sel = select_participants(active, cfg, rng);
    CHECK(sel.proposers.size() == 5);
    CHECK(sel.voters.size() == 45);
    std::set<std::uint32_t> all(sel.proposers.begin(), sel.proposers.end());
    all.insert(sel.voters.begin(), sel.voters.end());
    CHECK(all.size() == 50);  // disjoint and exhaustive at voter_fraction 1

    Rng rng_a(77), rng_b(77);
    const auto a = select_participants(active, cfg, rng_a);
    const auto b = select_participants(active, cfg, rng_b);
    CHECK(a.proposers == b.proposers);
    CHECK(a.voters == b.voters);

    std::vector<std::uint32_t> two = {3, 7};
    Rng rng2(5);
    const auto pair = select_participants(two, cfg, rng2);
    CHECK(pair.proposers.size() == 1);
    CHECK(pair.voters.size() == 1);
    CHECK(pair.proposers[0] != pair.voters[0]);

    std::vector<std::uint32_t> one = {3};
    Rng rng3(5);
    CHECK_THROWS_WITH_AS(select_participants(one, cfg, rng3), "population exhausted",
                         ProtocolError);
}

TEST_CASE("tally: worked examples and tie rejection") {
    CHECK(tally_votes(std::vector<std::int8_t>{1, 1, -1}) == 1);
    CHECK(tally_votes(std::vector<std::int8_t>{1, -1}) == -1);  // tie rejects
    CHECK(tally_votes(std::vector<std::int8_t>{-1}) == -1);
    CHECK_THROWS_AS(tally_votes(std::vector<std::int8_t>{}), ProtocolError);
}

TEST_CASE("tally agrees with a brute-force counter on every vote vector up to length 7") {
    for (std::size_t n = 1; n <= 7; ++n) {
        for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
            std::vector<std::int8_t> votes(n);
            for (std::size_t i = 0; i < n; ++i)
                votes[i] = (bits >> i) & 1 ? std::int8_t{1} : std::int8_t{-1};
            CHECK(tally_votes(votes) == count_oracle(votes));
        }
    }
}

TEST_CASE("tally is monotone: promoting a -1 vote to +1 never flips accept to reject") {
    Rng rng(31);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(9);
        std::vector<std::int8_t> votes(n);
        for (auto& v : votes) v = rng.below(2) ? std::int8_t{1} : std::int8_t{-1};
        const auto before = tally_votes(votes);
        for (std::size_t i = 0; i < n; ++i) {
            if (votes[i] == 1) continue;
            auto promoted = votes;
            promoted[i] = 1;
            if (before == 1) CHECK(tally_votes(promoted) == 1);
        }
    }
}

TEST_CASE("settle_proposers: slash, forfeit-and-remove, pool split") {
    RoundConfig cfg;
    cfg.gamma_p = 8.0;

    SUBCASE("rejected round slashes the stake") {
        auto clients = bare_clients(3, 64.0);
        Pools pools;
        std::vector<std::uint32_t> proposers = {1};
        const auto res = settle_proposers(-1, proposers, pools, clients, cfg);
        CHECK(clients[1].tokens == doctest::Approx(56.0).epsilon(1e-12));
        CHECK(pools.pool_p == doctest::Approx(8.0).epsilon(1e-12));
        CHECK(delta_of(res, 1) == doctest::Approx(-8.0).epsilon(1e-12));
        CHECK(res.removed.empty());
        CHECK(clients[1].active);
    }
    SUBCASE("a proposer that cannot cover the stake forfeits everything and is removed") {
        auto clients = bare_clients(2, 64.0);
        clients[0].tokens = 5.0;
        Pools pools;
        std::vector<std::uint32_t> proposers = {0};
        const auto res = settle_proposers(-1, proposers, pools, clients, cfg);
        CHECK(clients[0].tokens == 0.0);
        CHECK(pools.pool_p == doctest::Approx(5.0).epsilon(1e-12));
        CHECK(res.removed == std::vector<std::uint32_t>{0});
        CHECK(!clients[0].active);
    }
    SUBCASE("accepted round splits a nonempty pool equally and zeroes it") {
        auto clients = bare_clients(3, 64.0);
        Pools pools;
        pools.pool_p = 24.0;
        std::vector<std::uint32_t> proposers = {0, 1, 2};
        const auto res = settle_proposers(1, proposers, pools, clients, cfg);
        for (std::uint32_t id : proposers) {
            CHECK(clients[id].tokens == doctest::Approx(72.0).epsilon(1e-12));
            CHECK(delta_of(res, id) == doctest::Approx(8.0).epsilon(1e-12));
        }
        CHECK(pools.pool_p == 0.0);
    }
    SUBCASE("accepted round with an empty pool moves nothing") {
        auto clients = bare_clients(2, 64.0);
        Pools pools;
        std::vector<std::uint32_t> proposers = {0, 1};
        const auto res = settle_proposers(1, proposers, pools, clients, cfg);
        CHECK(clients[0].tokens == 64.0);
        CHECK(delta_of(res, 0) == 0.0);
    }
}

TEST_CASE("settle_voters: minority pays the majority") {
    RoundConfig cfg;
    cfg.gamma_v = 4.0;

    SUBCASE("three-vs-two split at decision +1") {
        auto clients = bare_clients(5, 64.0);
        Pools pools;
        std::vector<std::uint32_t> voters = {0, 1, 2, 3, 4};
        std::vector<std::int8_t> votes = {1, 1, 1, -1, -1};
        const auto res = settle_voters(1, voters, votes, pools, clients, cfg);
        CHECK(delta_of(res, 3) == doctest::Approx(-4.0).epsilon(1e-12));
        CHECK(delta_of(res, 4) == doctest::Approx(-4.0).epsilon(1e-12));
        for (std::uint32_t id : {0u, 1u, 2u})
            CHECK(delta_of(res, id) == doctest::Approx(8.0 / 3.0).epsilon(1e-12));
        CHECK(pools.pool_v == 0.0);
        double sum = 0;
        for (const auto& [id, d] : res.deltas) sum += d;
        CHECK(std::abs(sum) < 1e-12);
    }
    SUBCASE("unanimous votes move nothing") {
        auto clients = bare_clients(3, 64.0);
        Pools pools;
        std::vector<std::uint32_t> voters = {0, 1, 2};
        std::vector<std::int8_t> votes = {1, 1, 1};
        const auto res = settle_voters(1, voters, votes, pools, clients, cfg);
        for (std::uint32_t id : voters) {
            CHECK(clients[id].tokens == 64.0);
            CHECK(delta_of(res, id) == 0.0);
        }
        CHECK(pools.pool_v == 0.0);
    }
    SUBCASE("an underfunded minority voter forfeits and is removed") {
        auto clients = bare_clients(3, 64.0);
        clients[2].tokens = 1.0;
        Pools pools;
        std::vector<std::uint32_t> voters = {0, 1, 2};
        std::vector<std::int8_t> votes = {1, 1, -1};
        const auto res = settle_voters(1, voters, votes, pools, clients, cfg);
        CHECK(clients[2].tokens == 0.0);
        CHECK(!clients[2].active);
        CHECK(res.removed == std::vector<std::uint32_t>{2});
        CHECK(delta_of(res, 2) == doctest::Approx(-1.0).epsilon(1e-12));
        // the two majority voters split the forfeited token
        CHECK(delta_of(res, 0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(delta_of(res, 1) == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("all-honest run: near-universal acceptance, non-degrading score") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        auto spec = small_spec(Scenario::full, 0.0, 100);
        World world = build_world(spec, seed);
        RoundConfig cfg = spec.round;
        cfg.seed = seed;
        const auto result = run_simulation(std::move(world.clients), spec.train.architecture,
                                           world.input_dim, cfg, spec.train, spec.attack,
                                           policy_for(spec.scenario));
        REQUIRE(result.reports.size() == 100);
        std::size_t accepted = 0;
        for (const auto& r : result.reports) accepted += r.decision == 1;
        CHECK(accepted >= 90);
        CHECK(result.reports.back().global_score_snapshot >=
              result.reports.front().global_score_snapshot - 0.05);
    }
}

TEST_CASE("a round whose proposers are all malicious is rejected and commits nothing") {
    auto spec = small_spec(Scenario::full, 0.0, 1);
    World world = build_world(spec, 3);
    RoundConfig cfg = spec.round;
    cfg.seed = 3;

    spec.train.local_epochs = 5;
    spec.train.batch_size = 8;
    SimState state = make_sim_state(std::move(world.clients), spec.train.architecture,
                                    world.input_dim, cfg);
    // pre-train the global model so the poisoned aggregate visibly degrades it
    TrainConfig warm = spec.train;
    warm.local_epochs = 10;
    warm.seed = 99;
    state.global = local_train(state.global, world.train_pool, warm);
    for (auto& c : state.clients)
        c.last_score = evaluate(state.arch, state.global, c.validation_data).value;

    // peek at the upcoming selection, then mark exactly those proposers malicious
    Rng peek(derive_seed(cfg.seed, 0xABCDull));
    Rng engine = peek;
    const auto sel = select_participants(state.active_ids(), cfg, peek);
    for (std::uint32_t id : sel.proposers) state.clients[id].malicious = true;

    const ParamVector before = state.global;
    const auto report = run_round(state, 0, cfg, spec.train, spec.attack,
                                  policy_for(Scenario::full), engine);
    CHECK(report.proposers == sel.proposers);
    CHECK(report.decision == -1);
    CHECK(state.global == before);  // candidate discarded
    for (std::uint32_t id : report.proposers)
        CHECK(state.clients[id].tokens == doctest::Approx(64.0 - cfg.gamma_p).epsilon(1e-9));
}

TEST_CASE("token conservation holds round by round and pool_v clears") {
    auto spec = small_spec(Scenario::full, 0.35, 60);
    World world = build_world(spec, 11);
    RoundConfig cfg = spec.round;
    cfg.seed = 11;
    SimState state = make_sim_state(std::move(world.clients), spec.train.architecture,
                                    world.input_dim, cfg);
    Rng rng(derive_seed(cfg.seed, 0x5E1Cull));
    const double expected = state.total_tokens();
    for (std::uint32_t t = 0; t < cfg.rounds && state.active_ids().size() >= 2; ++t) {
        run_round(state, t, cfg, spec.train, spec.attack, policy_for(spec.scenario), rng);
        CHECK(state.total_tokens() == doctest::Approx(expected).epsilon(1e-12));
        CHECK(state.pools.pool_v == 0.0);
    }
}

TEST_CASE("committed model is exactly the weighted average of that round's proposals") {
    auto spec = small_spec(Scenario::malicious_proposers_honest_voters, 0.2, 30);
    World world = build_world(spec, 7);
    RoundConfig cfg = spec.round;
    cfg.seed = 7;
    SimState state = make_sim_state(world.clients, spec.train.architecture, world.input_dim,
                                    cfg);
    Rng rng(derive_seed(cfg.seed, 0x5E1Cull));

    std::size_t accepted_checked = 0;
    for (std::uint32_t t = 0; t < cfg.rounds; ++t) {
        const ParamVector before = state.global;
        const auto clients_before = state.clients;
        const auto report =
            run_round(state, t, cfg, spec.train, spec.attack, policy_for(spec.scenario), rng);
        if (report.decision == -1) {
            CHECK(state.global == before);
            continue;
        }
        // recompute each proposal from the snapshot and average it
        std::vector<WeightedUpdate> updates;
        for (std::uint32_t id : report.proposers) {
            TrainConfig tc = spec.train;
            tc.seed = proposer_train_seed(cfg.seed, t, id);
            const bool poison = clients_before[id].malicious;
            auto [params, n_k] =
                propose(clients_before[id], before, tc, spec.attack, poison);
            updates.push_back({std::move(params), n_k});
        }
        CHECK(state.global == fedavg(updates));
        ++accepted_checked;
    }
    CHECK(accepted_checked > 0);
}

TEST_CASE("pool_p rises over rejected rounds and empties on the next acceptance") {
    auto spec = small_spec(Scenario::full, 0.4, 120);
    const auto run = run_single(spec, 13);
    double prev_pool = 0.0;
    std::size_t rejects_seen = 0;
    for (const auto& b : run.sim.chain.blocks) {
        CHECK(b.pool_v == 0.0);
        if (b.decision == Decision::reject) {
            CHECK(b.pool_p >= prev_pool - 1e-12);
            ++rejects_seen;
        } else {
            CHECK(b.pool_p == 0.0);
        }
        prev_pool = b.pool_p;
    }
    CHECK(rejects_seen > 0);
    CHECK(verify_chain(run.sim.chain).valid);
}

TEST_CASE("per-block token deltas balance the pool movements exactly") {
    auto spec = small_spec(Scenario::full, 0.35, 100);
    const auto run = run_single(spec, 29);
    double prev_pool_p = 0.0, prev_pool_v = 0.0;
    double running = 0.0;
    for (const auto& b : run.sim.chain.blocks) {
        double delta_sum = 0.0;
        for (const auto& [id, d] : b.token_deltas) delta_sum += d;
        const double imbalance =
            delta_sum + (b.pool_p - prev_pool_p) + (b.pool_v - prev_pool_v);
        CHECK(std::abs(imbalance) < 1e-9);
        running += imbalance;
        prev_pool_p = b.pool_p;
        prev_pool_v = b.pool_v;
    }
    CHECK(std::abs(running) < 1e-9);
}

TEST_CASE("the chain's implied balances keep removed clients at zero") {
    auto spec = small_spec(Scenario::full, 0.4, 100);
    spec.round.gamma_v = 8.0;
    const auto run = run_single(spec, 23);

    std::vector<double> balance(spec.clients, spec.round.initial_tokens);
    std::set<std::uint32_t> removed;
    std::size_t checked = 0;
    REQUIRE(run.sim.reports.size() == run.sim.chain.blocks.size());
    for (std::size_t t = 0; t < run.sim.reports.size(); ++t) {
        for (const auto& [id, d] : run.sim.chain.blocks[t].token_deltas) balance[id] += d;
        removed.insert(run.sim.reports[t].removed.begin(), run.sim.reports[t].removed.end());
        for (std::uint32_t id : removed) {
            CHECK(balance[id] == 0.0);
            ++checked;
        }
    }
    CHECK(checked > 0);
    // rejected rounds leave the recorded model digest unchanged
    for (std::size_t t = 1; t < run.sim.chain.blocks.size(); ++t)
        if (run.sim.chain.blocks[t].decision == Decision::reject)
            CHECK(run.sim.chain.blocks[t].model_digest ==
                  run.sim.chain.blocks[t - 1].model_digest);
}

TEST_CASE("malicious-voter token trajectory declines to zero under honest proposals") {
    auto spec = small_spec(Scenario::honest_proposers_malicious_voters, 0.3, 80);
    spec.round.gamma_v = 4.0;
    const auto run = run_single(spec, 19);
    const auto mal = token_timeseries(run.sim.reports, run.sim.final_clients,
                                      spec.round.initial_tokens, ClientGroup::malicious);
    REQUIRE(mal.has_value());
    CHECK(mal->mean.front() == 64.0);
    CHECK(mal->mean.back() == 0.0);
    // sampled at accepted-round boundaries the group mean never rises
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < run.sim.reports.size(); ++t) {
        if (run.sim.reports[t].decision != 1) continue;
        CHECK(mal->mean[t + 1] <= prev + 1e-9);
        prev = mal->mean[t + 1];
    }
    // and every malicious client is gone well before the end
    for (const auto& rec : survival_stats(run.sim.reports, run.sim.final_clients))
        if (rec.malicious) CHECK(rec.removal_round.has_value());
}

TEST_CASE("removed clients never reappear in later rounds") {
    auto spec = small_spec(Scenario::full, 0.4, 120);
    spec.round.gamma_v = 8.0;
    const auto run = run_single(spec, 17);
    std::set<std::uint32_t> removed;
    std::size_t total_removed = 0;
    for (const auto& r : run.sim.reports) {
        for (std::uint32_t id : r.proposers) CHECK(!removed.contains(id));
        for (std::uint32_t id : r.voters) CHECK(!removed.contains(id));
        removed.insert(r.removed.begin(), r.removed.end());
        total_removed += r.removed.size();
    }
    CHECK(total_removed > 0);
    CHECK(total_removed == removed.size());  // nobody is removed twice
}

TEST_CASE("run_simulation is reproducible byte for byte") {
    auto spec = small_spec(Scenario::full, 0.3, 40, 12);
    const auto a = run_single(spec, 5);
    const auto b = run_single(spec, 5);
    CHECK(chain_to_text(a.sim.chain) == chain_to_text(b.sim.chain));
    CHECK(a.test_accuracy == b.test_accuracy);

    const auto c = run_single(spec, 6);
    CHECK(chain_to_text(a.sim.chain) != chain_to_text(c.sim.chain));
}

TEST_CASE("zero rounds gives an empty report list and a blockless chain") {
    auto spec = small_spec(Scenario::full, 0.0, 0);
    const auto run = run_single(spec, 1);
    CHECK(run.sim.reports.empty());
    CHECK(run.sim.chain.blocks.empty());
    CHECK(run.sim.chain.genesis_model_digest != Digest{});
    CHECK(verify_chain(run.sim.chain).valid);
}

TEST_CASE("the run stops gracefully when the population is exhausted") {
    // two clients, both dishonest voters: every round is rejected, proposers
    // bleed stake until someone cannot act
    ExperimentSpec spec = small_spec(Scenario::honest_proposers_malicious_voters, 0.5, 60, 2);
    spec.force = true;
    spec.dataset.n = 100;
    spec.round.gamma_p = 8.0;
    const auto run = run_single(spec, 2);
    CHECK(run.sim.reports.size() < 60);
    REQUIRE(!run.sim.final_clients.empty());
    std::size_t active = 0;
    for (const auto& c : run.sim.final_clients) active += c.active;
    CHECK(active < 2);
}
