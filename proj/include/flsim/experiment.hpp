#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "flsim/analysis.hpp"
#include "flsim/config.hpp"
#include "flsim/dataset.hpp"
#include "flsim/errors.hpp"
#include "flsim/ledger_io.hpp"
#include "flsim/protocol.hpp"

namespace flsim {

inline BehaviorPolicy policy_for(Scenario s) {
    switch (s) {
        case Scenario::full: return {true, true, true};
        case Scenario::honest_proposers_malicious_voters: return {false, true, true};
        case Scenario::malicious_proposers_honest_voters: return {true, false, true};
        case Scenario::fedavg_with_malicious: return {true, false, false};
        case Scenario::fedavg_without_malicious: return {false, false, false};
        case Scenario::oracle: return {false, false, false};
    }
    return {};
}

/// Baselines without attackers run with eta forced to zero.
inline double effective_eta(const ExperimentSpec& spec) {
    if (spec.scenario == Scenario::fedavg_without_malicious ||
        spec.scenario == Scenario::oracle)
        return 0.0;
    return spec.eta;
}

/// One run's world: the client population (data attached, malicious flags
/// set), the held-out global test set, and the pooled training data.
struct World {
    std::vector<ClientState> clients;
    Dataset test;
    Dataset train_pool;
    std::size_t input_dim = 0;
};

/// Builds the population for one seed: source dataset, 80/20 global
/// train/test split, per-client partition, per-client 80/20 train/validation
/// split, and the pre-round malicious selection of round(eta * K) clients.
inline World build_world(const ExperimentSpec& spec, std::uint64_t run_seed) {
    Dataset source;
    if (spec.dataset.kind == DatasetSpec::Kind::synthetic) {
        source = make_synthetic(spec.dataset.n, spec.dataset.d, spec.dataset.separation,
                                derive_seed(run_seed, 0xDA7Aull));
    } else {
        source = load_csv(spec.dataset.path, spec.dataset.label_column);
    }
    if (source.n < 2ull * spec.clients)
        throw ConfigError("dataset.n: need at least 2 examples per client");

    std::vector<std::size_t> idx(source.n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng split_rng(derive_seed(run_seed, 0x5911ull));
    split_rng.shuffle(idx);
    const std::size_t train_n = source.n - std::max<std::size_t>(1, source.n / 5);

    World world;
    world.input_dim = source.d;
    world.train_pool = subset(source, {idx.data(), train_n});
    world.test = subset(source, {idx.data() + train_n, source.n - train_n});

    PartitionMode mode;
    mode.kind = spec.partition.mode;
    mode.shards_per_client = spec.partition.shards_per_client;
    auto parts = partition(world.train_pool, spec.clients, mode,
                           derive_seed(run_seed, 0xB457ull));

    world.clients.resize(spec.clients);
    for (std::uint32_t k = 0; k < spec.clients; ++k) {
        auto split = split_train_validation(parts[k], derive_seed(run_seed, 0x51DEull, k));
        if (split.validation.empty())
            throw ConfigError("dataset.n: too small for per-client validation splits");
        ClientState& c = world.clients[k];
        c.id = k;
        c.active = true;
        c.n_k = split.train.n;
        c.train_data = std::move(split.train);
        c.validation_data = std::move(split.validation);
    }

    const auto n_malicious =
        static_cast<std::size_t>(std::llround(effective_eta(spec) * spec.clients));
    std::vector<std::uint32_t> ids(spec.clients);
    std::iota(ids.begin(), ids.end(), 0);
    Rng mal_rng(derive_seed(run_seed, 0xBAD5ull));
    for (std::uint32_t id : mal_rng.sample(ids, n_malicious))
        world.clients[id].malicious = true;
    return world;
}

struct RunOutput {
    SimResult sim;
    std::vector<double> test_accuracy;  // one entry per completed round
};

namespace detail {

/// Centralized baseline: one learner trained on the pooled training data,
/// one block per "round" so exports stay uniform.
inline RunOutput run_oracle(const ExperimentSpec& spec, World world, std::uint64_t run_seed) {
    RunOutput out;
    RoundConfig cfg = spec.round;
    cfg.seed = run_seed;
    ParamVector model =
        init_params(spec.train.architecture, world.input_dim, derive_seed(cfg.seed, 0x1217ull));
    out.sim.chain.genesis_model_digest = model_digest_of(model.values);
    for (auto& c : world.clients) {
        c.tokens = cfg.initial_tokens;
        c.last_score = evaluate(spec.train.architecture, model, c.validation_data).value;
    }
    for (std::uint32_t t = 0; t < cfg.rounds; ++t) {
        TrainConfig tc = spec.train;
        tc.seed = derive_seed(cfg.seed, 0x09A1ull, t);
        model = local_train(model, world.train_pool, tc);

        RoundReport report;
        report.round_index = t;
        report.decision = 1;
        double sum = 0.0;
        for (const auto& c : world.clients)
            sum += evaluate(spec.train.architecture, model, c.validation_data).value;
        report.global_score_snapshot = sum / static_cast<double>(world.clients.size());
        append_block(out.sim.chain, Decision::accept, model_digest_of(model.values), {}, {},
                     0.0, 0.0);
        out.test_accuracy.push_back(evaluate(spec.train.architecture, model, world.test).value);
        out.sim.reports.push_back(std::move(report));
    }
    out.sim.final_clients = std::move(world.clients);
    return out;
}

}  // namespace detail

/// Runs one seed of the experiment and collects the audit trail plus the
/// per-round held-out test accuracy.
inline RunOutput run_single(const ExperimentSpec& spec, std::uint64_t run_seed) {
    World world = build_world(spec, run_seed);
    if (spec.scenario == Scenario::oracle)
        return detail::run_oracle(spec, std::move(world), run_seed);

    RoundConfig cfg = spec.round;
    cfg.seed = run_seed;
    RunOutput out;
    Dataset test = world.test;
    const Architecture arch = spec.train.architecture;
    auto observer = [&](const RoundReport&, const ParamVector& global) {
        out.test_accuracy.push_back(evaluate(arch, global, test).value);
    };
    out.sim = run_simulation(std::move(world.clients), arch, world.input_dim, cfg, spec.train,
                             spec.attack, policy_for(spec.scenario), observer);
    return out;
}

struct RunSummary {
    std::uint64_t seed = 0;
    std::uint32_t rounds_completed = 0;
    double final_test_accuracy = 0.0;
    double last50_test_accuracy = 0.0;  // mean over the last 50 completed rounds
    std::uint64_t awards = 0;
    std::uint64_t slashes = 0;
    std::uint32_t removed_honest = 0;
    std::uint32_t removed_malicious = 0;
};

inline RunSummary summarize_run(const RunOutput& run, std::uint64_t seed) {
    RunSummary s;
    s.seed = seed;
    s.rounds_completed = static_cast<std::uint32_t>(run.sim.reports.size());
    if (!run.test_accuracy.empty()) {
        s.final_test_accuracy = run.test_accuracy.back();
        const std::size_t tail = std::min<std::size_t>(50, run.test_accuracy.size());
        double sum = 0.0;
        for (std::size_t i = run.test_accuracy.size() - tail; i < run.test_accuracy.size(); ++i)
            sum += run.test_accuracy[i];
        s.last50_test_accuracy = sum / static_cast<double>(tail);
    }
    const auto counts = award_slash_counts(run.sim.reports);
    s.awards = counts.awards;
    s.slashes = counts.slashes;
    for (const auto& c : run.sim.final_clients) {
        if (c.active) continue;
        if (c.malicious) ++s.removed_malicious; else ++s.removed_honest;
    }
    return s;
}

namespace detail {

inline std::string format_eta(double eta) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", eta);
    return buf;
}

}  // namespace detail

/// File-name stem following <experiment>_<eta>_<gamma>_<seed>.
inline std::string run_stem(const ExperimentSpec& spec, std::uint64_t seed) {
    return std::string(scenario_name(spec.scenario)) + "_eta" + detail::format_eta(spec.eta) +
           "_gp" + format_double(spec.round.gamma_p) + "_gv" +
           format_double(spec.round.gamma_v) + "_seed" + std::to_string(seed);
}

inline std::string sweep_stem(const ExperimentSpec& spec) {
    return std::string(scenario_name(spec.scenario)) + "_eta" + detail::format_eta(spec.eta) +
           "_gp" + format_double(spec.round.gamma_p) + "_gv" +
           format_double(spec.round.gamma_v);
}

/// Writes every per-run artifact (chain, round ledger, token series, survival
/// table, summary) under out_dir. Returns the summary.
inline RunSummary write_run_outputs(const ExperimentSpec& spec, std::uint64_t seed,
                                    const RunOutput& run) {
    namespace fs = std::filesystem;
    fs::create_directories(spec.out_dir);
    const std::string base = (fs::path(spec.out_dir) / run_stem(spec, seed)).string();

    write_chain(run.sim.chain, base + ".chain.jsonl");
    write_rounds_csv(base + ".rounds.csv", run.sim.reports, run.test_accuracy);
    write_reports_jsonl(base + ".reports.jsonl", run.sim.reports);
    const auto honest = token_timeseries(run.sim.reports, run.sim.final_clients,
                                         spec.round.initial_tokens, ClientGroup::honest);
    const auto malicious = token_timeseries(run.sim.reports, run.sim.final_clients,
                                            spec.round.initial_tokens, ClientGroup::malicious);
    write_tokens_csv(base + ".tokens.csv", honest, malicious);
    write_survival_csv(base + ".survival.csv",
                       survival_stats(run.sim.reports, run.sim.final_clients));

    const RunSummary s = summarize_run(run, seed);
    nlohmann::json j;
    j["seed"] = s.seed;
    j["rounds_completed"] = s.rounds_completed;
    j["final_test_accuracy"] = s.final_test_accuracy;
    j["last50_test_accuracy"] = s.last50_test_accuracy;
    j["awards"] = s.awards;
    j["slashes"] = s.slashes;
    j["removed_honest"] = s.removed_honest;
    j["removed_malicious"] = s.removed_malicious;
    std::ofstream out(base + ".summary.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + base + ".summary.json");
    out << j.dump(2) << '\n';
    return s;
}

/// Cross-seed aggregate: per round, mean and standard deviation (over seeds)
/// of test accuracy and of the group token means. Truncated to the shortest
/// run when seeds end early.
inline void write_aggregate_csv(const ExperimentSpec& spec,
                                const std::vector<RunOutput>& runs) {
    namespace fs = std::filesystem;
    const std::string path =
        (fs::path(spec.out_dir) / (sweep_stem(spec) + ".aggregate.csv")).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);

    std::size_t rounds = SIZE_MAX;
    for (const auto& r : runs) rounds = std::min(rounds, r.test_accuracy.size());
    if (rounds == SIZE_MAX) rounds = 0;

    std::vector<std::optional<TimeSeries>> honest, malicious;
    for (const auto& r : runs) {
        honest.push_back(token_timeseries(r.sim.reports, r.sim.final_clients,
                                          spec.round.initial_tokens, ClientGroup::honest));
        malicious.push_back(token_timeseries(r.sim.reports, r.sim.final_clients,
                                             spec.round.initial_tokens, ClientGroup::malicious));
    }

    auto mean_std = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        return std::pair<double, double>(mean, std::sqrt(var));
    };

    out << "# per-round statistics across " << runs.size() << " seeds\n";
    out << "# token columns are end-of-round group means; std is across seeds\n";
    out << "round,test_acc_mean,test_acc_std,honest_tokens_mean,honest_tokens_std,"
           "malicious_tokens_mean,malicious_tokens_std\n";
    for (std::size_t t = 0; t < rounds; ++t) {
        std::vector<double> acc, hon, mal;
        for (std::size_t r = 0; r < runs.size(); ++r) {
            acc.push_back(runs[r].test_accuracy[t]);
            if (honest[r]) hon.push_back(honest[r]->mean[t + 1]);
            if (malicious[r]) mal.push_back(malicious[r]->mean[t + 1]);
        }
        const auto [am, as] = mean_std(acc);
        out << t << ',' << format_double(am) << ',' << format_double(as) << ',';
        if (!hon.empty()) {
            const auto [hm, hs] = mean_std(hon);
            out << format_double(hm) << ',' << format_double(hs);
        } else {
            out << ',';
        }
        out << ',';
        if (!mal.empty()) {
            const auto [mm, ms] = mean_std(mal);
            out << format_double(mm) << ',' << format_double(ms);
        } else {
            out << ',';
        }
        out << '\n';
    }
}

/// Runs every seed, writes all artifacts, and returns one summary per seed
/// (in seed order).
inline std::vector<RunSummary> run_experiment(const ExperimentSpec& spec) {
    validate_spec(spec);
    std::vector<std::uint64_t> seeds = spec.seeds;
    std::sort(seeds.begin(), seeds.end());
    std::vector<RunOutput> runs;
    std::vector<RunSummary> summaries;
    for (std::uint64_t seed : seeds) {
        runs.push_back(run_single(spec, seed));
        summaries.push_back(write_run_outputs(spec, seed, runs.back()));
    }
    write_aggregate_csv(spec, runs);
    return summaries;
}

}  // namespace flsim
