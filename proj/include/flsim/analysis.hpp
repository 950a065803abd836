#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flsim/errors.hpp"
#include "flsim/protocol.hpp"
#include "flsim/rng.hpp"

namespace flsim {

/// Shortest round-trip decimal rendering; keeps every exported file
/// deterministic and re-parseable to the exact double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

struct TheoremParams {
    double gamma_v = 4.0;
    std::uint64_t n_samples = 1'000'000;
    std::uint64_t seed = 1;
};

struct McResult {
    double estimate = 0.0;
    double closed_form = 0.0;
    double std_error = 0.0;  // sample standard error of the estimate
};

/// Monte-Carlo check of the expected return of a dishonest voter: the
/// malicious-voter ratio r is uniform on (0,1); the payoff is -gamma_v when
/// the dishonest side is the minority (r <= 0.5, ties lose) and
/// ((1-r)/r)*gamma_v when it is the majority. Closed form:
/// -(ln(0.5) + 1) * gamma_v.
inline McResult mc_expected_return(const TheoremParams& p) {
    if (p.gamma_v <= 0) throw ConfigError("mc_expected_return: gamma_v must be positive");
    if (p.n_samples < 1) throw ConfigError("mc_expected_return: need at least one sample");
    Rng rng(p.seed);
    double sum = 0.0, sum_sq = 0.0;
    for (std::uint64_t i = 0; i < p.n_samples; ++i) {
        const double r = rng.unit();
        const double payoff = r > 0.5 ? (1.0 - r) / r * p.gamma_v : -p.gamma_v;
        sum += payoff;
        sum_sq += payoff * payoff;
    }
    const double n = static_cast<double>(p.n_samples);
    McResult res;
    res.estimate = sum / n;
    res.closed_form = -(std::log(0.5) + 1.0) * p.gamma_v;
    if (p.n_samples >= 2) {
        const double var = (sum_sq - sum * sum / n) / (n - 1.0);
        res.std_error = std::sqrt(std::max(var, 0.0) / n);
    } else {
        res.std_error = std::numeric_limits<double>::infinity();
    }
    return res;
}

struct SurvivalRecord {
    std::uint32_t client_id = 0;
    bool malicious = false;
    std::optional<std::uint32_t> removal_round;  // nullopt = survived
};

/// Removal round per client: the first round whose removed list names it.
inline std::vector<SurvivalRecord> survival_stats(std::span<const RoundReport> reports,
                                                  std::span<const ClientState> population) {
    std::vector<SurvivalRecord> out;
    out.reserve(population.size());
    for (const auto& c : population) out.push_back({c.id, c.malicious, std::nullopt});
    for (const auto& r : reports)
        for (std::uint32_t id : r.removed)
            if (!out[id].removal_round) out[id].removal_round = r.round_index;
    return out;
}

enum class ClientGroup { honest, malicious };

/// Boundary-state time series: entry t is the state after t completed rounds
/// (entry 0 is the initial state). Mean and population standard deviation
/// over the group; removed clients count as 0 tokens.
struct TimeSeries {
    std::string label;
    std::vector<double> mean;
    std::vector<double> std_dev;
};

/// Reconstructs group token statistics by replaying the recorded deltas.
/// Returns nullopt for an empty group (e.g. malicious series of an all-honest
/// run).
inline std::optional<TimeSeries> token_timeseries(std::span<const RoundReport> reports,
                                                  std::span<const ClientState> population,
                                                  double initial_tokens, ClientGroup group) {
    std::vector<std::uint32_t> members;
    for (const auto& c : population)
        if (c.malicious == (group == ClientGroup::malicious)) members.push_back(c.id);
    if (members.empty()) return std::nullopt;

    std::vector<double> tokens(population.size(), initial_tokens);
    TimeSeries ts;
    ts.label = group == ClientGroup::malicious ? "malicious" : "honest";
    auto push_stats = [&] {
        double mean = 0.0;
        for (std::uint32_t id : members) mean += tokens[id];
        mean /= static_cast<double>(members.size());
        double var = 0.0;
        for (std::uint32_t id : members) {
            const double c = tokens[id] - mean;
            var += c * c;
        }
        var /= static_cast<double>(members.size());
        ts.mean.push_back(mean);
        ts.std_dev.push_back(std::sqrt(var));
    };
    push_stats();
    for (const auto& r : reports) {
        for (const auto& [id, delta] : r.token_deltas) tokens[id] += delta;
        push_stats();
    }
    return ts;
}

struct AwardSlashCounts {
    std::uint64_t awards = 0;   // accepted rounds
    std::uint64_t slashes = 0;  // rejected rounds
    std::vector<std::uint64_t> cumulative_awards;
    std::vector<std::uint64_t> cumulative_slashes;
};

inline AwardSlashCounts award_slash_counts(std::span<const RoundReport> reports) {
    AwardSlashCounts out;
    for (const auto& r : reports) {
        if (r.decision == 1) ++out.awards; else ++out.slashes;
        out.cumulative_awards.push_back(out.awards);
        out.cumulative_slashes.push_back(out.slashes);
    }
    return out;
}

struct CostReport {
    std::uint64_t per_client_comm_bytes = 0;
    std::uint64_t chain_storage_bytes = 0;
};

/// Per-epoch communication cost for one client is the model size; on-chain
/// storage is K model uploads.
inline CostReport cost_report(std::uint64_t param_dim, std::uint64_t bytes_per_value,
                              std::uint64_t clients) {
    if (param_dim == 0 || bytes_per_value == 0 || clients == 0)
        throw ConfigError("cost_report: all inputs must be positive");
    CostReport r;
    r.per_client_comm_bytes = param_dim * bytes_per_value;
    r.chain_storage_bytes = clients * r.per_client_comm_bytes;
    return r;
}

inline std::string format_mib(std::uint64_t bytes) {
    const double mib = static_cast<double>(bytes) / (1024.0 * 1024.0);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", mib);
    return buf;
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    return out;
}

}  // namespace detail

/// Per-round ledger of decisions and diagnostics. test_accuracy may be empty
/// (column left blank) or hold one value per report.
inline void write_rounds_csv(const std::string& path, std::span<const RoundReport> reports,
                             std::span<const double> test_accuracy = {}) {
    auto out = detail::open_out(path);
    out << "# one row per round; decision is +1 (accept) or -1 (reject)\n";
    out << "# honest_validation_mean is the mean validation score of active honest clients\n";
    out << "round,decision,proposers,voters,votes_for,votes_against,removed,"
           "honest_validation_mean,test_accuracy\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        std::size_t yes = 0;
        for (const auto& v : r.votes) yes += v.vote == 1 ? 1 : 0;
        out << r.round_index << ',' << int(r.decision) << ',' << r.proposers.size() << ','
            << r.voters.size() << ',' << yes << ',' << r.votes.size() - yes << ','
            << r.removed.size() << ',' << format_double(r.global_score_snapshot) << ',';
        if (i < test_accuracy.size()) out << format_double(test_accuracy[i]);
        out << '\n';
    }
}

/// Token trajectories for both groups; rows are round boundaries (row 0 =
/// initial state).
inline void write_tokens_csv(const std::string& path,
                             const std::optional<TimeSeries>& honest,
                             const std::optional<TimeSeries>& malicious) {
    auto out = detail::open_out(path);
    out << "# token statistics per round boundary; boundary 0 is the initial state\n";
    out << "# std columns are population standard deviations; empty cells mean empty group\n";
    out << "boundary,honest_mean,honest_std,malicious_mean,malicious_std\n";
    const std::size_t rows =
        std::max(honest ? honest->mean.size() : 0, malicious ? malicious->mean.size() : 0);
    for (std::size_t i = 0; i < rows; ++i) {
        out << i << ',';
        if (honest && i < honest->mean.size())
            out << format_double(honest->mean[i]) << ',' << format_double(honest->std_dev[i]);
        else
            out << ',';
        out << ',';
        if (malicious && i < malicious->mean.size())
            out << format_double(malicious->mean[i]) << ','
                << format_double(malicious->std_dev[i]);
        else
            out << ',';
        out << '\n';
    }
}

/// Structured-text export: one JSON object per round with the full report.
inline void write_reports_jsonl(const std::string& path,
                                std::span<const RoundReport> reports) {
    auto out = detail::open_out(path);
    for (const auto& r : reports) {
        nlohmann::json j;
        j["round"] = r.round_index;
        j["decision"] = int(r.decision);
        j["proposers"] = r.proposers;
        j["voters"] = r.voters;
        nlohmann::json votes = nlohmann::json::array();
        for (const auto& v : r.votes) votes.push_back({v.id, v.score, int(v.vote)});
        j["votes"] = std::move(votes);
        j["majority_set"] = r.majority_set;
        nlohmann::json deltas = nlohmann::json::array();
        for (const auto& [id, d] : r.token_deltas) deltas.push_back({id, d});
        j["token_deltas"] = std::move(deltas);
        j["removed"] = r.removed;
        j["honest_validation_mean"] = r.global_score_snapshot;
        out << j.dump() << '\n';
    }
}

inline void write_survival_csv(const std::string& path,
                               std::span<const SurvivalRecord> records) {
    auto out = detail::open_out(path);
    out << "# removal_round is empty for clients that survived the whole run\n";
    out << "client_id,malicious,removal_round\n";
    for (const auto& r : records) {
        out << r.client_id << ',' << (r.malicious ? 1 : 0) << ',';
        if (r.removal_round) out << *r.removal_round;
        out << '\n';
    }
}

}  // namespace flsim
