#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flsim/clients.hpp"
#include "flsim/dataset.hpp"
#include "flsim/errors.hpp"
#include "flsim/learner.hpp"
#include "flsim/protocol.hpp"

namespace flsim {

/// What the population does. The three protocol scenarios vary which actions
/// malicious clients corrupt; the last three are the comparison baselines
/// realized on the same engine (plain FedAVG with and without attackers, and
/// a pooled-data centralized run).
enum class Scenario {
    full,
    honest_proposers_malicious_voters,
    malicious_proposers_honest_voters,
    fedavg_with_malicious,
    fedavg_without_malicious,
    oracle,
};

inline const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::full: return "full";
        case Scenario::honest_proposers_malicious_voters:
            return "honest_proposers_malicious_voters";
        case Scenario::malicious_proposers_honest_voters:
            return "malicious_proposers_honest_voters";
        case Scenario::fedavg_with_malicious: return "fedavg_with_malicious";
        case Scenario::fedavg_without_malicious: return "fedavg_without_malicious";
        case Scenario::oracle: return "oracle";
    }
    return "?";
}

inline Scenario scenario_from_name(const std::string& name) {
    for (Scenario s : {Scenario::full, Scenario::honest_proposers_malicious_voters,
                       Scenario::malicious_proposers_honest_voters,
                       Scenario::fedavg_with_malicious, Scenario::fedavg_without_malicious,
                       Scenario::oracle})
        if (name == scenario_name(s)) return s;
    throw ConfigError("scenario: unknown value '" + name + "'");
}

struct DatasetSpec {
    enum class Kind { synthetic, csv };
    Kind kind = Kind::synthetic;
    std::uint64_t n = 2000;
    std::uint64_t d = 10;
    double separation = 5.0;
    std::string path;          // csv only
    std::string label_column;  // csv only

    bool operator==(const DatasetSpec&) const = default;
};

struct PartitionSpec {
    PartitionMode::Kind mode = PartitionMode::Kind::iid;
    std::uint64_t shards_per_client = 2;

    bool operator==(const PartitionSpec&) const = default;
};

/// Complete description of one experiment sweep (all seeds share everything
/// but the seed itself).
struct ExperimentSpec {
    Scenario scenario = Scenario::malicious_proposers_honest_voters;
    double eta = 0.1;
    std::uint32_t clients = 50;
    RoundConfig round;
    TrainConfig train;
    AttackConfig attack;
    DatasetSpec dataset;
    PartitionSpec partition;
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir = "out";
    bool force = false;

    bool operator==(const ExperimentSpec&) const = default;
};

/// Environment override for the default output root.
inline constexpr const char* kOutRootEnv = "FLSIM_OUT_ROOT";

inline std::string default_out_dir() {
    if (const char* env = std::getenv(kOutRootEnv); env && *env) return env;
    return "out";
}

namespace detail {

inline void require_known_keys(const nlohmann::json& j,
                               std::initializer_list<const char*> known,
                               const std::string& scope) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known)
            if (item.key() == k) ok = true;
        if (!ok)
            throw ConfigError("unknown key '" + (scope.empty() ? item.key() : scope + "." + item.key()) + "'");
    }
}

template <typename T>
inline void read_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("bad value for key '") + key + "'");
        }
    }
}

}  // namespace detail

inline nlohmann::json spec_to_json(const ExperimentSpec& spec) {
    nlohmann::json j;
    j["scenario"] = scenario_name(spec.scenario);
    j["eta"] = spec.eta;
    j["clients"] = spec.clients;
    j["rounds"] = spec.round.rounds;
    j["gamma_p"] = spec.round.gamma_p;
    j["gamma_v"] = spec.round.gamma_v;
    j["epsilon"] = spec.round.epsilon;
    j["initial_tokens"] = spec.round.initial_tokens;
    j["proposer_fraction"] = spec.round.proposer_fraction;
    j["voter_fraction"] = spec.round.voter_fraction;
    j["seeds"] = spec.seeds;
    j["out_dir"] = spec.out_dir;
    j["force"] = spec.force;

    nlohmann::json d;
    d["type"] = spec.dataset.kind == DatasetSpec::Kind::synthetic ? "synthetic" : "csv";
    if (spec.dataset.kind == DatasetSpec::Kind::synthetic) {
        d["n"] = spec.dataset.n;
        d["d"] = spec.dataset.d;
        d["separation"] = spec.dataset.separation;
    } else {
        d["path"] = spec.dataset.path;
        d["label_column"] = spec.dataset.label_column;
    }
    j["dataset"] = std::move(d);

    nlohmann::json p;
    p["mode"] = spec.partition.mode == PartitionMode::Kind::iid ? "iid" : "label_shard";
    if (spec.partition.mode == PartitionMode::Kind::label_shard)
        p["shards_per_client"] = spec.partition.shards_per_client;
    j["partition"] = std::move(p);

    nlohmann::json a;
    a["flip_rate"] = spec.attack.flip_rate;
    a["proximal_weight"] = spec.attack.proximal_weight;
    j["attack"] = std::move(a);

    nlohmann::json t;
    t["learning_rate"] = spec.train.learning_rate;
    t["batch_size"] = spec.train.batch_size;
    t["local_epochs"] = spec.train.local_epochs;
    t["architecture"] =
        spec.train.architecture.kind == Architecture::Kind::logistic ? "logistic" : "mlp";
    if (spec.train.architecture.kind == Architecture::Kind::mlp)
        t["hidden"] = spec.train.architecture.hidden;
    j["train"] = std::move(t);
    return j;
}

/// Parses a spec from structured text, filling documented defaults for anything
/// absent. Unknown keys and malformed values are rejected by name.
inline ExperimentSpec spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be an object");
    detail::require_known_keys(
        j,
        {"scenario", "eta", "clients", "rounds", "gamma_p", "gamma_v", "epsilon",
         "initial_tokens", "proposer_fraction", "voter_fraction", "seeds", "out_dir",
         "force", "dataset", "partition", "attack", "train"},
        "");
    ExperimentSpec spec;
    spec.out_dir = default_out_dir();
    if (j.contains("scenario"))
        spec.scenario = scenario_from_name(j.at("scenario").get<std::string>());
    detail::read_if(j, "eta", spec.eta);
    detail::read_if(j, "clients", spec.clients);
    detail::read_if(j, "rounds", spec.round.rounds);
    detail::read_if(j, "gamma_p", spec.round.gamma_p);
    detail::read_if(j, "gamma_v", spec.round.gamma_v);
    detail::read_if(j, "epsilon", spec.round.epsilon);
    detail::read_if(j, "initial_tokens", spec.round.initial_tokens);
    detail::read_if(j, "proposer_fraction", spec.round.proposer_fraction);
    detail::read_if(j, "voter_fraction", spec.round.voter_fraction);
    detail::read_if(j, "seeds", spec.seeds);
    detail::read_if(j, "out_dir", spec.out_dir);
    detail::read_if(j, "force", spec.force);

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        detail::require_known_keys(d, {"type", "n", "d", "separation", "path", "label_column"},
                                   "dataset");
        std::string type = "synthetic";
        detail::read_if(d, "type", type);
        if (type == "synthetic") spec.dataset.kind = DatasetSpec::Kind::synthetic;
        else if (type == "csv") spec.dataset.kind = DatasetSpec::Kind::csv;
        else throw ConfigError("dataset.type: unknown value '" + type + "'");
        detail::read_if(d, "n", spec.dataset.n);
        detail::read_if(d, "d", spec.dataset.d);
        detail::read_if(d, "separation", spec.dataset.separation);
        detail::read_if(d, "path", spec.dataset.path);
        detail::read_if(d, "label_column", spec.dataset.label_column);
    }
    if (j.contains("partition")) {
        const auto& p = j.at("partition");
        detail::require_known_keys(p, {"mode", "shards_per_client"}, "partition");
        std::string mode = "iid";
        detail::read_if(p, "mode", mode);
        if (mode == "iid") spec.partition.mode = PartitionMode::Kind::iid;
        else if (mode == "label_shard") spec.partition.mode = PartitionMode::Kind::label_shard;
        else throw ConfigError("partition.mode: unknown value '" + mode + "'");
        detail::read_if(p, "shards_per_client", spec.partition.shards_per_client);
    }
    if (j.contains("attack")) {
        const auto& a = j.at("attack");
        detail::require_known_keys(a, {"flip_rate", "proximal_weight"}, "attack");
        detail::read_if(a, "flip_rate", spec.attack.flip_rate);
        detail::read_if(a, "proximal_weight", spec.attack.proximal_weight);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::require_known_keys(
            t, {"learning_rate", "batch_size", "local_epochs", "architecture", "hidden"},
            "train");
        detail::read_if(t, "learning_rate", spec.train.learning_rate);
        detail::read_if(t, "batch_size", spec.train.batch_size);
        detail::read_if(t, "local_epochs", spec.train.local_epochs);
        std::string arch = "logistic";
        detail::read_if(t, "architecture", arch);
        if (arch == "logistic") {
            spec.train.architecture = Architecture::logistic();
        } else if (arch == "mlp") {
            std::vector<std::size_t> hidden = {16};
            detail::read_if(t, "hidden", hidden);
            spec.train.architecture = Architecture::mlp(hidden);
        } else {
            throw ConfigError("train.architecture: unknown value '" + arch + "'");
        }
    }
    return spec;
}

inline ExperimentSpec spec_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    return spec_from_json(j);
}

/// Optional command-line overrides, applied on top of a file spec.
struct SpecOverrides {
    std::optional<std::string> scenario;
    std::optional<double> eta, gamma_p, gamma_v, epsilon, initial_tokens;
    std::optional<double> proposer_fraction, voter_fraction;
    std::optional<std::uint32_t> clients, rounds;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::optional<std::string> dataset_kind, csv_path, label_column;
    std::optional<std::uint64_t> synthetic_n, synthetic_d;
    std::optional<double> separation;
    std::optional<std::string> partition_mode;
    std::optional<std::uint64_t> shards_per_client;
    std::optional<double> flip_rate, proximal_weight, learning_rate;
    std::optional<std::uint64_t> batch_size, local_epochs;
    std::optional<std::string> architecture;
    std::optional<std::vector<std::size_t>> hidden;
    std::optional<std::string> out_dir;
    bool force = false;
};

inline void apply_overrides(ExperimentSpec& spec, const SpecOverrides& ov) {
    if (ov.scenario) spec.scenario = scenario_from_name(*ov.scenario);
    if (ov.eta) spec.eta = *ov.eta;
    if (ov.gamma_p) spec.round.gamma_p = *ov.gamma_p;
    if (ov.gamma_v) spec.round.gamma_v = *ov.gamma_v;
    if (ov.epsilon) spec.round.epsilon = *ov.epsilon;
    if (ov.initial_tokens) spec.round.initial_tokens = *ov.initial_tokens;
    if (ov.proposer_fraction) spec.round.proposer_fraction = *ov.proposer_fraction;
    if (ov.voter_fraction) spec.round.voter_fraction = *ov.voter_fraction;
    if (ov.clients) spec.clients = *ov.clients;
    if (ov.rounds) spec.round.rounds = *ov.rounds;
    if (ov.seeds) spec.seeds = *ov.seeds;
    if (ov.dataset_kind) {
        if (*ov.dataset_kind == "synthetic") spec.dataset.kind = DatasetSpec::Kind::synthetic;
        else if (*ov.dataset_kind == "csv") spec.dataset.kind = DatasetSpec::Kind::csv;
        else throw ConfigError("dataset: unknown value '" + *ov.dataset_kind + "'");
    }
    if (ov.csv_path) spec.dataset.path = *ov.csv_path;
    if (ov.label_column) spec.dataset.label_column = *ov.label_column;
    if (ov.synthetic_n) spec.dataset.n = *ov.synthetic_n;
    if (ov.synthetic_d) spec.dataset.d = *ov.synthetic_d;
    if (ov.separation) spec.dataset.separation = *ov.separation;
    if (ov.partition_mode) {
        if (*ov.partition_mode == "iid") spec.partition.mode = PartitionMode::Kind::iid;
        else if (*ov.partition_mode == "label_shard")
            spec.partition.mode = PartitionMode::Kind::label_shard;
        else throw ConfigError("partition: unknown value '" + *ov.partition_mode + "'");
    }
    if (ov.shards_per_client) spec.partition.shards_per_client = *ov.shards_per_client;
    if (ov.flip_rate) spec.attack.flip_rate = *ov.flip_rate;
    if (ov.proximal_weight) spec.attack.proximal_weight = *ov.proximal_weight;
    if (ov.learning_rate) spec.train.learning_rate = *ov.learning_rate;
    if (ov.batch_size) spec.train.batch_size = *ov.batch_size;
    if (ov.local_epochs) spec.train.local_epochs = *ov.local_epochs;
    if (ov.architecture) {
        if (*ov.architecture == "logistic") spec.train.architecture = Architecture::logistic();
        else if (*ov.architecture == "mlp")
            spec.train.architecture = Architecture::mlp(ov.hidden.value_or(std::vector<std::size_t>{16}));
        else throw ConfigError("architecture: unknown value '" + *ov.architecture + "'");
    } else if (ov.hidden) {
        if (spec.train.architecture.kind != Architecture::Kind::mlp)
            throw ConfigError("hidden: only valid with the mlp architecture");
        spec.train.architecture.hidden = *ov.hidden;
    }
    if (ov.out_dir) spec.out_dir = *ov.out_dir;
    if (ov.force) spec.force = true;
}

/// Range checks; every error names the offending key. eta at or above the
/// 50% honest-majority assumption needs force.
inline void validate_spec(const ExperimentSpec& spec) {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (spec.eta < 0.0 || spec.eta > 1.0) fail("eta: must be in [0, 1]");
    if (spec.eta >= 0.5 && !spec.force)
        fail("eta: values at or above 0.5 break the honest-majority assumption; "
             "pass --force for stress runs");
    if (spec.clients < 2) fail("clients: need at least 2");
    if (spec.round.gamma_p <= 0) fail("gamma_p: must be positive");
    if (spec.round.gamma_v <= 0) fail("gamma_v: must be positive");
    if (spec.round.epsilon <= 0 || spec.round.epsilon >= 1) fail("epsilon: must be in (0, 1)");
    if (spec.round.initial_tokens <= 0) fail("initial_tokens: must be positive");
    if (spec.round.proposer_fraction <= 0 || spec.round.proposer_fraction >= 1)
        fail("proposer_fraction: must be in (0, 1)");
    if (spec.round.voter_fraction <= 0 || spec.round.voter_fraction > 1)
        fail("voter_fraction: must be in (0, 1]");
    if (spec.seeds.empty()) fail("seeds: need at least one seed");
    if (spec.attack.flip_rate <= 0 || spec.attack.flip_rate > 1)
        fail("attack.flip_rate: must be in (0, 1]");
    if (spec.attack.proximal_weight < 0) fail("attack.proximal_weight: must be >= 0");
    if (spec.train.learning_rate <= 0) fail("train.learning_rate: must be positive");
    if (spec.train.batch_size < 1) fail("train.batch_size: must be >= 1");
    if (spec.train.architecture.kind == Architecture::Kind::mlp) {
        if (spec.train.architecture.hidden.empty())
            fail("train.hidden: mlp needs at least one hidden layer");
        for (std::size_t h : spec.train.architecture.hidden)
            if (h < 1) fail("train.hidden: layer sizes must be >= 1");
    }
    if (spec.dataset.kind == DatasetSpec::Kind::synthetic) {
        if (spec.dataset.d < 1) fail("dataset.d: must be >= 1");
        if (spec.dataset.n < 2ull * spec.clients)
            fail("dataset.n: need at least 2 examples per client");
        if (spec.dataset.separation < 0) fail("dataset.separation: must be >= 0");
    } else {
        if (spec.dataset.path.empty()) fail("dataset.path: required for csv datasets");
        if (spec.dataset.label_column.empty())
            fail("dataset.label_column: required for csv datasets");
    }
    if (spec.partition.mode == PartitionMode::Kind::label_shard &&
        spec.partition.shards_per_client < 1)
        fail("partition.shards_per_client: must be >= 1");
}

}  // namespace flsim
