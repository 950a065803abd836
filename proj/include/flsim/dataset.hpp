#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "flsim/errors.hpp"
#include "flsim/rng.hpp"

namespace flsim {

/// Supervised binary-classification dataset, row-major features.
struct Dataset {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> x;       // n * d
    std::vector<std::int8_t> y;  // n entries in {0, 1}

    std::span<const double> row(std::size_t i) const {
        return {x.data() + i * d, d};
    }

    bool empty() const { return n == 0; }
};

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset out;
    out.n = indices.size();
    out.d = ds.d;
    out.x.reserve(out.n * out.d);
    out.y.reserve(out.n);
    for (std::size_t i : indices) {
        const auto r = ds.row(i);
        out.x.insert(out.x.end(), r.begin(), r.end());
        out.y.push_back(ds.y[i]);
    }
    return out;
}

/// Two isotropic Gaussian clusters with balanced labels. The cluster means sit
/// `class_separation` apart (in units of the per-dimension standard deviation,
/// which is 1).
inline Dataset make_synthetic(std::size_t n, std::size_t d, double class_separation,
                              std::uint64_t seed) {
    if (n < 2 || d < 1) throw ConfigError("make_synthetic: need n >= 2 and d >= 1");
    Dataset ds;
    ds.n = n;
    ds.d = d;
    ds.x.resize(n * d);
    ds.y.resize(n);
    Rng rng(seed);
    const double offset = 0.5 * class_separation / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < n; ++i) {
        const std::int8_t label = static_cast<std::int8_t>(i % 2);
        ds.y[i] = label;
        const double mu = label == 1 ? offset : -offset;
        for (std::size_t j = 0; j < d; ++j) ds.x[i * d + j] = mu + rng.gaussian();
    }
    return ds;
}

struct PartitionMode {
    enum class Kind { iid, label_shard };
    Kind kind = Kind::iid;
    std::size_t shards_per_client = 2;  // label_shard only

    static PartitionMode iid() { return {Kind::iid, 0}; }
    static PartitionMode label_shard(std::size_t shards) {
        return {Kind::label_shard, shards};
    }
};

/// Splits a dataset into K disjoint, exhaustive parts. iid shuffles then
/// slices (sizes differ by at most 1). label_shard sorts by label, cuts
/// K*shards_per_client shards, and deals each client shards_per_client
/// randomly chosen shards; sizes are equal whenever K*shards_per_client
/// divides n (and differ by at most shards_per_client otherwise).
inline std::vector<Dataset> partition(const Dataset& ds, std::size_t clients,
                                      const PartitionMode& mode, std::uint64_t seed) {
    if (clients == 0 || ds.n < clients)
        throw ConfigError("partition: need n >= K >= 1");
    Rng rng(seed);
    std::vector<std::size_t> idx(ds.n);
    std::iota(idx.begin(), idx.end(), 0);

    std::vector<std::vector<std::size_t>> assigned(clients);
    if (mode.kind == PartitionMode::Kind::iid) {
        rng.shuffle(idx);
        const std::size_t base = ds.n / clients;
        const std::size_t extra = ds.n % clients;
        std::size_t pos = 0;
        for (std::size_t k = 0; k < clients; ++k) {
            const std::size_t take = base + (k < extra ? 1 : 0);
            assigned[k].assign(idx.begin() + pos, idx.begin() + pos + take);
            pos += take;
        }
    } else {
        if (mode.shards_per_client == 0)
            throw ConfigError("partition: shards_per_client must be >= 1");
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return ds.y[a] < ds.y[b]; });
        const std::size_t shards = clients * mode.shards_per_client;
        if (ds.n < shards) throw ConfigError("partition: need n >= K * shards_per_client");
        std::vector<std::size_t> shard_order(shards);
        std::iota(shard_order.begin(), shard_order.end(), 0);
        rng.shuffle(shard_order);
        const std::size_t base = ds.n / shards;
        const std::size_t extra = ds.n % shards;
        // shard s covers a contiguous run of the label-sorted index list
        auto shard_begin = [&](std::size_t s) {
            return s * base + std::min(s, extra);
        };
        for (std::size_t k = 0; k < clients; ++k) {
            for (std::size_t j = 0; j < mode.shards_per_client; ++j) {
                const std::size_t s = shard_order[k * mode.shards_per_client + j];
                const std::size_t lo = shard_begin(s);
                const std::size_t hi = shard_begin(s + 1);
                assigned[k].insert(assigned[k].end(), idx.begin() + lo, idx.begin() + hi);
            }
            std::sort(assigned[k].begin(), assigned[k].end());
        }
    }

    std::vector<Dataset> parts;
    parts.reserve(clients);
    for (auto& a : assigned) parts.push_back(subset(ds, a));
    return parts;
}

struct TrainValidationSplit {
    Dataset train;
    Dataset validation;
};

/// 80/20 split of a client's local data into train and private validation.
/// A dataset of size 1 gets an empty validation side.
inline TrainValidationSplit split_train_validation(const Dataset& ds, std::uint64_t seed) {
    if (ds.n == 0) throw ConfigError("split_train_validation: empty dataset");
    std::vector<std::size_t> idx(ds.n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);
    const std::size_t val = ds.n >= 2
        ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(ds.n))))
        : 0;
    const std::size_t train = ds.n - val;
    TrainValidationSplit out;
    out.train = subset(ds, {idx.data(), train});
    out.validation = subset(ds, {idx.data() + train, val});
    return out;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    cells.push_back(trim(cur));
    return cells;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last && std::isfinite(out);
}

}  // namespace detail

/// Loads a headered numeric CSV as a binary-classification dataset.
/// Rows with missing or non-numeric feature cells are dropped. The label
/// column may hold anything; the two most frequent label values are kept
/// (rows with other labels are dropped) and mapped to {0, 1} with the
/// lexicographically smaller value becoming 0. Features are z-score
/// normalized per column; all-constant columns become zero.
inline Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw IoError("load_csv: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw ConfigError("load_csv: empty file " + path);
    const auto header = detail::split_csv_line(line);
    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = i;
    if (label_idx == header.size())
        throw ConfigError("load_csv: unknown label column '" + label_column + "'");
    if (header.size() < 2)
        throw ConfigError("load_csv: need at least one feature column");

    std::vector<std::vector<double>> rows;
    std::vector<std::string> labels;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) continue;  // ragged row counts as missing
        std::vector<double> feats;
        feats.reserve(header.size() - 1);
        bool ok = true;
        std::string label;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == label_idx) {
                label = cells[i];
                if (label.empty()) ok = false;
                continue;
            }
            double v;
            if (!detail::parse_double(cells[i], v)) {
                ok = false;
                break;
            }
            feats.push_back(v);
        }
        if (!ok) continue;
        rows.push_back(std::move(feats));
        labels.push_back(std::move(label));
    }

    std::map<std::string, std::size_t> counts;
    for (const auto& l : labels) ++counts[l];
    if (counts.size() < 2)
        throw ConfigError("load_csv: label column is not binary after filtering");
    std::vector<std::pair<std::string, std::size_t>> by_freq(counts.begin(), counts.end());
    std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::string lab0 = by_freq[0].first, lab1 = by_freq[1].first;
    if (lab1 < lab0) std::swap(lab0, lab1);  // lexicographically smaller -> 0

    Dataset ds;
    ds.d = header.size() - 1;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (labels[i] != lab0 && labels[i] != lab1) continue;
        ds.x.insert(ds.x.end(), rows[i].begin(), rows[i].end());
        ds.y.push_back(labels[i] == lab1 ? 1 : 0);
        ++ds.n;
    }
    if (ds.n < 2) throw ConfigError("load_csv: fewer than 2 usable rows in " + path);

    // z-score per column, guarding zero variance
    for (std::size_t j = 0; j < ds.d; ++j) {
        double mean = 0;
        for (std::size_t i = 0; i < ds.n; ++i) mean += ds.x[i * ds.d + j];
        mean /= static_cast<double>(ds.n);
        double var = 0;
        for (std::size_t i = 0; i < ds.n; ++i) {
            const double c = ds.x[i * ds.d + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(ds.n);
        const double sd = std::sqrt(var);
        for (std::size_t i = 0; i < ds.n; ++i) {
            double& v = ds.x[i * ds.d + j];
            v = sd > 0 ? (v - mean) / sd : 0.0;
        }
    }
    return ds;
}

}  // namespace flsim
