#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pogdiff/errors.hpp"
#include "pogdiff/rng.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

struct IdentitySpec {
    std::string id;
    std::size_t count = 0;
    std::vector<double> data_center;
    std::vector<double> cond_center;
    double spread = 0.3;
};

struct LabeledSample {
    std::size_t id = 0;
    std::string identity;
    std::vector<double> x0;
    std::vector<double> y;
};

struct DataDims {
    std::size_t data = 2;
    std::size_t condition = 4;
};

class Dataset {
public:
    Dataset() = default;
    Dataset(DataDims dims, std::vector<std::string> identities, std::vector<LabeledSample> samples)
        : dims_(dims), identities_(std::move(identities)), samples_(std::move(samples)) {
        std::set<std::string> known(identities_.begin(), identities_.end());
        detail::require(known.size() == identities_.size(), "dataset: duplicate identity ids");
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            const auto& s = samples_[i];
            detail::require(s.id == i, "dataset: sample ids must be 0..n-1 in order");
            detail::require(known.count(s.identity) == 1, "dataset: undeclared identity '" + s.identity + "'");
            detail::require_shape(s.x0.size() == dims_.data && s.y.size() == dims_.condition,
                                  "dataset: sample " + std::to_string(i) + " has wrong dimensions");
        }
    }

    const DataDims& dims() const { return dims_; }
    const std::vector<std::string>& identities() const { return identities_; }
    const std::vector<LabeledSample>& samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    const LabeledSample& operator[](std::size_t i) const { return samples_.at(i); }

    /// Ground-truth identity of a sample.
    const std::string& identity_of(std::size_t sample_id) const {
        if (sample_id >= samples_.size()) throw ContractError("identity_of: unknown sample id " + std::to_string(sample_id));
        return samples_[sample_id].identity;
    }

    bool same_identity(std::size_t a, std::size_t b) const { return identity_of(a) == identity_of(b); }

    std::vector<std::size_t> members(const std::string& identity) const {
        std::vector<std::size_t> out;
        for (const auto& s : samples_)
            if (s.identity == identity) out.push_back(s.id);
        return out;
    }

    std::map<std::string, std::size_t> counts() const {
        std::map<std::string, std::size_t> out;
        for (const auto& id : identities_) out[id] = 0;
        for (const auto& s : samples_) ++out[s.identity];
        return out;
    }

    /// Mean condition embedding per identity (the prompt used at sampling time).
    std::vector<double> condition_mean(const std::string& identity) const { return mean_of(identity, false); }
    std::vector<double> data_mean(const std::string& identity) const { return mean_of(identity, true); }

    bool operator==(const Dataset& o) const {
        if (dims_.data != o.dims_.data || dims_.condition != o.dims_.condition || identities_ != o.identities_ ||
            samples_.size() != o.samples_.size())
            return false;
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            const auto &a = samples_[i], &b = o.samples_[i];
            if (a.id != b.id || a.identity != b.identity || a.x0 != b.x0 || a.y != b.y) return false;
        }
        return true;
    }

private:
    std::vector<double> mean_of(const std::string& identity, bool data) const {
        std::vector<double> m(data ? dims_.data : dims_.condition, 0.0);
        std::size_t n = 0;
        for (const auto& s : samples_) {
            if (s.identity != identity) continue;
            const auto& v = data ? s.x0 : s.y;
            for (std::size_t i = 0; i < m.size(); ++i) m[i] += v[i];
            ++n;
        }
        detail::require(n > 0, "dataset: identity '" + identity + "' has no samples");
        for (auto& v : m) v /= static_cast<double>(n);
        return m;
    }

    DataDims dims_;
    std::vector<std::string> identities_;
    std::vector<LabeledSample> samples_;
};

/// Minimum distance required between condition centers of distinct identities,
/// as a multiple of the larger intra-class spread.
inline constexpr double kCenterSeparation = 4.0;

/// Draws identity centers: data centers evenly spaced on a circle of
/// `data_radius` in the first two data coordinates (on the line for 1-D
/// data), condition centers from N(0, cond_scale^2 I), re-drawn until every
/// pair is at least kCenterSeparation * spread apart.
inline std::vector<IdentitySpec> layout_identities(const std::vector<std::pair<std::string, std::size_t>>& counts,
                                                   DataDims dims, double spread, double data_radius,
                                                   double cond_scale, Rng& rng) {
    detail::require(!counts.empty(), "layout: no identities");
    detail::require(dims.data >= 1 && dims.condition >= 1, "layout: dimensions must be >= 1");
    detail::require(spread > 0.0 && data_radius > 0.0 && cond_scale > 0.0, "layout: scales must be positive");
    const std::size_t n = counts.size();
    std::vector<IdentitySpec> specs(n);
    for (std::size_t i = 0; i < n; ++i) {
        specs[i].id = counts[i].first;
        specs[i].count = counts[i].second;
        specs[i].spread = spread;
        specs[i].data_center.assign(dims.data, 0.0);
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
        if (dims.data == 1) {
            specs[i].data_center[0] = data_radius * (i % 2 == 0 ? 1.0 : -1.0) * (1.0 + static_cast<double>(i / 2));
        } else {
            specs[i].data_center[0] = data_radius * std::cos(angle);
            specs[i].data_center[1] = data_radius * std::sin(angle);
        }
    }
    const double min_sep = kCenterSeparation * spread;
    for (int attempt = 0;; ++attempt) {
        detail::require(attempt < 10000, "layout: cannot separate condition centers; raise cond_scale");
        for (auto& s : specs) {
            s.cond_center = standard_normal_vector(rng, dims.condition);
            for (auto& v : s.cond_center) v *= cond_scale;
        }
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i)
            for (std::size_t j = i + 1; j < n && ok; ++j)
                ok = std::sqrt(squared_distance(specs[i].cond_center, specs[j].cond_center)) >= min_sep;
        if (ok) break;
    }
    return specs;
}

/// x0 = data_center + spread * N(0, I); y = cond_center + 0.1 * spread * N(0, I).
inline Dataset generate(const std::vector<IdentitySpec>& specs, DataDims dims, std::uint64_t seed) {
    detail::require(!specs.empty(), "generate: need at least one identity");
    detail::require(dims.data >= 1 && dims.condition >= 1, "generate: dimensions must be >= 1");
    std::set<std::string> seen;
    for (const auto& s : specs) {
        detail::require(seen.insert(s.id).second, "generate: duplicate identity id '" + s.id + "'");
        detail::require(s.count >= 2, "generate: identity '" + s.id + "' needs at least 2 samples");
        detail::require(s.spread > 0.0, "generate: spread must be positive");
        detail::require_shape(s.data_center.size() == dims.data && s.cond_center.size() == dims.condition,
                              "generate: center dimensions do not match dims");
    }
    for (std::size_t i = 0; i < specs.size(); ++i)
        for (std::size_t j = i + 1; j < specs.size(); ++j) {
            const double sep = kCenterSeparation * std::max(specs[i].spread, specs[j].spread);
            detail::require(std::sqrt(squared_distance(specs[i].cond_center, specs[j].cond_center)) >= sep,
                            "generate: condition centers of '" + specs[i].id + "' and '" + specs[j].id +
                                "' closer than 4x spread");
        }
    Rng rng(seed);
    std::vector<std::string> ids;
    std::vector<LabeledSample> samples;
    for (const auto& s : specs) {
        ids.push_back(s.id);
        for (std::size_t k = 0; k < s.count; ++k) {
            LabeledSample ls;
            ls.id = samples.size();
            ls.identity = s.id;
            ls.x0 = s.data_center;
            for (auto& v : ls.x0) v += s.spread * standard_normal(rng);
            ls.y = s.cond_center;
            for (auto& v : ls.y) v += 0.1 * s.spread * standard_normal(rng);
            samples.push_back(std::move(ls));
        }
    }
    return Dataset(dims, std::move(ids), std::move(samples));
}

// CSV: sample_id,identity,x_0..x_{d-1},y_0..y_{c-1}; 17 significant digits.

inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
    os << "sample_id,identity";
    for (std::size_t i = 0; i < ds.dims().data; ++i) os << ",x_" << i;
    for (std::size_t i = 0; i < ds.dims().condition; ++i) os << ",y_" << i;
    os << '\n' << std::setprecision(17);
    for (const auto& s : ds.samples()) {
        os << s.id << ',' << s.identity;
        for (double v : s.x0) os << ',' << v;
        for (double v : s.y) os << ',' << v;
        os << '\n';
    }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline Dataset read_dataset_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ContractError("dataset csv: empty input");
    const auto header = split_csv_line(line);
    detail::require(header.size() >= 4 && header[0] == "sample_id" && header[1] == "identity",
                    "dataset csv: bad header");
    DataDims dims{0, 0};
    for (std::size_t i = 2; i < header.size(); ++i) {
        if (header[i].rfind("x_", 0) == 0)
            ++dims.data;
        else if (header[i].rfind("y_", 0) == 0)
            ++dims.condition;
        else
            throw ContractError("dataset csv: unexpected column '" + header[i] + "'");
    }
    std::vector<std::string> ids;
    std::vector<LabeledSample> samples;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        detail::require(cells.size() == header.size(), "dataset csv: ragged row");
        LabeledSample s;
        s.id = std::stoull(cells[0]);
        s.identity = cells[1];
        for (std::size_t i = 0; i < dims.data; ++i) s.x0.push_back(std::stod(cells[2 + i]));
        for (std::size_t i = 0; i < dims.condition; ++i) s.y.push_back(std::stod(cells[2 + dims.data + i]));
        if (std::find(ids.begin(), ids.end(), s.identity) == ids.end()) ids.push_back(s.identity);
        samples.push_back(std::move(s));
    }
    return Dataset(dims, std::move(ids), std::move(samples));
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    write_dataset_csv(os, ds);
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path.string());
    return read_dataset_csv(is);
}

}  // namespace pogdiff
