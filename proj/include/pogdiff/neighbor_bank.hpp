#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pogdiff/dataset.hpp"
#include "pogdiff/errors.hpp"
#include "pogdiff/rng.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

/// Maps a data vector to the feature space used for similarity.
using Embedder = std::function<std::vector<double>(std::span<const double>)>;

inline std::vector<double> identity_embedding(std::span<const double> x) { return {x.begin(), x.end()}; }

struct Neighbor {
    std::size_t id = 0;
    double similarity = 0.0;
};

struct NeighborDraw {
    std::size_t neighbor = 0;
    double similarity = 0.0;
    double weight = 0.0;
    bool same_identity = false;
};

/// Sampling weights for one query: s_j / sum(s) over the positive
/// similarities; non-positive entries get weight 0. Uniform when no
/// similarity is positive.
inline std::vector<double> neighbor_weights(std::span<const double> similarities) {
    std::vector<double> w(similarities.size(), 0.0);
    double total = 0.0;
    for (double s : similarities)
        if (s > 0.0) total += s;
    if (total <= 0.0) {
        std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
        return w;
    }
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = similarities[j] > 0.0 ? similarities[j] / total : 0.0;
    return w;
}

/// Index of a draw from Categorical(weights).
inline std::size_t sample_categorical(std::span<const double> weights, Rng& rng) {
    const double u = uniform01(rng);
    double cum = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (weights[j] <= 0.0) continue;
        cum += weights[j];
        last_positive = j;
        if (u < cum) return j;
    }
    return last_positive;
}

/// Cosine kNN over data embeddings, computed once by exhaustive scan.
/// Neighbor lists exclude the query itself and are sorted by similarity
/// descending, ties broken by ascending sample id.
class EmbeddingIndex {
public:
    struct Entry {
        std::size_t id = 0;
        std::string identity;
        std::vector<double> embedding;
        std::vector<double> condition;
    };

    EmbeddingIndex(const Dataset& data, const Embedder& embed, std::size_t k) : k_(k) {
        detail::require(data.size() >= 2, "build_index: need at least 2 samples");
        detail::require(k >= 1 && k < data.size(), "build_index: k must satisfy 1 <= k < n (k=" +
                                                       std::to_string(k) + ", n=" + std::to_string(data.size()) + ")");
        entries_.reserve(data.size());
        for (const auto& s : data.samples()) {
            Entry e{s.id, s.identity, embed(s.x0), s.y};
            detail::require(squared_norm(e.embedding) > 0.0,
                            "build_index: zero-norm embedding for sample " + std::to_string(s.id));
            if (!entries_.empty())
                detail::require_shape(e.embedding.size() == entries_.front().embedding.size(),
                                      "build_index: embeddings differ in dimension");
            entries_.push_back(std::move(e));
        }
        const std::size_t n = entries_.size();
        neighbors_.resize(n);
        weights_.resize(n);
        for (std::size_t q = 0; q < n; ++q) {
            std::vector<Neighbor> all;
            all.reserve(n - 1);
            for (std::size_t j = 0; j < n; ++j)
                if (j != q) all.push_back({j, cosine_similarity(entries_[q].embedding, entries_[j].embedding)});
            std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                              [](const Neighbor& a, const Neighbor& b) {
                                  return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
                              });
            all.resize(k);
            std::vector<double> s(k);
            for (std::size_t j = 0; j < k; ++j) s[j] = all[j].similarity;
            weights_[q] = neighbor_weights(s);
            neighbors_[q] = std::move(all);
        }
    }

    std::size_t k() const { return k_; }
    std::size_t size() const { return entries_.size(); }
    const Entry& entry(std::size_t id) const { return entries_.at(id); }
    const std::vector<Neighbor>& neighbors(std::size_t query) const { return neighbors_.at(check(query)); }
    const std::vector<double>& weights(std::size_t query) const { return weights_.at(check(query)); }

    NeighborDraw sample(std::size_t query, Rng& rng) const {
        const auto& nb = neighbors_[check(query)];
        const auto& w = weights_[query];
        const std::size_t j = sample_categorical(w, rng);
        return {nb[j].id, nb[j].similarity, w[j], entries_[nb[j].id].identity == entries_[query].identity};
    }

private:
    std::size_t check(std::size_t query) const {
        if (query >= entries_.size()) throw ContractError("index: unknown query id " + std::to_string(query));
        return query;
    }

    std::size_t k_;
    std::vector<Entry> entries_;
    std::vector<std::vector<Neighbor>> neighbors_;
    std::vector<std::vector<double>> weights_;
};

inline EmbeddingIndex build_index(const Dataset& data, const Embedder& embed, std::size_t k) {
    return EmbeddingIndex(data, embed, k);
}

inline NeighborDraw sample_neighbor(const EmbeddingIndex& index, std::size_t query, Rng& rng) {
    return index.sample(query, rng);
}

/// Identity-aware image similarity max(0, s)^(a1 + a2 * [different identity]).
/// Clamping happens before the power so negative similarities never reach pow.
inline double img_similarity(double s, bool same_identity, double a1, double a2) {
    detail::require(a1 > 0.0 && a2 > 0.0, "img_similarity: a1 and a2 must be positive");
    const double base = std::clamp(s, 0.0, 1.0);
    return std::pow(base, a1 + (same_identity ? 0.0 : a2));
}

/// Audit dump: query_id,neighbor_id,s,w.
inline void write_index_csv(std::ostream& os, const EmbeddingIndex& index) {
    os << "query_id,neighbor_id,s,w\n" << std::setprecision(17);
    for (std::size_t q = 0; q < index.size(); ++q) {
        const auto& nb = index.neighbors(q);
        const auto& w = index.weights(q);
        for (std::size_t j = 0; j < nb.size(); ++j) os << q << ',' << nb[j].id << ',' << nb[j].similarity << ',' << w[j] << '\n';
    }
}

}  // namespace pogdiff
