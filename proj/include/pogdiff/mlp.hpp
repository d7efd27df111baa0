#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "pogdiff/errors.hpp"
#include "pogdiff/graph.hpp"
#include "pogdiff/rng.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

enum class Activation { tanh, relu, identity };

inline std::string_view activation_name(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::identity: return "identity";
    }
    return "?";
}

inline Activation parse_activation(std::string_view s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw ContractError("unknown activation '" + std::string(s) + "'");
}

/// Layer widths including input and output, e.g. {9, 64, 64, 2}. The
/// activation is applied after every layer except the last.
struct MlpShape {
    std::vector<std::size_t> widths;
    Activation activation = Activation::tanh;

    std::size_t input_dim() const { return widths.front(); }
    std::size_t output_dim() const { return widths.back(); }
    std::size_t num_layers() const { return widths.size() - 1; }

    void validate() const {
        detail::require(widths.size() >= 2, "mlp: need at least input and output widths");
        for (std::size_t w : widths) detail::require(w >= 1, "mlp: zero-width layer");
    }
};

inline std::string layer_weight_name(std::string_view prefix, std::size_t layer) {
    return std::string(prefix) + "layer" + std::to_string(layer) + ".weight";
}
inline std::string layer_bias_name(std::string_view prefix, std::size_t layer) {
    return std::string(prefix) + "layer" + std::to_string(layer) + ".bias";
}

/// Glorot-normal weights, zero biases. Weights are stored [in, out].
inline void mlp_init(ParameterSet& params, const MlpShape& shape, std::string_view prefix, Rng& rng) {
    shape.validate();
    for (std::size_t l = 0; l < shape.num_layers(); ++l) {
        const std::size_t in = shape.widths[l], out = shape.widths[l + 1];
        const double std_dev = std::sqrt(2.0 / static_cast<double>(in + out));
        Tensor w(Shape{in, out});
        for (auto& v : w.data()) v = std_dev * standard_normal(rng);
        params[layer_weight_name(prefix, l)] = std::move(w);
        params[layer_bias_name(prefix, l)] = Tensor(Shape{out});
    }
}

inline Graph::NodeId activate(Graph& g, Graph::NodeId x, Activation a) {
    switch (a) {
        case Activation::tanh: return g.tanh(x);
        case Activation::relu: return g.relu(x);
        case Activation::identity: return x;
    }
    return x;
}

/// Records the MLP on `g`; `x` is [n, input_dim].
inline Graph::NodeId mlp_apply(Graph& g, const MlpShape& shape, const ParameterSet& params,
                               std::string_view prefix, Graph::NodeId x) {
    detail::require_shape(g.value(x).rank() == 2 && g.value(x).cols() == shape.input_dim(),
                          "mlp: input " + shape_str(g.value(x).shape()) + " does not match input width " +
                              std::to_string(shape.input_dim()));
    Graph::NodeId h = x;
    for (std::size_t l = 0; l < shape.num_layers(); ++l) {
        const auto& w = params.at(layer_weight_name(prefix, l));
        const auto& b = params.at(layer_bias_name(prefix, l));
        h = g.add_bias(g.matmul(h, g.parameter(layer_weight_name(prefix, l), w)),
                       g.parameter(layer_bias_name(prefix, l), b));
        if (l + 1 < shape.num_layers()) h = activate(g, h, shape.activation);
    }
    return h;
}

/// Width of the timestep encoding appended to x_t: t/T, sin(pi t/T), cos(pi t/T).
inline constexpr std::size_t kTimeEmbeddingDim = 3;

inline void time_embedding(int t, int num_steps, std::span<double> out) {
    const double u = static_cast<double>(t) / static_cast<double>(num_steps);
    out[0] = u;
    out[1] = std::sin(std::numbers::pi * u);
    out[2] = std::cos(std::numbers::pi * u);
}

/// Noise-prediction network eps(x_t, t, y). Input layout is
/// concat(x_t, time embedding, y).
struct MlpDenoiser {
    std::size_t data_dim = 0;
    std::size_t cond_dim = 0;
    int num_steps = 0;
    MlpShape shape;
    ParameterSet params;

    static MlpDenoiser create(std::size_t data_dim, std::size_t cond_dim, int num_steps,
                              const std::vector<std::size_t>& hidden, Activation activation, Rng& rng) {
        MlpDenoiser m;
        m.data_dim = data_dim;
        m.cond_dim = cond_dim;
        m.num_steps = num_steps;
        m.shape.widths.push_back(data_dim + kTimeEmbeddingDim + cond_dim);
        m.shape.widths.insert(m.shape.widths.end(), hidden.begin(), hidden.end());
        m.shape.widths.push_back(data_dim);
        m.shape.activation = activation;
        mlp_init(m.params, m.shape, "", rng);
        return m;
    }

    void validate() const {
        shape.validate();
        detail::require(num_steps >= 1, "denoiser: num_steps must be >= 1");
        detail::require(shape.input_dim() == data_dim + kTimeEmbeddingDim + cond_dim,
                        "denoiser: input width does not match data/cond dims");
        detail::require(shape.output_dim() == data_dim, "denoiser: output width must equal data dim");
    }
};

/// Builds the [n, d + 3 + c] input matrix for a batch with per-row timesteps.
inline Tensor denoiser_input(const MlpDenoiser& model, const Tensor& x_t, std::span<const int> t, const Tensor& y) {
    detail::require_shape(x_t.rank() == 2 && x_t.cols() == model.data_dim,
                          "denoiser: x_t must be [n, " + std::to_string(model.data_dim) + "], got " +
                              shape_str(x_t.shape()));
    detail::require_shape(y.rank() == 2 && y.cols() == model.cond_dim && y.rows() == x_t.rows(),
                          "denoiser: y must be [n, " + std::to_string(model.cond_dim) + "], got " +
                              shape_str(y.shape()));
    detail::require_shape(t.size() == x_t.rows(), "denoiser: one timestep per row required");
    const std::size_t n = x_t.rows(), width = model.shape.input_dim();
    Tensor in(Shape{n, width});
    for (std::size_t i = 0; i < n; ++i) {
        detail::require(t[i] >= 1 && t[i] <= model.num_steps,
                        "denoiser: timestep " + std::to_string(t[i]) + " outside [1, " +
                            std::to_string(model.num_steps) + "]");
        auto row = in.row(i);
        std::copy(x_t.row(i).begin(), x_t.row(i).end(), row.begin());
        time_embedding(t[i], model.num_steps, row.subspan(model.data_dim, kTimeEmbeddingDim));
        std::copy(y.row(i).begin(), y.row(i).end(), row.begin() + model.data_dim + kTimeEmbeddingDim);
    }
    return in;
}

/// Records eps_theta on `g` and returns the [n, d] prediction node.
inline Graph::NodeId denoise(Graph& g, const MlpDenoiser& model, const Tensor& x_t, std::span<const int> t,
                             const Tensor& y) {
    return mlp_apply(g, model.shape, model.params, "", g.constant(denoiser_input(model, x_t, t, y)));
}

/// Evaluation without keeping a tape around.
inline Tensor mlp_forward(const MlpDenoiser& model, const Tensor& x_t, std::span<const int> t, const Tensor& y) {
    Graph g;
    return g.value(denoise(g, model, x_t, t, y));
}

inline Tensor mlp_forward(const MlpDenoiser& model, const Tensor& x_t, int t, const Tensor& y) {
    std::vector<int> ts(x_t.rank() == 2 ? x_t.rows() : 0, t);
    return mlp_forward(model, x_t, ts, y);
}

}  // namespace pogdiff
