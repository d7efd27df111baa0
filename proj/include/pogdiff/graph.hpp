#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pogdiff/errors.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

/// Reverse-mode tape. Nodes are appended in evaluation order, so creation
/// order is a topological order and backward is a single reverse sweep.
///
/// Broadcasting is limited to add_bias ([n, m] + [m]); every other binary op
/// requires identical shapes.
class Graph {
public:
    using NodeId = std::size_t;

    enum class Op {
        constant,
        parameter,
        matmul,
        add_bias,
        add,
        sub,
        mul,
        scale,
        add_scalar,
        tanh,
        relu,
        exp,
        square,
        concat_cols,
        slice_cols,
        row_sum,
        sum,
        mean,
        stop_gradient,
    };

    struct Node {
        Op op;
        std::vector<NodeId> inputs;
        Tensor value;
        bool requires_grad = false;
        double scalar = 0.0;
        std::size_t begin = 0;
        std::size_t end = 0;
        std::string name;
    };

    static Node make_node(Op op, std::vector<NodeId> inputs, Tensor value) {
        Node n;
        n.op = op;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        return n;
    }

    NodeId constant(Tensor t) {
        Node n = make_node(Op::constant, {}, std::move(t));
        return push(std::move(n));
    }

    /// Leaf bound to a named parameter. Repeated requests for the same name
    /// return the same node, so gradients from every use accumulate.
    NodeId parameter(const std::string& name, const Tensor& value) {
        if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
        Node n = make_node(Op::parameter, {}, value);
        n.requires_grad = true;
        n.name = name;
        const NodeId id = push(std::move(n));
        param_nodes_.emplace(name, id);
        return id;
    }

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        detail::require_shape(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(),
                              "matmul: incompatible shapes " + shape_str(A.shape()) + " x " +
                                  shape_str(B.shape()));
        const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
        Tensor out(Shape{n, m});
        for (std::size_t i = 0; i < n; ++i) {
            double* o = &out.data()[i * m];
            for (std::size_t p = 0; p < k; ++p) {
                const double a_ip = A.data()[i * k + p];
                const double* b_row = &B.data()[p * m];
                for (std::size_t j = 0; j < m; ++j) o[j] += a_ip * b_row[j];
            }
        }
        return binary(Op::matmul, a, b, std::move(out));
    }

    NodeId add_bias(NodeId a, NodeId bias) {
        const Tensor& A = value(a);
        const Tensor& b = value(bias);
        detail::require_shape(A.rank() == 2 && b.rank() == 1 && b.size() == A.cols(),
                              "add_bias: expected [n, m] + [m], got " + shape_str(A.shape()) + " + " +
                                  shape_str(b.shape()));
        Tensor out = A;
        const std::size_t m = A.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % m];
        return binary(Op::add_bias, a, bias, std::move(out));
    }

    NodeId add(NodeId a, NodeId b) {
        return elementwise(Op::add, a, b, [](double x, double y) { return x + y; });
    }
    NodeId sub(NodeId a, NodeId b) {
        return elementwise(Op::sub, a, b, [](double x, double y) { return x - y; });
    }
    NodeId mul(NodeId a, NodeId b) {
        return elementwise(Op::mul, a, b, [](double x, double y) { return x * y; });
    }

    NodeId scale(NodeId a, double c) {
        NodeId id = unary(Op::scale, a, [c](double x) { return c * x; });
        nodes_[id].scalar = c;
        return id;
    }

    NodeId add_scalar(NodeId a, double c) {
        NodeId id = unary(Op::add_scalar, a, [c](double x) { return x + c; });
        nodes_[id].scalar = c;
        return id;
    }

    NodeId tanh(NodeId a) { return unary(Op::tanh, a, [](double x) { return std::tanh(x); }); }
    NodeId relu(NodeId a) { return unary(Op::relu, a, [](double x) { return x > 0.0 ? x : 0.0; }); }
    NodeId exp(NodeId a) { return unary(Op::exp, a, [](double x) { return std::exp(x); }); }
    NodeId square(NodeId a) { return unary(Op::square, a, [](double x) { return x * x; }); }

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        detail::require_shape(!parts.empty(), "concat_cols: no inputs");
        const std::size_t n = value(parts.front()).rows();
        std::size_t total = 0;
        for (NodeId p : parts) {
            const Tensor& t = value(p);
            detail::require_shape(t.rank() == 2 && t.rows() == n,
                                  "concat_cols: row count mismatch, got " + shape_str(t.shape()));
            total += t.cols();
        }
        Tensor out(Shape{n, total});
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t off = 0;
            for (NodeId p : parts) {
                const Tensor& t = value(p);
                std::copy(t.row(i).begin(), t.row(i).end(), out.row(i).begin() + off);
                off += t.cols();
            }
        }
        Node node = make_node(Op::concat_cols, parts, std::move(out));
        for (NodeId p : parts) node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
        return push(std::move(node));
    }

    NodeId slice_cols(NodeId a, std::size_t begin, std::size_t end) {
        const Tensor& A = value(a);
        detail::require_shape(A.rank() == 2 && begin < end && end <= A.cols(),
                              "slice_cols: bad range on " + shape_str(A.shape()));
        const std::size_t n = A.rows(), w = end - begin;
        Tensor out(Shape{n, w});
        for (std::size_t i = 0; i < n; ++i)
            std::copy(A.row(i).begin() + begin, A.row(i).begin() + end, out.row(i).begin());
        Node node = make_node(Op::slice_cols, {a}, std::move(out));
        node.requires_grad = nodes_[a].requires_grad;
        node.begin = begin;
        node.end = end;
        return push(std::move(node));
    }

    /// [n, m] -> [n]
    NodeId row_sum(NodeId a) {
        const Tensor& A = value(a);
        detail::require_shape(A.rank() == 2, "row_sum: expected rank 2, got " + shape_str(A.shape()));
        Tensor out(Shape{A.rows()});
        for (std::size_t i = 0; i < A.rows(); ++i)
            for (double v : A.row(i)) out[i] += v;
        Node node = make_node(Op::row_sum, {a}, std::move(out));
        node.requires_grad = nodes_[a].requires_grad;
        return push(std::move(node));
    }

    NodeId sum(NodeId a) {
        double s = 0.0;
        for (double v : value(a).values()) s += v;
        Node node = make_node(Op::sum, {a}, Tensor::scalar(s));
        node.requires_grad = nodes_[a].requires_grad;
        return push(std::move(node));
    }

    NodeId mean(NodeId a) {
        const Tensor& A = value(a);
        detail::require_shape(A.size() > 0, "mean: empty tensor");
        double s = 0.0;
        for (double v : A.values()) s += v;
        Node node = make_node(Op::mean, {a}, Tensor::scalar(s / static_cast<double>(A.size())));
        node.requires_grad = nodes_[a].requires_grad;
        return push(std::move(node));
    }

    /// Identity in the forward pass, zero gradient in the backward pass.
    NodeId stop_gradient(NodeId a) {
        Node node = make_node(Op::stop_gradient, {a}, value(a));
        return push(std::move(node));
    }

    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    const Node& node(NodeId id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient of a scalar node with respect to every parameter leaf.
    /// Parameters that do not influence the loss get zero tensors.
    Gradients backward(NodeId loss) const {
        detail::require(loss < nodes_.size(), "backward: unknown node");
        detail::require(nodes_[loss].value.size() == 1,
                        "backward: loss must be scalar, got " + shape_str(nodes_[loss].value.shape()));
        std::vector<Tensor> grads(loss + 1);
        grads[loss] = Tensor(nodes_[loss].value.shape(), 1.0);
        for (std::size_t k = loss + 1; k-- > 0;) {
            const Node& n = nodes_[k];
            if (!n.requires_grad || grads[k].size() == 0) continue;
            propagate(n, grads[k], grads);
        }
        Gradients out;
        for (const auto& [name, id] : param_nodes_) {
            if (id <= loss && grads[id].size() != 0)
                out.emplace(name, std::move(grads[id]));
            else
                out.emplace(name, Tensor::zeros_like(nodes_[id].value));
        }
        return out;
    }

private:
    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    NodeId binary(Op op, NodeId a, NodeId b, Tensor out) {
        Node n = make_node(op, {a, b}, std::move(out));
        n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
        return push(std::move(n));
    }

    template <class F>
    NodeId elementwise(Op op, NodeId a, NodeId b, F f) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        detail::require_shape(A.shape() == B.shape(), "elementwise op: shape mismatch " + shape_str(A.shape()) +
                                                          " vs " + shape_str(B.shape()));
        Tensor out(A.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i], B[i]);
        return binary(op, a, b, std::move(out));
    }

    template <class F>
    NodeId unary(Op op, NodeId a, F f) {
        const Tensor& A = value(a);
        Tensor out(A.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i]);
        Node n = make_node(op, {a}, std::move(out));
        n.requires_grad = nodes_[a].requires_grad;
        return push(std::move(n));
    }

    void accumulate(std::vector<Tensor>& grads, NodeId id, const Tensor& g) const {
        if (!nodes_[id].requires_grad) return;
        Tensor& dst = grads[id];
        if (dst.size() == 0) {
            dst = g;
            return;
        }
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }

    void propagate(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const {
        auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
        auto map_grad = [&](std::size_t input, auto f) {
            Tensor d(in(input).shape());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = f(i);
            accumulate(grads, n.inputs[input], d);
        };
        switch (n.op) {
            case Op::constant:
            case Op::parameter:
            case Op::stop_gradient:
                return;
            case Op::matmul: {
                const Tensor& A = in(0);
                const Tensor& B = in(1);
                const std::size_t rows = A.rows(), k = A.cols(), m = B.cols();
                if (nodes_[n.inputs[0]].requires_grad) {
                    Tensor dA(A.shape());
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            double s = 0.0;
                            for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * B[p * m + j];
                            dA[i * k + p] = s;
                        }
                    accumulate(grads, n.inputs[0], dA);
                }
                if (nodes_[n.inputs[1]].requires_grad) {
                    Tensor dB(B.shape());
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            const double a_ip = A[i * k + p];
                            for (std::size_t j = 0; j < m; ++j) dB[p * m + j] += a_ip * g[i * m + j];
                        }
                    accumulate(grads, n.inputs[1], dB);
                }
                return;
            }
            case Op::add_bias: {
                accumulate(grads, n.inputs[0], g);
                const std::size_t m = in(1).size();
                Tensor db(in(1).shape());
                for (std::size_t i = 0; i < g.size(); ++i) db[i % m] += g[i];
                accumulate(grads, n.inputs[1], db);
                return;
            }
            case Op::add:
                accumulate(grads, n.inputs[0], g);
                accumulate(grads, n.inputs[1], g);
                return;
            case Op::sub:
                accumulate(grads, n.inputs[0], g);
                map_grad(1, [&](std::size_t i) { return -g[i]; });
                return;
            case Op::mul:
                map_grad(0, [&](std::size_t i) { return g[i] * in(1)[i]; });
                map_grad(1, [&](std::size_t i) { return g[i] * in(0)[i]; });
                return;
            case Op::scale:
                map_grad(0, [&](std::size_t i) { return n.scalar * g[i]; });
                return;
            case Op::add_scalar:
                accumulate(grads, n.inputs[0], g);
                return;
            case Op::tanh:
                map_grad(0, [&](std::size_t i) { return g[i] * (1.0 - n.value[i] * n.value[i]); });
                return;
            case Op::relu:
                map_grad(0, [&](std::size_t i) { return in(0)[i] > 0.0 ? g[i] : 0.0; });
                return;
            case Op::exp:
                map_grad(0, [&](std::size_t i) { return g[i] * n.value[i]; });
                return;
            case Op::square:
                map_grad(0, [&](std::size_t i) { return 2.0 * in(0)[i] * g[i]; });
                return;
            case Op::concat_cols: {
                const std::size_t rows = n.value.rows(), total = n.value.cols();
                std::size_t off = 0;
                for (std::size_t p = 0; p < n.inputs.size(); ++p) {
                    const std::size_t w = in(p).cols();
                    if (nodes_[n.inputs[p]].requires_grad) {
                        Tensor d(in(p).shape());
                        for (std::size_t i = 0; i < rows; ++i)
                            for (std::size_t j = 0; j < w; ++j) d[i * w + j] = g[i * total + off + j];
                        accumulate(grads, n.inputs[p], d);
                    }
                    off += w;
                }
                return;
            }
            case Op::slice_cols: {
                const std::size_t cols = in(0).cols(), w = n.end - n.begin;
                Tensor d(in(0).shape());
                for (std::size_t i = 0; i < in(0).rows(); ++i)
                    for (std::size_t j = 0; j < w; ++j) d[i * cols + n.begin + j] = g[i * w + j];
                accumulate(grads, n.inputs[0], d);
                return;
            }
            case Op::row_sum: {
                const std::size_t cols = in(0).cols();
                map_grad(0, [&](std::size_t i) { return g[i / cols]; });
                return;
            }
            case Op::sum:
                map_grad(0, [&](std::size_t) { return g[0]; });
                return;
            case Op::mean: {
                const double inv = 1.0 / static_cast<double>(in(0).size());
                map_grad(0, [&](std::size_t) { return g[0] * inv; });
                return;
            }
        }
    }

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> param_nodes_;
};

}  // namespace pogdiff
