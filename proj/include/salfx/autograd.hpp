#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "salfx/ops.hpp"
#include "salfx/tensor.hpp"

namespace salfx {

/// Handle to a value recorded on a Tape.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

/// Records a forward pass and replays it in reverse to accumulate gradients.
///
/// Nodes that do not depend on any gradient-requiring leaf are never visited
/// during backward, so frozen sub-networks cost nothing beyond their forward
/// pass. A tape is single-use: backward() may be called once.
class Tape {
public:
    /// Constant input. Gradients are tracked only if requested.
    Var input(Tensor value, bool requires_grad = false)
    {
        return push(std::move(value), requires_grad, nullptr, {});
    }

    /// Parameter leaf. Its gradient is added to param.grad on backward unless
    /// `trainable` is false.
    Var param(Parameter& p, bool trainable = true)
    {
        return push(p.value, trainable, &p, {});
    }

    [[nodiscard]] const Tensor& value(Var v) const { return node(v).value; }
    [[nodiscard]] const Tensor& grad(Var v) const { return node(v).grad; }
    [[nodiscard]] bool requires_grad(Var v) const { return node(v).requires_grad; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad)
    {
        Tensor out = ops::conv2d(value(x), value(w), value(b), stride, pad);
        return push(std::move(out), any_grad({x, w, b}), nullptr, [=](Tape& t, const Tensor& g) {
            const bool need_w = t.requires_grad(w) || t.requires_grad(b);
            auto grads = ops::conv2d_backward(t.value(x), t.value(w), g, stride, pad,
                                              t.requires_grad(x), need_w);
            if (t.requires_grad(x)) t.accumulate(x, grads.input);
            if (t.requires_grad(w)) t.accumulate(w, grads.weight);
            if (t.requires_grad(b)) t.accumulate(b, grads.bias);
        });
    }

    Var relu(Var x)
    {
        return push(ops::relu(value(x)), any_grad({x}), nullptr, [=](Tape& t, const Tensor& g) {
            t.accumulate(x, ops::relu_backward(t.value(x), g));
        });
    }

    Var maxpool2d(Var x, std::size_t k, std::size_t stride)
    {
        auto r = ops::maxpool2d_with_indices(value(x), k, stride);
        return push(std::move(r.output), any_grad({x}), nullptr,
                    [=, idx = std::move(r.argmax)](Tape& t, const Tensor& g) {
                        t.accumulate(x, ops::maxpool2d_backward(t.value(x).shape(), idx, g));
                    });
    }

    Var linear(Var x, Var w, Var b)
    {
        Tensor out = ops::linear(value(x), value(w), value(b));
        return push(std::move(out), any_grad({x, w, b}), nullptr, [=](Tape& t, const Tensor& g) {
            const bool need_w = t.requires_grad(w) || t.requires_grad(b);
            auto grads = ops::linear_backward(t.value(x), t.value(w), g, t.requires_grad(x), need_w);
            if (t.requires_grad(x)) t.accumulate(x, grads.input);
            if (t.requires_grad(w)) t.accumulate(w, grads.weight);
            if (t.requires_grad(b)) t.accumulate(b, grads.bias);
        });
    }

    Var bilinear_upsample(Var x, std::size_t out_h, std::size_t out_w)
    {
        Tensor out = ops::bilinear_upsample(value(x), out_h, out_w);
        return push(std::move(out), any_grad({x}), nullptr, [=](Tape& t, const Tensor& g) {
            t.accumulate(x, ops::bilinear_resize_backward(t.value(x).shape(), g));
        });
    }

    Var modulate(Var rgb, Var sal)
    {
        Tensor out = ops::modulate(value(rgb), value(sal));
        return push(std::move(out), any_grad({rgb, sal}), nullptr, [=](Tape& t, const Tensor& g) {
            auto grads = ops::modulate_backward(t.value(rgb), t.value(sal), g, t.requires_grad(rgb),
                                                t.requires_grad(sal));
            if (t.requires_grad(rgb)) t.accumulate(rgb, grads.rgb);
            if (t.requires_grad(sal)) t.accumulate(sal, grads.saliency);
        });
    }

    Var global_avg_pool(Var x)
    {
        return push(ops::global_avg_pool(value(x)), any_grad({x}), nullptr,
                    [=](Tape& t, const Tensor& g) {
                        t.accumulate(x, ops::global_avg_pool_backward(t.value(x).shape(), g));
                    });
    }

    /// Scalar sum of all elements; handy as a test objective.
    Var sum(Var x)
    {
        return push(Tensor::scalar(value(x).sum()), any_grad({x}), nullptr,
                    [=](Tape& t, const Tensor& g) {
                        t.accumulate(x, Tensor(t.value(x).shape(), g[0]));
                    });
    }

    /// Mean cross-entropy; the resulting node is a scalar. Probabilities are
    /// available through probs() afterwards.
    Var softmax_cross_entropy(Var logits, std::vector<int> labels)
    {
        auto ce = ops::softmax_cross_entropy(value(logits), labels);
        probs_ = ce.probs;
        return push(Tensor::scalar(ce.loss), any_grad({logits}), nullptr,
                    [=, p = std::move(ce.probs), l = std::move(labels)](Tape& t, const Tensor& g) {
                        t.accumulate(logits, ops::softmax_cross_entropy_backward(p, l, g[0]));
                    });
    }

    [[nodiscard]] const Tensor& probs() const { return probs_; }

    /// Reverse sweep from a scalar node. Parameter gradients are added to
    /// Parameter::grad; leaf input gradients are readable via grad().
    void backward(Var loss)
    {
        if (nodes_.empty()) throw std::logic_error("backward: no forward pass recorded");
        if (done_) throw std::logic_error("backward: tape already consumed");
        if (loss.id >= nodes_.size()) throw std::logic_error("backward: unknown node");
        if (node(loss).value.numel() != 1)
            throw std::logic_error("backward: loss must be a scalar, got shape " +
                                   to_string(node(loss).value.shape()));
        done_ = true;
        if (!node(loss).requires_grad) return;
        nodes_[loss.id].grad = Tensor::scalar(1.0);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (n.backward) {
                auto fn = std::move(n.backward);
                const Tensor g = n.grad;
                fn(*this, g);
            }
            if (n.param) {
                auto dst = n.param->grad.data();
                auto src = n.grad.data();
                for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
            }
        }
    }

private:
    using BackwardFn = std::function<void(Tape&, const Tensor&)>;

    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Parameter* param = nullptr;
        BackwardFn backward;
    };

    const Node& node(Var v) const
    {
        if (v.id >= nodes_.size()) throw std::logic_error("tape: invalid variable handle");
        return nodes_[v.id];
    }

    bool any_grad(std::initializer_list<Var> vs) const
    {
        for (Var v : vs)
            if (node(v).requires_grad) return true;
        return false;
    }

    Var push(Tensor value, bool requires_grad, Parameter* param, BackwardFn fn)
    {
        if (done_) throw std::logic_error("tape: cannot record after backward");
        nodes_.push_back(Node{std::move(value), {}, requires_grad, param,
                              requires_grad ? std::move(fn) : BackwardFn{}});
        return Var{nodes_.size() - 1};
    }

    void accumulate(Var v, const Tensor& g)
    {
        Node& n = nodes_[v.id];
        if (!n.requires_grad) return;
        if (n.grad.empty()) {
            n.grad = g;
            return;
        }
        for (std::size_t k = 0; k < g.numel(); ++k) n.grad[k] += g[k];
    }

    std::vector<Node> nodes_;
    Tensor probs_;
    bool done_ = false;
};

/// value -= lr * grad for every parameter, then zero all gradients.
inline void sgd_step(std::span<Parameter* const> params, double lr)
{
    if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step: learning rate must be nonnegative");
    for (Parameter* p : params) {
        if (lr != 0.0)
            for (std::size_t k = 0; k < p->value.numel(); ++k) p->value[k] -= lr * p->grad[k];
        p->zero_grad();
    }
}

/// Central-difference gradient of a scalar function. Test oracle.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& input,
                               double eps)
{
    Tensor grad(input.shape());
    Tensor probe = input;
    for (std::size_t i = 0; i < input.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = fn(probe);
        probe[i] = orig - eps;
        const double down = fn(probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

} // namespace salfx
