#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "salfx/autograd.hpp"
#include "salfx/maps.hpp"
#include "salfx/ops.hpp"
#include "salfx/rng.hpp"
#include "salfx/tensor.hpp"

namespace salfx {

/// Geometry of the two-branch network.
///
/// RGB branch:       conv5/2 -> relu -> pool2 -> conv3 -> relu -> conv3 -> relu   (input/4)
/// Saliency branch:  conv5/2 -> relu -> pool2 -> conv3 -> relu -> pool2 -> conv3 -> relu
///                   -> conv1x1 -> relu                                          (input/8)
/// The saliency map is upsampled to the RGB resolution, fused by modulation,
/// and classified by the shared head: conv3 -> relu -> global average -> linear.
struct NetworkConfig {
    std::size_t input_size = 64;
    std::vector<std::size_t> rgb_channels{16, 32, 32};
    std::vector<std::size_t> saliency_channels{16, 32, 48, 1};
    std::size_t head_channels = 32;
    std::size_t num_classes = 8;
    std::size_t modulation_height = 16;
    std::size_t modulation_width = 16;
    std::uint64_t seed = 0;

    /// Config for a square input, with the modulation grid derived from it.
    static NetworkConfig for_input(std::size_t input_size, std::size_t num_classes)
    {
        NetworkConfig c;
        c.input_size = input_size;
        c.num_classes = num_classes;
        c.modulation_height = c.modulation_width = input_size / 4;
        return c;
    }

    [[nodiscard]] std::size_t saliency_resolution() const { return input_size / 8; }

    void validate() const
    {
        if (input_size < 8 || input_size % 8 != 0)
            throw std::invalid_argument("NetworkConfig: input_size must be a positive multiple of 8");
        if (rgb_channels.size() != 3) throw std::invalid_argument("NetworkConfig: RGB branch needs 3 stages");
        if (saliency_channels.size() != 4)
            throw std::invalid_argument("NetworkConfig: saliency branch needs 4 stages");
        if (saliency_channels.back() != 1)
            throw std::invalid_argument("NetworkConfig: saliency branch must end in one channel");
        if (modulation_height != input_size / 4 || modulation_width != input_size / 4)
            throw std::invalid_argument("NetworkConfig: modulation resolution must equal the RGB "
                                        "feature resolution input_size/4");
        if (num_classes < 2) throw std::invalid_argument("NetworkConfig: need at least 2 classes");
        auto positive = [](const std::vector<std::size_t>& v) {
            return std::all_of(v.begin(), v.end(), [](std::size_t c) { return c > 0; });
        };
        if (!positive(rgb_channels) || !positive(saliency_channels) || head_channels == 0)
            throw std::invalid_argument("NetworkConfig: channel counts must be positive");
    }
};

enum class TrainingPhase { initialized = 0, pretrained = 1, selective = 2 };

/// Parameters of the RGB branch, saliency branch and shared head, plus the
/// set of frozen parameter names.
class TwoBranchNet {
public:
    explicit TwoBranchNet(NetworkConfig config) : config_(std::move(config))
    {
        config_.validate();
        const auto& r = config_.rgb_channels;
        const auto& s = config_.saliency_channels;
        add_conv(rgb_, "rgb.conv1", 3, r[0], 5);
        add_conv(rgb_, "rgb.conv2", r[0], r[1], 3);
        add_conv(rgb_, "rgb.conv3", r[1], r[2], 3);
        add_conv(sal_, "sal.conv1", 3, s[0], 5);
        add_conv(sal_, "sal.conv2", s[0], s[1], 3);
        add_conv(sal_, "sal.conv3", s[1], s[2], 3);
        add_conv(sal_, "sal.conv4", s[2], s[3], 1);
        add_conv(head_, "head.conv", r[2], config_.head_channels, 3);
        head_.emplace_back("head.fc.weight", Tensor::zeros(Shape{config_.num_classes, config_.head_channels}));
        head_.emplace_back("head.fc.bias", Tensor::zeros(Shape{config_.num_classes}));
    }

    TwoBranchNet(const TwoBranchNet&) = default;
    TwoBranchNet& operator=(const TwoBranchNet&) = default;

    [[nodiscard]] const NetworkConfig& config() const noexcept { return config_; }

    std::vector<Parameter>& rgb_params() noexcept { return rgb_; }
    std::vector<Parameter>& saliency_params() noexcept { return sal_; }
    std::vector<Parameter>& head_params() noexcept { return head_; }
    [[nodiscard]] const std::vector<Parameter>& rgb_params() const noexcept { return rgb_; }
    [[nodiscard]] const std::vector<Parameter>& saliency_params() const noexcept { return sal_; }
    [[nodiscard]] const std::vector<Parameter>& head_params() const noexcept { return head_; }

    /// All parameters in checkpoint order: rgb, saliency, head.
    std::vector<Parameter*> parameters()
    {
        std::vector<Parameter*> out;
        for (auto* group : {&rgb_, &sal_, &head_})
            for (auto& p : *group) out.push_back(&p);
        return out;
    }
    [[nodiscard]] std::vector<const Parameter*> parameters() const
    {
        std::vector<const Parameter*> out;
        for (auto* group : {&rgb_, &sal_, &head_})
            for (auto& p : *group) out.push_back(&p);
        return out;
    }

    Parameter& param(std::string_view name)
    {
        for (Parameter* p : parameters())
            if (p->name == name) return *p;
        throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    }
    [[nodiscard]] const Parameter& param(std::string_view name) const
    {
        return const_cast<TwoBranchNet&>(*this).param(name);
    }

    [[nodiscard]] const std::set<std::string>& frozen() const noexcept { return frozen_; }
    [[nodiscard]] bool is_frozen(const std::string& name) const { return frozen_.count(name) != 0; }
    void set_frozen(std::set<std::string> names) { frozen_ = std::move(names); }

    /// Freeze everything except the saliency branch.
    void freeze_for_selective_training()
    {
        frozen_.clear();
        for (const auto& p : rgb_) frozen_.insert(p.name);
        for (const auto& p : head_) frozen_.insert(p.name);
    }

    [[nodiscard]] TrainingPhase phase() const noexcept { return phase_; }
    void set_phase(TrainingPhase p) noexcept { phase_ = p; }

private:
    static void add_conv(std::vector<Parameter>& group, const std::string& name, std::size_t cin,
                         std::size_t cout, std::size_t k)
    {
        group.emplace_back(name + ".weight", Tensor::zeros(Shape{cout, cin, k, k}));
        group.emplace_back(name + ".bias", Tensor::zeros(Shape{cout}));
    }

    NetworkConfig config_;
    std::vector<Parameter> rgb_;
    std::vector<Parameter> sal_;
    std::vector<Parameter> head_;
    std::set<std::string> frozen_;
    TrainingPhase phase_ = TrainingPhase::initialized;
};

/// Xavier/Glorot uniform initialization: weights ~ U(-a, a) with
/// a = sqrt(6 / (fan_in + fan_out)); biases zero. Each weight tensor draws from
/// its own stream seeded by (seed, parameter name).
inline void init_xavier(std::span<Parameter* const> params, std::uint64_t seed)
{
    for (Parameter* p : params) {
        const Shape& s = p->value.shape();
        if (s.size() == 1) {
            p->value.fill(0.0);
        } else {
            const std::size_t receptive = s.size() == 4 ? s[2] * s[3] : 1;
            const double fan_in = static_cast<double>(s[1] * receptive);
            const double fan_out = static_cast<double>(s[0] * receptive);
            const double a = std::sqrt(6.0 / (fan_in + fan_out));
            Rng rng(derive_seed(seed, p->name));
            for (double& v : p->value.data()) v = rng.uniform(-a, a);
        }
        p->zero_grad();
    }
}

inline void init_xavier(TwoBranchNet& net, std::uint64_t seed)
{
    init_xavier(net.parameters(), seed);
}

/// ReLU-gain uniform initialization: a = sqrt(6 / fan_in), biases zero.
inline void init_he(std::span<Parameter* const> params, std::uint64_t seed)
{
    for (Parameter* p : params) {
        const Shape& s = p->value.shape();
        if (s.size() == 1) {
            p->value.fill(0.0);
        } else {
            const double fan_in = static_cast<double>(p->value.numel() / s[0]);
            const double a = std::sqrt(6.0 / fan_in);
            Rng rng(derive_seed(seed, p->name));
            for (double& v : p->value.data()) v = rng.uniform(-a, a);
        }
        p->zero_grad();
    }
}

/// Xavier weights for the saliency branch, with a nonnegative final projection.
inline void init_saliency_branch(TwoBranchNet& net, std::uint64_t seed)
{
    std::vector<Parameter*> sal;
    for (Parameter& p : net.saliency_params()) sal.push_back(&p);
    init_xavier(sal, seed);
    // The branch ends in one ReLU unit fed by nonnegative features. With a
    // random-sign projection it is dead on every input about half the time
    // and never receives a gradient, so the projection keeps the Xavier
    // magnitudes but starts nonnegative.
    Parameter& proj = net.param("sal.conv4.weight");
    for (double& v : proj.value.data()) v = std::abs(v);
}

/// Starting point for the two-phase protocol. The saliency branch gets Xavier
/// weights. The RGB branch and head stand in for pretrained weights and only
/// need to be trainable from scratch, so they use the ReLU gain; with Xavier
/// the pooled features of a five-layer ReLU stack start near 1e-4 and plain
/// SGD stalls.
inline void init_network(TwoBranchNet& net, std::uint64_t seed)
{
    std::vector<Parameter*> rest;
    for (Parameter* p : net.parameters())
        if (!p->name.starts_with("sal.")) rest.push_back(p);
    init_he(rest, seed);
    init_saliency_branch(net, seed);
}

// Graph builders. With a const net every parameter enters the tape as a
// constant; with a mutable net, non-frozen parameters collect gradients when
// `grads` is set.
namespace graph {

template <class Net>
Var bind_param(Tape& t, Net& net, std::string_view name, bool grads)
{
    if constexpr (std::is_const_v<Net>) {
        return t.input(net.param(name).value);
    } else {
        Parameter& p = net.param(name);
        return t.param(p, grads && !net.is_frozen(p.name));
    }
}

template <class Net>
Var conv(Tape& t, Net& net, const std::string& layer, Var x, std::size_t stride, std::size_t pad,
         bool grads)
{
    return t.conv2d(x, bind_param(t, net, layer + ".weight", grads), bind_param(t, net, layer + ".bias", grads),
                    stride, pad);
}

template <class Net>
Var rgb_branch(Tape& t, Net& net, Var image, bool grads)
{
    Var x = t.relu(conv(t, net, "rgb.conv1", image, 2, 2, grads));
    x = t.maxpool2d(x, 2, 2);
    x = t.relu(conv(t, net, "rgb.conv2", x, 1, 1, grads));
    return t.relu(conv(t, net, "rgb.conv3", x, 1, 1, grads));
}

/// Native-resolution saliency map [N,1,input/8,input/8].
template <class Net>
Var saliency_branch(Tape& t, Net& net, Var image, bool grads)
{
    Var x = t.relu(conv(t, net, "sal.conv1", image, 2, 2, grads));
    x = t.maxpool2d(x, 2, 2);
    x = t.relu(conv(t, net, "sal.conv2", x, 1, 1, grads));
    x = t.maxpool2d(x, 2, 2);
    x = t.relu(conv(t, net, "sal.conv3", x, 1, 1, grads));
    return t.relu(conv(t, net, "sal.conv4", x, 1, 0, grads));
}

template <class Net>
Var head(Tape& t, Net& net, Var features, bool grads)
{
    Var x = t.relu(conv(t, net, "head.conv", features, 1, 1, grads));
    x = t.global_avg_pool(x);
    return t.linear(x, bind_param(t, net, "head.fc.weight", grads), bind_param(t, net, "head.fc.bias", grads));
}

enum class SaliencyMode {
    active,   ///< R is modulated by the upsampled saliency map
    disabled, ///< S is forced to zero, so the modulated features equal R
};

/// Class logits [N,K].
template <class Net>
Var logits(Tape& t, Net& net, Var image, SaliencyMode mode, bool grads)
{
    Var r = rgb_branch(t, net, image, grads);
    if (mode == SaliencyMode::disabled) return head(t, net, r, grads);
    const auto& cfg = net.config();
    Var s = t.bilinear_upsample(saliency_branch(t, net, image, grads), cfg.modulation_height,
                                cfg.modulation_width);
    return head(t, net, t.modulate(r, s), grads);
}

} // namespace graph

namespace detail {

inline void check_images(const Tensor& images, const NetworkConfig& cfg)
{
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg.input_size ||
        images.dim(3) != cfg.input_size)
        throw ShapeError("expected images [N,3," + std::to_string(cfg.input_size) + "," +
                         std::to_string(cfg.input_size) + "], got " + to_string(images.shape()));
}

} // namespace detail

/// Saliency branch output before upsampling, [N,1,input/8,input/8].
inline Tensor saliency_branch_forward(const Tensor& images, const TwoBranchNet& net)
{
    detail::check_images(images, net.config());
    Tape t;
    return t.value(graph::saliency_branch(t, net, t.input(images), false));
}

/// Class probabilities p(y|I), [N,K].
inline Tensor forward(const Tensor& images, const TwoBranchNet& net,
                      graph::SaliencyMode mode = graph::SaliencyMode::active)
{
    detail::check_images(images, net.config());
    Tape t;
    return ops::softmax(t.value(graph::logits(t, net, t.input(images), mode, false)));
}

/// Images [3,H,W] with integer class labels.
struct LabeledSet {
    std::vector<Tensor> images;
    std::vector<int> labels;

    [[nodiscard]] std::size_t size() const noexcept { return images.size(); }
};

/// Stack images at the given indices into [N,3,H,W].
inline Tensor stack_batch(const LabeledSet& data, std::span<const std::size_t> idx)
{
    const Shape& s = data.images.at(idx.front()).shape();
    Tensor batch(Shape{idx.size(), s[0], s[1], s[2]});
    const std::size_t n = s[0] * s[1] * s[2];
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& img = data.images.at(idx[b]);
        if (img.shape() != s) throw ShapeError("stack_batch: image " + std::to_string(idx[b]) + " has shape " + to_string(img.shape()));
        std::copy(img.data().begin(), img.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(b * n));
    }
    return batch;
}

struct TrainOptions {
    std::size_t epochs = 1;
    double lr = 0.05;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    const LabeledSet* heldout = nullptr;
    /// Called after every batch with (epoch, batch, loss).
    std::function<void(std::size_t, std::size_t, double)> on_batch;
};

struct TrainLog {
    std::vector<double> batch_losses;
    std::vector<double> epoch_losses;
    double heldout_accuracy = std::numeric_limits<double>::quiet_NaN();
};

/// Fraction of images whose argmax probability matches the label.
inline double accuracy(const TwoBranchNet& net, const LabeledSet& data,
                       graph::SaliencyMode mode = graph::SaliencyMode::active, std::size_t batch = 64)
{
    if (data.size() == 0) return std::numeric_limits<double>::quiet_NaN();
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += batch) {
        idx.clear();
        for (std::size_t i = start; i < std::min(start + batch, data.size()); ++i) idx.push_back(i);
        const Tensor p = forward(stack_batch(data, idx), net, mode);
        const std::size_t k = p.dim(1);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const double* row = p.data().data() + b * k;
            const auto best = static_cast<int>(std::max_element(row, row + k) - row);
            if (best == data.labels[idx[b]]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace detail {

inline TrainLog run_sgd(TwoBranchNet& net, const LabeledSet& data, const TrainOptions& opts,
                        graph::SaliencyMode mode, std::string_view phase)
{
    if (data.size() == 0) throw std::invalid_argument(std::string(phase) + ": empty dataset");
    if (data.labels.size() != data.size())
        throw std::invalid_argument(std::string(phase) + ": label count does not match image count");
    if (opts.batch_size == 0) throw std::invalid_argument(std::string(phase) + ": batch size must be positive");

    std::vector<Parameter*> trainable;
    for (Parameter* p : net.parameters())
        if (!net.is_frozen(p->name)) trainable.push_back(p);
    // Saliency weights are unused while the branch is disabled.
    if (mode == graph::SaliencyMode::disabled)
        std::erase_if(trainable, [](Parameter* p) { return p->name.starts_with("sal."); });

    TrainLog log;
    std::vector<std::size_t> order(data.size());
    for (std::size_t e = 0; e < opts.epochs; ++e) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(derive_seed(opts.seed, phase), e));
        rng.shuffle(order);
        double epoch_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t end = std::min(start + opts.batch_size, order.size());
            std::span<const std::size_t> idx(order.data() + start, end - start);
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(data.labels[i]);

            Tape t;
            Var x = t.input(stack_batch(data, idx));
            Var loss = t.softmax_cross_entropy(graph::logits(t, net, x, mode, true), std::move(labels));
            const double value = t.value(loss)[0];
            if (!std::isfinite(value))
                throw std::runtime_error(std::string(phase) + ": non-finite loss at epoch " +
                                         std::to_string(e) + ", batch " + std::to_string(batches));
            t.backward(loss);
            for (Parameter* p : net.parameters())
                if (!p->grad.all_finite())
                    throw std::runtime_error(std::string(phase) + ": non-finite gradient in " + p->name);
            sgd_step(trainable, opts.lr);
            // Frozen parameters may have collected nothing, but never keep stale grads.
            for (Parameter* p : net.parameters()) p->zero_grad();

            log.batch_losses.push_back(value);
            if (opts.on_batch) opts.on_batch(e, batches, value);
            epoch_total += value;
            ++batches;
        }
        log.epoch_losses.push_back(epoch_total / static_cast<double>(batches));
    }
    if (opts.heldout) log.heldout_accuracy = accuracy(net, *opts.heldout, mode);
    return log;
}

} // namespace detail

/// Convolution biases ahead of the classifier that pretraining leaves at zero.
/// The feature path is then positively homogeneous and a black background
/// yields exactly zero features, so the modulation cannot turn background
/// pixels into a class-dependent offset; it can only reweight objects.
inline std::set<std::string> pinned_biases(const TwoBranchNet& net)
{
    std::set<std::string> out;
    for (const Parameter* p : net.parameters())
        if (p->name.ends_with(".bias") && (p->name.starts_with("rgb.") || p->name.starts_with("head.conv")))
            out.insert(p->name);
    return out;
}

/// Phase one: train the RGB branch and head with the saliency branch disabled
/// (S = 0). Stands in for starting from pretrained classification weights.
inline TrainLog pretrain_rgb(TwoBranchNet& net, const LabeledSet& data, const TrainOptions& opts)
{
    net.set_frozen(pinned_biases(net));
    TrainLog log = detail::run_sgd(net, data, opts, graph::SaliencyMode::disabled, "pretrain");
    net.set_frozen({});
    net.set_phase(TrainingPhase::pretrained);
    return log;
}

/// Phase two: freeze RGB branch and head, train only the saliency branch
/// through the classification loss.
inline TrainLog train_selective(TwoBranchNet& net, const LabeledSet& data, const TrainOptions& opts)
{
    if (net.phase() == TrainingPhase::initialized)
        throw std::logic_error("train_selective: the RGB branch has not been pretrained");
    net.freeze_for_selective_training();
    TrainLog log = detail::run_sgd(net, data, opts, graph::SaliencyMode::active, "selective");
    net.set_phase(TrainingPhase::selective);
    return log;
}

/// Saliency map at the image's own resolution: the image is resampled to the
/// network input size, passed through the saliency branch, and the result is
/// bilinearly resampled back. `blur_sigma` > 0 adds a Gaussian blur (pixels).
inline SaliencyMap predict_saliency(const TwoBranchNet& net, const Tensor& image, double blur_sigma = 0.0)
{
    if (image.rank() != 3 || image.dim(0) != 3)
        throw ShapeError("predict_saliency expects [3,H,W], got " + to_string(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2), n = net.config().input_size;
    Tensor batch = image.reshaped(Shape{1, 3, h, w});
    if (h != n || w != n) batch = ops::bilinear_resize(batch, n, n);
    const Tensor native = saliency_branch_forward(batch, net);
    SaliencyMap m = SaliencyMap::from_tensor(ops::bilinear_resize(native, h, w));
    for (double& v : m.values()) v = std::max(v, 0.0);
    return gaussian_blur(m, blur_sigma);
}

} // namespace salfx
