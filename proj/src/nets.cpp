#include "ventseg/nets.hpp"

#include <algorithm>
#include <functional>
#include <stdexcept>

namespace ventseg {

std::string to_string(Family f) { return f == Family::unet2d ? "unet2d" : "vnet3d"; }

Family family_from_string(const std::string& s) {
    if (s == "unet2d") return Family::unet2d;
    if (s == "vnet3d") return Family::vnet3d;
    throw std::invalid_argument("unknown network family '" + s + "'");
}

NetworkSpec NetworkSpec::unet2d(int depth, std::int64_t base, bool cppn) {
    NetworkSpec s;
    s.family = Family::unet2d;
    s.depth_level = depth;
    s.base_channels = base;
    s.use_cppn = cppn;
    return s;
}

NetworkSpec NetworkSpec::vnet3d(int depth, std::int64_t base, bool cppn) {
    NetworkSpec s;
    s.family = Family::vnet3d;
    s.depth_level = depth;
    s.base_channels = base;
    s.use_cppn = cppn;
    return s;
}

int NetworkSpec::min_depth() const { return family == Family::unet2d ? 1 : 0; }
int NetworkSpec::max_depth() const { return family == Family::unet2d ? 4 : 3; }

int NetworkSpec::nominal_layers() const {
    return family == Family::unet2d ? 4 + 5 * depth_level : 7 + 8 * depth_level;
}

int NetworkSpec::learnable_layers() const {
    return family == Family::unet2d ? 3 + 5 * depth_level : 7 + 8 * depth_level;
}

Extent3 NetworkSpec::size_multiple() const {
    const std::int64_t m = std::int64_t{1} << depth_level;
    return family == Family::unet2d ? Extent3{1, m, m} : Extent3{m, m, m};
}

void NetworkSpec::validate() const {
    if (depth_level < min_depth() || depth_level > max_depth())
        throw std::invalid_argument("depth_level " + std::to_string(depth_level) + " outside [" +
                                    std::to_string(min_depth()) + ", " + std::to_string(max_depth()) + "] for " +
                                    to_string(family));
    if (base_channels <= 0) throw std::invalid_argument("base_channels must be positive");
    if (residual && family != Family::vnet3d) throw std::invalid_argument("residual blocks apply to vnet3d only");
    if (use_cppn) cppn.validate();
}

void to_json(nlohmann::json& j, const NetworkSpec& s) {
    j = nlohmann::json{{"family", to_string(s.family)},
                       {"depth_level", s.depth_level},
                       {"base_channels", s.base_channels},
                       {"use_cppn", s.use_cppn},
                       {"cppn_widths", s.cppn.widths},
                       {"residual", s.residual}};
}

void from_json(const nlohmann::json& j, NetworkSpec& s) {
    s = NetworkSpec{};
    s.family = family_from_string(j.at("family").get<std::string>());
    s.depth_level = j.at("depth_level").get<int>();
    s.base_channels = j.value("base_channels", s.family == Family::unet2d ? 64 : 32);
    s.use_cppn = j.value("use_cppn", true);
    if (j.contains("cppn_widths")) s.cppn.widths = j.at("cppn_widths").get<std::vector<std::int64_t>>();
    s.residual = j.value("residual", false);
    s.validate();
}

NetworkSpec grow_depth(const NetworkSpec& spec) {
    spec.validate();
    if (spec.depth_level >= spec.max_depth())
        throw std::invalid_argument(to_string(spec.family) + " is already at maximum depth");
    NetworkSpec out = spec;
    ++out.depth_level;
    return out;
}

std::vector<LayerDesc> describe(const NetworkSpec& spec) {
    spec.validate();
    const bool three_d = spec.is_3d();
    const Extent3 k3 = three_d ? Extent3{3, 3, 3} : Extent3{1, 3, 3};
    const Extent3 k2 = three_d ? Extent3{2, 2, 2} : Extent3{1, 2, 2};
    const int per_block = three_d ? 3 : 2;
    const int depth = spec.depth_level;
    std::vector<LayerDesc> out;
    auto block = [&](const std::string& stage, std::int64_t in, std::int64_t width) {
        for (int i = 0; i < per_block; ++i) {
            out.push_back({stage, LayerKind::conv, in, width, k3});
            in = width;
        }
    };
    const auto fused = spec.width(0) + (spec.use_cppn ? CppnConfig::kPatternChannels : 0);
    auto skip_channels = [&](int level) { return level == 0 ? fused : spec.width(level); };

    block("enc0", NetworkSpec::kInputChannels, spec.width(0));
    for (int l = 1; l <= depth; ++l) {
        const auto stage = "enc" + std::to_string(l);
        const auto in = skip_channels(l - 1);
        if (three_d) {
            out.push_back({stage, LayerKind::down_conv, in, spec.width(l), k2});
            block(stage, spec.width(l), spec.width(l));
        } else {
            out.push_back({stage, LayerKind::max_pool, in, in, k2});
            block(stage, in, spec.width(l));
        }
    }
    if (three_d) block("dec" + std::to_string(depth), skip_channels(depth), spec.width(depth));
    for (int l = depth - 1; l >= 0; --l) {
        const auto stage = "dec" + std::to_string(l);
        out.push_back({stage, LayerKind::deconv, spec.width(l + 1), spec.width(l), k2});
        block(stage, spec.width(l) + skip_channels(l), spec.width(l));
    }
    out.push_back({"head", LayerKind::classifier, spec.width(0), NetworkSpec::kClasses, {1, 1, 1}});
    return out;
}

// ---------------------------------------------------------------------------
// Execution back-ends for the shared topology.

struct NetworkTape {
    std::vector<Tensor> values;
    std::vector<Tensor> grads;
    std::vector<bool> needs_grad;
    std::vector<std::function<void()>> backward;
    CppnTrace cppn;

    int add(Tensor t, bool grad = true) {
        values.push_back(std::move(t));
        grads.emplace_back();
        needs_grad.push_back(grad);
        return static_cast<int>(values.size()) - 1;
    }
    void accumulate(int id, Tensor g) {
        if (!needs_grad[static_cast<std::size_t>(id)]) return;
        auto& dst = grads[static_cast<std::size_t>(id)];
        if (dst.empty()) {
            dst = std::move(g);
            return;
        }
        auto d = dst.values();
        auto s = g.values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    }
};

namespace {

void check_finite(const Tensor& t, std::size_t unit, const std::string& stage) {
    if (!all_finite(t.values()))
        throw std::runtime_error("non-finite activation at layer " + std::to_string(unit) + " (" + stage + ")");
}

Tensor add_tensors(Tensor a, const Tensor& b) {
    auto d = a.values();
    auto s = b.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    return a;
}

struct EvalExec {
    using Value = Tensor;
    const Network& net;
    const ParameterStore& store;
    Tensor* patterns;

    Value unit(std::size_t i, Value x) {
        const auto& u = net.units()[i];
        Tensor y = u.bn.forward_eval(store, u.conv.forward(store, x));
        relu_inplace(y);
        check_finite(y, i, u.stage);
        return y;
    }
    Value pool(Value x, Extent3 win) { return max_pool(x, win, nullptr); }
    Value concat(Value a, Value b) { return concat_channels(a, b); }
    Value add(Value a, Value b) { return add_tensors(std::move(a), b); }
    Value cppn(const Tensor& coords) {
        Tensor p = net.cppn()->forward_eval(store, coords);
        if (patterns) *patterns = p;
        return p;
    }
    Value head(Value x) {
        Tensor logits = net.classifier().forward(store, x);
        check_finite(logits, net.units().size(), "head");
        return softmax_channels(logits);
    }
};

struct TrainExec {
    using Value = int;
    const Network& net;
    ParameterStore& store;
    NetworkTape& tape;

    Value unit(std::size_t i, Value in) {
        const auto& u = net.units()[i];
        auto cache = std::make_shared<BatchNormCache>();
        Tensor y = u.bn.forward_train(store, u.conv.forward(store, tape.values[static_cast<std::size_t>(in)]), *cache);
        relu_inplace(y);
        check_finite(y, i, u.stage);
        const int out = tape.add(std::move(y));
        tape.backward.push_back([&tape = tape, &store = store, &u, in, out, cache] {
            Tensor g = tape.grads[static_cast<std::size_t>(out)];
            if (g.empty()) return;
            relu_backward_inplace(tape.values[static_cast<std::size_t>(out)], g);
            g = u.bn.backward(store, *cache, g);
            tape.accumulate(in, u.conv.backward(store, tape.values[static_cast<std::size_t>(in)], g));
        });
        return out;
    }
    Value pool(Value in, Extent3 win) {
        auto cache = std::make_shared<PoolCache>();
        const auto& x = tape.values[static_cast<std::size_t>(in)];
        const int out = tape.add(max_pool(x, win, cache.get()));
        const auto n = x.n(), c = x.c();
        tape.backward.push_back([&tape = tape, in, out, cache, n, c] {
            const auto& g = tape.grads[static_cast<std::size_t>(out)];
            if (!g.empty()) tape.accumulate(in, max_pool_backward(g, *cache, n, c));
        });
        return out;
    }
    Value concat(Value a, Value b) {
        const auto first = tape.values[static_cast<std::size_t>(a)].c();
        const int out = tape.add(concat_channels(tape.values[static_cast<std::size_t>(a)],
                                                 tape.values[static_cast<std::size_t>(b)]));
        tape.backward.push_back([&tape = tape, a, b, out, first] {
            const auto& g = tape.grads[static_cast<std::size_t>(out)];
            if (g.empty()) return;
            Tensor ga, gb;
            split_channels(g, first, ga, gb);
            tape.accumulate(a, std::move(ga));
            tape.accumulate(b, std::move(gb));
        });
        return out;
    }
    Value add(Value a, Value b) {
        const int out = tape.add(add_tensors(tape.values[static_cast<std::size_t>(a)],
                                             tape.values[static_cast<std::size_t>(b)]));
        tape.backward.push_back([&tape = tape, a, b, out] {
            const auto& g = tape.grads[static_cast<std::size_t>(out)];
            if (g.empty()) return;
            tape.accumulate(a, g);
            tape.accumulate(b, g);
        });
        return out;
    }
    Value cppn(const Tensor& coords) {
        const int out = tape.add(net.cppn()->forward_train(store, coords, tape.cppn));
        tape.backward.push_back([&tape = tape, &store = store, &net = net, out] {
            const auto& g = tape.grads[static_cast<std::size_t>(out)];
            if (!g.empty()) net.cppn()->backward(store, tape.cppn, g);
        });
        return out;
    }
    Value head(Value in) {
        Tensor logits = net.classifier().forward(store, tape.values[static_cast<std::size_t>(in)]);
        check_finite(logits, net.units().size(), "head");
        const int out = tape.add(softmax_channels(logits));
        tape.backward.push_back([&tape = tape, &store = store, &net = net, in, out] {
            const auto& g = tape.grads[static_cast<std::size_t>(out)];
            if (g.empty()) return;
            Tensor dz = softmax_backward(tape.values[static_cast<std::size_t>(out)], g);
            tape.accumulate(in, net.classifier().backward(store, tape.values[static_cast<std::size_t>(in)], dz));
        });
        return out;
    }
};

}  // namespace

template <typename Exec>
typename Exec::Value Network::run(Exec& ex, typename Exec::Value input, const Tensor* coords) const {
    using Value = typename Exec::Value;
    const bool three_d = spec_.is_3d();
    const int per_block = three_d ? 3 : 2;
    const int depth = spec_.depth_level;
    std::size_t next = 0;
    auto block = [&](Value h) {
        for (int i = 0; i < per_block; ++i) h = ex.unit(next++, std::move(h));
        return h;
    };

    Value h = block(std::move(input));
    if (spec_.use_cppn) h = ex.concat(std::move(h), ex.cppn(*coords));
    std::vector<Value> skips{h};
    for (int l = 1; l <= depth; ++l) {
        if (three_d) {
            Value down = ex.unit(next++, std::move(h));
            h = block(down);
            if (spec_.residual) h = ex.add(std::move(h), down);
        } else {
            h = block(ex.pool(std::move(h), {1, 2, 2}));
        }
        skips.push_back(h);
    }
    if (three_d) {
        Value in = h;
        h = block(std::move(h));
        const bool same = depth > 0 || !spec_.use_cppn;
        if (spec_.residual && same) h = ex.add(std::move(h), in);
    }
    for (int l = depth - 1; l >= 0; --l) {
        Value up = ex.unit(next++, std::move(h));
        h = block(ex.concat(up, skips[static_cast<std::size_t>(l)]));
        if (spec_.residual) h = ex.add(std::move(h), up);
    }
    return ex.head(std::move(h));
}

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
    Network net;
    net.spec_ = spec;
    const auto layers = describe(spec);
    const bool three_d = spec.is_3d();
    std::size_t index = 0;
    for (const auto& d : layers) {
        if (d.kind == LayerKind::max_pool) continue;
        ConvGeometry g;
        g.in_channels = d.in_channels;
        g.out_channels = d.out_channels;
        g.kernel = d.kernel;
        switch (d.kind) {
            case LayerKind::conv:
                g.padding = three_d ? Extent3{1, 1, 1} : Extent3{0, 1, 1};
                break;
            case LayerKind::down_conv:
                g.stride = d.kernel;
                g.padding = {0, 0, 0};
                break;
            case LayerKind::deconv:
                g.stride = d.kernel;
                g.padding = {0, 0, 0};
                g.transposed = true;
                break;
            case LayerKind::classifier:
                g.padding = {0, 0, 0};
                break;
            case LayerKind::max_pool:
                break;
        }
        const auto name = d.stage + ".l" + std::to_string(index++);
        if (d.kind == LayerKind::classifier) {
            net.classifier_ = ConvLayer(net.params_, "head.classifier", g);
        } else {
            Unit u{d.stage, ConvLayer(net.params_, name + ".conv", g), BatchNormLayer(net.params_, name + ".bn", d.out_channels)};
            net.units_.push_back(std::move(u));
        }
    }
    if (spec.use_cppn) net.cppn_ = Cppn(net.params_, "cppn", spec.cppn);

    std::mt19937_64 rng(seed);
    constexpr Real kBias = Real(0.01);
    for (const auto& u : net.units_) xavier_init(net.params_, u.conv, rng, kBias);
    xavier_init(net.params_, net.classifier_, rng, kBias);
    if (spec.use_cppn) net.cppn_.initialize(net.params_, rng, kBias);
    return net;
}

Network::Network(const Network& o)
    : spec_(o.spec_), params_(o.params_), units_(o.units_), classifier_(o.classifier_), cppn_(o.cppn_),
      last_patterns_(o.last_patterns_) {}

Network& Network::operator=(const Network& o) {
    if (this != &o) {
        spec_ = o.spec_;
        params_ = o.params_;
        units_ = o.units_;
        classifier_ = o.classifier_;
        cppn_ = o.cppn_;
        last_patterns_ = o.last_patterns_;
        tape_.reset();
    }
    return *this;
}

Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;
Network::~Network() = default;

void Network::check_inputs(const Tensor& batch, const Tensor* coords) const {
    if (batch.c() != NetworkSpec::kInputChannels)
        throw std::invalid_argument("network expects single-channel input, got " + batch.shape_string());
    const auto m = spec_.size_multiple();
    const auto e = batch.extent();
    if (e.d % m.d || e.h % m.h || e.w % m.w)
        throw std::invalid_argument("input extent " + to_string(e) + " must be a multiple of " + to_string(m));
    if (!spec_.is_3d() && e.d != 1) throw std::invalid_argument("unet2d expects single-slice inputs");
    if (spec_.use_cppn) {
        if (!coords) throw std::invalid_argument("network with CPPN requires coordinate input");
        if (coords->n() != batch.n() || coords->c() != CppnInput::kChannels || !(coords->extent() == e))
            throw std::invalid_argument("coordinate input " + coords->shape_string() + " misaligned with batch " +
                                        batch.shape_string());
    }
}

Tensor Network::forward(const Tensor& batch, const Tensor* coords, Mode mode) {
    check_inputs(batch, coords);
    if (mode == Mode::eval) {
        tape_.reset();
        return infer(batch, coords, &last_patterns_);
    }
    tape_ = std::make_unique<NetworkTape>();
    TrainExec ex{*this, params_, *tape_};
    const int input = tape_->add(batch, false);
    const int out = run(ex, input, coords);
    if (spec_.use_cppn) last_patterns_ = tape_->cppn.outputs.back();
    return tape_->values[static_cast<std::size_t>(out)];
}

Tensor Network::infer(const Tensor& batch, const Tensor* coords, Tensor* patterns) const {
    check_inputs(batch, coords);
    EvalExec ex{*this, params_, patterns};
    return run(ex, batch, coords);
}

void Network::backward(const Tensor& dprobs) {
    if (!tape_) throw std::logic_error("backward() requires a preceding train-mode forward()");
    auto& tape = *tape_;
    const auto out = tape.values.size() - 1;
    if (!dprobs.same_shape(tape.values[out])) throw std::invalid_argument("gradient shape mismatch");
    tape.grads[out] = dprobs;
    for (auto it = tape.backward.rbegin(); it != tape.backward.rend(); ++it) (*it)();
    tape_.reset();
}

void Network::mark_statistics_ready() {
    for (const auto& u : units_) u.bn.mark_ready(params_);
    if (spec_.use_cppn)
        for (const auto& n : cppn_.norms()) n.mark_ready(params_);
}

bool Network::statistics_ready() const {
    bool ok = std::all_of(units_.begin(), units_.end(), [&](const Unit& u) { return u.bn.ready(params_); });
    if (spec_.use_cppn)
        for (const auto& n : cppn_.norms()) ok = ok && n.ready(params_);
    return ok;
}

void Network::load_parameters(const ParameterStore& source) {
    if (source.count() != params_.count()) throw std::invalid_argument("parameter layout mismatch");
    for (std::size_t i = 0; i < params_.count(); ++i) {
        auto& dst = params_[i];
        const auto& src = source[i];
        if (dst.name != src.name || dst.shape != src.shape)
            throw std::invalid_argument("parameter layout mismatch at " + dst.name);
        dst.value = src.value;
    }
}

std::uint8_t predict_label(Real background, Real foreground) { return foreground > background ? 1 : 0; }

LabelMap predict_labels(const Tensor& probs, std::int64_t sample) {
    if (probs.c() != NetworkSpec::kClasses) throw std::invalid_argument("expected two class channels");
    LabelMap out(probs.extent(), {});
    const Real* bg = probs.plane(sample, 0);
    const Real* fg = probs.plane(sample, 1);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = predict_label(bg[i], fg[i]);
    return out;
}

}  // namespace ventseg
