#include "ventseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "ventseg/checkpoint.hpp"
#include "ventseg/infer.hpp"
#include "ventseg/metrics.hpp"

namespace ventseg {

std::string to_string(LossKind k) { return k == LossKind::cross_entropy ? "cross_entropy" : "soft_dice"; }

std::string to_string(StopReason r) {
    switch (r) {
        case StopReason::max_iterations: return "max_iterations";
        case StopReason::patience: return "patience";
        case StopReason::non_finite_loss: return "non_finite_loss";
    }
    return "?";
}

TrainConfig TrainConfig::for_family(Family family) {
    TrainConfig c;
    if (family == Family::vnet3d) {
        c.patch = {64, 128, 128};
        c.batch = 1;
    }
    return c;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (warmup_steps < 0) fail("warmup_steps must be >= 0");
    if (patch.d < 1 || patch.h < 1 || patch.w < 1) fail("patch extents must be positive");
    if (batch < 1) fail("batch must be >= 1");
    if (lr_stages.empty() || lr_stages.front().start != 0) fail("the first learning-rate stage must start at 0");
    for (std::size_t i = 0; i < lr_stages.size(); ++i) {
        if (!(lr_stages[i].rate > 0)) fail("learning rates must be positive");
        if (i > 0 && lr_stages[i].start <= lr_stages[i - 1].start) fail("stage starts must increase");
        if (i > 0 && lr_stages[i].rate > lr_stages[i - 1].rate) fail("learning rates must not increase");
    }
    if (cadence < 1) fail("cadence must be >= 1");
    if (patience < cadence) fail("patience must be >= cadence");
    if (max_iterations < 1) fail("max_iterations must be >= 1");
    if (!(delta > 0)) fail("delta must be positive");
    if (foreground_fraction < 0 || foreground_fraction > 1) fail("foreground_fraction must be in [0, 1]");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0))
        fail("invalid Adam hyperparameters");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : c.lr_stages) stages.push_back({s.start, s.rate});
    j = {{"warmup_steps", c.warmup_steps},
         {"patch", {c.patch.d, c.patch.h, c.patch.w}},
         {"batch", c.batch},
         {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
         {"lr_stages", stages},
         {"patience", c.patience},
         {"cadence", c.cadence},
         {"max_iterations", c.max_iterations},
         {"seed", c.seed},
         {"delta", c.delta},
         {"foreground_fraction", c.foreground_fraction},
         {"window_extent", c.window_extent},
         {"window_overlap", c.window_overlap}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
    if (j.contains("patch")) {
        const auto p = j.at("patch").get<std::vector<std::int64_t>>();
        if (p.size() != 3) throw std::invalid_argument("patch must have 3 extents");
        c.patch = {p[0], p[1], p[2]};
    }
    c.batch = j.value("batch", d.batch);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        c.adam = {a.value("beta1", d.adam.beta1), a.value("beta2", d.adam.beta2), a.value("epsilon", d.adam.epsilon)};
    }
    if (j.contains("lr_stages")) {
        c.lr_stages.clear();
        for (const auto& s : j.at("lr_stages")) c.lr_stages.push_back({s.at(0).get<std::int64_t>(), s.at(1).get<double>()});
    }
    c.patience = j.value("patience", d.patience);
    c.cadence = j.value("cadence", d.cadence);
    c.max_iterations = j.value("max_iterations", d.max_iterations);
    c.seed = j.value("seed", d.seed);
    c.delta = j.value("delta", d.delta);
    c.foreground_fraction = j.value("foreground_fraction", d.foreground_fraction);
    c.window_extent = j.value("window_extent", d.window_extent);
    c.window_overlap = j.value("window_overlap", d.window_overlap);
}

double lr_at(std::int64_t iteration, const TrainConfig& config) {
    if (iteration < 0) throw std::invalid_argument("iteration must be >= 0");
    double rate = config.lr_stages.front().rate;
    for (const auto& s : config.lr_stages)
        if (iteration >= s.start) rate = s.rate;
    return rate;
}

LossKind loss_at(std::int64_t iteration, const TrainConfig& config) {
    return iteration < config.warmup_steps ? LossKind::cross_entropy : LossKind::soft_dice;
}

double soft_dice_loss(std::span<const double> y, std::span<const double> yhat, double delta, std::span<double> grad) {
    if (y.size() != yhat.size()) throw std::invalid_argument("soft Dice: size mismatch");
    double inter = 0, total = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        inter += y[i] * yhat[i];
        total += y[i] + yhat[i];
    }
    const double denom = delta + total;
    if (!grad.empty()) {
        if (grad.size() != y.size()) throw std::invalid_argument("soft Dice: gradient size mismatch");
        for (std::size_t i = 0; i < y.size(); ++i) grad[i] = -2.0 * (y[i] * denom - inter) / (denom * denom);
    }
    return 1.0 - 2.0 * inter / denom;
}

double cross_entropy_loss(std::span<const std::uint8_t> y, std::span<const double> p_true, std::span<double> grad) {
    (void)y;
    constexpr double kFloor = 1e-12;
    const double n = static_cast<double>(p_true.size());
    double sum = 0;
    for (std::size_t i = 0; i < p_true.size(); ++i) {
        const double p = std::max(p_true[i], kFloor);
        sum -= std::log(p);
        if (!grad.empty()) grad[i] = p_true[i] > kFloor ? -1.0 / (n * p_true[i]) : 0.0;
    }
    return sum / n;
}

namespace {

void check_loss_inputs(const Tensor& labels, const Tensor& probs) {
    if (probs.c() != 2 || labels.c() != 1 || labels.n() != probs.n() || !(labels.extent() == probs.extent()))
        throw std::invalid_argument("loss expects labels [n,1,...] and probabilities [n,2,...], got " +
                                    labels.shape_string() + " and " + probs.shape_string());
}

}  // namespace

LossValue soft_dice_loss(const Tensor& labels, const Tensor& probs, double delta) {
    check_loss_inputs(labels, probs);
    const auto vox = probs.extent().voxels();
    const auto n = static_cast<std::size_t>(probs.n() * vox);
    std::vector<double> y(n), yhat(n), g(n);
    for (std::int64_t b = 0; b < probs.n(); ++b) {
        const Real* l = labels.plane(b, 0);
        const Real* p = probs.plane(b, 1);
        for (std::int64_t i = 0; i < vox; ++i) {
            y[static_cast<std::size_t>(b * vox + i)] = l[i];
            yhat[static_cast<std::size_t>(b * vox + i)] = p[i];
        }
    }
    LossValue out;
    out.value = soft_dice_loss(y, yhat, delta, g);
    out.dprobs = Tensor(probs.n(), 2, probs.extent());
    for (std::int64_t b = 0; b < probs.n(); ++b) {
        Real* d = out.dprobs.plane(b, 1);
        for (std::int64_t i = 0; i < vox; ++i) d[i] = static_cast<Real>(g[static_cast<std::size_t>(b * vox + i)]);
    }
    return out;
}

LossValue cross_entropy_loss(const Tensor& labels, const Tensor& probs) {
    check_loss_inputs(labels, probs);
    const auto vox = probs.extent().voxels();
    const auto n = static_cast<std::size_t>(probs.n() * vox);
    std::vector<std::uint8_t> y(n);
    std::vector<double> pt(n), g(n);
    for (std::int64_t b = 0; b < probs.n(); ++b) {
        const Real* l = labels.plane(b, 0);
        const Real* p0 = probs.plane(b, 0);
        const Real* p1 = probs.plane(b, 1);
        for (std::int64_t i = 0; i < vox; ++i) {
            const auto k = static_cast<std::size_t>(b * vox + i);
            y[k] = l[i] > Real(0.5) ? 1 : 0;
            pt[k] = y[k] ? p1[i] : p0[i];
        }
    }
    LossValue out;
    out.value = cross_entropy_loss(y, pt, g);
    out.dprobs = Tensor(probs.n(), 2, probs.extent());
    for (std::int64_t b = 0; b < probs.n(); ++b) {
        Real* d0 = out.dprobs.plane(b, 0);
        Real* d1 = out.dprobs.plane(b, 1);
        for (std::int64_t i = 0; i < vox; ++i) {
            const auto k = static_cast<std::size_t>(b * vox + i);
            (y[k] ? d1 : d0)[i] = static_cast<Real>(g[k]);
        }
    }
    return out;
}

Extent3 sample_origin(Extent3 vol, Extent3 patch, Rng& rng, const LabelMap* labels, double foreground_fraction) {
    if (patch.d > vol.d || patch.h > vol.h || patch.w > vol.w)
        throw std::invalid_argument("patch " + to_string(patch) + " does not fit in volume " + to_string(vol));
    auto draw = [&](std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(0, hi)(rng); };
    if (labels && foreground_fraction > 0 && std::uniform_real_distribution<double>(0, 1)(rng) < foreground_fraction) {
        std::vector<std::int64_t> fg;
        for (std::size_t i = 0; i < labels->data.size(); ++i)
            if (labels->data[i]) fg.push_back(static_cast<std::int64_t>(i));
        if (!fg.empty()) {
            const auto v = fg[static_cast<std::size_t>(draw(static_cast<std::int64_t>(fg.size()) - 1))];
            const std::int64_t z = v / (vol.h * vol.w), y = (v / vol.w) % vol.h, x = v % vol.w;
            auto pick = [&](std::int64_t c, std::int64_t p, std::int64_t n) {
                const auto lo = std::max<std::int64_t>(0, c - p + 1), hi = std::min(c, n - p);
                return lo + draw(hi - lo);
            };
            return {pick(z, patch.d, vol.d), pick(y, patch.h, vol.h), pick(x, patch.w, vol.w)};
        }
    }
    const auto z = draw(vol.d - patch.d);
    const auto y = draw(vol.h - patch.h);
    const auto x = draw(vol.w - patch.w);
    return {z, y, x};
}

Patch sample_patch(const Volume& image, const LabelMap& labels, const CppnInput* coords, Extent3 patch, Rng& rng,
                   double foreground_fraction) {
    if (!(image.shape == labels.shape)) throw std::invalid_argument("image and labels differ in shape");
    Patch p;
    p.origin = sample_origin(image.shape, patch, rng, &labels, foreground_fraction);
    p.image = extract_window(image, p.origin, patch);
    p.labels = extract_window(labels, p.origin, patch);
    if (coords) p.coords = crop_coords(*coords, p.origin, patch);
    return p;
}

namespace {

class BatchSampler {
public:
    BatchSampler(const std::vector<Case>& cases, const TrainConfig& config, bool with_coords, Rng& rng)
        : cases_(cases), config_(config), rng_(rng), with_coords_(with_coords) {
        for (const auto& c : cases) {
            validate(c.labels, &c.image);
            const auto key = to_string(c.image.shape);
            if (with_coords && !coords_.count(key)) coords_.emplace(key, cppn_input(normalized_coords(c.image.shape)));
        }
    }

    void next(Tensor& images, Tensor& labels, Tensor& coords) {
        const auto n = config_.batch;
        const auto e = config_.patch;
        if (images.n() != n) {
            images = Tensor(n, 1, e);
            labels = Tensor(n, 1, e);
            if (with_coords_) coords = Tensor(n, CppnInput::kChannels, e);
        }
        for (std::int64_t b = 0; b < n; ++b) {
            const auto ci = std::uniform_int_distribution<std::size_t>(0, cases_.size() - 1)(rng_);
            const auto& c = cases_[ci];
            const auto o = sample_origin(c.image.shape, e, rng_, &c.labels, config_.foreground_fraction);
            Real* im = images.plane(b, 0);
            Real* lb = labels.plane(b, 0);
            for (std::int64_t z = 0; z < e.d; ++z)
                for (std::int64_t y = 0; y < e.h; ++y)
                    for (std::int64_t x = 0; x < e.w; ++x) {
                        const auto k = (z * e.h + y) * e.w + x;
                        im[k] = c.image(o.d + z, o.h + y, o.w + x);
                        lb[k] = c.labels(o.d + z, o.h + y, o.w + x);
                    }
            if (with_coords_) copy_window(coords_.at(to_string(c.image.shape)), o, coords, b);
        }
    }

private:
    const std::vector<Case>& cases_;
    const TrainConfig& config_;
    Rng& rng_;
    bool with_coords_;
    std::map<std::string, CppnInput> coords_;
};

std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

}  // namespace

TrainResult train(TrainableModel& model, const std::vector<Case>& training, const Validator& validator,
                  const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
    if (training.empty()) throw std::invalid_argument("training set is empty");
    if (!validator) throw std::invalid_argument("a validator is required");

    Rng rng(config.seed);
    BatchSampler sampler(training, config, model.uses_coords(), rng);
    TrainResult result;
    result.optimizer = Adam(model.params(), config.adam);
    result.best = model.params();
    auto& h = result.history;
    std::int64_t stale = 0;
    Tensor images, labels, coords;

    for (std::int64_t it = 0; it < config.max_iterations; ++it) {
        sampler.next(images, labels, coords);
        const auto kind = loss_at(it, config);
        const double lr = lr_at(it, config);
        LossValue loss;
        try {
            model.params().zero_grad();
            const auto probs = model.forward(images, model.uses_coords() ? &coords : nullptr);
            loss = kind == LossKind::cross_entropy ? cross_entropy_loss(labels, probs)
                                                   : soft_dice_loss(labels, probs, config.delta);
        } catch (const std::runtime_error&) {
            loss.value = std::numeric_limits<double>::quiet_NaN();
        }
        h.losses.push_back(loss.value);
        h.loss_kinds.push_back(kind);
        if (!std::isfinite(loss.value)) {
            h.stop_reason = StopReason::non_finite_loss;
            if (hooks.log) *hooks.log << "iteration " << it << " non-finite loss, aborting\n";
            break;
        }
        model.backward(loss.dprobs);
        result.optimizer.step(model.params(), lr);

        const std::int64_t done = it + 1;
        const bool validate_now = done % config.cadence == 0;
        std::optional<double> vdice;
        if (validate_now) {
            const double d = validator(model);
            vdice = d;
            h.validation.push_back({done, d});
            const bool best = d > h.best_dice;
            if (best) {
                h.best_dice = d;
                h.best_iteration = done;
                result.best = model.params();
                stale = 0;
            } else {
                stale += config.cadence;
            }
            if (hooks.on_validation) hooks.on_validation(h.validation.back(), best, model);
        }
        if (hooks.log && (vdice || done % std::max<std::int64_t>(1, hooks.log_every) == 0)) {
            *hooks.log << done << ' ' << to_string(kind) << ' ' << loss.value << ' ' << lr;
            if (vdice) *hooks.log << ' ' << *vdice;
            *hooks.log << '\n';
        }
        if (validate_now && stale >= config.patience) {
            h.stop_reason = StopReason::patience;
            break;
        }
    }
    result.rng_state = rng_state(rng);
    return result;
}

double mean_dice(const Network& net, const std::vector<Case>& cases, std::int64_t window_extent, double window_overlap) {
    if (cases.empty()) throw std::invalid_argument("validation set is empty");
    std::map<std::string, CppnInput> coords;
    double sum = 0;
    for (const auto& c : cases) {
        const CppnInput* ci = nullptr;
        if (net.spec().use_cppn) {
            const auto key = to_string(c.image.shape);
            auto it = coords.find(key);
            if (it == coords.end()) it = coords.emplace(key, cppn_input(normalized_coords(c.image.shape))).first;
            ci = &it->second;
        }
        const auto seg = segment(net, c.image, ci, window_extent, window_overlap);
        sum += dice(c.labels, seg.labels);
    }
    return sum / static_cast<double>(cases.size());
}

TrainResult train(Network& net, const std::vector<Case>& training, const std::vector<Case>& validation,
                  const TrainConfig& config, const TrainHooks& hooks,
                  const std::optional<std::filesystem::path>& checkpoint_dir) {
    if (validation.empty()) throw std::invalid_argument("validation set is empty");
    NetworkModel model(net);
    Validator validator = [&](TrainableModel&) {
        return mean_dice(net, validation, config.window_extent, config.window_overlap);
    };
    TrainHooks h = hooks;
    if (checkpoint_dir) {
        std::filesystem::create_directories(*checkpoint_dir);
        h.on_validation = [&](const ValidationPoint& v, bool best, const TrainableModel& m) {
            auto ck = make_checkpoint(net, v.iteration, v.dice);
            save_checkpoint(*checkpoint_dir / "last.vsck", ck);
            if (best) save_checkpoint(*checkpoint_dir / "best.vsck", ck);
            if (hooks.on_validation) hooks.on_validation(v, best, m);
        };
    }
    auto result = train(model, training, validator, config, h);
    net.load_parameters(result.best);
    return result;
}

}  // namespace ventseg
