// Acceptance checks, one PASS/FAIL line each. Exit status is the number of
// failures.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "ventseg/cppn.hpp"
#include "ventseg/infer.hpp"
#include "ventseg/metrics.hpp"
#include "ventseg/phantom.hpp"
#include "ventseg/stats.hpp"
#include "ventseg/train.hpp"

using namespace ventseg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Outcome ttest_samples() {
    const std::vector<double> a{0.808, 0.809, 0.811, 0.8, 0.81}, b{0.823, 0.824, 0.822, 0.821, 0.822};
    const auto r = ttest_pooled(a, b);
    const bool ok = r.df == 8 && r.p >= 4e-5 && r.p <= 1.6e-4 &&
                    std::abs(r.p - oracle::ttest_p(a, b)) <= 1e-6 * oracle::ttest_p(a, b);
    return {ok, fmt("t=%.4f df=%.0f p=%.3g", r.t, r.df, r.p)};
}

Outcome window_plan() {
    const auto p = plan_windows(320, 64, 0.75);
    const bool ok = p.stride == 16 && p.origins.size() == 17 && p.slice_equivalents() == 1088 &&
                    p.origins.back() == 256 && p.coverage(0) == 1 && p.coverage(160) == 4;
    return {ok, fmt("stride=%.0f windows=%.0f slices=%.0f", double(p.stride), double(p.origins.size()),
                    double(p.slice_equivalents()))};
}

Outcome soft_dice() {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::bernoulli_distribution bern(0.4);
    double worst = 0;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> y(40), yhat(40), grad(40);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = bern(rng), yhat[i] = u(rng);
        soft_dice_loss(y, yhat, 1e-10, grad);
        for (std::size_t i = 0; i < y.size(); ++i) {
            auto p = yhat, m = yhat;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            const double numeric = (soft_dice_loss(y, p, 1e-10) - soft_dice_loss(y, m, 1e-10)) / 2e-6;
            worst = std::max(worst, std::abs(numeric - grad[i]) / std::max(1e-3, std::abs(numeric)));
        }
    }
    const std::vector<double> y{1, 1, 0, 0, 1, 0, 1, 0}, half(8, 0.5);
    const double h = soft_dice_loss(y, half, 1e-10), perfect = soft_dice_loss(y, y, 1e-10);
    const bool ok = worst <= 1e-4 && std::abs(h - 0.5) <= 1e-9 && perfect <= 1e-9;
    return {ok, fmt("max gradient rel err=%.2g half=%.6f perfect=%.2g", worst, h, perfect)};
}

LabelMap random_mask(Extent3 e, std::mt19937_64& rng) {
    LabelMap m(e, {});
    std::uniform_real_distribution<double> u(0, 1);
    const double p = 0.05 + 0.6 * u(rng);
    for (auto& v : m.data) v = u(rng) < p;
    m.data[std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng)] = 1;
    return m;
}

Outcome metric_oracles() {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::int64_t> s(1, 14);
    int matched = 0;
    for (int t = 0; t < 200; ++t) {
        const Extent3 e{s(rng), s(rng), s(rng)};
        const auto a = random_mask(e, rng), b = random_mask(e, rng);
        const double sp = t % 2 ? 0.3 : 1.0;
        const auto ob = oracle::boundary(a);
        const auto mb = boundary(a);
        bool same = mb.size() == ob.size();
        for (std::size_t i = 0; same && i < mb.size(); ++i) {
            const auto [z, y, x] = ob[i];
            same = mb[i] == static_cast<std::int64_t>(a.index(z, y, x));
        }
        if (same && dice(a, b) == oracle::dice(a, b) && mad(a, b, Spacing::isotropic(sp)) == oracle::mad(a, b, sp))
            ++matched;
    }
    return {matched == 200, fmt("%.0f/200 pairs exact", matched)};
}

Outcome cppn_properties() {
    // Reflection and quadric checks on a standalone CPPN with random weights.
    CppnModel model;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 0.7);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (auto& p : model.params().all())
        for (auto& v : p.value) v = static_cast<Real>(p.name.ends_with("running_var") ? u(rng) : n(rng));
    for (const auto& bn : model.net().norms()) bn.mark_ready(model.params());
    const auto maps = normalized_coords(Extent3{5, 13, 9});
    const auto in = cppn_input(maps);
    const auto pat = model.forward(in, Mode::eval);
    bool mirror = true;
    for (std::int64_t c = 0; c < pat.c(); ++c)
        for (std::int64_t z = 0; z < 5; ++z)
            for (std::int64_t y = 0; y < 13; ++y)
                for (std::int64_t x = 0; x < 9; ++x) mirror = mirror && pat.at(0, c, z, y, x) == pat.at(0, c, z, 12 - y, x);

    double quad_err = 0;
    for (int t = 0; t < 10; ++t) {
        std::array<Real, 9> w;
        for (auto& v : w) v = static_cast<Real>(n(rng));
        const auto b = static_cast<Real>(n(rng));
        const auto f = quadric_preactivation(in, w, b);
        for (std::size_t i = 0; i < f.data.size(); ++i) {
            const double x = maps.xc.data[i], y = maps.yc.data[i], z = maps.zc.data[i];
            const double ref = w[0] * x * x + w[1] * y * y + w[2] * z * z + w[3] * x * y + w[4] * x * z +
                               w[5] * y * z + w[6] * x + w[7] * y + w[8] * z + b;
            quad_err = std::max(quad_err, std::abs(f.data[i] - ref) / std::max(1.0, std::abs(ref)));
        }
    }

    // Patterns at the fusion point of a full network do not see the image.
    auto net = Network::build(NetworkSpec::unet2d(2, 4), 5);
    const Extent3 e{1, 8, 8};
    Tensor coords(1, 9, e);
    copy_window(cppn_input(normalized_coords(Extent3{2, 8, 8})), {0, 0, 0}, coords, 0);
    auto image = [&](std::uint64_t seed) {
        Tensor t(1, 1, e);
        std::mt19937_64 r(seed);
        for (auto& v : t.values()) v = static_cast<Real>(n(r));
        return t;
    };
    net.forward(image(1), &coords, Mode::train);
    Tensor pa, pb;
    net.infer(image(2), &coords, &pa);
    net.infer(image(3), &coords, &pb);
    const bool independent = pa == pb && pa.c() == 8;
    return {mirror && independent && quad_err <= 1e-6,
            fmt("mirror=%.0f image_independent=%.0f quadric err=%.2g", mirror, independent, quad_err)};
}

Outcome parameter_counts() {
    const auto u = Network::build(NetworkSpec::unet2d(), 1).parameter_count();
    const auto v = Network::build(NetworkSpec::vnet3d(), 1).parameter_count();
    const bool ok = std::abs(double(u) / 31e6 - 1) <= 0.3 && std::abs(double(v) / 16e6 - 1) <= 0.3 && v < u;
    return {ok, fmt("unet2d=%.0f vnet3d=%.0f", double(u), double(v))};
}

Outcome fit_two_cases() {
    DatasetProfile p;
    p.training = {1, 1};
    p.validation = {0, 0};
    p.test = {0, 0};
    const auto ds = generate_dataset(p, 7);
    auto net = Network::build(NetworkSpec::unet2d(1, 16, true), 3);
    TrainConfig c;
    c.patch = {1, 64, 64};
    c.batch = 4;
    c.lr_stages = {{0, 1e-3}};
    c.warmup_steps = 1000;
    c.foreground_fraction = 0.5;
    c.max_iterations = 3000;
    c.cadence = 500;
    c.patience = 100000;
    c.seed = 5;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = train(net, ds.cases, ds.cases, c);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::int64_t reached = -1;
    for (const auto& v : r.history.validation)
        if (v.dice >= 0.95) {
            reached = v.iteration;
            break;
        }
    return {reached > 0 && reached <= 3000,
            fmt("dice %.4f, >=0.95 first at iteration %.0f (%.0f s)", r.history.best_dice, double(reached), secs)};
}

Outcome decoy_benchmark() {
    DatasetProfile p;
    p.training = {5, 3};
    p.validation = {1, 1};
    p.test = {2, 2};
    const auto ds = generate_dataset(p, 11);
    TrainConfig c;
    c.patch = {1, 64, 64};
    c.batch = 4;
    c.lr_stages = {{0, 1e-3}};
    c.warmup_steps = 500;
    c.foreground_fraction = 0.5;
    c.max_iterations = 1000;
    c.cadence = 250;
    c.patience = 100000;
    const auto g = depth_ablation({NetworkSpec::unet2d(1, 8, false)}, network_spec_trainer(c),
                                  ds.select(ds.split.training), ds.select(ds.split.validation),
                                  ds.select(ds.split.test), 3, 3);
    const auto& row = g.rows.at(0);
    const auto a = mean_std(row.no_cppn.test_dice()), b = mean_std(row.cppn.test_dice());
    const bool ok = b.mean > a.mean && row.p_dice < 0.05;
    return {ok, fmt("test dice no_cppn %.4f cppn %.4f p=%.3g", a.mean, b.mean, row.p_dice)};
}

// Predicts sigmoid(theta) everywhere.
class StubModel : public TrainableModel {
public:
    StubModel() { params_.add("theta", {1}, 0); }
    Tensor forward(const Tensor& batch, const Tensor*) override {
        const double p = 1.0 / (1.0 + std::exp(-double(params_[0].value[0])));
        out_ = Tensor(batch.n(), 2, batch.extent());
        for (std::int64_t b = 0; b < batch.n(); ++b) {
            std::fill(out_.plane(b, 0), out_.plane(b, 0) + batch.spatial(), static_cast<Real>(1 - p));
            std::fill(out_.plane(b, 1), out_.plane(b, 1) + batch.spatial(), static_cast<Real>(p));
        }
        return out_;
    }
    void backward(const Tensor& dprobs) override {
        const double p = out_.plane(0, 1)[0];
        double g = 0;
        for (std::int64_t b = 0; b < dprobs.n(); ++b)
            for (std::int64_t i = 0; i < dprobs.spatial(); ++i) g += dprobs.plane(b, 1)[i] - dprobs.plane(b, 0)[i];
        params_[0].grad[0] += static_cast<Real>(g * p * (1 - p));
    }
    ParameterStore& params() override { return params_; }
    bool uses_coords() const override { return false; }

private:
    ParameterStore params_;
    Tensor out_;
};

Outcome schedule_and_stopping() {
    Case toy;
    toy.id = "toy";
    toy.image = Volume({2, 8, 8}, {}, 0.f);
    toy.labels = LabelMap({2, 8, 8}, {});
    for (std::size_t i = 0; i < toy.labels.size(); i += 3) toy.labels.data[i] = 1;
    TrainConfig c;
    c.patch = {1, 4, 4};
    c.batch = 1;

    auto scripted = [](std::vector<double> values) {
        auto i = std::make_shared<std::size_t>(0);
        return Validator([values, i](TrainableModel&) { return values[std::min((*i)++, values.size() - 1)]; });
    };

    c.max_iterations = 5002;
    c.cadence = 5002;
    c.patience = 5002;
    StubModel m1;
    const auto warm = train(m1, {toy}, scripted({0.5}), c);
    const bool switch_ok = warm.history.loss_kinds.size() == 5002 &&
                           warm.history.loss_kinds[4999] == LossKind::cross_entropy &&
                           warm.history.loss_kinds[5000] == LossKind::soft_dice;

    const TrainConfig d;
    const bool lr_ok = lr_at(0, d) == 1e-4 && lr_at(9999, d) == 1e-4 && lr_at(10000, d) == 2e-5 &&
                       lr_at(19999, d) == 2e-5 && lr_at(20000, d) == 5e-6;

    c.max_iterations = 3000;
    c.cadence = 100;
    c.patience = 500;
    StubModel m2;
    const auto plateau = train(m2, {toy}, scripted({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7}), c);
    const bool stop_ok = plateau.history.stop_reason == StopReason::patience &&
                         plateau.history.best_iteration == 700 && plateau.history.losses.size() == 1200;
    return {switch_ok && lr_ok && stop_ok,
            fmt("warmup switch=%.0f lr=%.0f plateau stop at %.0f", switch_ok, lr_ok,
                double(plateau.history.losses.size()))};
}

std::string pipeline_csv(const fs::path& dir) {
    fs::remove_all(dir);
    PhantomSpec base;
    base.side = 32;
    DatasetProfile p;
    p.training = {1, 1};
    p.validation = {1, 0};
    p.test = {1, 1};
    write_dataset(dir, generate_dataset(p, 21, base));
    const auto ds = read_dataset(dir);
    auto net = Network::build(NetworkSpec::unet2d(1, 4), 8);
    TrainConfig c;
    c.patch = {1, 32, 32};
    c.batch = 2;
    c.lr_stages = {{0, 1e-3}};
    c.warmup_steps = 100;
    c.max_iterations = 200;
    c.cadence = 100;
    c.foreground_fraction = 0.5;
    train(net, ds.select(ds.split.training), ds.select(ds.split.validation), c);
    std::vector<MetricRecord> records;
    for (const auto& cs : ds.select(ds.split.test)) {
        const auto coords = cppn_input(normalized_coords(cs.image.shape));
        const auto seg = segment(net, cs.image, &coords);
        records.push_back(evaluate_case(cs.labels, seg.labels, cs.image.spacing, cs.id, cs.tag));
    }
    std::ostringstream os;
    write_metrics_csv(os, records);
    fs::remove_all(dir);
    return os.str();
}

Outcome determinism() {
    const auto dir = fs::temp_directory_path() / "ventseg_acceptance";
    const auto a = pipeline_csv(dir), b = pipeline_csv(dir);
    const auto lines = std::count(a.begin(), a.end(), '\n');
    return {a == b && lines == 3, fmt("csv identical=%.0f rows=%.0f", a == b, double(lines - 1))};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"t-test on reference Dice samples", ttest_samples},
        {"sliding-window plan 320/64/0.75", window_plan},
        {"soft Dice loss and gradient", soft_dice},
        {"metrics match brute-force oracles", metric_oracles},
        {"CPPN symmetry, image independence, quadrics", cppn_properties},
        {"parameter counts", parameter_counts},
        {"fit two phantom cases", fit_two_cases},
        {"CPPN beats no-CPPN on the decoy benchmark", decoy_benchmark},
        {"warmup, learning rate schedule, early stopping", schedule_and_stopping},
        {"end-to-end determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failures;
}
