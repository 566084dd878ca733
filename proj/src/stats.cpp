#include "ventseg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "ventseg/infer.hpp"
#include "ventseg/phantom.hpp"

namespace ventseg {

TTest ttest_pooled(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("t-test needs at least 2 values per sample");
    auto moments = [](std::span<const double> s) {
        double m = 0;
        for (double v : s) m += v;
        m /= static_cast<double>(s.size());
        double ss = 0;
        for (double v : s) ss += (v - m) * (v - m);
        return std::pair{m, ss};
    };
    const auto [ma, ssa] = moments(a);
    const auto [mb, ssb] = moments(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    TTest r;
    r.df = na + nb - 2;
    const double pooled = (ssa + ssb) / r.df;
    auto constant = [](std::span<const double> s) {
        return std::all_of(s.begin(), s.end(), [&](double v) { return v == s.front(); });
    };
    if (pooled == 0 || (constant(a) && constant(b))) {
        if (ma == mb) return r;
        r.degenerate = true;
        r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0;
        return r;
    }
    r.t = (ma - mb) / std::sqrt(pooled * (1 / na + 1 / nb));
    boost::math::students_t dist(r.df);
    r.p = std::min(1.0, 2 * boost::math::cdf(dist, -std::abs(r.t)));
    return r;
}

double ttest(std::span<const double> a, std::span<const double> b) { return ttest_pooled(a, b).p; }

std::vector<double> RunSet::test_dice() const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.test_dice);
    return v;
}

std::vector<double> RunSet::test_mad() const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.test_mad);
    return v;
}

std::vector<MetricRecord> evaluate(const Segmenter& segment, const std::vector<Case>& cases) {
    std::vector<MetricRecord> out;
    for (const auto& c : cases) out.push_back(evaluate_case(c.labels, segment(c), c.image.spacing, c.id, c.tag));
    return out;
}

namespace {

RunRecord run_once(const Trainer& trainer, const std::vector<Case>& training, const std::vector<Case>& validation,
                   const std::vector<Case>& test, std::int64_t index, std::uint64_t seed) {
    RunRecord r;
    r.run = index;
    r.seed = seed;
    auto trained = trainer(training, validation, seed);
    r.validation_dice = trained.validation_dice;
    r.network = trained.network;
    r.records = evaluate(trained.segment, test);
    std::vector<double> d, m;
    for (const auto& rec : r.records) {
        d.push_back(rec.dice);
        m.push_back(rec.mad_mm);
    }
    r.test_dice = mean_std(d).mean;
    r.test_mad = mean_std(m).mean;
    return r;
}

std::vector<std::string> ids_of(const std::vector<Case>& cases) {
    std::vector<std::string> out;
    for (const auto& c : cases) out.push_back(c.id);
    return out;
}

std::string fmt(const char* f, double a, double b = 0) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

}  // namespace

RunSet repeat_runs(const std::string& experiment, const Trainer& trainer, const std::vector<Case>& training,
                   const std::vector<Case>& validation, const std::vector<Case>& test, std::int64_t runs,
                   std::uint64_t seed) {
    if (runs < 1) throw std::invalid_argument("run count must be >= 1");
    RunSet set;
    set.experiment = experiment;
    for (std::int64_t i = 0; i < runs; ++i)
        set.runs.push_back(run_once(trainer, training, validation, test, i, derive_seed(seed, static_cast<std::uint64_t>(i))));
    return set;
}

std::size_t select_best(const RunSet& runs) {
    if (runs.runs.empty()) throw std::invalid_argument("no runs to select from");
    std::size_t best = 0;
    for (std::size_t i = 1; i < runs.runs.size(); ++i)
        if (runs.runs[i].validation_dice > runs.runs[best].validation_dice) best = i;
    return best;
}

std::vector<std::vector<std::string>> make_folds(const std::vector<Case>& cases, std::int64_t folds,
                                                 std::int64_t dilated_per_fold, std::int64_t normal_per_fold,
                                                 std::uint64_t seed) {
    if (folds < 2) throw std::invalid_argument("need at least 2 folds");
    std::vector<std::string> dilated, normal;
    for (const auto& c : cases) (c.tag == CaseClass::dilated ? dilated : normal).push_back(c.id);
    if (static_cast<std::int64_t>(dilated.size()) < folds * dilated_per_fold ||
        static_cast<std::int64_t>(normal.size()) < folds * normal_per_fold)
        throw std::invalid_argument("not enough cases of each class for the fold profile");
    std::mt19937_64 rng(seed);
    std::shuffle(dilated.begin(), dilated.end(), rng);
    std::shuffle(normal.begin(), normal.end(), rng);
    std::vector<std::vector<std::string>> out(static_cast<std::size_t>(folds));
    for (std::int64_t f = 0; f < folds; ++f) {
        for (std::int64_t k = 0; k < dilated_per_fold; ++k)
            out[static_cast<std::size_t>(f)].push_back(dilated[static_cast<std::size_t>(f * dilated_per_fold + k)]);
        for (std::int64_t k = 0; k < normal_per_fold; ++k)
            out[static_cast<std::size_t>(f)].push_back(normal[static_cast<std::size_t>(f * normal_per_fold + k)]);
    }
    return out;
}

std::vector<FoldResult> crossval(const std::vector<Case>& cases, const std::vector<std::vector<std::string>>& folds,
                                 const std::vector<Case>& validation, const Trainer& trainer,
                                 std::int64_t repetitions, std::uint64_t seed) {
    std::map<std::string, const Case*> by_id;
    for (const auto& c : cases) by_id[c.id] = &c;
    std::set<std::string> seen;
    for (const auto& fold : folds)
        for (const auto& id : fold) {
            if (!by_id.count(id)) throw std::invalid_argument("fold lists unknown case " + id);
            if (!seen.insert(id).second) throw std::invalid_argument("fold overlap: " + id + " appears twice");
        }
    for (const auto& v : validation)
        if (seen.count(v.id)) throw std::invalid_argument("fold overlap: validation case " + v.id + " is in a fold");

    std::vector<FoldResult> out;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        FoldResult r;
        r.fold = static_cast<std::int64_t>(f);
        std::vector<Case> train_cases, test_cases;
        for (std::size_t g = 0; g < folds.size(); ++g)
            for (const auto& id : folds[g]) {
                if (g == f) {
                    test_cases.push_back(*by_id[id]);
                    r.test_ids.push_back(id);
                } else {
                    train_cases.push_back(*by_id[id]);
                    r.training_ids.push_back(id);
                }
            }
        r.runs = repeat_runs("fold" + std::to_string(f), trainer, train_cases, validation, test_cases, repetitions,
                             derive_seed(seed, 1000 + f));
        r.dice = mean_std(r.runs.test_dice());
        r.mad = mean_std(r.runs.test_mad());
        out.push_back(std::move(r));
    }
    return out;
}

void write_crossval_csv(std::ostream& os, const std::vector<FoldResult>& folds) {
    const auto old = os.precision(17);
    os << "fold,mean_dice,std_dice,mean_mad,std_mad\n";
    for (const auto& f : folds)
        os << f.fold + 1 << ',' << f.dice.mean << ',' << f.dice.std << ',' << f.mad.mean << ',' << f.mad.std << '\n';
    os.precision(old);
}

std::vector<SweepPoint> training_size_sweep(const std::vector<Case>& pool, const std::vector<Case>& validation,
                                            const std::vector<Case>& test, const std::vector<std::int64_t>& sizes,
                                            std::int64_t repetitions, const Trainer& trainer, std::uint64_t seed) {
    if (sizes.empty()) throw std::invalid_argument("no training sizes");
    for (auto s : sizes)
        if (s < 1 || s > static_cast<std::int64_t>(pool.size()))
            throw std::invalid_argument("training size " + std::to_string(s) + " exceeds the pool of " +
                                        std::to_string(pool.size()));
    std::vector<SweepPoint> out;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        SweepPoint pt;
        pt.size = sizes[k];
        std::vector<double> train_d;
        for (std::int64_t rep = 0; rep < repetitions; ++rep) {
            const auto run_seed = derive_seed(seed, k * 10007 + static_cast<std::uint64_t>(rep));
            std::mt19937_64 rng(run_seed);
            std::vector<std::size_t> idx(pool.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(static_cast<std::size_t>(pt.size));
            std::sort(idx.begin(), idx.end());
            std::vector<Case> subset;
            for (auto i : idx) subset.push_back(pool[i]);
            pt.draws.push_back(ids_of(subset));
            auto trained = trainer(subset, validation, run_seed);
            std::vector<double> d;
            for (const auto& r : evaluate(trained.segment, subset)) d.push_back(r.dice);
            train_d.push_back(mean_std(d).mean);
            d.clear();
            for (const auto& r : evaluate(trained.segment, test)) d.push_back(r.dice);
            pt.test_samples.push_back(mean_std(d).mean);
        }
        pt.train_dice = mean_std(train_d);
        pt.test_dice = mean_std(pt.test_samples);
        out.push_back(std::move(pt));
    }
    const auto largest = std::max_element(out.begin(), out.end(), [](const SweepPoint& a, const SweepPoint& b) {
        return a.size < b.size;
    });
    for (auto& pt : out)
        pt.p = pt.test_samples.size() >= 2 ? ttest(pt.test_samples, largest->test_samples)
                                           : std::numeric_limits<double>::quiet_NaN();
    return out;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& points) {
    const auto old = os.precision(17);
    os << "size,train_dice_mean,train_dice_std,test_dice_mean,test_dice_std,p\n";
    for (const auto& p : points)
        os << p.size << ',' << p.train_dice.mean << ',' << p.train_dice.std << ',' << p.test_dice.mean << ','
           << p.test_dice.std << ',' << p.p << '\n';
    os.precision(old);
}

AblationGrid depth_ablation(const std::vector<NetworkSpec>& specs, const SpecTrainer& make_trainer,
                            const std::vector<Case>& training, const std::vector<Case>& validation,
                            const std::vector<Case>& test, std::int64_t runs, std::uint64_t seed) {
    AblationGrid grid;
    for (const auto& s : specs) {
        AblationRow row;
        row.spec = s;
        row.spec.use_cppn = false;
        auto with = row.spec;
        with.use_cppn = true;
        const auto label = to_string(s.family) + "-" + std::to_string(s.nominal_layers());
        row.no_cppn = repeat_runs(label + "-no_cppn", make_trainer(row.spec), training, validation, test, runs, seed);
        row.cppn = repeat_runs(label + "-cppn", make_trainer(with), training, validation, test, runs, seed);
        row.p_dice = ttest(row.no_cppn.test_dice(), row.cppn.test_dice());
        row.p_mad = ttest(row.no_cppn.test_mad(), row.cppn.test_mad());
        grid.rows.push_back(std::move(row));
    }
    return grid;
}

void write_ablation_csv(std::ostream& os, const AblationGrid& grid) {
    os << "network,layers,dice_no_cppn,dice_cppn,p,mad_no_cppn,mad_cppn,p\n";
    for (const auto& r : grid.rows) {
        const auto dn = mean_std(r.no_cppn.test_dice()), dc = mean_std(r.cppn.test_dice());
        const auto mn = mean_std(r.no_cppn.test_mad()), mc = mean_std(r.cppn.test_mad());
        os << (r.spec.family == Family::unet2d ? "U-net" : "V-net") << ',' << r.spec.nominal_layers() << ','
           << fmt("%.3f +- %.3f", dn.mean, dn.std) << ',' << fmt("%.3f +- %.3f", dc.mean, dc.std) << ','
           << fmt("%.2e", r.p_dice) << ',' << fmt("%.3f +- %.3f", mn.mean, mn.std) << ','
           << fmt("%.3f +- %.3f", mc.mean, mc.std) << ',' << fmt("%.2e", r.p_mad) << '\n';
    }
}

Trainer network_trainer(const NetworkSpec& spec, const TrainConfig& config) {
    return [spec, config](const std::vector<Case>& training, const std::vector<Case>& validation, std::uint64_t seed) {
        auto net = std::make_shared<Network>(Network::build(spec, seed));
        TrainConfig c = config;
        c.seed = seed;
        TrainedRun run;
        auto result = train(*net, training, validation, c);
        run.validation_dice = result.history.best_dice;
        run.history = std::move(result.history);
        run.network = net;
        const auto extent = config.window_extent;
        const auto overlap = config.window_overlap;
        run.segment = [net, extent, overlap](const Case& c) {
            std::optional<CppnInput> coords;
            if (net->spec().use_cppn) coords = cppn_input(normalized_coords(c.image.shape));
            return segment(*net, c.image, coords ? &*coords : nullptr, extent, overlap).labels;
        };
        return run;
    };
}

SpecTrainer network_spec_trainer(const TrainConfig& config) {
    return [config](const NetworkSpec& spec) { return network_trainer(spec, config); };
}

}  // namespace ventseg
