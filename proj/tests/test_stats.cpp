#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "ventseg/phantom.hpp"
#include "ventseg/stats.hpp"

using namespace ventseg;

namespace {

std::vector<Case> toy_cases(std::int64_t normal, std::int64_t dilated) {
    std::vector<Case> out;
    for (std::int64_t i = 0; i < normal + dilated; ++i) {
        Case c;
        c.id = "case" + std::to_string(100 + i);
        c.tag = i < normal ? CaseClass::normal : CaseClass::dilated;
        c.image = Volume({4, 6, 6}, {});
        c.labels = LabelMap({4, 6, 6}, {});
        for (std::int64_t z = 1; z < 3; ++z)
            for (std::int64_t y = 1; y < 5; ++y)
                for (std::int64_t x = 1; x < 3 + (i % 3); ++x) c.labels(z, y, x) = 1;
        out.push_back(std::move(c));
    }
    return out;
}

// Predicts the reference with `flips` voxels set next to it; records every
// training set it sees.
struct StubTrainer {
    std::shared_ptr<std::vector<std::vector<std::string>>> seen =
        std::make_shared<std::vector<std::vector<std::string>>>();

    TrainedRun operator()(const std::vector<Case>& training, const std::vector<Case>&, std::uint64_t seed) const {
        std::vector<std::string> ids;
        for (const auto& c : training) ids.push_back(c.id);
        seen->push_back(ids);
        TrainedRun r;
        const int flips = static_cast<int>(seed % 4) + static_cast<int>(std::min<std::size_t>(training.size(), 8)) % 3;
        r.validation_dice = 1.0 / (1 + flips);
        r.segment = [flips](const Case& c) {
            auto l = c.labels;
            for (int k = 0; k < flips; ++k) l(3, 5, k) = 1;
            return l;
        };
        return r;
    }
};

}  // namespace

TEST_CASE("t-test on reference Dice samples") {
    const std::vector<double> a{0.808, 0.809, 0.811, 0.8, 0.81}, b{0.823, 0.824, 0.822, 0.821, 0.822};
    const auto r = ttest_pooled(a, b);
    CHECK(r.df == 8);
    CHECK(r.p >= 4e-5);
    CHECK(r.p <= 1.6e-4);
    CHECK(r.p == doctest::Approx(oracle::ttest_p(a, b)).epsilon(1e-9));
    CHECK(ttest(a, a) == 1.0);
}

TEST_CASE("t-test degenerate and invalid inputs") {
    const std::vector<double> c{0.5, 0.5, 0.5}, d{0.7, 0.7, 0.7};
    CHECK(ttest_pooled(c, c).p == 1.0);
    CHECK(!ttest_pooled(c, c).degenerate);
    CHECK(ttest_pooled(c, d).p == 0.0);
    CHECK(ttest_pooled(c, d).degenerate);
    CHECK_THROWS_AS(ttest(std::vector<double>{1.0}, c), std::invalid_argument);
}

TEST_CASE("t-test properties") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.8, 0.02);
    std::uniform_int_distribution<int> size(2, 12);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> a(static_cast<std::size_t>(size(rng))), b(static_cast<std::size_t>(size(rng)));
        for (auto& v : a) v = n(rng);
        for (auto& v : b) v = n(rng) + 0.01 * (t % 5);
        const double p = ttest(a, b);
        REQUIRE(p == ttest(b, a));
        REQUIRE(p == doctest::Approx(oracle::ttest_p(a, b)).epsilon(1e-8));
        auto a2 = a, b2 = b;
        for (auto& v : a2) v = 3.5 * v + 1.25;
        for (auto& v : b2) v = 3.5 * v + 1.25;
        REQUIRE(ttest(a2, b2) == doctest::Approx(p).epsilon(1e-9));
        REQUIRE(p > 0);
        REQUIRE(p <= 1);
    }
}

TEST_CASE("t-test p-values are uniform under the null") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0, 1);
    std::vector<double> ps;
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> a(5), b(5);
        for (auto& v : a) v = n(rng);
        for (auto& v : b) v = n(rng);
        ps.push_back(ttest(a, b));
    }
    std::sort(ps.begin(), ps.end());
    double ks = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const double lo = static_cast<double>(i) / 1000.0, hi = static_cast<double>(i + 1) / 1000.0;
        ks = std::max({ks, std::abs(ps[i] - lo), std::abs(hi - ps[i])});
    }
    // Kolmogorov-Smirnov critical value at alpha = 0.01.
    CHECK(ks < 1.628 / std::sqrt(1000.0));
}

TEST_CASE("best run selection") {
    RunSet s;
    s.runs.resize(1);
    CHECK(select_best(s) == 0);
    s.runs.resize(3);
    s.runs[0].validation_dice = 0.80, s.runs[1].validation_dice = 0.83, s.runs[2].validation_dice = 0.81;
    CHECK(select_best(s) == 1);
    for (auto& r : s.runs) r.validation_dice = 0.5;
    CHECK(select_best(s) == 0);
    CHECK_THROWS_AS(select_best(RunSet{}), std::invalid_argument);
}

TEST_CASE("repeated runs") {
    const auto cases = toy_cases(3, 2);
    StubTrainer stub;
    const auto a = repeat_runs("x", stub, cases, cases, cases, 5, 42);
    const auto b = repeat_runs("x", stub, cases, cases, cases, 5, 42);
    REQUIRE(a.runs.size() == 5);
    CHECK(a.test_dice() == b.test_dice());
    std::set<std::uint64_t> seeds;
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(a.runs[i].seed == derive_seed(42, i));
        seeds.insert(a.runs[i].seed);
        CHECK(a.runs[i].records.size() == 5);
    }
    CHECK(seeds.size() == 5);
    CHECK_THROWS_AS(repeat_runs("x", stub, cases, cases, cases, 0, 1), std::invalid_argument);
}

TEST_CASE("fold assignment honours the class constraint") {
    const auto cases = toy_cases(12, 4);
    const auto folds = make_folds(cases, 4, 1, 3, 5);
    REQUIRE(folds.size() == 4);
    std::map<std::string, CaseClass> tag;
    for (const auto& c : cases) tag[c.id] = c.tag;
    std::set<std::string> all;
    for (const auto& f : folds) {
        CHECK(std::count_if(f.begin(), f.end(), [&](const std::string& id) { return tag[id] == CaseClass::dilated; }) == 1);
        CHECK(std::count_if(f.begin(), f.end(), [&](const std::string& id) { return tag[id] == CaseClass::normal; }) == 3);
        all.insert(f.begin(), f.end());
    }
    CHECK(all.size() == 16);
    CHECK(make_folds(cases, 4, 1, 3, 5) == folds);
    CHECK_THROWS_AS(make_folds(cases, 5, 1, 3, 5), std::invalid_argument);
}

TEST_CASE("cross-validation partitions and never leaks") {
    const auto cases = toy_cases(4, 2);
    const auto validation = toy_cases(0, 0);
    StubTrainer stub;
    const auto folds = make_folds(cases, 2, 1, 2, 3);
    const auto res = crossval(cases, folds, {}, stub, 2, 9);
    REQUIRE(res.size() == 2);
    std::map<std::string, int> tested;
    for (const auto& f : res) {
        for (const auto& id : f.test_ids) ++tested[id];
        for (const auto& id : f.training_ids)
            CHECK(std::find(f.test_ids.begin(), f.test_ids.end(), id) == f.test_ids.end());
        CHECK(f.runs.runs.size() == 2);
        CHECK(f.training_ids.size() + f.test_ids.size() == cases.size());
    }
    CHECK(tested.size() == cases.size());
    for (const auto& [id, n] : tested) CHECK(n == 1);
    for (const auto& training : *stub.seen) CHECK(training.size() == 3);

    std::stringstream ss;
    write_crossval_csv(ss, res);
    std::string header;
    std::getline(ss, header);
    CHECK(header == "fold,mean_dice,std_dice,mean_mad,std_mad");

    auto overlapping = folds;
    overlapping[1].push_back(overlapping[0][0]);
    CHECK_THROWS_AS(crossval(cases, overlapping, {}, stub, 1, 9), std::invalid_argument);
    auto unknown = folds;
    unknown[0].push_back("nope");
    CHECK_THROWS_AS(crossval(cases, unknown, {}, stub, 1, 9), std::invalid_argument);
    std::vector<Case> leaked{cases[0]};
    CHECK_THROWS_AS(crossval(cases, folds, leaked, stub, 1, 9), std::invalid_argument);
}

TEST_CASE("training size sweep") {
    const auto pool = toy_cases(6, 2);
    const auto test = toy_cases(2, 1);
    StubTrainer stub;
    const auto pts = training_size_sweep(pool, {}, test, {2, 4, 8}, 3, stub, 4);
    REQUIRE(pts.size() == 3);
    CHECK(pts[2].p == 1.0);
    for (const auto& pt : pts) {
        CHECK(pt.draws.size() == 3);
        for (const auto& d : pt.draws) CHECK(static_cast<std::int64_t>(d.size()) == pt.size);
        CHECK(pt.test_samples.size() == 3);
    }
    // The full pool is drawn identically every time.
    CHECK(pts[2].draws[0] == pts[2].draws[1]);
    CHECK(pts[2].draws[1] == pts[2].draws[2]);
    CHECK_THROWS_AS(training_size_sweep(pool, {}, test, {9}, 1, stub, 4), std::invalid_argument);

    std::stringstream ss;
    write_sweep_csv(ss, pts);
    std::string header;
    std::getline(ss, header);
    CHECK(header == "size,train_dice_mean,train_dice_std,test_dice_mean,test_dice_std,p");
}

TEST_CASE("depth ablation grid") {
    const auto cases = toy_cases(3, 1);
    std::vector<bool> arms;
    SpecTrainer make = [&](const NetworkSpec& spec) -> Trainer {
        arms.push_back(spec.use_cppn);
        StubTrainer stub;
        return [stub, cppn = spec.use_cppn](const std::vector<Case>& t, const std::vector<Case>& v, std::uint64_t s) {
            return stub(t, v, s + (cppn ? 1 : 0));
        };
    };
    const auto grid = depth_ablation({NetworkSpec::unet2d(1, 4)}, make, cases, cases, cases, 3, 2);
    REQUIRE(grid.rows.size() == 1);
    CHECK(arms == std::vector<bool>{false, true});
    const auto& row = grid.rows[0];
    CHECK(row.no_cppn.runs.size() == 3);
    CHECK(row.cppn.runs.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(row.no_cppn.runs[i].seed == row.cppn.runs[i].seed);
    CHECK(row.p_dice == ttest(row.no_cppn.test_dice(), row.cppn.test_dice()));

    std::stringstream ss;
    write_ablation_csv(ss, grid);
    std::string header, line;
    std::getline(ss, header);
    std::getline(ss, line);
    CHECK(header == "network,layers,dice_no_cppn,dice_cppn,p,mad_no_cppn,mad_cppn,p");
    CHECK(line.starts_with("U-net,9,"));
    CHECK(line.find(" +- ") != std::string::npos);
}
