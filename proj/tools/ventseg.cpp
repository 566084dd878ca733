#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ventseg/checkpoint.hpp"
#include "ventseg/config.hpp"
#include "ventseg/infer.hpp"
#include "ventseg/metrics.hpp"
#include "ventseg/phantom.hpp"
#include "ventseg/plot.hpp"
#include "ventseg/stats.hpp"
#include "ventseg/train.hpp"

namespace fs = std::filesystem;
using namespace ventseg;

namespace {

std::vector<std::string> g_args;

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    os << text;
    if (!os) throw std::runtime_error("cannot write " + path.string());
}

void manifest(const fs::path& dir, const std::string& command, const nlohmann::json& config, std::uint64_t seed,
              std::vector<std::string> outputs) {
    write_manifest(dir, {command, g_args, config, seed, std::move(outputs)});
}

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::optional<CppnInput> coords_for(const Network& net, const Volume& v) {
    if (!net.spec().use_cppn) return std::nullopt;
    return cppn_input(normalized_coords(v.shape));
}

void check_device() {
    const char* dev = std::getenv("VENTSEG_DEVICE");
    if (dev && std::string(dev) != "cpu")
        std::cerr << "warning: VENTSEG_DEVICE=" << dev << " is not available in this build; using cpu\n";
}

// ---------------------------------------------------------------- phantom
struct PhantomArgs {
    std::string out;
    std::int64_t side = 96;
    double spacing = 0;
    std::uint64_t seed = 1;
    std::string profile = "table1";
    std::vector<std::int64_t> counts;
    double speckle = SpeckleOptions{}.amplitude;
    bool no_skull = false, no_csp = false;
};

int run_phantom(const PhantomArgs& a) {
    PhantomSpec base;
    base.side = a.side;
    base.spacing_mm = a.spacing;
    base.speckle.amplitude = a.speckle;
    base.skull = !a.no_skull;
    base.csp = !a.no_csp;
    Dataset ds;
    if (a.profile == "folds") {
        ds = generate_folds(4, 1, 3, a.seed, base, {3, 2});
    } else {
        DatasetProfile p;
        if (!a.counts.empty()) {
            if (a.counts.size() != 6) throw std::invalid_argument("--counts takes 6 values");
            p.training = {a.counts[0], a.counts[1]};
            p.validation = {a.counts[2], a.counts[3]};
            p.test = {a.counts[4], a.counts[5]};
        } else if (a.profile != "table1") {
            throw std::invalid_argument("unknown profile '" + a.profile + "'");
        }
        ds = generate_dataset(p, a.seed, base);
    }
    write_dataset(a.out, ds);
    nlohmann::json cfg{{"side", a.side}, {"spacing", base.spacing()}, {"profile", a.profile}, {"counts", a.counts},
                       {"speckle", a.speckle}, {"skull", base.skull}, {"csp", base.csp}};
    manifest(a.out, "phantom", cfg, a.seed, {"split.json"});
    std::cout << "wrote " << ds.cases.size() << " cases (" << ds.split.training.size() << "/"
              << ds.split.validation.size() << "/" << ds.split.test.size() << ") to " << a.out << "\n";
    return 0;
}

// ------------------------------------------------------------- preprocess
struct PreprocessArgs {
    std::string image, labels, out_image, out_labels;
    std::int64_t side = 96;
    int downscale = 2;
    bool per_slice = false;
};

int run_preprocess(const PreprocessArgs& a) {
    const auto raw = load_volume(a.image);
    std::optional<LabelMap> raw_labels;
    if (!a.labels.empty()) raw_labels = load_labels(a.labels);
    const auto out = preprocess(raw, raw_labels ? &*raw_labels : nullptr, {a.side, a.downscale, a.per_slice});
    ensure_parent(a.out_image);
    save(a.out_image, out.image);
    if (out.labels) {
        if (a.out_labels.empty()) throw std::invalid_argument("--out-labels is required with --labels");
        ensure_parent(a.out_labels);
        save(a.out_labels, *out.labels);
    }
    const auto dir = fs::path(a.out_image).parent_path();
    manifest(dir.empty() ? "." : dir, "preprocess",
             {{"side", a.side}, {"downscale", a.downscale}, {"per_slice", a.per_slice}}, 0, {a.out_image, a.out_labels});
    return 0;
}

// ------------------------------------------------------------------ train
int run_train(const std::string& config_path, const std::string& out_override) {
    auto cfg = load_config(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    const auto ds = read_dataset(cfg.data_dir);
    if (ds.split.validation.empty()) throw std::invalid_argument("the dataset has no validation cases");
    fs::create_directories(cfg.output_dir);
    auto train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;
    train_cfg.window_extent = cfg.inference.window_extent;
    train_cfg.window_overlap = cfg.inference.overlap;
    auto net = Network::build(cfg.network, cfg.seed);
    std::ofstream log(cfg.output_dir / "train_log.txt");
    TrainHooks hooks;
    hooks.log = &log;
    const auto result = train(net, ds.select(ds.split.training), ds.select(ds.split.validation), train_cfg, hooks,
                              cfg.output_dir);
    {
        std::ofstream os(cfg.output_dir / "history.csv");
        os.precision(17);
        os << "iteration,loss_kind,loss\n";
        for (std::size_t i = 0; i < result.history.losses.size(); ++i)
            os << i << ',' << to_string(result.history.loss_kinds[i]) << ',' << result.history.losses[i] << '\n';
        std::ofstream vs(cfg.output_dir / "validation.csv");
        vs.precision(17);
        vs << "iteration,dice\n";
        for (const auto& v : result.history.validation) vs << v.iteration << ',' << v.dice << '\n';
    }
    auto ck = make_checkpoint(net, result.history.best_iteration, result.history.best_dice);
    ck.rng_state = result.rng_state;
    save_checkpoint(cfg.output_dir / "best.vsck", ck);
    save_config(cfg.output_dir / "config.json", cfg);
    manifest(cfg.output_dir, "train", config_to_json(cfg), cfg.seed,
             {"best.vsck", "last.vsck", "history.csv", "validation.csv", "train_log.txt"});
    std::cout << "best validation Dice " << result.history.best_dice << " at iteration "
              << result.history.best_iteration << " (stop: " << to_string(result.history.stop_reason) << ")\n";
    return 0;
}

// ------------------------------------------------------------------ infer
struct InferArgs {
    std::string checkpoint, image, out, probabilities;
    std::int64_t window_extent = 64;
    double overlap = 0.75;
    std::int64_t slice_batch = 1;
};

int run_infer(const InferArgs& a) {
    const auto net = restore_network(load_checkpoint(a.checkpoint));
    const auto vol = load_volume(a.image);
    const auto coords = coords_for(net, vol);
    const auto seg = segment(net, vol, coords ? &*coords : nullptr, a.window_extent, a.overlap, a.slice_batch);
    ensure_parent(a.out);
    save(a.out, seg.labels);
    if (!a.probabilities.empty()) {
        ensure_parent(a.probabilities);
        save(a.probabilities, seg.scores[1]);
    }
    std::cout << "time " << seg.seconds << " s, " << seg.forward_passes << " forward passes, shape "
              << to_string(vol.shape) << "\n";
    const auto dir = fs::path(a.out).parent_path();
    manifest(dir.empty() ? "." : dir, "infer",
             {{"checkpoint", a.checkpoint}, {"window_extent", a.window_extent}, {"overlap", a.overlap}}, 0, {a.out});
    return 0;
}

// ------------------------------------------------------------------- eval
struct EvalArgs {
    std::string reference, prediction, id = "case", tag = "normal";
    std::string data, predictions, split = "test";
    std::string out = "metrics.csv", summary;
    bool signed_volumes = false;
};

int run_eval(const EvalArgs& a) {
    std::vector<MetricRecord> records;
    if (!a.data.empty()) {
        const auto ds = read_dataset(a.data);
        const auto& ids = a.split == "training" ? ds.split.training
                          : a.split == "validation" ? ds.split.validation
                                                    : ds.split.test;
        for (const auto& id : ids) {
            const auto& c = ds.find(id);
            const auto pred = load_labels(fs::path(a.predictions) / (id + "_pred.vsv"));
            records.push_back(evaluate_case(c.labels, pred, c.labels.spacing, id, c.tag));
        }
    } else {
        const auto ref = load_labels(a.reference);
        const auto pred = load_labels(a.prediction);
        records.push_back(evaluate_case(ref, pred, ref.spacing, a.id, case_class_from_string(a.tag)));
    }
    std::ostringstream os;
    write_metrics_csv(os, records);
    write_text(a.out, os.str());
    std::vector<std::string> outputs{a.out};
    if (!a.summary.empty()) {
        std::ostringstream ss;
        write_summary_csv(ss, aggregate(records, a.signed_volumes));
        write_text(a.summary, ss.str());
        outputs.push_back(a.summary);
    }
    const auto dir = fs::path(a.out).parent_path();
    manifest(dir.empty() ? "." : dir, "eval", nullptr, 0, outputs);
    return 0;
}

// --------------------------------------------------------------- protocol
Trainer trainer_for(const ExperimentConfig& cfg, const NetworkSpec& spec) {
    auto tc = cfg.train;
    tc.window_extent = cfg.inference.window_extent;
    tc.window_overlap = cfg.inference.overlap;
    return network_trainer(spec, tc);
}

void write_records(const fs::path& path, const RunSet& set) {
    std::ostringstream os;
    os.precision(17);
    os << "run,seed,validation_dice,test_dice,test_mad\n";
    for (const auto& r : set.runs)
        os << r.run << ',' << r.seed << ',' << r.validation_dice << ',' << r.test_dice << ',' << r.test_mad << '\n';
    write_text(path, os.str());
}

int run_protocol(const std::string& config_path, const std::string& out_override) {
    auto cfg = load_config(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    const auto ds = read_dataset(cfg.data_dir);
    const auto training = ds.select(ds.split.training);
    const auto validation = ds.select(ds.split.validation);
    const auto test = ds.select(ds.split.test);
    const auto& p = cfg.protocol;
    const auto out = cfg.output_dir;
    fs::create_directories(out);
    std::vector<std::string> outputs;

    switch (p.kind) {
        case ProtocolKind::single:
        case ProtocolKind::repeat: {
            const auto runs = p.kind == ProtocolKind::single ? 1 : p.runs;
            const auto set = repeat_runs(to_string(p.kind), trainer_for(cfg, cfg.network), training, validation,
                                         test, runs, cfg.seed);
            write_records(out / "runs.csv", set);
            const auto best = select_best(set);
            std::ostringstream os;
            write_metrics_csv(os, set.runs[best].records);
            write_text(out / "metrics.csv", os.str());
            std::ostringstream ss;
            write_summary_csv(ss, aggregate(set.runs[best].records));
            write_text(out / "summary.csv", ss.str());
            save_checkpoint(out / "best.vsck", make_checkpoint(*set.runs[best].network, 0, set.runs[best].validation_dice));
            outputs = {"runs.csv", "metrics.csv", "summary.csv", "best.vsck"};
            std::cout << "best run " << best << ", test Dice " << set.runs[best].test_dice << "\n";
            break;
        }
        case ProtocolKind::crossval: {
            std::vector<Case> pool;
            std::vector<std::vector<std::string>> folds;
            if (!ds.folds.empty()) {
                pool = training;
                folds = ds.folds;
            } else {
                pool = training;
                pool.insert(pool.end(), test.begin(), test.end());
                folds = make_folds(pool, p.folds, p.dilated_per_fold, p.normal_per_fold, cfg.seed);
            }
            const auto results = crossval(pool, folds, validation, trainer_for(cfg, cfg.network), p.runs, cfg.seed);
            std::ostringstream os;
            write_crossval_csv(os, results);
            write_text(out / "crossval.csv", os.str());
            outputs = {"crossval.csv"};
            break;
        }
        case ProtocolKind::sweep: {
            const auto pts = training_size_sweep(training, validation, test, p.sizes, p.repetitions,
                                                 trainer_for(cfg, cfg.network), cfg.seed);
            std::ostringstream os;
            write_sweep_csv(os, pts);
            write_text(out / "sweep.csv", os.str());
            write_text(out / "sweep.svg", sweep_svg(pts));
            outputs = {"sweep.csv", "sweep.svg"};
            break;
        }
        case ProtocolKind::ablation: {
            std::vector<NetworkSpec> specs;
            for (const auto& g : p.grid)
                for (int d : g.depths) {
                    auto s = g.family == Family::unet2d ? NetworkSpec::unet2d(d) : NetworkSpec::vnet3d(d);
                    if (g.base_channels > 0) s.base_channels = g.base_channels;
                    s.cppn = cfg.network.cppn;
                    specs.push_back(s);
                }
            auto tc = cfg.train;
            tc.window_extent = cfg.inference.window_extent;
            tc.window_overlap = cfg.inference.overlap;
            const auto grid = depth_ablation(specs, network_spec_trainer(tc), training, validation, test, p.runs,
                                             cfg.seed);
            std::ostringstream os;
            write_ablation_csv(os, grid);
            write_text(out / "ablation.csv", os.str());
            write_text(out / "ablation.svg", ablation_svg(grid));
            outputs = {"ablation.csv", "ablation.svg"};
            break;
        }
    }
    save_config(out / "config.json", cfg);
    manifest(out, "protocol", config_to_json(cfg), cfg.seed, outputs);
    return 0;
}

// --------------------------------------------------------------- patterns
int run_patterns(const std::string& checkpoint, const std::string& out, std::int64_t side,
                 const std::vector<std::int64_t>& planes) {
    const auto net = restore_network(load_checkpoint(checkpoint));
    if (!net.cppn()) throw std::invalid_argument("the checkpoint's network has no CPPN");
    const auto input = to_tensor(cppn_input(normalized_coords(side)));
    const auto patterns = net.cppn()->forward_eval(net.params(), input);
    fs::create_directories(out);
    std::vector<std::string> outputs;
    for (auto z : planes) {
        if (z < 0 || z >= side) throw std::invalid_argument("plane " + std::to_string(z) + " is outside the volume");
        for (std::int64_t ch = 0; ch < patterns.c(); ++ch) {
            const Real* plane = patterns.plane(0, ch) + z * side * side;
            const auto name = "pattern_c" + std::to_string(ch) + "_z" + std::to_string(z) + ".pgm";
            write_pgm(fs::path(out) / name, std::span<const Real>(plane, static_cast<std::size_t>(side * side)), side,
                      side);
            outputs.push_back(name);
        }
    }
    manifest(out, "patterns", {{"checkpoint", checkpoint}, {"side", side}, {"planes", planes}}, 0, outputs);
    return 0;
}

// ------------------------------------------------------------------- plot
int run_plot(const std::string& sweep, const std::string& ablation, const std::string& out) {
    std::ifstream is(!sweep.empty() ? sweep : ablation);
    if (!is) throw std::runtime_error("cannot open input CSV");
    const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    write_text(out, !sweep.empty() ? sweep_svg_from_csv(text) : ablation_svg_from_csv(text));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    g_args.assign(argv, argv + argc);
    check_device();
    CLI::App app{"Fetal brain ventricle segmentation with coordinate pattern priors"};
    app.require_subcommand(1);

    PhantomArgs pa;
    auto* ph = app.add_subcommand("phantom", "Generate a synthetic dataset");
    ph->add_option("--out", pa.out, "Output directory")->required();
    ph->add_option("--side", pa.side, "Volume side in voxels");
    ph->add_option("--spacing", pa.spacing, "Voxel size in mm (default 0.3*320/side)");
    ph->add_option("--seed", pa.seed, "Dataset seed");
    ph->add_option("--profile", pa.profile, "table1 or folds");
    ph->add_option("--counts", pa.counts, "train_normal train_dilated val_normal val_dilated test_normal test_dilated")
        ->expected(6);
    ph->add_option("--speckle", pa.speckle, "Speckle amplitude");
    ph->add_flag("--no-skull", pa.no_skull, "Omit the skull decoy");
    ph->add_flag("--no-csp", pa.no_csp, "Omit the midline CSP decoy");

    PreprocessArgs pp;
    auto* pre = app.add_subcommand("preprocess", "Downscale, crop and standardize a volume");
    pre->add_option("--image", pp.image, "Raw image")->required()->check(CLI::ExistingFile);
    pre->add_option("--labels", pp.labels, "Raw labels")->check(CLI::ExistingFile);
    pre->add_option("--out-image", pp.out_image, "Output image")->required();
    pre->add_option("--out-labels", pp.out_labels, "Output labels");
    pre->add_option("--side", pp.side, "Target side");
    pre->add_option("--downscale", pp.downscale, "Downscale factor (1 or 2)");
    pre->add_flag("--per-slice", pp.per_slice, "Standardize each coronal slice");

    std::string config, out;
    auto* tr = app.add_subcommand("train", "Train one network");
    tr->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", out, "Override output_dir");

    InferArgs ia;
    auto* inf = app.add_subcommand("infer", "Segment a volume");
    inf->add_option("--checkpoint", ia.checkpoint)->required()->check(CLI::ExistingFile);
    inf->add_option("--image", ia.image)->required()->check(CLI::ExistingFile);
    inf->add_option("--out", ia.out, "Output label map")->required();
    inf->add_option("--probabilities", ia.probabilities, "Optional foreground score dump");
    inf->add_option("--window-extent", ia.window_extent, "3D window extent along z");
    inf->add_option("--overlap", ia.overlap, "3D window overlap fraction");
    inf->add_option("--slice-batch", ia.slice_batch, "2D slices per forward pass");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Compute Dice, MAD and volume differences");
    ev->add_option("--reference", ea.reference)->check(CLI::ExistingFile);
    ev->add_option("--prediction", ea.prediction)->check(CLI::ExistingFile);
    ev->add_option("--id", ea.id, "Case id for single-pair mode");
    ev->add_option("--class", ea.tag, "normal or dilated");
    ev->add_option("--data", ea.data, "Dataset directory")->check(CLI::ExistingDirectory);
    ev->add_option("--predictions", ea.predictions, "Directory of <id>_pred.vsv files");
    ev->add_option("--split", ea.split, "training, validation or test");
    ev->add_option("--out", ea.out, "Per-case CSV");
    ev->add_option("--summary", ea.summary, "Per-class mean/std CSV");
    ev->add_flag("--signed", ea.signed_volumes, "Aggregate signed volume differences");

    auto* pr = app.add_subcommand("protocol", "Run the configured protocol");
    pr->add_option("--config", config)->required()->check(CLI::ExistingFile);
    pr->add_option("--out", out, "Override output_dir");

    std::string ckpt;
    std::int64_t side = 96;
    std::vector<std::int64_t> planes{48};
    auto* pat = app.add_subcommand("patterns", "Dump CPPN pattern channels as PGM images");
    pat->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
    pat->add_option("--out", out, "Output directory")->required();
    pat->add_option("--side", side, "Volume side");
    pat->add_option("--planes", planes, "z planes");

    std::string sweep_csv, ablation_csv;
    auto* pl = app.add_subcommand("plot", "Render a sweep or ablation CSV as SVG");
    auto* so = pl->add_option("--sweep", sweep_csv)->check(CLI::ExistingFile);
    pl->add_option("--ablation", ablation_csv)->check(CLI::ExistingFile)->excludes(so);
    pl->add_option("--out", out, "Output SVG")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*ph) return run_phantom(pa);
        if (*pre) return run_preprocess(pp);
        if (*tr) return run_train(config, out);
        if (*inf) return run_infer(ia);
        if (*ev) {
            if (ea.data.empty() && (ea.reference.empty() || ea.prediction.empty()))
                throw std::invalid_argument("eval needs --reference and --prediction, or --data and --predictions");
            return run_eval(ea);
        }
        if (*pr) return run_protocol(config, out);
        if (*pat) return run_patterns(ckpt, out, side, planes);
        if (*pl) {
            if (sweep_csv.empty() && ablation_csv.empty()) throw std::invalid_argument("plot needs --sweep or --ablation");
            return run_plot(sweep_csv, ablation_csv, out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
