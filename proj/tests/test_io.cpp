#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ventseg/checkpoint.hpp"
#include "ventseg/config.hpp"
#include "ventseg/metrics.hpp"

using namespace ventseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("ventseg_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::string& args) {
    const std::string cmd = std::string(VENTSEG_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string error_of(nlohmann::json j) {
    if (!j.contains("schema_version")) j["schema_version"] = kSchemaVersion;
    try {
        config_from_json(j);
    } catch (const std::invalid_argument& e) {
        return e.what();
    }
    return "";
}

bool error_of_missing_version() {
    try {
        config_from_json(nlohmann::json::object());
    } catch (const std::invalid_argument& e) {
        return std::string(e.what()).starts_with("schema_version");
    }
    return false;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    auto net = Network::build(NetworkSpec::unet2d(2, 4), 5);
    const auto coords = to_tensor(cppn_input(normalized_coords(Extent3{2, 8, 8})));
    Tensor c(1, 9, {1, 8, 8});
    std::copy(coords.data(), coords.data() + 9 * 64, c.data());
    for (std::int64_t k = 0; k < 9; ++k) std::copy(coords.plane(0, k), coords.plane(0, k) + 64, c.plane(0, k));
    Tensor x(1, 1, {1, 8, 8}, 0.25f);
    x.values()[3] = -1.5f;
    net.params().zero_grad();
    const auto p = net.forward(x, &c, Mode::train);
    net.backward(p);
    Adam adam(net.params());
    adam.step(net.params(), 1e-3);
    adam.step(net.params(), 1e-3);

    auto ck = make_checkpoint(net, 1234, 0.875);
    ck.rng_state = "state";
    ck.optimizer = adam;
    const auto dir = temp_dir("checkpoint");
    save_checkpoint(dir / "a.vsck", ck);
    const auto back = load_checkpoint(dir / "a.vsck");
    CHECK(back.spec == ck.spec);
    CHECK(back.iteration == 1234);
    CHECK(back.validation_dice == 0.875);
    CHECK(back.rng_state == "state");
    CHECK(back.params == ck.params);
    REQUIRE(back.optimizer.has_value());
    CHECK(*back.optimizer == adam);

    const auto restored = restore_network(back);
    CHECK(restored.params() == net.params());
    CHECK(restored.infer(x, &c) == net.infer(x, &c));

    save_checkpoint(dir / "b.vsck", back);
    CHECK(read_file(dir / "a.vsck") == read_file(dir / "b.vsck"));

    std::ofstream(dir / "bad.vsck") << "nope";
    CHECK_THROWS(load_checkpoint(dir / "bad.vsck"));
    CHECK_THROWS(load_checkpoint(dir / "missing.vsck"));
    fs::remove_all(dir);
}

TEST_CASE("config round trip") {
    ExperimentConfig c;
    c.seed = 77;
    c.network = NetworkSpec::vnet3d(2, 16, false);
    c.train = TrainConfig::for_family(Family::vnet3d);
    c.train.lr_stages = {{0, 1e-3}, {100, 1e-4}};
    c.protocol.kind = ProtocolKind::ablation;
    c.protocol.grid = {{Family::unet2d, {1, 2}, 8}};
    c.protocol.sizes = {2, 4};
    CHECK(config_from_json(config_to_json(c)) == c);
    CHECK(config_from_json({{"schema_version", kSchemaVersion}}) == ExperimentConfig{});
    CHECK(error_of_missing_version());

    const auto dir = temp_dir("config");
    save_config(dir / "c.json", c);
    CHECK(load_config(dir / "c.json") == c);
    fs::remove_all(dir);
}

TEST_CASE("config errors name the field") {
    CHECK(error_of({{"train", {{"batch", "eight"}}}}).starts_with("train.batch"));
    CHECK(error_of({{"bogus", 1}}).find("bogus") != std::string::npos);
    CHECK(error_of({{"train", {{"batchsize", 8}}}}).find("batchsize") != std::string::npos);
    CHECK(error_of({{"schema_version", 2}}).find("schema_version") != std::string::npos);
    CHECK(error_of({{"network", {{"family", "unet2d"}, {"depth_level", 9}}}}).find("depth_level") != std::string::npos);
    CHECK(error_of({{"protocol", {{"kind", "sideways"}}}}).find("protocol") != std::string::npos);
    CHECK(error_of({{"train", {{"batch", 0}}}}) != "");
}

TEST_CASE("hashes") {
    // Published FNV-1a 64-bit test vectors.
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
    CHECK(hex(0xabcULL) == "0000000000000abc");
    ExperimentConfig a, b;
    CHECK(config_hash(a) == config_hash(b));
    b.seed = 2;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("manifest") {
    const auto dir = temp_dir("manifest");
    write_manifest(dir, {"train", {"--config", "x.json"}, config_to_json(ExperimentConfig{}), 1, {"a.csv"}});
    const auto j = nlohmann::json::parse(read_file(dir / "manifest.json"));
    CHECK(j.at("command") == "train");
    CHECK(j.at("version") == kVersion);
    CHECK(j.at("schema_version") == kSchemaVersion);
    CHECK(j.at("config_hash") == config_hash(ExperimentConfig{}));
    fs::remove_all(dir);
}

TEST_CASE("command line round trip") {
    const auto dir = temp_dir("cli");
    const auto d = dir.string();
    REQUIRE(cli("phantom --out " + d + "/data --side 24 --counts 1 0 1 0 1 0 --seed 3") == 0);
    CHECK(fs::exists(dir / "data" / "split.json"));
    CHECK(fs::exists(dir / "data" / "manifest.json"));
    const auto labels = (dir / "data" / "case000_labels.vsv").string();
    REQUIRE(cli("eval --reference " + labels + " --prediction " + labels + " --out " + d + "/eval/m.csv") == 0);
    std::ifstream in(dir / "eval" / "m.csv");
    const auto rec = read_metrics_csv(in);
    REQUIRE(rec.size() == 1);
    CHECK(rec[0].dice == 1.0);
    CHECK(rec[0].mad_mm == 0.0);
    CHECK(rec[0].dVa_cm3 == 0.0);
    CHECK(rec[0].dVr == 0.0);

    CHECK(cli("eval --reference " + d + "/nothing.vsv --out x.csv") != 0);
    CHECK(cli("frobnicate") != 0);
    CHECK(cli("train --config " + d + "/missing.json") != 0);
    fs::remove_all(dir);
}
