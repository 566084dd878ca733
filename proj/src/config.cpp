#include "ventseg/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace ventseg {

std::string to_string(ProtocolKind k) {
    switch (k) {
        case ProtocolKind::single: return "single";
        case ProtocolKind::repeat: return "repeat";
        case ProtocolKind::crossval: return "crossval";
        case ProtocolKind::sweep: return "sweep";
        case ProtocolKind::ablation: return "ablation";
    }
    return "?";
}

ProtocolKind protocol_from_string(const std::string& s) {
    for (auto k : {ProtocolKind::single, ProtocolKind::repeat, ProtocolKind::crossval, ProtocolKind::sweep,
                   ProtocolKind::ablation})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown protocol '" + s + "'");
}

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
    throw std::invalid_argument(path + ": " + what);
}

void only_keys(const nlohmann::json& j, const std::string& path, std::initializer_list<const char*> keys) {
    if (!j.is_object()) field_error(path.empty() ? "<root>" : path, "expected an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) field_error(path.empty() ? k : path + "." + k, "unknown field");
}

// Merges `section` over the defaults. On failure, the culprit is the field
// whose reset to its default makes the section parse.
template <typename T>
T read_section(const nlohmann::json& section, const std::string& path, const T& defaults) {
    const nlohmann::json base = defaults;
    auto merged = base;
    merged.update(section);
    try {
        return merged.get<T>();
    } catch (const std::exception& e) {
        for (const auto& [k, v] : section.items()) {
            auto probe = merged;
            probe[k] = base[k];
            try {
                (void)probe.get<T>();
            } catch (const std::exception&) {
                continue;
            }
            field_error(path + "." + k, e.what());
        }
        field_error(path, e.what());
    }
}

template <typename T>
void read(const nlohmann::json& j, const std::string& path, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const std::exception& e) {
        field_error(path.empty() ? key : path + "." + key, e.what());
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    if (schema_version != kSchemaVersion)
        field_error("schema_version", "unsupported version " + std::to_string(schema_version));
    try {
        network.validate();
    } catch (const std::exception& e) {
        field_error("network", e.what());
    }
    try {
        train.validate();
    } catch (const std::exception& e) {
        field_error("train", e.what());
    }
    if (inference.window_extent < 1) field_error("inference.window_extent", "must be >= 1");
    if (!(inference.overlap >= 0 && inference.overlap < 1)) field_error("inference.overlap", "must be in [0, 1)");
    if (inference.slice_batch < 1) field_error("inference.slice_batch", "must be >= 1");
    if (protocol.runs < 1) field_error("protocol.runs", "must be >= 1");
    if (protocol.kind == ProtocolKind::crossval && protocol.folds < 2) field_error("protocol.folds", "must be >= 2");
    if (protocol.kind == ProtocolKind::sweep && protocol.sizes.empty()) field_error("protocol.sizes", "must be non-empty");
    if (protocol.kind == ProtocolKind::ablation && protocol.grid.empty()) field_error("protocol.grid", "must be non-empty");
    for (std::size_t i = 0; i < protocol.grid.size(); ++i)
        for (int d : protocol.grid[i].depths) {
            NetworkSpec s = protocol.grid[i].family == Family::unet2d ? NetworkSpec::unet2d(d) : NetworkSpec::vnet3d(d);
            try {
                s.validate();
            } catch (const std::exception& e) {
                field_error("protocol.grid[" + std::to_string(i) + "].depths", e.what());
            }
        }
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    only_keys(j, "", {"schema_version", "seed", "data_dir", "network", "train", "inference", "protocol", "output_dir"});
    ExperimentConfig c;
    if (!j.contains("schema_version")) field_error("schema_version", "missing");
    read(j, "", "schema_version", c.schema_version);
    read(j, "", "seed", c.seed);
    std::string s;
    if (j.contains("data_dir")) {
        read(j, "", "data_dir", s);
        c.data_dir = s;
    }
    if (j.contains("output_dir")) {
        read(j, "", "output_dir", s);
        c.output_dir = s;
    }
    if (j.contains("network")) {
        only_keys(j["network"], "network",
                  {"family", "depth_level", "base_channels", "use_cppn", "cppn_widths", "residual"});
        c.network = read_section(j["network"], "network", c.network);
    }
    if (j.contains("train")) {
        only_keys(j["train"], "train",
                  {"warmup_steps", "patch", "batch", "adam", "lr_stages", "patience", "cadence", "max_iterations",
                   "seed", "delta", "foreground_fraction", "window_extent", "window_overlap"});
        c.train = read_section(j["train"], "train", c.train);
    }
    if (j.contains("inference")) {
        const auto& in = j["inference"];
        only_keys(in, "inference", {"window_extent", "overlap", "slice_batch"});
        read(in, "inference", "window_extent", c.inference.window_extent);
        read(in, "inference", "overlap", c.inference.overlap);
        read(in, "inference", "slice_batch", c.inference.slice_batch);
    }
    if (j.contains("protocol")) {
        const auto& p = j["protocol"];
        only_keys(p, "protocol",
                  {"kind", "runs", "folds", "dilated_per_fold", "normal_per_fold", "sizes", "repetitions", "grid"});
        if (p.contains("kind")) {
            read(p, "protocol", "kind", s);
            try {
                c.protocol.kind = protocol_from_string(s);
            } catch (const std::exception& e) {
                field_error("protocol.kind", e.what());
            }
        }
        read(p, "protocol", "runs", c.protocol.runs);
        read(p, "protocol", "folds", c.protocol.folds);
        read(p, "protocol", "dilated_per_fold", c.protocol.dilated_per_fold);
        read(p, "protocol", "normal_per_fold", c.protocol.normal_per_fold);
        read(p, "protocol", "sizes", c.protocol.sizes);
        read(p, "protocol", "repetitions", c.protocol.repetitions);
        if (p.contains("grid")) {
            if (!p["grid"].is_array()) field_error("protocol.grid", "expected an array");
            for (std::size_t i = 0; i < p["grid"].size(); ++i) {
                const auto path = "protocol.grid[" + std::to_string(i) + "]";
                const auto& g = p["grid"][i];
                only_keys(g, path, {"family", "depths", "base_channels"});
                AblationEntry e;
                read(g, path, "family", s);
                try {
                    e.family = family_from_string(s);
                } catch (const std::exception& ex) {
                    field_error(path + ".family", ex.what());
                }
                read(g, path, "depths", e.depths);
                read(g, path, "base_channels", e.base_channels);
                c.protocol.grid.push_back(e);
            }
        }
    }
    c.validate();
    return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& g : c.protocol.grid)
        grid.push_back({{"family", to_string(g.family)}, {"depths", g.depths}, {"base_channels", g.base_channels}});
    return {{"schema_version", c.schema_version},
            {"seed", c.seed},
            {"data_dir", c.data_dir.string()},
            {"output_dir", c.output_dir.string()},
            {"network", c.network},
            {"train", c.train},
            {"inference",
             {{"window_extent", c.inference.window_extent},
              {"overlap", c.inference.overlap},
              {"slice_batch", c.inference.slice_batch}}},
            {"protocol",
             {{"kind", to_string(c.protocol.kind)},
              {"runs", c.protocol.runs},
              {"folds", c.protocol.folds},
              {"dilated_per_fold", c.protocol.dilated_per_fold},
              {"normal_per_fold", c.protocol.normal_per_fold},
              {"sizes", c.protocol.sizes},
              {"repetitions", c.protocol.repetitions},
              {"grid", grid}}}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
    std::ofstream os(path);
    os << config_to_json(c).dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write " + path.string());
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string config_hash(const ExperimentConfig& c) { return hex(fnv1a(config_to_json(c).dump())); }

void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
    std::filesystem::create_directories(dir);
    nlohmann::json j{{"command", m.command},
                     {"arguments", m.arguments},
                     {"seed", m.seed},
                     {"version", kVersion},
                     {"schema_version", kSchemaVersion},
                     {"outputs", m.outputs},
                     {"config", m.config}};
    j["config_hash"] = m.config.is_null() ? hex(fnv1a(nlohmann::json(m.arguments).dump())) : hex(fnv1a(m.config.dump()));
    std::ofstream os(dir / "manifest.json");
    os << j.dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
}

}  // namespace ventseg
