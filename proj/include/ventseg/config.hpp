#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ventseg/nets.hpp"
#include "ventseg/phantom.hpp"
#include "ventseg/train.hpp"

namespace ventseg {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

struct InferenceConfig {
    std::int64_t window_extent = 64;
    double overlap = 0.75;
    std::int64_t slice_batch = 1;
    bool operator==(const InferenceConfig&) const = default;
};

enum class ProtocolKind { single, repeat, crossval, sweep, ablation };
std::string to_string(ProtocolKind k);
ProtocolKind protocol_from_string(const std::string& s);

struct AblationEntry {
    Family family = Family::unet2d;
    std::vector<int> depths;
    std::int64_t base_channels = 0;  // 0: family default
    bool operator==(const AblationEntry&) const = default;
};

struct ProtocolConfig {
    ProtocolKind kind = ProtocolKind::single;
    std::int64_t runs = 5;
    std::int64_t folds = 4;
    std::int64_t dilated_per_fold = 1;
    std::int64_t normal_per_fold = 3;
    std::vector<std::int64_t> sizes;
    std::int64_t repetitions = 10;
    std::vector<AblationEntry> grid;
    bool operator==(const ProtocolConfig&) const = default;
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::uint64_t seed = 1;
    std::filesystem::path data_dir = "data";
    NetworkSpec network = NetworkSpec::unet2d();
    TrainConfig train;
    InferenceConfig inference;
    ProtocolConfig protocol;
    std::filesystem::path output_dir = "out";

    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

// Throws std::invalid_argument naming the offending field ("train.batch: ...").
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& c);

// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex(std::uint64_t v);
// Hash of the canonical (sorted-key, compact) serialization.
std::string config_hash(const ExperimentConfig& c);

struct Manifest {
    std::string command;
    std::vector<std::string> arguments;
    nlohmann::json config;  // null when the command takes no config
    std::uint64_t seed = 0;
    std::vector<std::string> outputs;
};

// Writes <dir>/manifest.json with the config hash and code version.
void write_manifest(const std::filesystem::path& dir, const Manifest& m);

}  // namespace ventseg
