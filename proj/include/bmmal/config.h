#pragma once

#include "bmmal/alloop.h"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bmmal {

/// Values supplied on the command line. Any value present replaces the one
/// read from the config file.
struct ConfigOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> strategy;
    std::optional<std::size_t> budget;
    std::optional<int> rounds;
    std::optional<std::size_t> split;
    std::optional<std::string> fusion;
    std::optional<int> repetitions;
};

/// A parsed config file: one ExperimentConfig per strategy, all sharing the
/// same data, model and training sections.
struct RunConfig {
    std::vector<ExperimentConfig> experiments;
    int repetitions = 1;
};

/// Schema-checked parse. Unknown keys, wrong types and invalid values throw
/// ConfigError with the offending path, e.g. "experiment.rounds: ...".
/// Relative `data.file.path` values resolve against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& doc, const ConfigOverrides& overrides = {},
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

/// The `data.synthetic` section; a missing seed defaults to experiment.seed
/// and `seed_override` wins over both.
SynthConfig parse_synth_config(const nlohmann::json& doc, std::optional<std::uint64_t> seed_override = {});

nlohmann::json read_json_file(const std::filesystem::path& path);

} // namespace bmmal
