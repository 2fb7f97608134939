#pragma once

#include <filesystem>
#include <string>

#include "reldist/pipeline.hpp"

namespace reldist {

/// INI-style text with [train] and [encoder] sections. Unknown sections,
/// unknown keys, duplicate keys and unparsable values are rejected.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& cfg);

}  // namespace reldist
