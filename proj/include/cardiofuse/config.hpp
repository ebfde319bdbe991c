#pragma once

// Run configuration files: flat "key = value" lines grouped under [section]
// headers. A key inside [train] is addressed as "train.lr". Lines starting
// with '#' or ';' are comments.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cardiofuse/evalcv.hpp"

namespace cardiofuse::config {

using Settings = std::vector<std::pair<std::string, std::string>>;

/// Parses config text into ordered (section.key, value) pairs. Throws
/// ConfigError naming the line on malformed input.
Settings parse(std::string_view text, const std::string& origin = "<config>");
Settings load(const std::filesystem::path& path);

/// Applies one setting. Unknown keys and ill-typed values throw ConfigError.
void apply(cv::RunConfig& run, const std::string& key, const std::string& value);
void apply(cv::RunConfig& run, const Settings& settings);

/// "key=value" -> pair; throws ConfigError when '=' is missing.
std::pair<std::string, std::string> split_assignment(std::string_view text);

/// Every key accepted by apply(), for help output.
std::vector<std::string> known_keys();

}  // namespace cardiofuse::config
