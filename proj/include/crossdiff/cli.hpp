#pragma once

#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace crossdiff::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Thrown for bad commands, unknown keys and malformed values (exit 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every section and key with its default value.
nlohmann::ordered_json default_config();

/// Defaults, overlaid by the config file (if non-empty) and then by
/// "section.key=value" overrides. Values parse as JSON where possible and as
/// strings otherwise. Unknown sections or keys raise UsageError.
nlohmann::ordered_json resolve_config(const std::string& config_path, const std::vector<std::string>& overrides);

/// Runs one of makedata, pretrain, adapt, fuse, sample, eval and returns the
/// process exit status. Diagnostics go to `err`, progress lines to `out`.
int dispatch(const std::string& command, const std::string& config_path, const std::vector<std::string>& overrides,
             std::ostream& out, std::ostream& err);

/// Command-line front end: crossdiff <command> [--config FILE] [--section.key=value ...]
int main(int argc, char** argv);

}  // namespace crossdiff::cli
