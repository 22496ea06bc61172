#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace mtbrn::cli {

// Runs one subcommand. `args` excludes the program name. Returns the process
// exit status: 0 success, 1 runtime failure, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Flat `key = value` document with optional [command] sections and # comments.
struct ConfigEntry {
  std::string value;
  std::size_t line = 0;
};

struct ConfigFile {
  std::string source;
  std::map<std::string, ConfigEntry> global;
  std::map<std::string, std::map<std::string, ConfigEntry>> sections;
};

ConfigFile parse_config(const std::string& text, const std::string& source = "<config>");

// A manifest with the fields that legitimately vary between identical runs
// removed (wall time, file locations, thread count), serialized canonically.
std::string comparable_manifest(const std::filesystem::path& manifest);

}  // namespace mtbrn::cli
