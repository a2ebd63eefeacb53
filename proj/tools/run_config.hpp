#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace ecloss::cli {

// Flat key=value configuration: a fixed registry of known keys with
// defaults, optionally overlaid by a config file and then by command-line
// overrides (later wins). Unknown keys are rejected at the door.
class RunConfig {
 public:
  static const std::map<std::string, std::string>& defaults();

  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  std::string str(const std::string& key) const;
  double num(const std::string& key) const;
  std::uint64_t index(const std::string& key) const;
  bool flag(const std::string& key) const;  // on/off, true/false, 1/0

  std::filesystem::path out_dir() const;
  // empty-valued path keys resolve to <out>/<fallback>
  std::filesystem::path path_or(const std::string& key,
                                const std::string& fallback) const;

  // metrics.prominence: "auto" -> nullopt, otherwise a nonnegative number
  std::optional<double> prominence() const;

  // every command drops its effective settings next to its outputs
  void write_resolved(const std::string& command) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ecloss::cli
