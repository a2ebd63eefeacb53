#include "run_config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ecloss::cli {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> table = {
      {"seed", "0"},
      {"out", "out"},
      {"data.identities", "10"},
      {"data.samples_per_identity", "200"},
      {"data.image_size", "56"},
      {"data.jitter", "0.05"},
      {"data.noise", "0.05"},
      {"data.split", "0.5"},
      {"templates.tau", "0.001"},
      {"templates.radius", "4"},
      {"templates.count", "400"},
      {"templates.grid", "0"},  // 0: use the net's target grid (image_size/4)
      {"net.channels", "16"},
      {"train.lr", "0.03"},
      {"train.batch", "64"},
      {"train.epochs", "10"},
      {"loss.alpha", "1"},
      {"loss.beta", "1e-5"},
      {"loss.schedule", "fixed"},  // fixed | auto
      {"loss.beta_window", "50"},
      {"metrics.prominence", "auto"},  // auto: 5% of each map's range
      {"metrics.si_literal", "off"},
      {"eval.use_split", "on"},  // evaluate on the held-out half
      {"viz.alpha", "0.6"},
      {"dataset_file", ""},            // <out>/data.ecds
      {"template_file", ""},           // <out>/templates.ect
      {"checkpoint_file", ""},         // <out>/final.ecnn
      {"compare_checkpoint_file", ""},  // optional paired baseline for eval
      {"log_file", ""},                // <out>/train_log.csv
      {"metrics_file", ""},            // <out>/metrics.csv
  };
  return table;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!defaults().count(key))
    throw std::invalid_argument("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                  ": expected key=value");
    try {
      set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                  ": " + e.what());
    }
  }
}

std::string RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it != values_.end()) return it->second;
  const auto def = defaults().find(key);
  if (def == defaults().end())
    throw std::invalid_argument("unknown config key '" + key + "'");
  return def->second;
}

double RunConfig::num(const std::string& key) const {
  const std::string v = str(key);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size() || v.empty())
    throw std::invalid_argument("config key '" + key + "': '" + v +
                                "' is not a number");
  return out;
}

std::uint64_t RunConfig::index(const std::string& key) const {
  const std::string v = str(key);
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size() || v.empty())
    throw std::invalid_argument("config key '" + key + "': '" + v +
                                "' is not a nonnegative integer");
  return out;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string v = str(key);
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': '" + v +
                              "' is not on/off");
}

std::filesystem::path RunConfig::out_dir() const { return str("out"); }

std::filesystem::path RunConfig::path_or(const std::string& key,
                                         const std::string& fallback) const {
  const std::string v = str(key);
  if (!v.empty()) return v;
  return out_dir() / fallback;
}

std::optional<double> RunConfig::prominence() const {
  const std::string v = str("metrics.prominence");
  if (v == "auto") return std::nullopt;
  const double p = num("metrics.prominence");
  if (p < 0.0)
    throw std::invalid_argument("metrics.prominence must be 'auto' or >= 0");
  return p;
}

void RunConfig::write_resolved(const std::string& command) const {
  const auto dir = out_dir();
  std::filesystem::create_directories(dir);
  const auto path = dir / (command + ".resolved.cfg");
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write resolved config " + path.string());
  for (const auto& [key, def] : defaults()) {
    const auto it = values_.find(key);
    out << key << "=" << (it != values_.end() ? it->second : def) << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace ecloss::cli
