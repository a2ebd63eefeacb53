#include <CLI11.hpp>

#include <cstddef>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "commands.hpp"
#include "run_config.hpp"

namespace {

using ecloss::cli::RunConfig;

std::vector<std::size_t> parse_indices(const std::string& csv) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const std::size_t comma = std::min(csv.find(',', pos), csv.size());
    const std::string token = csv.substr(pos, comma - pos);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(token, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (token.empty() || used != token.size())
      throw std::invalid_argument("'" + csv +
                                  "' is not a comma-separated index list");
    out.push_back(std::size_t(v));
    pos = comma + 1;
  }
  return out;
}

// leftover tokens are --key value config overrides
void apply_overrides(RunConfig& config, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); i += 2) {
    const std::string& key = extras[i];
    if (key.size() < 3 || key.substr(0, 2) != "--")
      throw std::invalid_argument("expected --key value override, got '" + key +
                                  "'");
    if (i + 1 >= extras.size())
      throw std::invalid_argument("override '" + key + "' is missing a value");
    config.set(key.substr(2), extras[i + 1]);
  }
}

int run(int argc, char** argv) {
  CLI::App app{"explainable channel loss: synthetic-benchmark toolkit"};
  app.require_subcommand(1);
  app.footer(
      "Any config key can be overridden after the subcommand, e.g.\n"
      "  ecloss train --config run.cfg --train.lr 0.05 --loss.beta 1e-4\n"
      "Set ECLOSS_THREADS to cap worker threads (results do not depend on it).");

  std::string config_path;
  std::string ecloss_mode = "on";
  std::string samples = "0";
  std::string channels = "0";

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->allow_extras();
    return sub;
  };

  add_common(app.add_subcommand(
      "gen-data", "generate the synthetic part-based dataset (ECDS1)"));
  add_common(app.add_subcommand(
      "gen-templates", "build and subsample the activation template set (ECT1)"));
  auto* train = add_common(app.add_subcommand(
      "train", "train the reference net, with or without the channel loss"));
  train->add_option("--ecloss", ecloss_mode, "on: use loss.beta; off: beta = 0")
      ->check(CLI::IsMember({"on", "off"}));
  add_common(app.add_subcommand(
      "eval", "compute explainability metrics for a checkpoint"));
  auto* viz = add_common(app.add_subcommand(
      "visualize", "render thresholded-activation overlays as PPM files"));
  viz->add_option("--samples", samples, "comma-separated sample indices");
  viz->add_option("--channels", channels, "comma-separated channel indices");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  RunConfig config;
  if (!config_path.empty()) config.load_file(config_path);
  apply_overrides(config, sub->remaining());

  const std::string name = sub->get_name();
  if (name == "gen-data") return ecloss::cli::cmd_gen_data(config);
  if (name == "gen-templates") return ecloss::cli::cmd_gen_templates(config);
  if (name == "train")
    return ecloss::cli::cmd_train(config, ecloss_mode == "on");
  if (name == "eval") return ecloss::cli::cmd_eval(config);
  return ecloss::cli::cmd_visualize(config, parse_indices(samples),
                                    parse_indices(channels));
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
