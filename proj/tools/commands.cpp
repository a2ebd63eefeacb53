#include "commands.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ecloss/metrics.hpp"
#include "ecloss/nn.hpp"
#include "ecloss/rng.hpp"
#include "ecloss/synthdata.hpp"
#include "ecloss/templates.hpp"
#include "ecloss/viz.hpp"

namespace ecloss::cli {
namespace {

namespace fs = std::filesystem;

std::string fnv1a_hex(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

void ensure_parent(const fs::path& path) {
  const auto parent = path.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

DatasetSpec dataset_spec_from(const RunConfig& config) {
  DatasetSpec spec;
  spec.n_identities = config.index("data.identities");
  spec.samples_per_identity = config.index("data.samples_per_identity");
  spec.image_size = config.index("data.image_size");
  spec.jitter_radius = config.num("data.jitter");
  spec.noise_std = config.num("data.noise");
  spec.seed = config.index("seed");
  return spec;
}

LossConfig loss_config_from(const RunConfig& config, bool ecloss_on) {
  LossConfig loss;
  loss.alpha = config.num("loss.alpha");
  loss.beta = ecloss_on ? config.num("loss.beta") : 0.0;
  const std::string schedule = config.str("loss.schedule");
  if (schedule == "fixed")
    loss.schedule = LossConfig::BetaSchedule::fixed;
  else if (schedule == "auto")
    loss.schedule = LossConfig::BetaSchedule::auto_adjust;
  else
    throw std::invalid_argument("loss.schedule must be 'fixed' or 'auto'");
  loss.beta_window = config.index("loss.beta_window");
  return loss;
}

SynthDataset eval_subset(const RunConfig& config, const SynthDataset& data) {
  if (!config.flag("eval.use_split")) return data;
  auto [train_half, eval_half] =
      split(data, config.num("data.split"),
            derive_seed(config.index("seed"), "split"));
  return eval_half;
}

std::vector<PartMasks> masks_of(const SynthDataset& data) {
  std::vector<PartMasks> masks;
  masks.reserve(data.size());
  for (const auto& s : data.samples) masks.push_back(s.masks);
  return masks;
}

struct EvalRun {
  MetricsReport report;
  double accuracy = 0.0;
  double ls_literal = 0.0;
};

EvalRun evaluate_checkpoint(const RunConfig& config, const Checkpoint& ckpt,
                            const SynthDataset& subset) {
  const std::size_t hw = subset.spec.image_size;
  if (ckpt.spec.in_height != hw || ckpt.spec.in_width != hw)
    throw std::invalid_argument("checkpoint expects " +
                                std::to_string(ckpt.spec.in_height) +
                                "-pixel images, dataset has " +
                                std::to_string(hw));
  const auto labeled = to_labeled(subset);
  const auto fwd = forward(ckpt.spec, ckpt.parameters, labeled.images);

  EvalRun run;
  run.report = evaluate_metrics(fwd.target_features, masks_of(subset), hw, hw,
                                config.prominence());
  run.accuracy = double(count_correct(ckpt.spec, ckpt.parameters, labeled)) /
                 double(labeled.size());
  if (config.flag("metrics.si_literal")) {
    const auto matrix = assignment(fwd.target_features, masks_of(subset), hw, hw);
    run.ls_literal = matrix.a.empty()
                         ? 0.0
                         : location_consistency_literal(matrix).second;
  }
  return run;
}

std::size_t parse_grid(const RunConfig& config) {
  std::size_t grid = config.index("templates.grid");
  if (grid != 0) return grid;
  const std::size_t image = config.index("data.image_size");
  if (image == 0 || image % 4 != 0)
    throw std::invalid_argument(
        "data.image_size must be a positive multiple of 4 to derive the "
        "template grid");
  return image / 4;
}

}  // namespace

int cmd_gen_data(const RunConfig& config) {
  const auto data = generate(dataset_spec_from(config), default_parts());
  config.write_resolved("gen-data");
  const auto path = config.path_or("dataset_file", "data.ecds");
  ensure_parent(path);
  save_dataset(data, path);
  std::cout << "wrote " << data.size() << " samples to " << path.string()
            << "  fnv1a=" << fnv1a_hex(path) << "\n";
  return 0;
}

int cmd_gen_templates(const RunConfig& config) {
  const std::size_t grid = parse_grid(config);
  TemplateParams params;
  params.height = grid;
  params.width = grid;
  params.tau = config.num("templates.tau");
  params.radius = config.num("templates.radius");

  const auto full = build_full_set(params);
  const auto set = subsample_even(full, config.index("templates.count"),
                                  derive_seed(config.index("seed"), "templates"));
  config.write_resolved("gen-templates");
  const auto path = config.path_or("template_file", "templates.ect");
  ensure_parent(path);
  save_template_set(set, path);
  std::cout << "wrote " << set.size() << " of " << full.size()
            << " templates (prior " << set.prior << ") to " << path.string()
            << "  fnv1a=" << fnv1a_hex(path) << "\n";
  return 0;
}

int cmd_train(const RunConfig& config, bool ecloss_on) {
  const auto data = load_dataset(config.path_or("dataset_file", "data.ecds"));
  const auto set = load_template_set(config.path_or("template_file", "templates.ect"));

  auto [train_half, eval_half] =
      split(data, config.num("data.split"),
            derive_seed(config.index("seed"), "split"));
  const auto train_set = to_labeled(train_half);

  const auto net = reference_network(data.spec.image_size, data.spec.n_identities,
                                     config.index("net.channels"));
  const auto shape = net.target_shape();
  if (set.params.height != shape[1] || set.params.width != shape[2])
    throw std::invalid_argument(
        "template grid " + std::to_string(set.params.height) + "x" +
        std::to_string(set.params.width) + " does not match the target layer " +
        std::to_string(shape[1]) + "x" + std::to_string(shape[2]));

  TrainerState state;
  state.parameters = init_parameters(net, derive_seed(config.index("seed"), "init"));
  state.learning_rate = config.num("train.lr");
  state.batch_size = config.index("train.batch");
  state.rng_seed = config.index("seed");
  state.loss_config = loss_config_from(config, ecloss_on);

  std::vector<TrainLogRow> log;
  state = train(net, train_set, state, set, config.index("train.epochs"), &log);

  config.write_resolved("train");
  const auto ckpt_path = config.path_or("checkpoint_file", "final.ecnn");
  const auto log_path = config.path_or("log_file", "train_log.csv");
  ensure_parent(ckpt_path);
  ensure_parent(log_path);
  save_checkpoint({net, state.parameters}, ckpt_path);
  write_train_log(log, log_path);

  const double train_acc =
      double(count_correct(net, state.parameters, train_set)) /
      double(train_set.size());
  const auto eval_set = to_labeled(eval_half);
  const double eval_acc =
      double(count_correct(net, state.parameters, eval_set)) /
      double(eval_set.size());

  std::cout << "trained " << config.index("train.epochs") << " epochs ("
            << log.size() << " steps, ecloss "
            << (ecloss_on ? "on" : "off") << ")\n";
  if (!log.empty())
    std::cout << "final step: cls_loss=" << log.back().cls_loss
              << " mi=" << log.back().mi << " beta=" << log.back().beta << "\n";
  std::cout << "accuracy: train " << train_acc << ", held-out " << eval_acc
            << "\n";
  std::cout << "wrote " << ckpt_path.string() << "  fnv1a=" << fnv1a_hex(ckpt_path)
            << "\n";
  std::cout << "wrote " << log_path.string() << "  fnv1a=" << fnv1a_hex(log_path)
            << "\n";
  return 0;
}

int cmd_eval(const RunConfig& config) {
  const auto data = load_dataset(config.path_or("dataset_file", "data.ecds"));
  const auto subset = eval_subset(config, data);
  const auto ckpt = load_checkpoint(config.path_or("checkpoint_file", "final.ecnn"));
  const auto run = evaluate_checkpoint(config, ckpt, subset);

  std::ostringstream csv;
  csv.precision(9);
  csv << report_csv(run.report);
  csv << "accuracy,eval," << run.accuracy << "\n";
  if (config.flag("metrics.si_literal"))
    csv << "ls_literal,mean," << run.ls_literal << "\n";

  const std::string compare_path = config.str("compare_checkpoint_file");
  if (!compare_path.empty()) {
    const auto other = evaluate_checkpoint(config, load_checkpoint(compare_path),
                                           subset);
    csv << "pe,compare," << other.report.pe_mean << "\n";
    csv << "pe,delta," << run.report.pe_mean - other.report.pe_mean << "\n";
    csv << "ls,compare," << other.report.ls << "\n";
    csv << "ls,delta," << run.report.ls - other.report.ls << "\n";
    csv << "peaks,compare," << other.report.peak_mean << "\n";
    csv << "peaks,delta," << run.report.peak_mean - other.report.peak_mean
        << "\n";
    csv << "accuracy,compare," << other.accuracy << "\n";
    csv << "accuracy,delta," << run.accuracy - other.accuracy << "\n";
    std::cout << "compared against " << compare_path << ":\n"
              << "  pe " << run.report.pe_mean << " vs " << other.report.pe_mean
              << ", ls " << run.report.ls << " vs " << other.report.ls
              << ", peaks " << run.report.peak_mean << " vs "
              << other.report.peak_mean << ", accuracy " << run.accuracy
              << " vs " << other.accuracy << "\n";
  }

  config.write_resolved("eval");
  const auto out_path = config.path_or("metrics_file", "metrics.csv");
  ensure_parent(out_path);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path.string());
  out << csv.str();
  out.close();
  if (!out) throw std::runtime_error("write failed: " + out_path.string());

  std::cout << report_summary(run.report);
  std::cout << "eval accuracy over " << subset.size() << " samples: "
            << run.accuracy << "\n";
  std::cout << "wrote " << out_path.string() << "  fnv1a=" << fnv1a_hex(out_path)
            << "\n";
  return 0;
}

int cmd_visualize(const RunConfig& config, const std::vector<std::size_t>& samples,
                  const std::vector<std::size_t>& channels) {
  if (samples.empty() || channels.empty())
    throw std::invalid_argument("visualize: need at least one sample and channel");
  const auto data = load_dataset(config.path_or("dataset_file", "data.ecds"));
  const auto ckpt = load_checkpoint(config.path_or("checkpoint_file", "final.ecnn"));
  const std::size_t hw = data.spec.image_size;
  if (ckpt.spec.in_height != hw || ckpt.spec.in_width != hw)
    throw std::invalid_argument("checkpoint and dataset image sizes differ");
  const auto shape = ckpt.spec.target_shape();

  for (std::size_t s : samples)
    if (s >= data.size())
      throw std::invalid_argument("sample index " + std::to_string(s) +
                                  " out of range (dataset has " +
                                  std::to_string(data.size()) + ")");
  for (std::size_t c : channels)
    if (c >= shape[0])
      throw std::invalid_argument("channel index " + std::to_string(c) +
                                  " out of range (target layer has " +
                                  std::to_string(shape[0]) + ")");

  Tensor batch({samples.size(), 1, hw, hw});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& img = data.samples[samples[i]].image;
    std::copy(img.values().begin(), img.values().end(),
              batch.data() + i * hw * hw);
  }
  const auto fwd = forward(ckpt.spec, ckpt.parameters, batch);

  auto style = HeatmapStyle::classic();
  style.overlay_alpha = config.num("viz.alpha");
  style.validate();

  config.write_resolved("visualize");
  const auto dir = config.out_dir();
  fs::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto image = Tensor::from_data(
        {hw, hw}, data.samples[samples[i]].image.values());
    for (std::size_t c : channels) {
      const auto row = fwd.target_features.row(i * shape[0] + c);
      const auto map = Tensor::from_data(
          {shape[1], shape[2]}, std::vector<double>(row.begin(), row.end()));
      const auto tmap = top10_threshold(upsample_bilinear(map, hw, hw));
      const auto overlay = render_overlay(image, tmap, style);
      const auto path =
          dir / ("s" + std::to_string(samples[i]) + "_c" + std::to_string(c) +
                 ".ppm");
      write_ppm(overlay, path);
      std::cout << "wrote " << path.string() << "  fnv1a=" << fnv1a_hex(path)
                << "\n";
    }
  }
  return 0;
}

}  // namespace ecloss::cli
