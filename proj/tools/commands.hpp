#pragma once

#include <cstddef>
#include <vector>

#include "run_config.hpp"

namespace ecloss::cli {

int cmd_gen_data(const RunConfig& config);
int cmd_gen_templates(const RunConfig& config);
int cmd_train(const RunConfig& config, bool ecloss_on);
int cmd_eval(const RunConfig& config);
int cmd_visualize(const RunConfig& config, const std::vector<std::size_t>& samples,
                  const std::vector<std::size_t>& channels);

}  // namespace ecloss::cli
