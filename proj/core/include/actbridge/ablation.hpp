#pragma once

#include <string>
#include <vector>

#include "actbridge/trainer.hpp"

namespace actbridge {

struct AblationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AblationRow {
  std::string setting;
  double final_loss = 0;
  double success_avg = 0;  // percent
  std::size_t steps = 0;
  std::uint64_t data_hash = 0;
};

struct AblationReport {
  std::string axis;
  std::vector<AblationRow> rows;
  std::string format() const;
};

// Sweeps one knob with everything else held fixed: every cell trains a
// fresh model on the same dataset under the same step budget, then runs
// the same evaluation suite.
//   condition_type:   the six routing choices
//   injection_degree: the four gate modes
//   query_count:      N_q in {1, 4, 8, 16, 64}
AblationReport run_ablation(const std::string& axis, const PolicyConfig& base,
                            const TrainConfig& budget, const Dataset& data,
                            std::size_t eval_episodes_per_task,
                            std::uint64_t eval_seed);

}  // namespace actbridge
