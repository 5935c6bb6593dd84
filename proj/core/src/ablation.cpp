#include "actbridge/ablation.hpp"

#include <iomanip>
#include <sstream>

namespace actbridge {

std::string AblationReport::format() const {
  std::ostringstream out;
  out << "axis: " << axis << "\n";
  std::size_t w = 8;
  for (const auto& r : rows) w = std::max(w, r.setting.size());
  out << std::left << std::setw(static_cast<int>(w + 2)) << "setting"
      << std::right << std::setw(12) << "final_loss" << std::setw(12)
      << "success%" << std::setw(10) << "steps" << "\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(w + 2)) << r.setting
        << std::right << std::setw(12) << std::fixed << std::setprecision(4)
        << r.final_loss << std::setw(12) << std::setprecision(1)
        << r.success_avg << std::setw(10) << r.steps << "\n";
  }
  return out.str();
}

AblationReport run_ablation(const std::string& axis, const PolicyConfig& base,
                            const TrainConfig& budget, const Dataset& data,
                            std::size_t eval_episodes_per_task,
                            std::uint64_t eval_seed) {
  std::vector<PolicyConfig> cells;
  std::vector<std::string> labels;

  if (axis == "condition_type") {
    for (Routing r : {Routing::kLastRaw, Routing::kLastAq, Routing::kMidRaw,
                      Routing::kAllRaw, Routing::kAllAq, Routing::kAllBoth}) {
      PolicyConfig c = base;
      c.routing = r;
      cells.push_back(c);
      labels.push_back(to_string(r));
    }
  } else if (axis == "injection_degree") {
    for (GateMode m : {GateMode::kGateRawFixAq, GateMode::kFixBoth,
                       GateMode::kFixRawGateAq, GateMode::kGateBoth}) {
      PolicyConfig c = base;
      c.gate_mode = m;
      cells.push_back(c);
      labels.push_back(to_string(m));
    }
  } else if (axis == "query_count") {
    for (std::size_t nq : {1u, 4u, 8u, 16u, 64u}) {
      PolicyConfig c = base;
      c.n_query = nq;
      cells.push_back(c);
      labels.push_back("N_q=" + std::to_string(nq));
    }
  } else {
    throw AblationError("unknown ablation axis: " + axis);
  }

  const std::uint64_t dhash = dataset_hash(data);
  const std::vector<TaskTemplate> templates = {
      TaskTemplate::kPickPlace, TaskTemplate::kMoveLeftRight,
      TaskTemplate::kStack, TaskTemplate::kLongHorizon2Stage};

  AblationReport report;
  report.axis = axis;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto model = make_model(cells[i]);
    TrainReport tr = train(*model, data, budget);
    SuccessTable table =
        evaluate(model->as_policy(), cells[i].horizon, templates,
                 eval_episodes_per_task, eval_seed, cells[i],
                 &data.placement_seeds);
    report.rows.push_back({labels[i], tr.final_loss, table.average(),
                           budget.max_steps, dhash});
  }
  return report;
}

}  // namespace actbridge
