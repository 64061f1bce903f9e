#ifndef GABORSCOPE_METRICS_HPP
#define GABORSCOPE_METRICS_HPP

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "gaborscope/stages.hpp"

namespace gaborscope {

// Rows are true stages, columns predicted. Cells are doubles so the same
// arithmetic serves raw counts and published rate tables.
struct ConfusionMatrix {
  std::array<std::array<double, kNumStages>, kNumStages> cells{};

  double& at(StageLabel truth, StageLabel pred) {
    return cells[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
  }
  double at(StageLabel truth, StageLabel pred) const {
    return cells[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
  }
  double total() const;
  double row_total(std::size_t s) const;
  double col_total(std::size_t s) const;
};

ConfusionMatrix confusion(const std::vector<StageLabel>& truth,
                          const std::vector<StageLabel>& predicted);

// Per-stage rates plus the summary scores. A stage with an empty denominator
// has no recall/precision (and so no F1); such stages drop out of MF1.
struct MetricReport {
  std::array<std::optional<double>, kNumStages> recall;
  std::array<std::optional<double>, kNumStages> precision;
  std::array<std::optional<double>, kNumStages> f1;
  double accuracy = 0.0;
  std::optional<double> mf1;
  double kappa = 0.0;
  double expected_agreement = 0.0;  // the chance term behind kappa
};

MetricReport report(const ConfusionMatrix& cm);

struct AgreementCell {
  long total = 0;      // epochs where single said row, multi said column
  long corrected = 0;  // single was wrong, multi right
  long corrupted = 0;  // single was right, multi wrong
};

// Off-diagonal census of single-network vs multi-network decisions; cells
// where the two agree stay empty.
struct AgreementMatrix {
  std::array<std::array<AgreementCell, kNumStages>, kNumStages> cells{};
};

AgreementMatrix agreement_matrix(const std::vector<StageLabel>& single_preds,
                                 const std::vector<StageLabel>& multi_preds,
                                 const std::vector<StageLabel>& truth);

std::string report_to_json(const MetricReport& r);
std::string confusion_to_csv(const ConfusionMatrix& cm);
std::string agreement_to_json(const AgreementMatrix& am);

}  // namespace gaborscope

#endif
