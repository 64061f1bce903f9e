#include "gaborscope/metrics.hpp"

#include <sstream>

#include "json.hpp"

namespace gaborscope {

using nlohmann::json;

double ConfusionMatrix::total() const {
  double t = 0.0;
  for (const auto& row : cells)
    for (double c : row) t += c;
  return t;
}

double ConfusionMatrix::row_total(std::size_t s) const {
  double t = 0.0;
  for (double c : cells[s]) t += c;
  return t;
}

double ConfusionMatrix::col_total(std::size_t s) const {
  double t = 0.0;
  for (const auto& row : cells) t += row[s];
  return t;
}

ConfusionMatrix confusion(const std::vector<StageLabel>& truth,
                          const std::vector<StageLabel>& predicted) {
  if (truth.size() != predicted.size())
    throw DataError("confusion needs equal-length sequences, have " +
                    std::to_string(truth.size()) + " and " + std::to_string(predicted.size()));
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) cm.at(truth[i], predicted[i]) += 1.0;
  return cm;
}

MetricReport report(const ConfusionMatrix& cm) {
  const double total = cm.total();
  if (total <= 0.0) throw DataError("cannot compute metrics of an empty confusion matrix");

  MetricReport r;
  double diag = 0.0;
  double chance = 0.0;
  double f1_sum = 0.0;
  int f1_defined = 0;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const double tp = cm.cells[s][s];
    const double row = cm.row_total(s);
    const double col = cm.col_total(s);
    diag += tp;
    chance += (row / total) * (col / total);
    if (row > 0.0) r.recall[s] = tp / row;
    if (col > 0.0) r.precision[s] = tp / col;
    if (r.recall[s] && r.precision[s]) {
      const double p = *r.precision[s], q = *r.recall[s];
      r.f1[s] = p + q > 0.0 ? 2.0 * p * q / (p + q) : 0.0;
      f1_sum += *r.f1[s];
      ++f1_defined;
    }
  }
  r.accuracy = diag / total;
  if (f1_defined > 0) r.mf1 = f1_sum / f1_defined;
  r.expected_agreement = chance;
  // chance = 1 forces every label into one stage on both sides, which is the
  // diagonal single-stage matrix; agreement is then perfect
  r.kappa = chance < 1.0 ? (r.accuracy - chance) / (1.0 - chance) : 1.0;
  return r;
}

AgreementMatrix agreement_matrix(const std::vector<StageLabel>& single_preds,
                                 const std::vector<StageLabel>& multi_preds,
                                 const std::vector<StageLabel>& truth) {
  if (single_preds.size() != multi_preds.size() || single_preds.size() != truth.size())
    throw DataError("agreement needs three equal-length sequences");
  AgreementMatrix am;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (single_preds[i] == multi_preds[i]) continue;
    auto& cell = am.cells[static_cast<std::size_t>(single_preds[i])]
                         [static_cast<std::size_t>(multi_preds[i])];
    cell.total++;
    if (multi_preds[i] == truth[i])
      cell.corrected++;
    else if (single_preds[i] == truth[i])
      cell.corrupted++;
  }
  return am;
}

namespace {

json optional_rate(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

std::string report_to_json(const MetricReport& r) {
  json j;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const char* name = stage_name(static_cast<StageLabel>(s));
    j["stages"][name] = {{"recall", optional_rate(r.recall[s])},
                         {"precision", optional_rate(r.precision[s])},
                         {"f1", optional_rate(r.f1[s])}};
  }
  j["accuracy"] = r.accuracy;
  j["mf1"] = optional_rate(r.mf1);
  j["kappa"] = r.kappa;
  j["expected_agreement"] = r.expected_agreement;
  return j.dump(2) + "\n";
}

std::string confusion_to_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true\\pred";
  for (std::size_t s = 0; s < kNumStages; ++s)
    out << "," << stage_name(static_cast<StageLabel>(s));
  out << "\n";
  for (std::size_t r = 0; r < kNumStages; ++r) {
    out << stage_name(static_cast<StageLabel>(r));
    for (std::size_t c = 0; c < kNumStages; ++c) out << "," << cm.cells[r][c];
    out << "\n";
  }
  return out.str();
}

std::string agreement_to_json(const AgreementMatrix& am) {
  json cells = json::array();
  for (std::size_t r = 0; r < kNumStages; ++r)
    for (std::size_t c = 0; c < kNumStages; ++c) {
      const auto& cell = am.cells[r][c];
      if (cell.total == 0) continue;
      cells.push_back({{"single", stage_name(static_cast<StageLabel>(r))},
                       {"multi", stage_name(static_cast<StageLabel>(c))},
                       {"total", cell.total},
                       {"corrected", cell.corrected},
                       {"corrupted", cell.corrupted}});
    }
  json j;
  j["disagreements"] = cells;
  return j.dump(2) + "\n";
}

}  // namespace gaborscope
