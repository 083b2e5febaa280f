#pragma once

#include "excel/dataset.hpp"
#include "excel/excel.hpp"
#include "excel/qr_core.hpp"
#include "excel/resample.hpp"

#include <cstdint>
#include <vector>

namespace excel {

std::vector<double> default_lambda_grid();  // 0.05, 0.10, ..., 0.95

struct IvRepairConfig {
  double alpha = 0.05;
  std::vector<double> lambda_grid = default_lambda_grid();
  double tau_n = 0.0;  // 0 selects default_tau(n)
  std::size_t B = 500;
  std::uint64_t seed = 0;
  TailSide side;
  int threads = 1;

  void validate() const;
};

// z_{1 - a/2} for the standard normal; 0 at a = 1.
double normal_critical(double level_alpha);

// TSLS of y on the scalar exposure with Z_j excluded and Z_{-j} as controls.
TslsFit per_iv_tsls(const Dataset& data, int j);

// theta_hat +- z_{1 - level_alpha/2} se, flagged when the instrument is weak.
ConfidenceSet wald_interval(const TslsFit& fit, double level_alpha);
ConfidenceSet per_iv_interval(const Dataset& data, int j, double level_alpha);

// Outcome and exposures residualized on [1, Z] by OLS, instruments dropped.
// The tail decision for instrument designs is made on this view.
Dataset residualize_on_instruments(const Dataset& data);

// Indices whose interval meets the EXCEL interval (closed intersection).
std::vector<int> select_valid(const std::vector<ConfidenceSet>& per_iv, const ConfidenceSet& excel);

struct LambdaRow {
  double lambda = 0.0;
  std::vector<int> selected;
  double total_length = 0.0;  // +inf when nothing is selected
};

struct IvRepairResult {
  std::vector<int> selected;
  std::vector<std::pair<int, ConfidenceSet>> per_iv_intervals;  // level 1 - (alpha - lambda alpha)
  ConfidenceSet excel_interval;                                  // level 1 - lambda alpha / 2
  double chosen_lambda = 0.0;
  ConfidenceSet final_set;
  std::vector<LambdaRow> per_lambda;
  bool fallback = false;  // no lambda selected any instrument
  std::vector<TslsFit> tsls;
  ConfidenceSet excel_only_interval;  // EXCEL bootstrap interval at level 1 - alpha
  double excel_theta = 0.0;
  double tau_n = 0.0;
};

IvRepairResult union_confidence_set(const Dataset& data, const IvRepairConfig& config);

}  // namespace excel
