// SPDX-License-Identifier: Apache-2.0
//
// Result persistence. Column layouts are documented in docs/formats.md.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "taskfuse/harness.hpp"

namespace taskfuse {

// Header of results.csv, in ResultRow field order.
const std::vector<std::string>& results_header();

// Doubles are written with 17 significant digits; list fields are joined
// with ';'.
std::string format_results_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_results_csv(const std::string& text);
void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

// One group per (regime, defense_mode, n_tasks, fewshot_per_class).
struct SummaryRow {
  std::string regime;
  std::string defense_mode;
  int n_tasks = 0;
  int fewshot_per_class = 0;
  int count = 0;
  double mean = 0.0;            // of mean_normalized
  double var_pooled = 0.0;      // over all combinations and seeds
  double var_within_seed = 0.0; // across combinations, averaged over seeds
  double var_seed_means = 0.0;  // across per-seed means
  double mean_xi = 0.0;
  double mean_reject_rate = 0.0;
  double mean_offdiag_cosine = 0.0;
  double mean_snr_db = 0.0;
  double mean_mu = 0.0;
};

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);
std::string format_summary_csv(const std::vector<SummaryRow>& rows);

std::string format_matrix_csv(const Eigen::MatrixXd& m);

// Long format: regime,defense_mode,n_tasks,fewshot_per_class,metric,value.
std::string format_plot_long(const std::vector<SummaryRow>& rows);

// Minimal SVG charts.
std::string render_accuracy_svg(const std::vector<SummaryRow>& rows, const std::string& regime);
std::string render_fewshot_svg(const std::vector<SummaryRow>& rows, const std::string& regime);
std::string render_heatmap_svg(const Eigen::MatrixXd& m, const std::string& title);

// Writes results.csv, summary.csv, cosine_<regime>.csv and the plot files.
void emit_outputs(const std::filesystem::path& dir, const SweepResult& result);

// summary.csv, plot_long.csv and SVGs from an existing results.csv plus any
// cosine_<regime>.csv files in `dir`.
void emit_plots(const std::filesystem::path& dir, const std::vector<ResultRow>& rows);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace taskfuse
