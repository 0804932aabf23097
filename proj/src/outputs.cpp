// SPDX-License-Identifier: Apache-2.0
#include "taskfuse/outputs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "taskfuse/error.hpp"
#include "taskfuse/stats.hpp"

namespace taskfuse {

namespace {

std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + num(v[i]);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& s, int line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("results.csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

template <typename T>
T to_int(const std::string& s, int line) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("results.csv line " + std::to_string(line) + ": bad integer '" + s + "'");
  }
  return v;
}

std::vector<double> to_list(const std::string& s, int line) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& part : split(s, ';')) out.push_back(to_double(part, line));
  return out;
}

double mean_of(const std::vector<double>& v) { return v.empty() ? 0.0 : mean(v); }
double var_of(const std::vector<double>& v) { return v.size() < 2 ? 0.0 : sample_variance(v); }

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Series {
  std::string name;
  std::vector<double> x, y, sd;
};

// Line chart with +-1 sd bands.
std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                       const std::string& ylabel) {
  const double W = 560, H = 380, L = 60, R = 150, T = 40, B = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 0.0, y1 = 1.0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y1 = std::max(y1, s.y[i] + s.sd[i]);
    }
  }
  if (!(x1 > x0)) {
    x0 -= 1;
    x1 += 1;
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double y = y0 + (y1 - y0) * k / 5.0;
    char lab[16];
    std::snprintf(lab, sizeof lab, "%.2f", y);
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << lab << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << py(y) << "\" x2=\"" << W - R << "\" y2=\"" << py(y)
      << "\" stroke=\"#ddd\"/>\n";
  }
  std::set<double> xs;
  for (const auto& s : series) xs.insert(s.x.begin(), s.x.end());
  for (double x : xs) {
    o << "<text x=\"" << px(x) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << num(x) << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << esc(xlabel)
    << "</text>\n";
  o << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
    << (T + H - B) / 2 << ")\">" << esc(ylabel) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    if (s.x.empty()) continue;
    std::ostringstream band, line;
    for (std::size_t i = 0; i < s.x.size(); ++i) band << px(s.x[i]) << "," << py(s.y[i] + s.sd[i]) << " ";
    for (std::size_t i = s.x.size(); i-- > 0;) band << px(s.x[i]) << "," << py(std::max(y0, s.y[i] - s.sd[i])) << " ";
    for (std::size_t i = 0; i < s.x.size(); ++i) line << px(s.x[i]) << "," << py(s.y[i]) << " ";
    o << "<polygon points=\"" << band.str() << "\" fill=\"" << color << "\" fill-opacity=\"0.15\"/>\n";
    o << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    const double ly = T + 10 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << esc(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

Eigen::MatrixXd parse_matrix_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    std::vector<double> r;
    for (const auto& f : split(line, ',')) r.push_back(to_double(f, ln));
    rows.push_back(std::move(r));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw IoError("matrix csv is not square");
    for (std::size_t j = 0; j < rows.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

}  // namespace

const std::vector<std::string>& results_header() {
  static const std::vector<std::string> h{
      "regime",          "defense_mode", "n_tasks",   "combination_id",      "seed",
      "acc_raw",         "acc_normalized", "mean_normalized", "snr_db",     "mean_mu",
      "xi",              "reject_rate",  "threshold", "mean_offdiag_cosine", "max_offdiag_cosine",
      "lambda",          "kappa",        "fewshot_per_class", "mu",          "noise_var"};
  return h;
}

std::string format_results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream o;
  const auto& h = results_header();
  for (std::size_t i = 0; i < h.size(); ++i) o << (i ? "," : "") << h[i];
  o << "\n";
  for (const auto& r : rows) {
    o << r.regime << "," << r.defense_mode << "," << r.n_tasks << "," << r.combination_id << "," << r.seed << ","
      << join(r.acc_raw) << "," << join(r.acc_normalized) << "," << num(r.mean_normalized) << ","
      << num(r.snr_db) << "," << num(r.mean_mu) << "," << num(r.xi) << "," << num(r.reject_rate) << ","
      << num(r.threshold) << "," << num(r.mean_offdiag_cosine) << "," << num(r.max_offdiag_cosine) << ","
      << num(r.lambda) << "," << num(r.kappa) << "," << r.fewshot_per_class << "," << join(r.mu) << ","
      << join(r.noise_var) << "\n";
  }
  return o.str();
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("results.csv: empty");
  const auto& h = results_header();
  if (split(line, ',') != h) throw IoError("results.csv: header does not match schema");
  std::vector<ResultRow> rows;
  int ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != h.size()) {
      throw IoError("results.csv line " + std::to_string(ln) + ": expected " + std::to_string(h.size()) +
                        " fields, got " + std::to_string(f.size()));
    }
    ResultRow r;
    r.regime = f[0];
    r.defense_mode = f[1];
    r.n_tasks = to_int<int>(f[2], ln);
    r.combination_id = f[3];
    r.seed = to_int<std::uint64_t>(f[4], ln);
    r.acc_raw = to_list(f[5], ln);
    r.acc_normalized = to_list(f[6], ln);
    r.mean_normalized = to_double(f[7], ln);
    r.snr_db = to_double(f[8], ln);
    r.mean_mu = to_double(f[9], ln);
    r.xi = to_double(f[10], ln);
    r.reject_rate = to_double(f[11], ln);
    r.threshold = to_double(f[12], ln);
    r.mean_offdiag_cosine = to_double(f[13], ln);
    r.max_offdiag_cosine = to_double(f[14], ln);
    r.lambda = to_double(f[15], ln);
    r.kappa = to_double(f[16], ln);
    r.fewshot_per_class = to_int<int>(f[17], ln);
    r.mu = to_list(f[18], ln);
    r.noise_var = to_list(f[19], ln);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

namespace {
std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  write_text(path, format_results_csv(rows));
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  return parse_results_csv(read_text(path));
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  using Key = std::tuple<std::string, std::string, int, int>;
  std::map<Key, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) groups[{r.regime, r.defense_mode, r.n_tasks, r.fewshot_per_class}].push_back(&r);

  std::vector<SummaryRow> out;
  for (const auto& [key, members] : groups) {
    SummaryRow s;
    std::tie(s.regime, s.defense_mode, s.n_tasks, s.fewshot_per_class) = key;
    s.count = static_cast<int>(members.size());
    std::vector<double> acc, xi, rej, cos, snr, mu;
    std::map<std::uint64_t, std::vector<double>> by_seed;
    for (const ResultRow* r : members) {
      acc.push_back(r->mean_normalized);
      xi.push_back(r->xi);
      rej.push_back(r->reject_rate);
      cos.push_back(r->mean_offdiag_cosine);
      snr.push_back(r->snr_db);
      mu.push_back(r->mean_mu);
      by_seed[r->seed].push_back(r->mean_normalized);
    }
    s.mean = mean_of(acc);
    s.var_pooled = var_of(acc);
    std::vector<double> within, seed_means;
    for (const auto& [seed, v] : by_seed) {
      within.push_back(var_of(v));
      seed_means.push_back(mean_of(v));
    }
    s.var_within_seed = mean_of(within);
    s.var_seed_means = var_of(seed_means);
    s.mean_xi = mean_of(xi);
    s.mean_reject_rate = mean_of(rej);
    s.mean_offdiag_cosine = mean_of(cos);
    s.mean_snr_db = mean_of(snr);
    s.mean_mu = mean_of(mu);
    out.push_back(s);
  }
  return out;
}

std::string format_summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream o;
  o << "regime,defense_mode,n_tasks,fewshot_per_class,count,mean,var_pooled,var_within_seed,var_seed_means,"
       "mean_xi,mean_reject_rate,mean_offdiag_cosine,mean_snr_db,mean_mu\n";
  for (const auto& s : rows) {
    o << s.regime << "," << s.defense_mode << "," << s.n_tasks << "," << s.fewshot_per_class << "," << s.count << ","
      << num(s.mean) << "," << num(s.var_pooled) << "," << num(s.var_within_seed) << "," << num(s.var_seed_means)
      << "," << num(s.mean_xi) << "," << num(s.mean_reject_rate) << "," << num(s.mean_offdiag_cosine) << ","
      << num(s.mean_snr_db) << "," << num(s.mean_mu) << "\n";
  }
  return o.str();
}

std::string format_matrix_csv(const Eigen::MatrixXd& m) {
  std::ostringstream o;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) o << (j ? "," : "") << num(m(i, j));
    o << "\n";
  }
  return o.str();
}

std::string format_plot_long(const std::vector<SummaryRow>& rows) {
  std::ostringstream o;
  o << "regime,defense_mode,n_tasks,fewshot_per_class,metric,value\n";
  for (const auto& s : rows) {
    const std::pair<const char*, double> metrics[] = {
        {"mean_normalized", s.mean},        {"sd_pooled", std::sqrt(s.var_pooled)},
        {"sd_within_seed", std::sqrt(s.var_within_seed)}, {"xi", s.mean_xi},
        {"reject_rate", s.mean_reject_rate}, {"mean_offdiag_cosine", s.mean_offdiag_cosine}};
    for (const auto& [name, v] : metrics) {
      o << s.regime << "," << s.defense_mode << "," << s.n_tasks << "," << s.fewshot_per_class << "," << name << ","
        << num(v) << "\n";
    }
  }
  return o.str();
}

std::string render_accuracy_svg(const std::vector<SummaryRow>& rows, const std::string& regime) {
  // Curves use the most common few-shot size of each mode.
  std::map<std::string, Series> by_mode;
  std::map<std::string, std::map<int, int>> sizes;
  for (const auto& s : rows) {
    if (s.regime == regime) ++sizes[s.defense_mode][s.fewshot_per_class];
  }
  for (const auto& s : rows) {
    if (s.regime != regime) continue;
    const auto& cnt = sizes[s.defense_mode];
    const int pick = std::max_element(cnt.begin(), cnt.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
    if (s.fewshot_per_class != pick) continue;
    auto& ser = by_mode[s.defense_mode];
    ser.name = s.defense_mode;
    ser.x.push_back(s.n_tasks);
    ser.y.push_back(s.mean);
    ser.sd.push_back(std::sqrt(s.var_pooled));
  }
  std::vector<Series> series;
  for (auto& [k, v] : by_mode) series.push_back(std::move(v));
  return line_chart(series, "normalized accuracy, " + regime, "number of tasks", "mean normalized accuracy");
}

std::string render_fewshot_svg(const std::vector<SummaryRow>& rows, const std::string& regime) {
  // Averaged over task counts.
  std::map<std::string, std::map<int, std::vector<double>>> acc;
  for (const auto& s : rows) {
    if (s.regime == regime && s.fewshot_per_class > 0) acc[s.defense_mode][s.fewshot_per_class].push_back(s.mean);
  }
  std::vector<Series> series;
  for (const auto& [mode, m] : acc) {
    Series ser;
    ser.name = mode;
    for (const auto& [k, v] : m) {
      ser.x.push_back(k);
      ser.y.push_back(mean_of(v));
      ser.sd.push_back(0.0);
    }
    series.push_back(std::move(ser));
  }
  return line_chart(series, "few-shot size, " + regime, "samples per class", "mean normalized accuracy");
}

std::string render_heatmap_svg(const Eigen::MatrixXd& m, const std::string& title) {
  const double cell = 40, L = 50, T = 40;
  const auto n = m.rows();
  const double W = L + cell * static_cast<double>(n) + 20, H = T + cell * static_cast<double>(n) + 20;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    o << "<text x=\"" << L - 6 << "\" y=\"" << T + cell * (static_cast<double>(i) + 0.5) + 4
      << "\" text-anchor=\"end\">t" << i + 1 << "</text>\n";
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = std::clamp(m(i, j), -1.0, 1.0);
      // white at 0, red toward +1, blue toward -1
      const int a = static_cast<int>(std::lround(255 * (1 - std::abs(v))));
      char color[16];
      std::snprintf(color, sizeof color, v >= 0 ? "#ff%02x%02x" : "#%02x%02xff", a, a);
      char lab[16];
      std::snprintf(lab, sizeof lab, "%.2f", m(i, j));
      const double x = L + cell * static_cast<double>(j), y = T + cell * static_cast<double>(i);
      o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
        << color << "\" stroke=\"#999\"/>\n";
      o << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\">" << lab
        << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

void emit_plots(const std::filesystem::path& dir, const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw InvalidArgumentError("no result rows to summarize");
  const auto summary = summarize(rows);
  write_text(dir / "summary.csv", format_summary_csv(summary));
  write_text(dir / "plot_long.csv", format_plot_long(summary));
  std::set<std::string> regimes;
  std::map<std::string, std::set<int>> sizes;
  for (const auto& s : summary) {
    regimes.insert(s.regime);
    if (s.fewshot_per_class > 0) sizes[s.regime].insert(s.fewshot_per_class);
  }
  for (const auto& r : regimes) {
    write_text(dir / ("accuracy_" + r + ".svg"), render_accuracy_svg(summary, r));
    if (sizes[r].size() > 1) write_text(dir / ("fewshot_" + r + ".svg"), render_fewshot_svg(summary, r));
    const auto cos = dir / ("cosine_" + r + ".csv");
    if (std::filesystem::exists(cos)) {
      write_text(dir / ("cosine_" + r + ".svg"), render_heatmap_svg(parse_matrix_csv(read_text(cos)), "task-vector cosine, " + r));
    }
  }
}

void emit_outputs(const std::filesystem::path& dir, const SweepResult& result) {
  std::filesystem::create_directories(dir);
  write_results_csv(dir / "results.csv", result.rows);
  for (const auto& [regime, m] : result.cosine) write_text(dir / ("cosine_" + regime + ".csv"), format_matrix_csv(m));
  if (!result.rows.empty()) emit_plots(dir, result.rows);
  if (!result.failures.empty()) {
    std::ostringstream o;
    for (const auto& f : result.failures) o << f.cell << ": " << f.what << "\n";
    write_text(dir / "failures.txt", o.str());
  }
}

}  // namespace taskfuse
