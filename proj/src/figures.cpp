#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>

#include "synthpsych/pipeline.hpp"
#include "synthpsych/scale_admin.hpp"

namespace synthpsych::pipeline {

namespace {

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                 "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

const char* color(int label) {
  return kPalette[static_cast<std::size_t>(std::max(label - 1, 0)) % kPalette.size()];
}

struct Frame {
  double width, height, left, right, top, bottom;
  double x0, x1, y0, y1;

  double x(double v) const { return left + (v - x0) / (x1 - x0) * (width - left - right); }
  double y(double v) const { return height - bottom - (v - y0) / (y1 - y0) * (height - top - bottom); }
};

std::string header(const Frame& f, std::string_view title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" height=\"{1:.0f}\" viewBox=\"0 0 {0:.0f} {1:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{2:.2f}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{3}</text>\n",
      f.width, f.height, f.width / 2.0, title);
}

std::string axes(const Frame& f, std::string_view xlabel, std::string_view ylabel,
                 const std::vector<double>& xticks, const std::vector<double>& yticks,
                 const std::vector<std::string>& xtick_labels = {}) {
  std::string out;
  out += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"black\"/>\n", f.left,
                     f.height - f.bottom, f.width - f.right);
  out += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n", f.left,
                     f.top, f.height - f.bottom);
  for (std::size_t i = 0; i < xticks.size(); ++i) {
    const std::string label = i < xtick_labels.size() ? xtick_labels[i] : fmt::format("{:g}", xticks[i]);
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", f.x(xticks[i]),
                       f.height - f.bottom + 16.0, label);
  }
  for (double t : yticks) {
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:g}</text>\n", f.left - 6.0, f.y(t) + 4.0,
                       t);
  }
  out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n",
                     (f.left + f.width - f.right) / 2.0, f.height - 8.0, xlabel);
  const double cy = (f.top + f.height - f.bottom) / 2.0;
  out += fmt::format("<text x=\"16\" y=\"{0:.2f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0:.2f})\">{1}</text>\n",
                     cy, ylabel);
  return out;
}

std::vector<double> nice_ticks(double lo, double hi, int target) {
  const double raw = (hi - lo) / std::max(target, 1);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) out.push_back(std::abs(t) < 1e-12 ? 0.0 : t);
  return out;
}

std::string polyline(const Frame& f, const Eigen::VectorXd& values, std::string_view stroke, std::string_view extra) {
  std::string points;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    points += fmt::format("{}{:.2f},{:.2f}", i ? " " : "", f.x(static_cast<double>(i + 1)), f.y(values(i)));
  }
  return fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{} points=\"{}\"/>\n", stroke, extra,
                     points);
}

std::string fixed3(double v) { return fmt::format("{:.3f}", v); }

}  // namespace

std::string scree_svg(const factor::ParallelAnalysis& pa) {
  const auto p = pa.observed.size();
  const double ymax = std::max({pa.observed.maxCoeff(), pa.reference_mean.maxCoeff(), pa.reference_p95.maxCoeff(), 1.0});
  const Frame f{640, 420, 60, 20, 40, 50, 0.5, static_cast<double>(p) + 0.5, 0.0, ymax * 1.05};

  std::vector<double> xticks;
  for (Eigen::Index r = 1; r <= p; ++r) {
    if (p <= 15 || r == 1 || r % 5 == 0) xticks.push_back(static_cast<double>(r));
  }
  std::string out = header(f, "Parallel analysis scree plot");
  out += axes(f, "Factor rank", "Eigenvalue", xticks, nice_ticks(0.0, ymax, 6));
  out += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#bbbbbb\" "
                     "stroke-dasharray=\"2 3\"/>\n",
                     f.left, f.y(1.0), f.width - f.right, f.y(1.0));
  out += polyline(f, pa.observed, kPalette[0], "");
  out += polyline(f, pa.reference(), kPalette[1], " stroke-dasharray=\"6 4\"");
  for (Eigen::Index i = 0; i < p; ++i) {
    out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", f.x(static_cast<double>(i + 1)),
                       f.y(pa.observed(i)), kPalette[0]);
  }

  const double lx = f.width - f.right - 200.0;
  const std::string reference_label =
      fmt::format("Random data ({}, {} replicates)", pa.criterion == factor::PaCriterion::Mean ? "mean" : "95th pct",
                  pa.replicates);
  out += fmt::format("<line x1=\"{0:.2f}\" y1=\"50\" x2=\"{1:.2f}\" y2=\"50\" stroke=\"{2}\" stroke-width=\"2\"/>\n"
                     "<text x=\"{3:.2f}\" y=\"54\">Observed data</text>\n",
                     lx, lx + 24.0, kPalette[0], lx + 30.0);
  out += fmt::format("<line x1=\"{0:.2f}\" y1=\"70\" x2=\"{1:.2f}\" y2=\"70\" stroke=\"{2}\" stroke-width=\"2\" "
                     "stroke-dasharray=\"6 4\"/>\n<text x=\"{3:.2f}\" y=\"74\">{4}</text>\n",
                     lx, lx + 24.0, kPalette[1], lx + 30.0, reference_label);
  out += "</svg>\n";
  return out;
}

std::string tsne_svg(const Eigen::MatrixXd& layout, const std::vector<int>& clusters) {
  const Eigen::Index n = layout.rows();
  double x0 = -1.0, x1 = 1.0, y0 = -1.0, y1 = 1.0;
  if (n > 0) {
    x0 = layout.col(0).minCoeff();
    x1 = layout.col(0).maxCoeff();
    y0 = layout.col(1).minCoeff();
    y1 = layout.col(1).maxCoeff();
  }
  const double padx = std::max(0.05 * (x1 - x0), 1e-6);
  const double pady = std::max(0.05 * (y1 - y0), 1e-6);
  const Frame f{640, 520, 60, 120, 40, 50, x0 - padx, x1 + padx, y0 - pady, y1 + pady};

  std::string out = header(f, "t-SNE of persona description embeddings");
  out += axes(f, "t-SNE 1", "t-SNE 2", nice_ticks(f.x0, f.x1, 6), nice_ticks(f.y0, f.y1, 6));
  for (Eigen::Index i = 0; i < n; ++i) {
    out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.75\"/>\n",
                       f.x(layout(i, 0)), f.y(layout(i, 1)), color(clusters[static_cast<std::size_t>(i)]));
  }
  const std::set<int> labels(clusters.begin(), clusters.end());
  double ly = 60.0;
  for (int label : labels) {
    const auto count = std::count(clusters.begin(), clusters.end(), label);
    out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"5\" fill=\"{}\"/>\n"
                       "<text x=\"{:.2f}\" y=\"{:.2f}\">Cluster {} (n={})</text>\n",
                       f.width - f.right + 16.0, ly, color(label), f.width - f.right + 26.0, ly + 4.0, label, count);
    ly += 20.0;
  }
  out += "</svg>\n";
  return out;
}

std::string boxplot_svg(const cluster::SubgroupSummary& summary) {
  std::vector<std::string> subscales;
  std::set<int> labels;
  for (const auto& b : summary.boxes) {
    if (std::find(subscales.begin(), subscales.end(), b.subscale) == subscales.end()) subscales.push_back(b.subscale);
    labels.insert(b.cluster);
  }
  const auto groups = static_cast<double>(std::max<std::size_t>(subscales.size(), 1));
  const Frame f{860, 440, 60, 130, 40, 50, 0.0, groups, 1.0, static_cast<double>(scale::kScalePoints)};
  const double slot = (f.x(1.0) - f.x(0.0)) * 0.8 / static_cast<double>(std::max<std::size_t>(labels.size(), 1));

  std::vector<double> xticks;
  for (std::size_t i = 0; i < subscales.size(); ++i) xticks.push_back(static_cast<double>(i) + 0.5);
  std::string out = header(f, "AMS subscale scores by cluster");
  out += axes(f, "Subscale", "Mean item score", xticks, nice_ticks(1.0, scale::kScalePoints, 6), subscales);

  for (const auto& b : summary.boxes) {
    const auto g = static_cast<double>(std::find(subscales.begin(), subscales.end(), b.subscale) - subscales.begin());
    const auto c = static_cast<double>(std::distance(labels.begin(), labels.find(b.cluster)));
    const double left = f.x(g) + (f.x(1.0) - f.x(0.0)) * 0.1 + c * slot;
    const double mid = left + slot / 2.0;
    const double w = slot * 0.8;
    const char* fill = color(b.cluster);
    out += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n", mid,
                       f.y(b.lo_whisker), f.y(b.q1));
    out += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n", mid,
                       f.y(b.q3), f.y(b.hi_whisker));
    out += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\" "
                       "fill-opacity=\"0.6\" stroke=\"black\"/>\n",
                       mid - w / 2.0, f.y(b.q3), w, std::max(f.y(b.q1) - f.y(b.q3), 0.5), fill);
    out += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"black\" "
                       "stroke-width=\"2\"/>\n",
                       mid - w / 2.0, f.y(b.median), mid + w / 2.0, f.y(b.median));
    for (double o : b.outliers) {
      out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2\" fill=\"none\" stroke=\"black\"/>\n", mid, f.y(o));
    }
  }

  double ly = 60.0;
  for (int label : labels) {
    out += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"12\" height=\"12\" fill=\"{}\" fill-opacity=\"0.6\" "
                       "stroke=\"black\"/>\n<text x=\"{:.2f}\" y=\"{:.2f}\">Cluster {}</text>\n",
                       f.width - f.right + 16.0, ly - 6.0, color(label), f.width - f.right + 34.0, ly + 4.0, label);
    ly += 20.0;
  }
  out += "</svg>\n";
  return out;
}

std::string format_fit_line(double cfi, double tli, double rmsea, double srmr) {
  return fmt::format("CFI = {:.3f}, TLI = {:.3f}, RMSEA = {:.3f}, SRMR = {:.3f}", cfi, tli, rmsea, srmr);
}

std::string render_report(const nlohmann::json& efa, const nlohmann::json& cfa, const nlohmann::json* kw_tests) {
  std::string out = "# Synthetic AMS cohort report\n\n";

  out += "## Exploratory factor analysis\n\n";
  out += fmt::format("Respondents: {}. Parallel analysis ({} criterion, {} replicates) retained {} factor(s).\n\n",
                     efa.value("n", cfa.value("n", 0)), efa.at("pa_criterion").get<std::string>(),
                     efa.at("pa_replicates").get<int>(), efa.at("parallel_analysis_k").get<int>());
  out += "| Rank | Observed | Random mean | Random 95th pct |\n|---:|---:|---:|---:|\n";
  const auto& observed = efa.at("observed_eigenvalues");
  const std::size_t shown = std::min<std::size_t>(observed.size(), 10);
  for (std::size_t r = 0; r < shown; ++r) {
    out += fmt::format("| {} | {} | {} | {} |\n", r + 1, fixed3(observed[r].get<double>()),
                       fixed3(efa.at("reference_mean")[r].get<double>()),
                       fixed3(efa.at("reference_p95")[r].get<double>()));
  }
  out += "\n![Scree plot](scree.svg)\n\n";

  out += "## Confirmatory factor analysis\n\n";
  out += "| Factor | Item | Standardized loading |\n|---|---|---:|\n";
  for (const auto& factor_name : cfa.at("factors")) {
    const std::string name = factor_name.get<std::string>();
    std::string label = name;
    try {
      const auto s = scale::parse_subscale(name);
      label = fmt::format("{} ({})", name, scale::long_name(s));
    } catch (const std::exception&) {
    }
    bool first = true;
    for (const auto& item : cfa.at("items")) {
      if (item.at("factor").get<std::string>() != name) continue;
      out += fmt::format("| {} | {} | {} |\n", first ? label : "", item.at("item").get<std::string>(),
                         fixed3(item.at("standardized_loading").get<double>()));
      first = false;
    }
  }
  out += fmt::format("\nModel fit: {}\n\n", format_fit_line(cfa.at("cfi"), cfa.at("tli"), cfa.at("rmsea"), cfa.at("srmr")));
  out += fmt::format("chi2 = {:.2f} (df = {}), baseline chi2 = {:.2f} (df = {}), converged: {}.\n",
                     cfa.at("chi2").get<double>(), cfa.at("df").get<int>(), cfa.at("chi2_baseline").get<double>(),
                     cfa.at("df_baseline").get<int>(), cfa.at("converged").get<bool>() ? "yes" : "no");
  for (const auto& w : cfa.value("warnings", nlohmann::json::array())) out += "\n> " + w.get<std::string>() + "\n";

  if (kw_tests != nullptr) {
    out += "\n## Subgroups\n\n![t-SNE layout](tsne.svg)\n\n";
    out += "| Subscale | H | df | p |\n|---|---:|---:|---:|\n";
    for (const auto& t : *kw_tests) {
      const double p = t.at("p").get<double>();
      out += fmt::format("| {} | {:.3f} | {} | {} |\n", t.at("subscale").get<std::string>(), t.at("H").get<double>(),
                         t.at("df").get<int>(), p < 0.001 ? std::string("< 0.001") : fmt::format("{:.3f}", p));
    }
    out += "\n![Subscale boxplots](boxplots.svg)\n";
  }
  return out;
}

}  // namespace synthpsych::pipeline
