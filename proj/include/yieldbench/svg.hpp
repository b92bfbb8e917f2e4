#pragma once

// Deterministic SVG charts: signed importance bars, force plots, hexbin
// scatter, residual histograms and loss curves. Coordinates are printed with
// a fixed number of decimals so equal inputs give equal bytes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "yieldbench/explain.hpp"
#include "yieldbench/metrics.hpp"

namespace yieldbench {

enum class PlotKind { importance_bar, force, hexbin, residual_hist, loss_curve };

inline std::string_view to_string(PlotKind k) {
  switch (k) {
    case PlotKind::importance_bar: return "importance_bar";
    case PlotKind::force: return "force";
    case PlotKind::hexbin: return "hexbin";
    case PlotKind::residual_hist: return "residual_hist";
    case PlotKind::loss_curve: return "loss_curve";
  }
  return "?";
}

struct HexbinPayload {
  std::vector<HexBin> bins;
  double hex_size = 1.0;
};

struct HistogramPayload {
  std::vector<double> values;
  int bins = 20;
};

struct LossPayload {
  std::vector<double> train;
  std::vector<double> val;
};

using PlotPayload = std::variant<ImportanceRanking, ForcePlotData, HexbinPayload, HistogramPayload, LossPayload>;

struct PlotSpec {
  PlotKind kind = PlotKind::importance_bar;
  std::string title;
  int width = 640;
  int height = 400;
  PlotPayload payload;
};

inline constexpr const char* kPositiveColor = "#d62728";
inline constexpr const char* kNegativeColor = "#1f77b4";
inline constexpr const char* kNeutralColor = "#7f7f7f";

namespace svg {

inline std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

inline std::string label(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Plot area inside the canvas.
struct Frame {
  double left, top, right, bottom;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;  // data ranges

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (right - left); }
  double py(double y) const { return bottom - (y - y0) / (y1 - y0) * (bottom - top); }
};

inline std::pair<double, double> padded_range(double lo, double hi) {
  if (!(hi > lo)) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

class Doc {
 public:
  Doc(int width, int height, const std::string& title) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
         << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out_ << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    if (!title.empty())
      out_ << "<text x=\"" << num(width / 2.0) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
           << "</text>\n";
  }

  Doc& raw(const std::string& s) {
    out_ << s << '\n';
    return *this;
  }

  void rect(const std::string& cls, double x, double y, double w, double h, const std::string& fill) {
    out_ << "<rect class=\"" << cls << "\" x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
         << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\"/>\n";
  }

  void line(const std::string& cls, double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0, const std::string& dash = "") {
    out_ << "<line class=\"" << cls << "\" x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
         << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << '"';
    if (!dash.empty()) out_ << " stroke-dasharray=\"" << dash << '"';
    out_ << "/>\n";
  }

  void text(double x, double y, const std::string& s, const std::string& anchor = "start") {
    out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\">" << escape(s)
         << "</text>\n";
  }

  void polyline(const std::string& cls, const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    out_ << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) out_ << (k ? " " : "") << num(pts[k].first) << ',' << num(pts[k].second);
    out_ << "\"/>\n";
  }

  void polygon(const std::string& cls, const std::vector<std::pair<double, double>>& pts, const std::string& fill) {
    out_ << "<polygon class=\"" << cls << "\" fill=\"" << fill << "\" stroke=\"#ffffff\" stroke-width=\"0.5\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) out_ << (k ? " " : "") << num(pts[k].first) << ',' << num(pts[k].second);
    out_ << "\"/>\n";
  }

  // Axes with five ticks each.
  void axes(const Frame& f, const std::string& xlabel, const std::string& ylabel) {
    line("axis", f.left, f.bottom, f.right, f.bottom, "#000000");
    line("axis", f.left, f.top, f.left, f.bottom, "#000000");
    for (int k = 0; k <= 4; ++k) {
      const double xv = f.x0 + (f.x1 - f.x0) * k / 4.0;
      const double yv = f.y0 + (f.y1 - f.y0) * k / 4.0;
      line("tick", f.px(xv), f.bottom, f.px(xv), f.bottom + 4, "#000000");
      text(f.px(xv), f.bottom + 16, label(xv), "middle");
      line("tick", f.left - 4, f.py(yv), f.left, f.py(yv), "#000000");
      text(f.left - 6, f.py(yv) + 4, label(yv), "end");
    }
    text((f.left + f.right) / 2, f.bottom + 32, xlabel, "middle");
    out_ << "<text x=\"14\" y=\"" << num((f.top + f.bottom) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
         << num((f.top + f.bottom) / 2) << ")\">" << escape(ylabel) << "</text>\n";
  }

  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  std::ostringstream out_;
};

inline std::string sign_color(int sign) {
  return sign > 0 ? kPositiveColor : (sign < 0 ? kNegativeColor : kNeutralColor);
}

inline std::string importance_bar(const PlotSpec& spec, const ImportanceRanking& ranking) {
  if (ranking.empty()) throw Error("plot importance_bar: empty ranking");
  ImportanceRanking sorted = ranking;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.mean_abs_phi > b.mean_abs_phi; });
  const double row_h = 18.0;
  const int height = std::max(spec.height, static_cast<int>(60 + row_h * sorted.size()));
  Doc doc(spec.width, height, spec.title);
  const double left = 170.0, right = spec.width - 50.0, top = 32.0;
  const double vmax = sorted.front().mean_abs_phi > 0 ? sorted.front().mean_abs_phi : 1.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const auto& e = sorted[k];
    const double y = top + row_h * k;
    const double w = e.mean_abs_phi / vmax * (right - left);
    doc.text(left - 6, y + row_h * 0.7, e.name, "end");
    doc.rect(e.sign > 0 ? "bar pos" : (e.sign < 0 ? "bar neg" : "bar zero"), left, y + 2, w, row_h - 4,
             sign_color(e.sign));
    doc.text(left + w + 4, y + row_h * 0.7, label(e.mean_abs_phi));
  }
  const double axis_y = top + row_h * sorted.size() + 4;
  doc.line("axis", left, axis_y, right, axis_y, "#000000");
  doc.text((left + right) / 2, axis_y + 18, "mean |Shapley value|", "middle");
  return doc.finish();
}

inline std::string force(const PlotSpec& spec, const ForcePlotData& data) {
  if (data.items.empty()) throw Error("plot force: no contributions");
  double pos = 0.0, neg = 0.0;
  for (const auto& it : data.items) (it.phi > 0 ? pos : neg) += std::abs(it.phi);
  Doc doc(spec.width, spec.height, spec.title);
  const double lo = std::min(data.base_value, data.output - pos);
  const double hi = std::max(data.base_value, data.output + neg);
  auto [x0, x1] = padded_range(lo, hi);
  Frame f{40.0, 60.0, spec.width - 40.0, spec.height - 60.0, x0, x1, 0, 1};
  const double bar_top = spec.height / 2.0 - 15, bar_h = 30;
  doc.line("axis", f.left, bar_top + bar_h + 20, f.right, bar_top + bar_h + 20, "#000000");
  for (int k = 0; k <= 4; ++k) {
    const double v = x0 + (x1 - x0) * k / 4.0;
    doc.text(f.px(v), bar_top + bar_h + 34, label(v), "middle");
  }
  if (pos > 0.0 || neg > 0.0) {
    // Positive pushes end at the output from the left, negative ones start there.
    double cursor = data.output - pos;
    for (const auto& it : data.items) {
      if (!(it.phi > 0)) continue;
      doc.rect("seg pos", f.px(cursor), bar_top, f.px(cursor + it.phi) - f.px(cursor), bar_h, kPositiveColor);
      doc.text(f.px(cursor + it.phi / 2), bar_top - 6, it.name + " = " + label(it.value), "middle");
      cursor += it.phi;
    }
    cursor = data.output;
    for (const auto& it : data.items) {
      if (!(it.phi < 0)) continue;
      doc.rect("seg neg", f.px(cursor), bar_top, f.px(cursor - it.phi) - f.px(cursor), bar_h, kNegativeColor);
      doc.text(f.px(cursor - it.phi / 2), bar_top + bar_h + 14, it.name + " = " + label(it.value), "middle");
      cursor -= it.phi;
    }
    doc.line("output", f.px(data.output), bar_top - 20, f.px(data.output), bar_top + bar_h + 20, "#000000", 2.0);
    doc.text(f.px(data.output), bar_top - 24, "f(x) = " + label(data.output), "middle");
  }
  doc.line("base", f.px(data.base_value), bar_top - 10, f.px(data.base_value), bar_top + bar_h + 10, "#555555", 1.5,
           "4,3");
  doc.text(f.px(data.base_value), spec.height - 20.0, "base value = " + label(data.base_value), "middle");
  return doc.finish();
}

inline std::string hexbin(const PlotSpec& spec, const HexbinPayload& data) {
  if (data.bins.empty()) throw Error("plot hexbin: no bins");
  if (!(data.hex_size > 0)) throw Error("plot hexbin: hex_size must be > 0");
  double lo = data.bins[0].cx, hi = lo;
  std::size_t cmax = 0;
  for (const auto& b : data.bins) {
    lo = std::min({lo, b.cx, b.cy});
    hi = std::max({hi, b.cx, b.cy});
    cmax = std::max(cmax, b.count);
  }
  lo -= data.hex_size;
  hi += data.hex_size;
  Doc doc(spec.width, spec.height, spec.title);
  const double side = std::min(spec.width - 110.0, spec.height - 90.0);
  Frame f{60.0, 30.0, 60.0 + side, 30.0 + side, lo, hi, lo, hi};
  for (const auto& b : data.bins) {
    std::vector<std::pair<double, double>> pts;
    for (int k = 0; k < 6; ++k) {
      const double a = std::numbers::pi / 180.0 * (60.0 * k - 30.0);
      pts.emplace_back(f.px(b.cx + data.hex_size * std::cos(a)), f.py(b.cy + data.hex_size * std::sin(a)));
    }
    const double t = static_cast<double>(b.count) / static_cast<double>(cmax);
    const int shade = static_cast<int>(std::lround(230.0 - 200.0 * t));
    char fill[16];
    std::snprintf(fill, sizeof fill, "#%02x%02x%02x", shade, shade, 255);
    doc.polygon("hex", pts, fill);
  }
  doc.line("identity", f.px(lo), f.py(lo), f.px(hi), f.py(hi), "#d62728", 1.0, "5,3");
  doc.axes(f, "observed yield", "predicted yield");
  doc.text(f.right + 8, f.top + 10, "max count " + std::to_string(cmax));
  return doc.finish();
}

inline std::string residual_hist(const PlotSpec& spec, const HistogramPayload& data) {
  if (data.values.empty()) throw Error("plot residual_hist: no residuals");
  if (data.bins < 1) throw Error("plot residual_hist: bins must be >= 1");
  auto [mn, mx] = std::minmax_element(data.values.begin(), data.values.end());
  double lo = *mn, hi = *mx;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(data.bins), 0);
  const double width = (hi - lo) / data.bins;
  for (double v : data.values) {
    auto k = static_cast<std::size_t>(std::floor((v - lo) / width));
    ++counts[std::min(k, counts.size() - 1)];
  }
  const auto cmax = *std::max_element(counts.begin(), counts.end());
  Doc doc(spec.width, spec.height, spec.title);
  Frame f{60.0, 30.0, spec.width - 20.0, spec.height - 50.0, lo, hi, 0.0, static_cast<double>(cmax) * 1.1};
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double a = lo + width * k;
    doc.rect("bin", f.px(a), f.py(static_cast<double>(counts[k])), f.px(a + width) - f.px(a),
             f.bottom - f.py(static_cast<double>(counts[k])), kNegativeColor);
  }
  doc.axes(f, "residual (observed - predicted)", "count");
  return doc.finish();
}

inline std::string loss_curve(const PlotSpec& spec, const LossPayload& data) {
  if (data.train.empty()) throw Error("plot loss_curve: no epochs");
  double lo = data.train[0], hi = lo;
  for (const auto* series : {&data.train, &data.val})
    for (double v : *series) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  auto [y0, y1] = padded_range(lo, hi);
  const double n = static_cast<double>(std::max(data.train.size(), data.val.size()));
  Doc doc(spec.width, spec.height, spec.title);
  Frame f{60.0, 30.0, spec.width - 110.0, spec.height - 50.0, 1.0, std::max(n, 2.0), y0, y1};
  auto draw = [&](const std::vector<double>& s, const std::string& cls, const char* color) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t k = 0; k < s.size(); ++k) pts.emplace_back(f.px(static_cast<double>(k + 1)), f.py(s[k]));
    doc.polyline(cls, pts, color);
  };
  draw(data.train, "train", kNegativeColor);
  doc.text(f.right + 8, f.top + 10, "train");
  if (!data.val.empty()) {
    draw(data.val, "val", kPositiveColor);
    doc.text(f.right + 8, f.top + 26, "validation");
  }
  doc.axes(f, "epoch", "loss (MSE, standardized)");
  return doc.finish();
}

}  // namespace svg

inline std::string emit_svg(const PlotSpec& spec) {
  if (spec.width < 100 || spec.height < 100) throw Error("plot: canvas must be at least 100x100");
  auto want = [&](auto* tag) -> const auto& {
    using T = std::remove_pointer_t<decltype(tag)>;
    if (!std::holds_alternative<T>(spec.payload))
      throw Error("plot " + std::string(to_string(spec.kind)) + ": payload does not match the plot kind");
    return std::get<T>(spec.payload);
  };
  switch (spec.kind) {
    case PlotKind::importance_bar: return svg::importance_bar(spec, want(static_cast<ImportanceRanking*>(nullptr)));
    case PlotKind::force: return svg::force(spec, want(static_cast<ForcePlotData*>(nullptr)));
    case PlotKind::hexbin: return svg::hexbin(spec, want(static_cast<HexbinPayload*>(nullptr)));
    case PlotKind::residual_hist: return svg::residual_hist(spec, want(static_cast<HistogramPayload*>(nullptr)));
    case PlotKind::loss_curve: return svg::loss_curve(spec, want(static_cast<LossPayload*>(nullptr)));
  }
  throw Error("plot: unknown kind");
}

}  // namespace yieldbench
