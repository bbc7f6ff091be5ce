#include "ndoe/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ndoe {

namespace fs = std::filesystem;

PlotSpec parse_plot_spec(const std::string& text) {
  PlotSpec spec;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("plot spec: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key == "kind") {
      if (value != "error" && value != "trace") throw ConfigError("plot spec: kind must be error or trace");
      spec.kind = value;
    } else if (key == "estimators") {
      spec.estimators.clear();
      std::stringstream vs(value);
      std::string e;
      while (std::getline(vs, e, ',')) {
        if (!e.empty()) spec.estimators.push_back(e);
      }
      if (spec.estimators.empty()) throw ConfigError("plot spec: empty estimator selection");
    } else if (key == "family") {
      spec.family = value;
    } else if (key == "transform") {
      spec.transform = value;
    } else if (key == "match") {
      spec.match = value;
    } else if (key == "title") {
      spec.title = value;
    } else if (key == "name") {
      spec.name = value;
    } else if (key == "width" || key == "panel_height") {
      const int v = std::stoi(value);
      if (v < 100) throw ConfigError("plot spec: " + key + " must be >= 100");
      (key == "width" ? spec.width : spec.panel_height) = v;
    } else {
      throw ConfigError("plot spec: unknown key '" + key + "'");
    }
  }
  return spec;
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void include(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

std::vector<double> ticks(Range& r) {
  if (r.hi - r.lo < 1e-9) {
    r.lo -= 0.5;
    r.hi += 0.5;
  }
  const double raw = (r.hi - r.lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  r.lo = std::floor(r.lo / step) * step;
  r.hi = std::ceil(r.hi / step) * step;
  std::vector<double> out;
  for (double t = r.lo; t <= r.hi + 0.5 * step; t += step) out.push_back(t);
  return out;
}

struct Series {
  std::string name;
  std::string color;
  std::vector<std::array<double, 3>> points;  // x, y, half-width of the error bar
  bool dashed = false;
};

struct Panel {
  std::string title;
  std::vector<Series> series;
  std::vector<double> hlines;  // dashed references (true MI)
};

class Canvas {
 public:
  Canvas(int width, int panel_height, std::size_t panels, std::string title, std::string x_label,
         std::string y_label)
      : width_(width), panel_height_(panel_height), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {
    height_ = kTop + static_cast<int>(panels) * (panel_height_ + kGap);
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\"" << height_
        << "\" viewBox=\"0 0 " << width_ << ' ' << height_ << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os_ << "<text x=\"" << width_ / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
        << "</text>\n";
  }

  void panel(std::size_t index, const Panel& p) {
    const double left = kLeft, right = width_ - kRight;
    const double top = kTop + static_cast<double>(index) * (panel_height_ + kGap);
    const double bottom = top + panel_height_ - kBottom;
    Range xr{1e300, -1e300}, yr{1e300, -1e300};
    for (const Series& s : p.series) {
      for (const auto& pt : s.points) {
        xr.include(pt[0]);
        yr.include(pt[1] - pt[2]);
        yr.include(pt[1] + pt[2]);
      }
    }
    for (double h : p.hlines) yr.include(h);
    if (xr.lo > xr.hi) xr = {0.0, 1.0};
    if (yr.lo > yr.hi) yr = {0.0, 1.0};
    const std::vector<double> xt = ticks(xr), yt = ticks(yr);
    auto sx = [&](double v) { return left + (v - xr.lo) / (xr.hi - xr.lo) * (right - left); };
    auto sy = [&](double v) { return bottom - (v - yr.lo) / (yr.hi - yr.lo) * (bottom - top); };

    os_ << "<g>\n<text x=\"" << num(left) << "\" y=\"" << num(top - 6) << "\" font-size=\"13\">" << escape(p.title)
        << "</text>\n";
    os_ << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(right - left) << "\" height=\""
        << num(bottom - top) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double t : xt) {
      os_ << "<line x1=\"" << num(sx(t)) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(sx(t)) << "\" y2=\""
          << num(bottom + 4) << "\" stroke=\"black\"/>\n";
      os_ << "<text x=\"" << num(sx(t)) << "\" y=\"" << num(bottom + 16) << "\" text-anchor=\"middle\">" << label(t)
          << "</text>\n";
    }
    for (double t : yt) {
      os_ << "<line x1=\"" << num(left - 4) << "\" y1=\"" << num(sy(t)) << "\" x2=\"" << num(right) << "\" y2=\""
          << num(sy(t)) << "\" stroke=\"#dddddd\"/>\n";
      os_ << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy(t) + 4) << "\" text-anchor=\"end\">" << label(t)
          << "</text>\n";
    }
    os_ << "<text x=\"" << num(0.5 * (left + right)) << "\" y=\"" << num(bottom + 32)
        << "\" text-anchor=\"middle\">" << escape(x_label_) << "</text>\n";
    os_ << "<text transform=\"translate(" << num(left - 44) << ',' << num(0.5 * (top + bottom))
        << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label_) << "</text>\n";
    for (double h : p.hlines) {
      os_ << "<line x1=\"" << num(left) << "\" y1=\"" << num(sy(h)) << "\" x2=\"" << num(right) << "\" y2=\""
          << num(sy(h)) << "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
    }
    for (const Series& s : p.series) {
      if (s.points.size() > 1) {
        os_ << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\"";
        if (s.dashed) os_ << " stroke-dasharray=\"4,3\"";
        os_ << " points=\"";
        for (std::size_t i = 0; i < s.points.size(); ++i) {
          os_ << (i ? " " : "") << num(sx(s.points[i][0])) << ',' << num(sy(s.points[i][1]));
        }
        os_ << "\"/>\n";
      }
      for (const auto& pt : s.points) {
        if (pt[2] > 0.0) {
          os_ << "<line x1=\"" << num(sx(pt[0])) << "\" y1=\"" << num(sy(pt[1] - pt[2])) << "\" x2=\""
              << num(sx(pt[0])) << "\" y2=\"" << num(sy(pt[1] + pt[2])) << "\" stroke=\"" << s.color << "\"/>\n";
        }
        // single points and error-plot series get markers
        if (s.points.size() == 1 || !s.dashed) {
          os_ << "<circle cx=\"" << num(sx(pt[0])) << "\" cy=\"" << num(sy(pt[1])) << "\" r=\"3\" fill=\"" << s.color
              << "\"/>\n";
        }
      }
    }
    os_ << "</g>\n";
  }

  void legend(const std::vector<std::pair<std::string, std::string>>& entries) {
    double y = kTop + 14;
    for (const auto& [name, color] : entries) {
      const double x = width_ - kRight + 12;
      os_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 9) << "\" width=\"10\" height=\"10\" fill=\"" << color
          << "\"/>\n";
      os_ << "<text x=\"" << num(x + 14) << "\" y=\"" << num(y) << "\">" << escape(name) << "</text>\n";
      y += 16;
    }
  }

  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  static constexpr int kTop = 50, kGap = 30, kLeft = 70, kRight = 170, kBottom = 40;
  int width_, panel_height_, height_ = 0;
  std::string x_label_, y_label_;
  std::ostringstream os_;
};

bool selected(const RunResult& r, const PlotSpec& spec) {
  if (!spec.estimators.empty() &&
      std::find(spec.estimators.begin(), spec.estimators.end(), r.estimator) == spec.estimators.end()) {
    return false;
  }
  if (!spec.family.empty() && r.family != spec.family) return false;
  if (!spec.transform.empty() && r.transform != spec.transform) return false;
  if (!spec.match.empty() && r.task_id.find(spec.match) == std::string::npos) return false;
  return true;
}

std::vector<std::string> estimator_order(const std::vector<RunResult>& rs, const PlotSpec& spec) {
  if (!spec.estimators.empty()) return spec.estimators;
  std::set<std::string> names;
  for (const RunResult& r : rs) names.insert(r.estimator);
  return {names.begin(), names.end()};
}

std::string color_of(const std::vector<std::string>& order, const std::string& name) {
  const auto it = std::find(order.begin(), order.end(), name);
  const std::size_t i = static_cast<std::size_t>(it - order.begin());
  return kPalette[i % (sizeof kPalette / sizeof kPalette[0])];
}

}  // namespace

std::string render_plot(const std::vector<RunResult>& results, const PlotSpec& spec, const fs::path& trace_dir) {
  std::vector<RunResult> chosen;
  for (const RunResult& r : results) {
    if (selected(r, spec)) chosen.push_back(r);
  }
  if (chosen.empty()) throw ConfigError("plot: the selection matches no results");
  const std::vector<std::string> order = estimator_order(chosen, spec);
  std::vector<std::pair<std::string, std::string>> legend;
  for (const std::string& e : order) legend.emplace_back(e, color_of(order, e));

  if (spec.kind == "error") {
    const std::vector<SummaryRow> rows = summarize(chosen);
    std::map<Index, Panel> panels;
    for (const SummaryRow& s : rows) {
      Panel& p = panels[s.dim];
      p.title = "dim " + std::to_string(s.dim);
      if (s.missing()) continue;
      auto it = std::find_if(p.series.begin(), p.series.end(), [&](const Series& x) { return x.name == s.estimator; });
      if (it == p.series.end()) {
        p.series.push_back({s.estimator, color_of(order, s.estimator), {}, false});
        it = p.series.end() - 1;
      }
      it->points.push_back({s.true_mi, s.mean_err, s.sd_err});
    }
    for (auto& [dim, p] : panels) {
      p.hlines.push_back(0.0);
      for (Series& s : p.series) std::sort(s.points.begin(), s.points.end());
    }
    Canvas canvas(spec.width, spec.panel_height, panels.size(),
                  spec.title.empty() ? "estimation error I - I_hat (mean +- 1 sd over seeds)" : spec.title, "true MI (nats)",
                  "I - I_hat");
    std::size_t i = 0;
    for (const auto& [dim, p] : panels) canvas.panel(i++, p);
    canvas.legend(legend);
    return canvas.finish();
  }

  // trace plot: one panel per task
  std::map<std::string, Panel> panels;
  for (const RunResult& r : chosen) {
    Panel& p = panels[r.task_id];
    p.title = r.task_id;
    if (p.hlines.empty()) p.hlines.push_back(r.true_mi);
    std::vector<EpochRecord> trace = r.trace;
    if (trace.empty() && !trace_dir.empty()) {
      const fs::path file = trace_dir / trace_file_name(r.task_id, r.estimator, r.seed);
      if (fs::exists(file)) trace = read_trace(file);
    }
    Series s{r.estimator + " seed " + std::to_string(r.seed), color_of(order, r.estimator), {}, true};
    for (const EpochRecord& e : trace) {
      if (std::isfinite(e.mi)) s.points.push_back({static_cast<double>(e.step), e.mi, 0.0});
    }
    if (!s.points.empty()) p.series.push_back(std::move(s));
  }
  Canvas canvas(spec.width, spec.panel_height, panels.size(),
                spec.title.empty() ? "estimate vs training step (dashed: true MI)" : spec.title, "training step",
                "I_hat (nats)");
  std::size_t i = 0;
  for (const auto& [id, p] : panels) canvas.panel(i++, p);
  canvas.legend(legend);
  return canvas.finish();
}

fs::path emit_plot(const std::vector<RunResult>& results, const PlotSpec& spec, const fs::path& out_dir,
                   const fs::path& trace_dir) {
  const std::string svg = render_plot(results, spec, trace_dir);
  fs::create_directories(out_dir);
  const fs::path path = out_dir / (spec.name + "-" + spec.kind + ".svg");
  std::ofstream out(path);
  out << svg;
  if (!out) throw std::runtime_error("failed writing " + path.string());
  return path;
}

}  // namespace ndoe
