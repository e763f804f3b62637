#include "sde/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sde/csv.hpp"
#include "sde/errors.hpp"

namespace sde {

namespace {

const char* kRamp[9] = {"#ffffd9", "#edf8b1", "#c7e9b4", "#7fcdbb", "#41b6c4",
                        "#1d91c0", "#225ea8", "#253494", "#081d58"};
const char* kGrey = "#b0b0b0";
const char* kSeries[6] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};

std::string esc(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

std::string px(double v) { return format_fixed(v, 2); }

std::string text_el(double x, double y, const std::string& body, int size,
                    const std::string& anchor, const std::string& fill = "#222222") {
  return "<text x=\"" + px(x) + "\" y=\"" + px(y) + "\" font-family=\"sans-serif\" font-size=\"" +
         std::to_string(size) + "\" text-anchor=\"" + anchor + "\" fill=\"" + fill + "\">" +
         esc(body) + "</text>";
}

std::string rect_el(double x, double y, double w, double h, const std::string& fill,
                    const std::string& cls) {
  return "<rect class=\"" + cls + "\" x=\"" + px(x) + "\" y=\"" + px(y) + "\" width=\"" + px(w) +
         "\" height=\"" + px(h) + "\" fill=\"" + fill + "\"/>";
}

std::string line_el(double x1, double y1, double x2, double y2, const std::string& stroke,
                    const std::string& extra = "") {
  return "<line x1=\"" + px(x1) + "\" y1=\"" + px(y1) + "\" x2=\"" + px(x2) + "\" y2=\"" +
         px(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"1\"" + extra + "/>";
}

struct Range {
  double lo = 0.0, hi = 1.0;
  bool any = false;
};

Range finite_range(const Eigen::ArrayXd& v) {
  Range r;
  r.lo = std::numeric_limits<double>::infinity();
  r.hi = -r.lo;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) continue;
    r.lo = std::min(r.lo, v[i]);
    r.hi = std::max(r.hi, v[i]);
    r.any = true;
  }
  if (!r.any) {
    r.lo = 0.0;
    r.hi = 1.0;
  }
  return r;
}

std::string legend_tick(double v) { return format_fixed(v, 3); }

}  // namespace

void write_heatmap_svg(const std::string& path, const DomainGrid& grid,
                       const Eigen::ArrayXd& value, const std::string& title) {
  grid.validate();
  if (value.size() != grid.n_cells())
    throw ConfigError("heatmap: value vector does not match the grid");

  const double cw = 24.0, ch = 12.0;
  const double left = 46.0, top = 34.0, bottom = 30.0;
  const double plot_w = cw * grid.n_years(), plot_h = ch * grid.n_ages();
  const double legend_x = left + plot_w + 18.0;
  const double width = legend_x + 14.0 + 52.0;
  const double height = top + plot_h + bottom;

  Range r = finite_range(value);
  const double span = r.hi - r.lo;

  FileWriter out(path);
  out.writeln("<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
  out.writeln("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(width) + "\" height=\"" +
              px(height) + "\" viewBox=\"0 0 " + px(width) + " " + px(height) + "\">");
  out.writeln(text_el(left, 20.0, title, 13, "start"));

  for (int c = 0; c < grid.n_cells(); ++c) {
    DomainCell cell = grid.cell_at(c);
    double x = left + cw * (cell.year - grid.year_min);
    double y = top + ch * (cell.age - grid.age_min);
    std::string fill = kGrey;
    double v = value[c];
    if (std::isfinite(v)) {
      int bin = span > 0.0 ? static_cast<int>(std::floor((v - r.lo) / span * 9.0)) : 4;
      bin = std::clamp(bin, 0, 8);
      fill = kRamp[bin];
    }
    out.writeln(rect_el(x, y, cw, ch, fill, "cell"));
  }

  for (int year = grid.year_min; year <= grid.year_max; ++year) {
    if ((year - grid.year_min) % 5 != 0 && year != grid.year_max) continue;
    double x = left + cw * (year - grid.year_min) + cw / 2.0;
    out.writeln(text_el(x, top + plot_h + 14.0, std::to_string(year), 10, "middle"));
  }
  for (int age = grid.age_min; age <= grid.age_max; ++age) {
    if ((age - grid.age_min) % 5 != 0 && age != grid.age_max) continue;
    double y = top + ch * (age - grid.age_min) + ch / 2.0 + 3.0;
    out.writeln(text_el(left - 6.0, y, std::to_string(age), 10, "end"));
  }
  out.writeln(text_el(left + plot_w / 2.0, top + plot_h + 26.0, "year", 11, "middle"));
  out.writeln(text_el(12.0, top + plot_h / 2.0, "age", 11, "middle"));

  // Legend: highest bin on top, ticks at max, mid, min.
  const double lh = std::min(plot_h / 9.0, 16.0);
  for (int b = 0; b < 9; ++b)
    out.writeln(rect_el(legend_x, top + lh * (8 - b), 14.0, lh, kRamp[b], "legend"));
  out.writeln(text_el(legend_x + 18.0, top + 4.0 + lh * 0.0, legend_tick(r.hi), 10, "start"));
  out.writeln(
      text_el(legend_x + 18.0, top + 4.0 + lh * 4.5, legend_tick((r.lo + r.hi) / 2.0), 10,
              "start"));
  out.writeln(text_el(legend_x + 18.0, top + 4.0 + lh * 9.0, legend_tick(r.lo), 10, "start"));

  out.writeln("</svg>");
}

namespace {

void write_slices_impl(const std::string& path, const DomainGrid& grid,
                       const Eigen::ArrayXd& mean, const Eigen::ArrayXd& lo,
                       const Eigen::ArrayXd& hi, const std::vector<int>& ages,
                       int first_forecast_year, const std::string& title) {
  grid.validate();
  if (mean.size() != grid.n_cells() || lo.size() != grid.n_cells() ||
      hi.size() != grid.n_cells())
    throw ConfigError("slice plot: vectors do not match the grid");
  if (ages.empty()) throw ConfigError("slice plot: no ages requested");
  for (int a : ages)
    if (a < grid.age_min || a > grid.age_max)
      throw ConfigError("slice plot: age outside the grid");

  const double cw = 24.0;
  const double left = 52.0, top = 34.0, bottom = 34.0, plot_h = 220.0;
  const double plot_w = cw * grid.n_years();
  const double width = left + plot_w + 110.0;
  const double height = top + plot_h + bottom;

  // Value range over the plotted slices.
  double vlo = std::numeric_limits<double>::infinity(), vhi = -vlo;
  for (int a : ages) {
    for (int year = grid.year_min; year <= grid.year_max; ++year) {
      int c = grid.index_of(a, year);
      for (double v : {lo[c], hi[c], mean[c]}) {
        if (!std::isfinite(v)) continue;
        vlo = std::min(vlo, v);
        vhi = std::max(vhi, v);
      }
    }
  }
  if (!(vlo < vhi)) {
    vlo = std::isfinite(vlo) ? vlo - 0.5 : 0.0;
    vhi = vlo + 1.0;
  }
  double pad = 0.05 * (vhi - vlo);
  vlo -= pad;
  vhi += pad;

  auto xof = [&](int year) { return left + cw * (year - grid.year_min) + cw / 2.0; };
  auto yof = [&](double v) { return top + plot_h * (1.0 - (v - vlo) / (vhi - vlo)); };

  FileWriter out(path);
  out.writeln("<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
  out.writeln("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(width) + "\" height=\"" +
              px(height) + "\" viewBox=\"0 0 " + px(width) + " " + px(height) + "\">");
  out.writeln(text_el(left, 20.0, title, 13, "start"));

  out.writeln(line_el(left, top, left, top + plot_h, "#444444"));
  out.writeln(line_el(left, top + plot_h, left + plot_w, top + plot_h, "#444444"));
  for (int k = 0; k <= 4; ++k) {
    double v = vlo + (vhi - vlo) * k / 4.0;
    double y = yof(v);
    out.writeln(line_el(left - 3.0, y, left, y, "#444444"));
    out.writeln(text_el(left - 6.0, y + 3.0, format_fixed(v, 3), 9, "end"));
  }
  for (int year = grid.year_min; year <= grid.year_max; ++year) {
    if ((year - grid.year_min) % 5 != 0 && year != grid.year_max) continue;
    out.writeln(text_el(xof(year), top + plot_h + 14.0, std::to_string(year), 10, "middle"));
  }
  out.writeln(text_el(left + plot_w / 2.0, top + plot_h + 28.0, "year", 11, "middle"));

  if (first_forecast_year > grid.year_min && first_forecast_year <= grid.year_max) {
    double x = left + cw * (first_forecast_year - grid.year_min);
    out.writeln(line_el(x, top, x, top + plot_h, "#888888", " stroke-dasharray=\"4 3\""));
    out.writeln(text_el(x + 4.0, top + 12.0, "forecast", 10, "start", "#666666"));
  }

  for (std::size_t s = 0; s < ages.size(); ++s) {
    const char* color = kSeries[s % 6];
    int age = ages[s];
    // Contiguous runs of finite cells; each run gets a band and a line.
    int run_start = -1;
    for (int year = grid.year_min; year <= grid.year_max + 1; ++year) {
      bool ok = year <= grid.year_max;
      if (ok) {
        int c = grid.index_of(age, year);
        ok = std::isfinite(mean[c]) && std::isfinite(lo[c]) && std::isfinite(hi[c]);
      }
      if (ok && run_start < 0) run_start = year;
      if (!ok && run_start >= 0) {
        int run_end = year - 1;
        if (run_end > run_start) {
          std::string band = "M";
          for (int t = run_start; t <= run_end; ++t)
            band += " " + px(xof(t)) + "," + px(yof(hi[grid.index_of(age, t)]));
          for (int t = run_end; t >= run_start; --t)
            band += " " + px(xof(t)) + "," + px(yof(lo[grid.index_of(age, t)]));
          band += " Z";
          out.writeln("<path d=\"" + band + "\" fill=\"" + color +
                      "\" fill-opacity=\"0.15\" stroke=\"none\"/>");
          std::string pts;
          for (int t = run_start; t <= run_end; ++t) {
            if (!pts.empty()) pts += " ";
            pts += px(xof(t)) + "," + px(yof(mean[grid.index_of(age, t)]));
          }
          out.writeln("<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
                      "\" stroke-width=\"1.5\"/>");
        } else {
          int c = grid.index_of(age, run_start);
          out.writeln("<circle cx=\"" + px(xof(run_start)) + "\" cy=\"" + px(yof(mean[c])) +
                      "\" r=\"2\" fill=\"" + color + "\"/>");
        }
        run_start = -1;
      }
    }
    double ly = top + 16.0 * (static_cast<double>(s) + 1.0);
    out.writeln(line_el(left + plot_w + 10.0, ly - 3.0, left + plot_w + 28.0, ly - 3.0, color));
    out.writeln(text_el(left + plot_w + 32.0, ly, "age " + std::to_string(age), 10, "start"));
  }

  out.writeln("</svg>");
}

}  // namespace

void write_age_slices_svg(const std::string& path, const DomainGrid& grid,
                          const Eigen::ArrayXd& mean, const Eigen::ArrayXd& lo,
                          const Eigen::ArrayXd& hi, const std::vector<int>& ages,
                          const std::string& title) {
  write_slices_impl(path, grid, mean, lo, hi, ages, grid.year_max + 1, title);
}

void write_forecast_svg(const std::string& path, const DomainGrid& grid,
                        const Eigen::ArrayXd& mean, const Eigen::ArrayXd& lo,
                        const Eigen::ArrayXd& hi, const std::vector<int>& ages,
                        int first_forecast_year, const std::string& title) {
  write_slices_impl(path, grid, mean, lo, hi, ages, first_forecast_year, title);
}

}  // namespace sde
