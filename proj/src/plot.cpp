#include "ambiflow/plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "ambiflow/binio.hpp"
#include "ambiflow/error.hpp"

namespace ambiflow::plot {

namespace {

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

std::string num(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) hi = lo + 1.0;
  }
};

std::string header(const std::string& title) {
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
       "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
       escape(title) + "</text>\n";
  return s;
}

std::string axes(const Range& xr, const Range& yr, const std::string& xl, const std::string& yl) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string s = "<g stroke=\"black\" stroke-width=\"1\">\n";
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y0) + "\"/>\n";
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) + "\"/>\n";
  s += "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int t = 0; t <= 4; ++t) {
    const double f = t / 4.0;
    s += "<text x=\"" + num(x0 + f * (x1 - x0)) + "\" y=\"" + num(y0 + 16) + "\" text-anchor=\"middle\">" +
         num(xr.lo + f * (xr.hi - xr.lo)) + "</text>\n";
    s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(y0 - f * (y0 - y1) + 4) + "\" text-anchor=\"end\">" +
         num(yr.lo + f * (yr.hi - yr.lo)) + "</text>\n";
  }
  s += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(kHeight - 12) + "\" text-anchor=\"middle\">" + escape(xl) +
       "</text>\n";
  s += "<text x=\"16\" y=\"" + num((y0 + y1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       num((y0 + y1) / 2) + ")\">" + escape(yl) + "</text>\n</g>\n";
  return s;
}

std::string legend(const std::vector<Series>& series) {
  std::string s = "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kTop + 14.0 * static_cast<double>(i);
    const double x = kWidth - kRight + 10;
    s += "<rect x=\"" + num(x) + "\" y=\"" + num(y - 8) + "\" width=\"10\" height=\"10\" fill=\"" + kColors[i % 8] +
         "\"/>\n";
    s += "<text x=\"" + num(x + 14) + "\" y=\"" + num(y + 1) + "\">" + escape(series[i].name) + "</text>\n";
  }
  return s + "</g>\n";
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  if (series.empty()) throw InvalidArgument("plot: no series to draw");
  Range xr, yr;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("plot: series x/y length mismatch");
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.finish();
  yr.finish();
  std::string out = header(title) + axes(xr, yr, x_label, y_label);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::string pts;
    for (std::size_t k = 0; k < series[i].x.size(); ++k) {
      if (!std::isfinite(series[i].x[k]) || !std::isfinite(series[i].y[k])) continue;
      const double px = x0 + (series[i].x[k] - xr.lo) / (xr.hi - xr.lo) * (x1 - x0);
      const double py = y0 - (series[i].y[k] - yr.lo) / (yr.hi - yr.lo) * (y0 - y1);
      pts += num(px) + "," + num(py) + " ";
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(kColors[i % 8]) + "\" stroke-width=\"2\" points=\"" + pts +
           "\"/>\n";
  }
  return out + legend(series) + "</svg>\n";
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<Series>& series) {
  if (series.empty() || labels.empty()) throw InvalidArgument("plot: no bars to draw");
  Range yr;
  yr.add(0.0);
  for (const auto& s : series) {
    if (s.y.size() != labels.size()) throw ShapeError("plot: one value per label required");
    for (double v : s.y) yr.add(v);
  }
  yr.finish();
  Range xr;
  xr.add(0.0);
  xr.add(static_cast<double>(labels.size()));
  xr.finish();
  std::string out = header(title) + axes(xr, yr, "", "");
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const double group = (x1 - x0) / static_cast<double>(labels.size());
  const double bar = group * 0.8 / static_cast<double>(series.size());
  for (std::size_t g = 0; g < labels.size(); ++g) {
    for (std::size_t i = 0; i < series.size(); ++i) {
      const double v = std::isfinite(series[i].y[g]) ? series[i].y[g] : 0.0;
      const double h = (v - yr.lo) / (yr.hi - yr.lo) * (y0 - y1);
      out += "<rect x=\"" + num(x0 + group * static_cast<double>(g) + group * 0.1 + bar * static_cast<double>(i)) +
             "\" y=\"" + num(y0 - h) + "\" width=\"" + num(bar) + "\" height=\"" + num(h) + "\" fill=\"" +
             kColors[i % 8] + "\"/>\n";
    }
    out += "<text x=\"" + num(x0 + group * (static_cast<double>(g) + 0.5)) + "\" y=\"" + num(y0 + 30) +
           "\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">" + escape(labels[g]) + "</text>\n";
  }
  return out + legend(series) + "</svg>\n";
}

std::size_t Table::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw FormatError("csv: missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<double> Table::values(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

Table parse_csv(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (first) {
      t.header = cells;
      first = false;
      continue;
    }
    if (cells.size() != t.header.size()) throw FormatError("csv: row has " + std::to_string(cells.size()) + " cells");
    std::vector<double> row;
    for (const auto& c : cells) {
      double v = std::numeric_limits<double>::quiet_NaN();
      std::from_chars(c.data(), c.data() + c.size(), v);
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw FormatError("csv: empty input");
  return t;
}

std::string write_csv(const Table& table) {
  std::string out;
  for (std::size_t i = 0; i < table.header.size(); ++i) out += (i ? "," : "") + table.header[i];
  out += "\n";
  for (const auto& r : table.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + binio::format_double(r[i]);
    out += "\n";
  }
  return out;
}

Table epoch_means(const Table& history) {
  if (history.rows.empty()) throw InvalidArgument("plot: training history has no rows");
  const std::size_t ec = history.column("epoch");
  Table out;
  out.header.push_back("epoch");
  std::vector<std::size_t> cols;
  for (const char* name : {"l2d", "gen", "mmd", "det", "mb", "hm", "total", "disc_total"}) {
    cols.push_back(history.column(name));
    out.header.push_back(name);
  }
  std::map<double, std::pair<std::vector<double>, std::size_t>> acc;
  for (const auto& r : history.rows) {
    auto& [sum, count] = acc[r[ec]];
    sum.resize(cols.size(), 0.0);
    for (std::size_t i = 0; i < cols.size(); ++i) sum[i] += r[cols[i]];
    ++count;
  }
  for (const auto& [epoch, sc] : acc) {
    std::vector<double> row{epoch};
    for (double s : sc.first) row.push_back(s / static_cast<double>(sc.second));
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace ambiflow::plot
