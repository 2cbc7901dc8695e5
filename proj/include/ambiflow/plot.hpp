#pragma once

#include <string>
#include <vector>

namespace ambiflow::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Standalone SVG line chart with linear axes.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

/// Grouped bar chart: one group per label, one bar per series (y only).
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<Series>& series);

/// Numeric CSV with a header row. Non-numeric cells read as NaN.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a header column; throws when absent.
  std::size_t column(const std::string& name) const;
  std::vector<double> values(const std::string& name) const;
};

Table parse_csv(const std::string& text);
std::string write_csv(const Table& table);

/// Per-epoch means of the loss columns of a training history.
Table epoch_means(const Table& history);

}  // namespace ambiflow::plot
