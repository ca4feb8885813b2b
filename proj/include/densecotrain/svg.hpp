#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace densecotrain::svg {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::optional<std::pair<double, double>> y_range;  // default: fitted to the data
  bool markers = true;
};

std::string escape(std::string_view text);

/// Standalone SVG document with axes, ticks, one polyline per series and a
/// legend.
std::string render(const LinePlot& plot);

void write(const std::filesystem::path& path, const LinePlot& plot);

}  // namespace densecotrain::svg
