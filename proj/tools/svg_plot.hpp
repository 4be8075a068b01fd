#pragma once

#include <string>
#include <vector>

namespace drfuser::plot {

struct Series {
    std::string name;
    std::vector<double> xs;
    std::vector<double> ys;
    std::string color = "#1f77b4";
    double width = 1.5;
};

struct Chart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    bool log_y = false;  // non-positive values are skipped
    int width = 800;
    int height = 420;
};

// Line chart as a standalone SVG document.
std::string render_svg(const Chart& chart);

// Shortest decimal that reads back to the same double; integers keep a ".0".
std::string format_number(double v);

}  // namespace drfuser::plot
