#include "svg_plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace drfuser::plot {

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, res.ptr);
    if (std::isfinite(v) && s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

namespace {

std::string esc(const std::string& s) {
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

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

// 1, 2 or 5 times a power of ten, giving roughly `target` intervals.
double nice_step(double span, int target) {
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double r = raw / mag;
    if (r < 1.5) return mag;
    if (r < 3.5) return 2 * mag;
    if (r < 7.5) return 5 * mag;
    return 10 * mag;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    bool empty() const { return !(lo <= hi); }
    void widen() {
        if (empty()) {
            lo = 0;
            hi = 1;
        } else if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
            const double pad = std::max(std::abs(hi) * 0.05, 1e-3);
            lo -= pad;
            hi += pad;
        }
    }
};

}  // namespace

std::string render_svg(const Chart& chart) {
    const double left = 70, right = 20, top = 36, bottom = 50;
    const double pw = chart.width - left - right;
    const double ph = chart.height - top - bottom;
    auto ty = [&](double y) { return chart.log_y ? std::log10(y) : y; };
    auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!chart.log_y || y > 0); };

    Range xr, yr;
    for (const auto& s : chart.series)
        for (std::size_t i = 0; i < std::min(s.xs.size(), s.ys.size()); ++i)
            if (usable(s.xs[i], s.ys[i])) {
                xr.add(s.xs[i]);
                yr.add(ty(s.ys[i]));
            }
    xr.widen();
    yr.widen();
    if (chart.log_y) {
        yr.lo = std::floor(yr.lo);
        yr.hi = std::ceil(yr.hi);
        if (yr.hi == yr.lo) yr.hi += 1;
    } else {
        const double step = nice_step(yr.hi - yr.lo, 5);
        yr.lo = std::floor(yr.lo / step) * step;
        yr.hi = std::ceil(yr.hi / step) * step;
    }
    auto px = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * ph; };

    std::ostringstream o;
    o.precision(6);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << chart.width << "\" height=\"" << chart.height
      << "\" viewBox=\"0 0 " << chart.width << " " << chart.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << chart.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(chart.title)
      << "</text>\n";

    // grid and tick labels
    o << "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
    std::vector<std::pair<double, std::string>> yticks, xticks;
    if (chart.log_y) {
        for (double e = yr.lo; e <= yr.hi + 1e-9; e += 1) yticks.emplace_back(e, "1e" + tick_label(e));
    } else {
        const double step = nice_step(yr.hi - yr.lo, 5);
        for (double v = yr.lo; v <= yr.hi + step * 1e-6; v += step)
            yticks.emplace_back(v, tick_label(std::abs(v) < step * 1e-9 ? 0.0 : v));
    }
    {
        const double step = nice_step(xr.hi - xr.lo, 8);
        for (double v = std::ceil(xr.lo / step) * step; v <= xr.hi + step * 1e-6; v += step)
            xticks.emplace_back(v, tick_label(std::abs(v) < step * 1e-9 ? 0.0 : v));
    }
    for (const auto& [v, _] : yticks)
        o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(v) << "\" y2=\"" << py(v) << "\"/>\n";
    for (const auto& [v, _] : xticks)
        o << "<line x1=\"" << px(v) << "\" x2=\"" << px(v) << "\" y1=\"" << top << "\" y2=\"" << top + ph << "\"/>\n";
    o << "</g>\n";
    for (const auto& [v, label] : yticks)
        o << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << label << "</text>\n";
    for (const auto& [v, label] : xticks)
        o << "<text x=\"" << px(v) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << label << "</text>\n";
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << chart.height - 10 << "\" text-anchor=\"middle\">"
      << esc(chart.x_label) << "</text>\n";
    o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << esc(chart.y_label) << "</text>\n";

    for (const auto& s : chart.series) {
        o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"" << s.width << "\" points=\"";
        bool first = true;
        for (std::size_t i = 0; i < std::min(s.xs.size(), s.ys.size()); ++i) {
            if (!usable(s.xs[i], s.ys[i])) continue;
            o << (first ? "" : " ") << px(s.xs[i]) << "," << py(ty(s.ys[i]));
            first = false;
        }
        o << "\"/>\n";
    }

    double ly = top + 14;
    for (const auto& s : chart.series) {
        const double lx = left + pw - 150;
        o << "<line x1=\"" << lx << "\" x2=\"" << lx + 24 << "\" y1=\"" << ly - 4 << "\" y2=\"" << ly - 4
          << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << lx + 30 << "\" y=\"" << ly << "\">" << esc(s.name) << "</text>\n";
        ly += 16;
    }
    o << "</svg>\n";
    return o.str();
}

}  // namespace drfuser::plot
