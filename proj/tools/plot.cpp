#include "plot.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace sparse_wsi::cli {

namespace {

constexpr double kPanelW = 420.0;
constexpr double kPanelH = 300.0;
constexpr double kMargin = 50.0;
constexpr const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::string plot_curves_svg(const std::vector<PlotSeries>& series) {
    std::map<CurveMetric, std::vector<const PlotSeries*>> panels;
    std::map<std::string, std::size_t> colour_of;
    std::size_t max_n = 1;
    for (const auto& s : series) {
        panels[s.curve.metric].push_back(&s);
        colour_of.emplace(s.label, colour_of.size());
        if (!s.curve.points.empty()) {
            max_n = std::max(max_n, s.curve.points.back().n);
        }
    }
    const double width = kMargin + static_cast<double>(panels.size()) * (kPanelW + kMargin);
    const double height = kPanelH + 2.0 * kMargin + 20.0 * static_cast<double>(colour_of.size());

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    double x0 = kMargin;
    for (const auto& [metric, members] : panels) {
        const double y0 = kMargin;
        auto px = [&](double n) { return x0 + kPanelW * (n - 1.0) / std::max(1.0, static_cast<double>(max_n) - 1.0); };
        auto py = [&](double v) { return y0 + kPanelH * (1.0 - std::clamp(v, 0.0, 1.0)); };
        svg << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(kPanelW) << "\" height=\""
            << num(kPanelH) << "\" fill=\"none\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << num(x0 + kPanelW / 2) << "\" y=\"" << num(y0 - 10) << "\" text-anchor=\"middle\">"
            << "mean " << to_string(metric) << " vs patches sampled</text>\n";
        for (int tick = 0; tick <= 4; ++tick) {
            const double v = tick / 4.0;
            svg << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">"
                << num(v) << "</text>\n";
        }
        svg << "<text x=\"" << num(x0) << "\" y=\"" << num(y0 + kPanelH + 16) << "\">1</text>\n";
        svg << "<text x=\"" << num(x0 + kPanelW) << "\" y=\"" << num(y0 + kPanelH + 16)
            << "\" text-anchor=\"end\">" << max_n << "</text>\n";
        for (const auto* s : members) {
            const char* colour = kColours[colour_of[s->label] % std::size(kColours)];
            std::ostringstream band_hi, band_lo, line;
            for (const auto& p : s->curve.points) {
                const double n = static_cast<double>(p.n);
                line << (line.tellp() == 0 ? "" : " ") << num(px(n)) << ',' << num(py(p.mean));
                band_hi << num(px(n)) << ',' << num(py(p.mean + p.sd)) << ' ';
            }
            for (auto it = s->curve.points.rbegin(); it != s->curve.points.rend(); ++it) {
                band_lo << num(px(static_cast<double>(it->n))) << ',' << num(py(it->mean - it->sd)) << ' ';
            }
            svg << "<polygon points=\"" << band_hi.str() << band_lo.str() << "\" fill=\"" << colour
                << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
            svg << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << colour
                << "\" stroke-width=\"1.5\"/>\n";
        }
        x0 += kPanelW + kMargin;
    }
    double ly = kMargin + kPanelH + 36.0;
    for (const auto& [label, idx] : colour_of) {
        svg << "<rect x=\"" << num(kMargin) << "\" y=\"" << num(ly - 9) << "\" width=\"12\" height=\"10\" fill=\""
            << kColours[idx % std::size(kColours)] << "\"/>\n";
        svg << "<text x=\"" << num(kMargin + 18) << "\" y=\"" << num(ly) << "\">" << label << "</text>\n";
        ly += 20.0;
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace sparse_wsi::cli
