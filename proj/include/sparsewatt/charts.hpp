#pragma once

// Minimal static SVG charts for the benchmark reports: line charts and
// stacked bar charts. Bars carry data-layer/data-value attributes so the
// emitted files can be checked mechanically.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sparsewatt/errors.hpp"

namespace sparsewatt {

struct ChartSeries {
    std::string name;
    std::vector<double> values; // one per category / x position
};

namespace detail {

constexpr int chart_w = 640, chart_h = 420;
constexpr int margin_l = 70, margin_r = 20, margin_t = 40, margin_b = 50;

inline std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline std::string num_exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#4878cf", "#e8a33d", "#6aa84f", "#cc4125",
                                   "#8e63b0", "#45818e", "#a64d79", "#777777"};
    return colors[i % 8];
}

inline void svg_header(std::ofstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << chart_w << "\" height=\""
       << chart_h << "\" viewBox=\"0 0 " << chart_w << " " << chart_h << "\">\n";
    os << "<rect width=\"" << chart_w << "\" height=\"" << chart_h << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << chart_w / 2 << "\" y=\"24\" text-anchor=\"middle\" "
          "font-family=\"sans-serif\" font-size=\"15\">"
       << title << "</text>\n";
}

inline void axis_labels(std::ofstream& os, const std::string& x_label,
                        const std::string& y_label) {
    os << "<text x=\"" << (margin_l + (chart_w - margin_l - margin_r) / 2) << "\" y=\""
       << chart_h - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << (margin_t + (chart_h - margin_t - margin_b) / 2)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
          "transform=\"rotate(-90 16 "
       << (margin_t + (chart_h - margin_t - margin_b) / 2) << ")\">" << y_label
       << "</text>\n";
}

inline void legend(std::ofstream& os, const std::vector<ChartSeries>& series) {
    int y = margin_t;
    for (std::size_t i = 0; i < series.size(); ++i) {
        os << "<rect x=\"" << chart_w - margin_r - 130 << "\" y=\"" << y
           << "\" width=\"12\" height=\"12\" fill=\"" << palette(i) << "\"/>\n";
        os << "<text x=\"" << chart_w - margin_r - 114 << "\" y=\"" << y + 10
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[i].name
           << "</text>\n";
        y += 18;
    }
}

} // namespace detail

/// Stacked bar chart: one bar per category, one segment per series layer.
/// Every segment records its value in a data-value attribute.
inline void svg_stacked_bars(const std::filesystem::path& path, const std::string& title,
                             const std::vector<std::string>& categories,
                             const std::vector<ChartSeries>& layers,
                             const std::string& x_label, const std::string& y_label) {
    using namespace detail;
    for (const auto& layer : layers)
        if (layer.values.size() != categories.size())
            throw domain_error("svg_stacked_bars: layer size mismatch");

    double max_total = 0.0;
    for (std::size_t c = 0; c < categories.size(); ++c) {
        double total = 0.0;
        for (const auto& layer : layers) total += std::max(0.0, layer.values[c]);
        max_total = std::max(max_total, total);
    }
    if (max_total <= 0.0) max_total = 1.0;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write " + path.string());
    svg_header(os, title);
    axis_labels(os, x_label, y_label);
    legend(os, layers);

    const double plot_w = chart_w - margin_l - margin_r;
    const double plot_h = chart_h - margin_t - margin_b;
    const double scale = plot_h / max_total;
    const double slot = plot_w / std::max<std::size_t>(1, categories.size());
    const double bar_w = slot * 0.6;

    os << "<line x1=\"" << margin_l << "\" y1=\"" << margin_t + plot_h << "\" x2=\""
       << chart_w - margin_r << "\" y2=\"" << margin_t + plot_h
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << margin_l - 6 << "\" y=\"" << margin_t + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
       << num(max_total) << "</text>\n";

    for (std::size_t c = 0; c < categories.size(); ++c) {
        const double x = margin_l + slot * c + (slot - bar_w) / 2;
        double y = margin_t + plot_h;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const double v = std::max(0.0, layers[l].values[c]);
            const double h = v * scale;
            y -= h;
            os << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(bar_w)
               << "\" height=\"" << num(h) << "\" fill=\"" << palette(l) << "\" data-layer=\""
               << layers[l].name << "\" data-category=\"" << categories[c]
               << "\" data-value=\"" << num_exact(layers[l].values[c]) << "\"/>\n";
        }
        os << "<text x=\"" << num(x + bar_w / 2) << "\" y=\"" << margin_t + plot_h + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
           << categories[c] << "</text>\n";
    }
    os << "</svg>\n";
}

/// Line chart over shared x positions.
inline void svg_line_chart(const std::filesystem::path& path, const std::string& title,
                           const std::vector<double>& xs,
                           const std::vector<ChartSeries>& series,
                           const std::string& x_label, const std::string& y_label) {
    using namespace detail;
    for (const auto& s : series)
        if (s.values.size() != xs.size())
            throw domain_error("svg_line_chart: series size mismatch");

    double max_v = 0.0;
    for (const auto& s : series)
        for (double v : s.values) max_v = std::max(max_v, v);
    if (max_v <= 0.0) max_v = 1.0;
    const double min_x = xs.empty() ? 0.0 : *std::min_element(xs.begin(), xs.end());
    const double max_x = xs.empty() ? 1.0 : *std::max_element(xs.begin(), xs.end());
    const double span_x = max_x - min_x > 0 ? max_x - min_x : 1.0;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write " + path.string());
    svg_header(os, title);
    axis_labels(os, x_label, y_label);
    legend(os, series);

    const double plot_w = chart_w - margin_l - margin_r;
    const double plot_h = chart_h - margin_t - margin_b;
    auto px = [&](double x) { return margin_l + (x - min_x) / span_x * plot_w; };
    auto py = [&](double v) { return margin_t + plot_h - v / max_v * plot_h; };

    os << "<line x1=\"" << margin_l << "\" y1=\"" << margin_t + plot_h << "\" x2=\""
       << chart_w - margin_r << "\" y2=\"" << margin_t + plot_h
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << margin_l - 6 << "\" y=\"" << margin_t + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << num(max_v)
       << "</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        os << "<polyline fill=\"none\" stroke=\"" << palette(i) << "\" stroke-width=\"2\" "
              "points=\"";
        for (std::size_t k = 0; k < xs.size(); ++k)
            os << num(px(xs[k])) << "," << num(py(series[i].values[k])) << " ";
        os << "\" data-series=\"" << series[i].name << "\"/>\n";
        for (std::size_t k = 0; k < xs.size(); ++k)
            os << "<circle cx=\"" << num(px(xs[k])) << "\" cy=\"" << num(py(series[i].values[k]))
               << "\" r=\"3\" fill=\"" << palette(i) << "\" data-series=\"" << series[i].name
               << "\" data-x=\"" << num_exact(xs[k]) << "\" data-value=\""
               << num_exact(series[i].values[k]) << "\"/>\n";
    }
    for (std::size_t k = 0; k < xs.size(); ++k)
        os << "<text x=\"" << num(px(xs[k])) << "\" y=\"" << margin_t + plot_h + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
           << num(xs[k]) << "</text>\n";
    os << "</svg>\n";
}

} // namespace sparsewatt
