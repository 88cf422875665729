#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "sdm/error.hpp"
#include "sdm/types.hpp"

namespace sdm {

/// Scatter-plot grid. Panels fill rows left to right; every panel shares one
/// viewport so positions are comparable across the grid.
struct PlotLayout {
    int cols = 0; ///< 0 = all panels in one row
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::string title;
    double panel_px = 240.0;
    double marker_px = 2.0;
    double margin = 0.05; ///< fraction of the data range added on each side
};

struct Viewport {
    double x0, x1, y0, y1;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string escape_xml(const std::string& s) {
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

} // namespace detail

inline Viewport shared_viewport(const std::vector<PointBatch>& panels, double margin) {
    double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    bool first = true;
    for (const auto& p : panels) {
        if (p.rows() == 0) throw ArgumentError("plot: empty point set");
        if (p.cols() != 2) throw ArgumentError("plot: points must be 2-D");
        if (!p.allFinite()) throw NumericError("plot: non-finite coordinates");
        const double px0 = p.col(0).minCoeff(), px1 = p.col(0).maxCoeff();
        const double py0 = p.col(1).minCoeff(), py1 = p.col(1).maxCoeff();
        if (first) {
            x0 = px0, x1 = px1, y0 = py0, y1 = py1;
            first = false;
        } else {
            x0 = std::min(x0, px0), x1 = std::max(x1, px1);
            y0 = std::min(y0, py0), y1 = std::max(y1, py1);
        }
    }
    if (first) throw ArgumentError("plot: nothing to draw");
    const double dx = x1 > x0 ? x1 - x0 : 1.0;
    const double dy = y1 > y0 ? y1 - y0 : 1.0;
    return {x0 - margin * dx, x1 + margin * dx, y0 - margin * dy, y1 + margin * dy};
}

inline std::string render_svg(const std::vector<PointBatch>& panels, const PlotLayout& layout = {}) {
    const Viewport vp = shared_viewport(panels, layout.margin);
    const int n = static_cast<int>(panels.size());
    const int cols = layout.cols > 0 ? layout.cols : n;
    const int rows = (n + cols - 1) / cols;
    if (!layout.row_labels.empty() && static_cast<int>(layout.row_labels.size()) != rows)
        throw ArgumentError("plot: " + std::to_string(layout.row_labels.size()) + " row labels for " +
                            std::to_string(rows) + " rows");
    if (!layout.col_labels.empty() && static_cast<int>(layout.col_labels.size()) != cols)
        throw ArgumentError("plot: " + std::to_string(layout.col_labels.size()) + " column labels for " +
                            std::to_string(cols) + " columns");

    const double gap = 8.0;
    const double left = layout.row_labels.empty() ? gap : 72.0;
    double top = gap;
    if (!layout.title.empty()) top += 24.0;
    if (!layout.col_labels.empty()) top += 20.0;
    const double ps = layout.panel_px;
    const double width = left + cols * (ps + gap);
    const double height = top + rows * (ps + gap);
    const double r = layout.marker_px / 2.0;

    using detail::fmt;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
                      fmt(height) + "\" viewBox=\"0 0 " + fmt(width) + " " + fmt(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<g font-family=\"sans-serif\" font-size=\"13\" fill=\"black\">\n";
    if (!layout.title.empty())
        svg += "<text x=\"" + fmt(width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" +
               detail::escape_xml(layout.title) + "</text>\n";
    for (int c = 0; c < static_cast<int>(layout.col_labels.size()); ++c)
        svg += "<text x=\"" + fmt(left + c * (ps + gap) + ps / 2) + "\" y=\"" + fmt(top - 6) +
               "\" text-anchor=\"middle\">" + detail::escape_xml(layout.col_labels[static_cast<std::size_t>(c)]) +
               "</text>\n";
    for (int row = 0; row < static_cast<int>(layout.row_labels.size()); ++row)
        svg += "<text x=\"" + fmt(left - 8) + "\" y=\"" + fmt(top + row * (ps + gap) + ps / 2) +
               "\" text-anchor=\"end\" dominant-baseline=\"middle\">" +
               detail::escape_xml(layout.row_labels[static_cast<std::size_t>(row)]) + "</text>\n";
    svg += "</g>\n";

    for (int i = 0; i < n; ++i) {
        const double ox = left + (i % cols) * (ps + gap);
        const double oy = top + (i / cols) * (ps + gap);
        svg += "<g>\n<rect x=\"" + fmt(ox) + "\" y=\"" + fmt(oy) + "\" width=\"" + fmt(ps) + "\" height=\"" +
               fmt(ps) + "\" fill=\"none\" stroke=\"#999\"/>\n";
        const auto& p = panels[static_cast<std::size_t>(i)];
        for (Eigen::Index k = 0; k < p.rows(); ++k) {
            const double sx = ox + (p(k, 0) - vp.x0) / (vp.x1 - vp.x0) * ps;
            const double sy = oy + (vp.y1 - p(k, 1)) / (vp.y1 - vp.y0) * ps;
            svg += "<circle cx=\"" + fmt(sx) + "\" cy=\"" + fmt(sy) + "\" r=\"" + fmt(r) + "\" fill=\"#1f5fa8\"/>\n";
        }
        svg += "</g>\n";
    }
    return svg + "</svg>\n";
}

inline void write_svg(const std::string& path, const std::string& svg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << svg;
    if (!out) throw IoError("failed writing '" + path + "'");
}

} // namespace sdm
