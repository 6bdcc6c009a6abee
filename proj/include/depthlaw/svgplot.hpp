#pragma once

#include <cstdio>
#include <map>
#include <string>

#include "depthlaw/sweep.hpp"

namespace depthlaw {

// Self-contained log-log scatter + fit-line drawing. Every coordinate is
// formatted through one fixed printf spec, so identical inputs give
// byte-identical documents. Fit lines are the only <line> elements; axes and
// error bars are paths.

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace detail

struct SvgSeries {
    std::string label;
    PowerLawFit fit;
};

inline std::string emit_svg_plot(const std::vector<SvgSeries>& series) {
    if (series.empty() || series[0].fit.points.empty())
        throw DomainError("svg: nothing to plot");
    const int width = 640, height = 480;
    const double ml = 70, mr = 20, mt = 24, mb = 56;

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (const auto& p : s.fit.points) {
            const double x = std::log10(double(p.depth));
            const double half =
                1.96 * std::sqrt(p.var_log10_eta / std::max(p.n_seeds, 1));
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, p.mean_log10_eta - half);
            ymax = std::max(ymax, p.mean_log10_eta + half);
        }
    const double xpad = 0.06 * std::max(xmax - xmin, 0.2);
    const double ypad = 0.08 * std::max(ymax - ymin, 0.2);
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;
    auto X = [&](double lx) {
        return ml + (lx - xmin) / (xmax - xmin) * (width - ml - mr);
    };
    auto Y = [&](double ly) {
        return height - mb - (ly - ymin) / (ymax - ymin) * (height - mt - mb);
    };

    static const char* palette[] = {"#1f6fb2", "#c44e52", "#46a06b",
                                    "#8172b2", "#937860"};
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" "
           "height=\"480\" viewBox=\"0 0 640 480\">\n";
    svg += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
    // axes
    svg += "<path d=\"M " + detail::fmt(ml) + " " + detail::fmt(mt) + " L " +
           detail::fmt(ml) + " " + detail::fmt(height - mb) + " L " +
           detail::fmt(width - mr) + " " + detail::fmt(height - mb) +
           "\" stroke=\"black\" fill=\"none\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + detail::fmt((ml + width - mr) / 2) + "\" y=\"" +
           detail::fmt(height - 14) +
           "\" font-family=\"sans-serif\" font-size=\"14\" "
           "text-anchor=\"middle\">log10 depth L</text>\n";
    svg += "<text x=\"18\" y=\"" + detail::fmt((mt + height - mb) / 2) +
           "\" font-family=\"sans-serif\" font-size=\"14\" "
           "text-anchor=\"middle\" transform=\"rotate(-90 18 " +
           detail::fmt((mt + height - mb) / 2) +
           ")\">log10 eta*</text>\n";

    int color = 0;
    double label_y = mt + 16;
    for (const auto& s : series) {
        const char* c = palette[color % 5];
        ++color;
        for (const auto& p : s.fit.points) {
            const double x = X(std::log10(double(p.depth)));
            const double y = Y(p.mean_log10_eta);
            const double half =
                1.96 * std::sqrt(p.var_log10_eta / std::max(p.n_seeds, 1));
            const double y0 = Y(p.mean_log10_eta - half);
            const double y1 = Y(p.mean_log10_eta + half);
            svg += "<path d=\"M " + detail::fmt(x) + " " + detail::fmt(y0) +
                   " L " + detail::fmt(x) + " " + detail::fmt(y1) +
                   "\" stroke=\"" + c + "\" stroke-width=\"1\"/>\n";
            svg += "<circle cx=\"" + detail::fmt(x) + "\" cy=\"" +
                   detail::fmt(y) + "\" r=\"3.5\" fill=\"" + c + "\"/>\n";
        }
        // fit line across the plotted range
        const double yl = s.fit.beta0 + s.fit.alpha * xmin;
        const double yr = s.fit.beta0 + s.fit.alpha * xmax;
        svg += "<line x1=\"" + detail::fmt(X(xmin)) + "\" y1=\"" +
               detail::fmt(Y(yl)) + "\" x2=\"" + detail::fmt(X(xmax)) +
               "\" y2=\"" + detail::fmt(Y(yr)) + "\" stroke=\"" + c +
               "\" stroke-width=\"1.5\" stroke-dasharray=\"6 3\"/>\n";
        char slope[64];
        std::snprintf(slope, sizeof slope, "%s: slope = %.3f",
                      s.label.c_str(), s.fit.alpha);
        svg += "<text x=\"" + detail::fmt(width - mr - 8) + "\" y=\"" +
               detail::fmt(label_y) +
               "\" font-family=\"sans-serif\" font-size=\"13\" fill=\"" + c +
               "\" text-anchor=\"end\">" + slope + "</text>\n";
        label_y += 17;
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace depthlaw
