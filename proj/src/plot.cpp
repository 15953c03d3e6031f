#include "jointmotion/plot.hpp"

#include "jointmotion/errors.hpp"
#include "jointmotion/scene_io.hpp"
#include "jointmotion/textio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace jm {

namespace {

using textio::format_double;

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;

const char* const kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

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

// Fixed short labels for ticks; the exact values live in the table.
std::string tick_label(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void widen() {
        if (hi - lo < 1e-12) {
            lo -= 0.5;
            hi += 0.5;
        }
    }
};

double metric_value(const ValidationRow& r, const std::string& metric) {
    if (metric == "min_ade") return r.min_ade;
    if (metric == "min_fde") return r.min_fde;
    if (metric == "miss_rate") return r.miss_rate;
    if (metric == "map_simplified") return r.map_simplified;
    throw std::invalid_argument("unknown validation metric '" + metric + "'");
}

double PretrainStep::*loss_field(const std::string& column) {
    if (column == "L_A") return &PretrainStep::l_a;
    if (column == "L_L") return &PretrainStep::l_l;
    if (column == "L_TL") return &PretrainStep::l_tl;
    if (column == "L_MPM") return &PretrainStep::l_mpm;
    if (column == "L_CME") return &PretrainStep::l_cme;
    if (column == "L_JointMotion") return &PretrainStep::l_joint;
    throw std::invalid_argument("unknown pretraining loss column '" + column + "'");
}

} // namespace

std::string render_svg(const LinePlot& plot) {
    Range xr, yr;
    size_t points = 0;
    for (const auto& s : plot.series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("render_svg: series " + s.name + " has x/y length mismatch");
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xr.add(s.x[i]);
            yr.add(s.y[i]);
            ++points;
        }
    }
    if (points == 0) throw std::invalid_argument("render_svg: nothing to plot for '" + plot.title + "'");
    xr.widen();
    yr.widen();

    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
    auto py = [&](double y) { return kTop + (yr.hi - y) / (yr.hi - yr.lo) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(plot.title)
       << "</text>\n";
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = xr.lo + (xr.hi - xr.lo) * t / 4.0, fy = yr.lo + (yr.hi - yr.lo) * t / 4.0;
        os << "<text x=\"" << px(fx) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << tick_label(fx)
           << "</text>\n";
        os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << tick_label(fy)
           << "</text>\n";
        os << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + pw << "\" y1=\"" << py(fy) << "\" y2=\"" << py(fy)
           << "\" stroke=\"#dddddd\"/>\n";
    }
    os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
       << escape(plot.x_label) << "</text>\n";
    os << "<text transform=\"translate(16," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << escape(plot.y_label) << "</text>\n";

    for (size_t si = 0; si < plot.series.size(); ++si) {
        const auto& s = plot.series[si];
        const char* colour = kColours[si % std::size(kColours)];
        os << "<polyline data-series=\"" << escape(s.name) << "\" fill=\"none\" stroke=\"" << colour
           << "\" stroke-width=\"1.5\" points=\"";
        bool first = true;
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            os << (first ? "" : " ") << px(s.x[i]) << ',' << py(s.y[i]);
            first = false;
        }
        os << "\"/>\n";
        const double ly = kTop + 14 + 18 * static_cast<double>(si);
        os << "<line x1=\"" << kLeft + pw + 10 << "\" x2=\"" << kLeft + pw + 30 << "\" y1=\"" << ly << "\" y2=\"" << ly
           << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << kLeft + pw + 34 << "\" y=\"" << ly + 4 << "\">" << escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string plot_table_csv(const LinePlot& plot) {
    std::string out = "series," + plot.x_label + "," + plot.y_label + "\n";
    for (const auto& s : plot.series)
        for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            out += s.name + "," + format_double(s.x[i]) + "," + format_double(s.y[i]) + "\n";
        }
    return out;
}

LinePlot modality_loss_plot(const std::vector<NamedRecord>& runs, const std::string& column) {
    const auto field = loss_field(column);
    LinePlot plot{"Pre-training loss " + column, "step", column, {}};
    for (const auto& r : runs) {
        if (r.record.kind != "pretrain") continue;
        const bool logged = column == "L_CME" ? r.record.has_cme : (column == "L_JointMotion" || r.record.has_mpm);
        if (!logged) continue;
        Series s{r.name, {}, {}};
        for (const auto& st : r.record.pretrain) {
            s.x.push_back(st.step);
            s.y.push_back(st.*field);
        }
        plot.series.push_back(std::move(s));
    }
    if (plot.series.empty()) throw DataError("no pretraining record logs " + column);
    return plot;
}

LinePlot metric_over_time_plot(const std::vector<NamedRecord>& runs, const std::string& metric) {
    LinePlot plot{"Validation " + metric + " over training time", "wall_time_s", metric, {}};
    for (const auto& r : runs) {
        if (r.record.validation.empty()) continue;
        Series s{r.name, {}, {}};
        for (const auto& v : r.record.validation) {
            s.x.push_back(v.wall_time);
            s.y.push_back(metric_value(v, metric));
        }
        plot.series.push_back(std::move(s));
    }
    if (plot.series.empty()) throw DataError("no record has validation rows for " + metric);
    return plot;
}

std::vector<std::filesystem::path> write_plot(const std::filesystem::path& dir, const std::string& stem,
                                              const LinePlot& plot) {
    std::filesystem::create_directories(dir);
    const auto svg = dir / (stem + ".svg");
    const auto csv = dir / (stem + ".csv");
    write_text_file(svg, render_svg(plot));
    write_text_file(csv, plot_table_csv(plot));
    return {svg, csv};
}

} // namespace jm
