#pragma once

// Static figure output: SVG line plots, each written next to the CSV table
// it was drawn from. Every plotted point is one table row.

#include "jointmotion/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace jm {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
};

// One <polyline> per series with a data-series attribute; points are listed
// in series order. Non-finite values are skipped. Throws std::invalid_argument
// when there is nothing to draw or x and y lengths differ.
std::string render_svg(const LinePlot& plot);

// Long format: series,x,y with one row per point, in the same order as the
// SVG points.
std::string plot_table_csv(const LinePlot& plot);

struct NamedRecord {
    std::string name;
    RunRecord record;
};

// Per-step curve of one per-modality MPM loss ("L_A", "L_L" or "L_TL") for
// every run that logged it.
LinePlot modality_loss_plot(const std::vector<NamedRecord>& runs, const std::string& column);

// Validation metric ("min_ade", "min_fde", "miss_rate" or "map_simplified")
// against wall time.
LinePlot metric_over_time_plot(const std::vector<NamedRecord>& runs, const std::string& metric);

// Writes <stem>.svg and <stem>.csv into dir and returns the two paths.
std::vector<std::filesystem::path> write_plot(const std::filesystem::path& dir, const std::string& stem,
                                              const LinePlot& plot);

} // namespace jm
