#pragma once

#include <string>
#include <vector>

#include "sparse_wsi/metrics.hpp"

namespace sparse_wsi::cli {

struct PlotSeries {
    std::string label;
    CostCurve curve;
};

/// One panel per metric, mean curves with a +-1 SD band, one colour per series label.
std::string plot_curves_svg(const std::vector<PlotSeries>& series);

}  // namespace sparse_wsi::cli
