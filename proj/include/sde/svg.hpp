#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "sde/grid.hpp"

namespace sde {

// Dependency-free SVG emission for the three plot shapes the commands
// produce. Output is deterministic: fixed geometry, fixed palettes, and
// fixed-precision coordinates.

// One rect per cell (class="cell"), age on the vertical axis with the
// youngest row on top, year horizontal. Undefined (NaN) cells are grey. A
// vertical 9-step legend carries min/mid/max ticks.
void write_heatmap_svg(const std::string& path, const DomainGrid& grid,
                       const Eigen::ArrayXd& value, const std::string& title);

// Year profiles at fixed ages with pointwise interval bands. Cells with NaN
// break the lines into runs.
void write_age_slices_svg(const std::string& path, const DomainGrid& grid,
                          const Eigen::ArrayXd& mean, const Eigen::ArrayXd& lo,
                          const Eigen::ArrayXd& hi, const std::vector<int>& ages,
                          const std::string& title);

// Same plot with a dashed divider in front of the first forecast year and
// the forecast region labeled.
void write_forecast_svg(const std::string& path, const DomainGrid& grid,
                        const Eigen::ArrayXd& mean, const Eigen::ArrayXd& lo,
                        const Eigen::ArrayXd& hi, const std::vector<int>& ages,
                        int first_forecast_year, const std::string& title);

}  // namespace sde
