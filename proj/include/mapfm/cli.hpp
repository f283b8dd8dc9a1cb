#pragma once

// `mapfm` subcommands: gen, train, eval, ablate, plot.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace mapfm {

int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Loss curves (log scale) and AP bars; data is also written as JSON beside the SVG.
std::string loss_curve_svg(const nlohmann::json& series);
std::string ap_bar_svg(const nlohmann::json& reports);

}  // namespace mapfm
