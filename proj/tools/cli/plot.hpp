#pragma once

#include <string>

#include "simofdm/evaluator.hpp"

namespace simofdm::cli {

/// Log-scale BER against the report axis, one series per mode ("sim",
/// "dpsim"), aggregate rows only. Skipped points are left out; a zero BER is
/// drawn as a hollow marker on the lower axis edge. Output depends only on
/// the report contents.
///
/// Throws ConfigError when the report has no plottable point.
std::string render_svg(const evaluator::BerReport& report, const std::string& title);

}  // namespace simofdm::cli
