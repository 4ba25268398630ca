#pragma once

#include <string>
#include <vector>

#include "cp2/compose.hpp"
#include "cp2/image.hpp"

namespace cp2 {

struct IoUReport;

// One row per composed pair: foreground view, mask, composed query image,
// composed key image, key mask. Upscaled for readability.
void write_compose_preview(const std::string& path, const std::vector<ComposedPair>& pairs);

void write_iou_bar_chart(const std::string& path, const IoUReport& report);

// Loss-vs-step polyline rendered from a metrics.csv file.
void write_training_curve(const std::string& path, const std::string& metrics_csv);

}  // namespace cp2
