#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vitbis {

// Dense integer label image with physical pixel spacing in millimetres.
struct LabelMask {
  std::int64_t rows = 0, cols = 0;
  std::vector<std::int32_t> labels;  // row-major
  double spacing_r = 1.0, spacing_c = 1.0;

  static LabelMask filled(std::int64_t rows, std::int64_t cols, std::int32_t v = 0,
                          double sr = 1.0, double sc = 1.0);
  std::int32_t at(std::int64_t r, std::int64_t c) const {
    return labels[static_cast<std::size_t>(r * cols + c)];
  }
  std::int32_t& at(std::int64_t r, std::int64_t c) {
    return labels[static_cast<std::size_t>(r * cols + c)];
  }
};

// Dice overlap of one class: 2|P^G| / (|P|+|G|); 1.0 when both sets are
// empty, 0.0 when exactly one is.
double dice_score(const LabelMask& pred, const LabelMask& gt, std::int32_t cls);

// 95th-percentile symmetric Hausdorff distance of one class in mm, over the
// full pixel regions, with nearest-rank quantiles per direction. Returns NaN
// (the undefined sentinel) when either region is empty.
double hd95(const LabelMask& pred, const LabelMask& gt, std::int32_t cls);

inline bool metric_defined(double v) { return v == v; }

// Per-class means over a batch of images, foreground classes 1..J-1.
// Dice is always defined; hd95 averages only the images where it is
// defined, and hd_excluded counts the rest. A class with no defined image
// gets a NaN mean and drops out of mean_hd95.
struct MetricReport {
  std::int64_t num_classes = 0;  // J
  std::int64_t num_images = 0;
  std::vector<double> per_class_dice;      // J-1 entries, class 1 first
  std::vector<double> per_class_hd95;
  std::vector<std::int64_t> hd_excluded;   // images skipped per class
  double mean_dice = 0.0;
  double mean_hd95 = 0.0;
};

MetricReport evaluate(const std::vector<LabelMask>& pred,
                      const std::vector<LabelMask>& gt, std::int64_t num_classes);

// CSV with header "class,dice,hd95_mm", six decimals, "-" for undefined,
// LF line endings. parse_report_csv inverts it (excluded counts are not
// representable in the CSV and come back as zero).
std::string report_csv(const MetricReport& r);
MetricReport parse_report_csv(const std::string& text);

// Fixed-width text table with a mean row and a footnote for exclusions.
std::string report_table(const MetricReport& r);

}  // namespace vitbis
