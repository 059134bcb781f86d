#include "vitbis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "vitbis/tensor.hpp"

namespace vitbis {

namespace {

using i64 = std::int64_t;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Lower envelope of parabolas f[q] + w2*(x-q)^2 (Felzenszwalb &
// Huttenlocher distance transform). Infinite inputs are skipped so the
// envelope arithmetic never forms inf - inf.
void edt_1d(const std::vector<double>& f, i64 n, double w2,
            std::vector<double>& out) {
  std::vector<i64> site;
  std::vector<double> boundary;
  site.reserve(static_cast<std::size_t>(n));
  boundary.reserve(static_cast<std::size_t>(n));
  for (i64 q = 0; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == kInf) continue;
    double s = -kInf;
    while (!site.empty()) {
      const i64 p = site.back();
      s = ((f[static_cast<std::size_t>(q)] + w2 * q * q) -
           (f[static_cast<std::size_t>(p)] + w2 * p * p)) /
          (2.0 * w2 * (q - p));
      if (s <= boundary.back()) {
        site.pop_back();
        boundary.pop_back();
      } else {
        break;
      }
    }
    boundary.push_back(site.empty() ? -kInf : s);
    site.push_back(q);
  }
  if (site.empty()) {
    std::fill_n(out.begin(), n, kInf);
    return;
  }
  std::size_t k = 0;
  for (i64 x = 0; x < n; ++x) {
    while (k + 1 < site.size() && boundary[k + 1] < x) ++k;
    const i64 p = site[k];
    out[static_cast<std::size_t>(x)] =
        f[static_cast<std::size_t>(p)] + w2 * (x - p) * (x - p);
  }
}

// Exact squared Euclidean distance to the marked set, anisotropic spacing.
std::vector<double> squared_edt(const std::vector<char>& in_set, i64 rows,
                                i64 cols, double sr, double sc) {
  std::vector<double> d(static_cast<std::size_t>(rows * cols));
  const i64 m = std::max(rows, cols);
  std::vector<double> f(static_cast<std::size_t>(m)), o(static_cast<std::size_t>(m));
  for (i64 r = 0; r < rows; ++r) {
    for (i64 c = 0; c < cols; ++c) {
      f[static_cast<std::size_t>(c)] = in_set[static_cast<std::size_t>(r * cols + c)] ? 0.0 : kInf;
    }
    edt_1d(f, cols, sc * sc, o);
    for (i64 c = 0; c < cols; ++c) d[static_cast<std::size_t>(r * cols + c)] = o[static_cast<std::size_t>(c)];
  }
  for (i64 c = 0; c < cols; ++c) {
    for (i64 r = 0; r < rows; ++r) f[static_cast<std::size_t>(r)] = d[static_cast<std::size_t>(r * cols + c)];
    edt_1d(f, rows, sr * sr, o);
    for (i64 r = 0; r < rows; ++r) d[static_cast<std::size_t>(r * cols + c)] = o[static_cast<std::size_t>(r)];
  }
  return d;
}

void check_compatible(const LabelMask& a, const LabelMask& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ShapeMismatch("mask dimensions differ");
  }
  if (a.spacing_r != b.spacing_r || a.spacing_c != b.spacing_c) {
    throw ShapeMismatch("mask spacings differ");
  }
}

// Nearest-rank 95th percentile: the ceil(0.95*n)-th smallest value.
double quantile95(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(v.size())));
  return v[k - 1];
}

std::string fmt6(double v) {
  if (!metric_defined(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

LabelMask LabelMask::filled(std::int64_t rows, std::int64_t cols, std::int32_t v,
                            double sr, double sc) {
  LabelMask m;
  m.rows = rows;
  m.cols = cols;
  m.labels.assign(static_cast<std::size_t>(rows * cols), v);
  m.spacing_r = sr;
  m.spacing_c = sc;
  return m;
}

double dice_score(const LabelMask& pred, const LabelMask& gt, std::int32_t cls) {
  check_compatible(pred, gt);
  i64 np = 0, ng = 0, ni = 0;
  const std::size_t n = pred.labels.size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool p = pred.labels[i] == cls;
    const bool g = gt.labels[i] == cls;
    np += p;
    ng += g;
    ni += p && g;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(ni) / static_cast<double>(np + ng);
}

double hd95(const LabelMask& pred, const LabelMask& gt, std::int32_t cls) {
  check_compatible(pred, gt);
  const i64 rows = pred.rows, cols = pred.cols;
  std::vector<char> pset(static_cast<std::size_t>(rows * cols));
  std::vector<char> gset(static_cast<std::size_t>(rows * cols));
  i64 np = 0, ng = 0;
  for (std::size_t i = 0; i < pset.size(); ++i) {
    pset[i] = pred.labels[i] == cls;
    gset[i] = gt.labels[i] == cls;
    np += pset[i];
    ng += gset[i];
  }
  if (np == 0 || ng == 0) return kNaN;

  const auto dg = squared_edt(gset, rows, cols, pred.spacing_r, pred.spacing_c);
  const auto dp = squared_edt(pset, rows, cols, pred.spacing_r, pred.spacing_c);
  std::vector<double> pg, gp;
  pg.reserve(static_cast<std::size_t>(np));
  gp.reserve(static_cast<std::size_t>(ng));
  for (std::size_t i = 0; i < pset.size(); ++i) {
    if (pset[i]) pg.push_back(std::sqrt(dg[i]));
    if (gset[i]) gp.push_back(std::sqrt(dp[i]));
  }
  return std::max(quantile95(pg), quantile95(gp));
}

MetricReport evaluate(const std::vector<LabelMask>& pred,
                      const std::vector<LabelMask>& gt, std::int64_t num_classes) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw ShapeMismatch("evaluate needs equally many predictions and truths");
  }
  if (num_classes < 2) throw ConfigMismatch("need at least two classes");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    check_compatible(pred[i], gt[i]);
    for (std::int32_t v : pred[i].labels) {
      if (v < 0 || v >= num_classes) throw DomainError("prediction label out of range");
    }
    for (std::int32_t v : gt[i].labels) {
      if (v < 0 || v >= num_classes) throw DomainError("truth label out of range");
    }
  }

  MetricReport r;
  r.num_classes = num_classes;
  r.num_images = static_cast<i64>(pred.size());
  double dice_total = 0.0, hd_total = 0.0;
  i64 hd_classes = 0;
  for (std::int32_t cls = 1; cls < num_classes; ++cls) {
    double dsum = 0.0, hsum = 0.0;
    i64 hcount = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      dsum += dice_score(pred[i], gt[i], cls);
      const double h = hd95(pred[i], gt[i], cls);
      if (metric_defined(h)) {
        hsum += h;
        ++hcount;
      }
    }
    const double dmean = dsum / static_cast<double>(pred.size());
    const double hmean = hcount > 0 ? hsum / static_cast<double>(hcount) : kNaN;
    r.per_class_dice.push_back(dmean);
    r.per_class_hd95.push_back(hmean);
    r.hd_excluded.push_back(static_cast<i64>(pred.size()) - hcount);
    dice_total += dmean;
    if (hcount > 0) {
      hd_total += hmean;
      ++hd_classes;
    }
  }
  r.mean_dice = dice_total / static_cast<double>(num_classes - 1);
  r.mean_hd95 = hd_classes > 0 ? hd_total / static_cast<double>(hd_classes) : kNaN;
  return r;
}

std::string report_csv(const MetricReport& r) {
  std::ostringstream os;
  os << "class,dice,hd95_mm\n";
  for (std::size_t i = 0; i < r.per_class_dice.size(); ++i) {
    os << (i + 1) << "," << fmt6(r.per_class_dice[i]) << ","
       << fmt6(r.per_class_hd95[i]) << "\n";
  }
  os << "mean," << fmt6(r.mean_dice) << "," << fmt6(r.mean_hd95) << "\n";
  return os.str();
}

MetricReport parse_report_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "class,dice,hd95_mm") {
    throw CorruptFile("metric CSV header missing");
  }
  MetricReport r;
  bool saw_mean = false;
  auto parse_value = [](const std::string& s) {
    return s == "-" ? kNaN : std::stod(s);
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw CorruptFile("metric CSV row malformed: " + line);
    }
    const std::string key = line.substr(0, c1);
    const double dice = parse_value(line.substr(c1 + 1, c2 - c1 - 1));
    const double hd = parse_value(line.substr(c2 + 1));
    if (key == "mean") {
      r.mean_dice = dice;
      r.mean_hd95 = hd;
      saw_mean = true;
    } else {
      if (saw_mean) throw CorruptFile("metric CSV rows after mean");
      r.per_class_dice.push_back(dice);
      r.per_class_hd95.push_back(hd);
      r.hd_excluded.push_back(0);
    }
  }
  if (!saw_mean || r.per_class_dice.empty()) {
    throw CorruptFile("metric CSV incomplete");
  }
  r.num_classes = static_cast<i64>(r.per_class_dice.size()) + 1;
  return r;
}

std::string report_table(const MetricReport& r) {
  std::ostringstream os;
  os << "class      dice        hd95_mm\n";
  char buf[128];
  for (std::size_t i = 0; i < r.per_class_dice.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%-10zu %-11s %s\n", i + 1,
                  fmt6(r.per_class_dice[i]).c_str(),
                  fmt6(r.per_class_hd95[i]).c_str());
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "%-10s %-11s %s\n", "mean",
                fmt6(r.mean_dice).c_str(), fmt6(r.mean_hd95).c_str());
  os << buf;
  i64 excluded = 0;
  for (i64 e : r.hd_excluded) excluded += e;
  if (excluded > 0) {
    os << "note: hd95 means exclude " << excluded
       << " image evaluation(s) with an empty region\n";
  }
  return os.str();
}

}  // namespace vitbis
