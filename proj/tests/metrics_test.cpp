#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "vitbis/metrics.hpp"
#include "vitbis/rng.hpp"

using namespace vitbis;
using testsupport::rand_mask;
using i64 = std::int64_t;

namespace {

LabelMask from_rows(const std::vector<std::string>& rows, double sr = 1.0,
                    double sc = 1.0) {
  LabelMask m = LabelMask::filled(static_cast<i64>(rows.size()),
                                  static_cast<i64>(rows[0].size()), 0, sr, sc);
  for (i64 r = 0; r < m.rows; ++r) {
    for (i64 c = 0; c < m.cols; ++c) {
      m.at(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] - '0';
    }
  }
  return m;
}

LabelMask hflip(const LabelMask& m) {
  LabelMask out = m;
  for (i64 r = 0; r < m.rows; ++r) {
    for (i64 c = 0; c < m.cols; ++c) out.at(r, m.cols - 1 - c) = m.at(r, c);
  }
  return out;
}

}  // namespace

TEST_CASE("overlap score on hand-built masks") {
  LabelMask a = from_rows({"110", "100", "000"});
  CHECK(dice_score(a, a, 1) == 1.0);

  LabelMask b = from_rows({"000", "011", "000"});
  CHECK(dice_score(a, b, 1) == 0.0);  // disjoint regions

  // |P|=6, |G|=4, |P^G|=3  ->  2*3/(6+4).
  LabelMask p = from_rows({"1111", "1100", "0000"});
  LabelMask g = from_rows({"1100", "0110", "0000"});
  CHECK(dice_score(p, g, 1) == 0.6);

  LabelMask empty = LabelMask::filled(3, 3);
  CHECK(dice_score(empty, empty, 1) == 1.0);  // both empty
  CHECK(dice_score(a, empty, 1) == 0.0);      // exactly one empty
  CHECK(dice_score(empty, a, 1) == 0.0);
}

TEST_CASE("surface distance on hand-built masks") {
  LabelMask a = from_rows({"110", "100", "000"});
  CHECK(hd95(a, a, 1) == 0.0);

  // Two single pixels three columns apart.
  LabelMask p = from_rows({"10000"});
  LabelMask g = from_rows({"00010"});
  CHECK(hd95(p, g, 1) == 3.0);
  CHECK(hd95(g, p, 1) == 3.0);

  // Column spacing scales the same geometry to millimetres.
  LabelMask ps = from_rows({"10000"}, 1.0, 0.5);
  LabelMask gs = from_rows({"00010"}, 1.0, 0.5);
  CHECK(hd95(ps, gs, 1) == 1.5);

  LabelMask empty = LabelMask::filled(1, 5);
  CHECK(!metric_defined(hd95(p, empty, 1)));
  CHECK(!metric_defined(hd95(empty, p, 1)));
  CHECK(!metric_defined(hd95(empty, empty, 1)));
  CHECK(metric_defined(hd95(p, g, 1)));
}

TEST_CASE("distance transform path matches the all-pairs computation") {
  SplitMix64 rng(60);
  int defined_seen = 0;
  for (int seed = 0; seed < 50; ++seed) {
    const i64 rows = 1 + static_cast<i64>(rng.uniform_int(16));
    const i64 cols = 1 + static_cast<i64>(rng.uniform_int(16));
    const i64 classes = 2 + static_cast<i64>(rng.uniform_int(3));
    const double fg = 0.1 + 0.8 * rng.uniform();
    LabelMask p = rand_mask(rng, rows, cols, classes, fg);
    LabelMask g = rand_mask(rng, rows, cols, classes, fg);
    for (i64 cls = 1; cls < classes; ++cls) {
      INFO("seed ", seed, " rows ", rows, " cols ", cols, " class ", cls);
      // Unit spacing keeps every intermediate an exact integer, so the two
      // routes must agree to the last bit, not merely to a tolerance.
      CHECK(dice_score(p, g, static_cast<std::int32_t>(cls)) ==
            testsupport::ref_dice_score(p, g, static_cast<std::int32_t>(cls)));
      const double fast = hd95(p, g, static_cast<std::int32_t>(cls));
      const double slow = testsupport::ref_hd95(p, g, static_cast<std::int32_t>(cls));
      CHECK(metric_defined(fast) == metric_defined(slow));
      if (metric_defined(fast)) {
        CHECK(fast == slow);
        ++defined_seen;
      }
    }
  }
  CHECK(defined_seen > 50);  // the sweep actually exercised the metric

  // Anisotropic spacing leaves exact-integer territory; compare with a
  // tolerance there.
  for (int seed = 0; seed < 10; ++seed) {
    LabelMask p = rand_mask(rng, 9, 7, 2, 0.4);
    LabelMask g = rand_mask(rng, 9, 7, 2, 0.4);
    p.spacing_r = g.spacing_r = 0.7;
    p.spacing_c = g.spacing_c = 1.3;
    const double fast = hd95(p, g, 1);
    const double slow = testsupport::ref_hd95(p, g, 1);
    if (metric_defined(fast)) {
      CHECK(testsupport::rel_err(fast, slow) < 1e-12);
    } else {
      CHECK(!metric_defined(slow));
    }
  }
}

TEST_CASE("metric invariances") {
  SplitMix64 rng(61);
  for (int seed = 0; seed < 10; ++seed) {
    LabelMask p = rand_mask(rng, 8, 11, 3, 0.5);
    LabelMask g = rand_mask(rng, 8, 11, 3, 0.5);
    const double pg = hd95(p, g, 1);
    const double gp = hd95(g, p, 1);
    if (metric_defined(pg)) {
      CHECK(pg == gp);  // symmetric by construction
      CHECK(pg >= 0.0);
      // The 95th percentile never exceeds the worst distance.
      auto ab = testsupport::ref_directed_distances(p, g, 1);
      auto ba = testsupport::ref_directed_distances(g, p, 1);
      double worst = 0.0;
      for (double d : ab) worst = std::max(worst, d);
      for (double d : ba) worst = std::max(worst, d);
      CHECK(pg <= worst + 1e-12);
    }
    // Mirroring both masks together preserves all pairwise geometry.
    CHECK(dice_score(hflip(p), hflip(g), 1) == dice_score(p, g, 1));
    const double flipped = hd95(hflip(p), hflip(g), 1);
    if (metric_defined(pg)) {
      CHECK(flipped == pg);
    } else {
      CHECK(!metric_defined(flipped));
    }
  }
}

TEST_CASE("argument validation") {
  LabelMask a = LabelMask::filled(3, 3, 1);
  LabelMask b = LabelMask::filled(3, 4, 1);
  CHECK_THROWS_AS(dice_score(a, b, 1), ShapeMismatch);
  CHECK_THROWS_AS(hd95(a, b, 1), ShapeMismatch);
  LabelMask c = LabelMask::filled(3, 3, 1, 1.0, 0.5);
  CHECK_THROWS_AS(dice_score(a, c, 1), ShapeMismatch);
  CHECK_THROWS_AS(evaluate({a}, {a}, 1), ConfigMismatch);
  CHECK_THROWS_AS(evaluate({}, {}, 2), ShapeMismatch);
  CHECK_THROWS_AS(evaluate({a}, {a, a}, 2), ShapeMismatch);
  LabelMask wild = LabelMask::filled(3, 3, 7);
  CHECK_THROWS_AS(evaluate({wild}, {wild}, 2), DomainError);
  CHECK_THROWS_AS(evaluate({LabelMask::filled(3, 3, -1)},
                           {LabelMask::filled(3, 3, 0)}, 2),
                  DomainError);
}

TEST_CASE("batch evaluation with exclusions") {
  // Image A: class 1 partially recovered, class 2 exact.
  LabelMask ga = from_rows({"11000000", "00000000", "00000000", "00000000",
                            "00000000", "00000000", "00000000", "00000002"});
  LabelMask pa = from_rows({"10000000", "00000000", "00000000", "00000000",
                            "00000000", "00000000", "00000000", "00000002"});
  // Image B: class 1 missed entirely, class 2 absent from both masks.
  LabelMask gb = from_rows({"10000000", "00000000", "00000000", "00000000",
                            "00000000", "00000000", "00000000", "00000000"});
  LabelMask pb = LabelMask::filled(8, 8, 0);

  MetricReport r = evaluate({pa, pb}, {ga, gb}, 3);
  CHECK(r.num_classes == 3);
  CHECK(r.num_images == 2);
  REQUIRE(r.per_class_dice.size() == 2);

  // Class 1: dice (2/3 + 0)/2; surface distance defined only on image A,
  // where the stray truth pixel sits one column away.
  CHECK(r.per_class_dice[0] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(r.per_class_hd95[0] == 1.0);
  CHECK(r.hd_excluded[0] == 1);

  // Class 2: exact on A, both-empty on B (counts as 1.0, excluded from hd).
  CHECK(r.per_class_dice[1] == 1.0);
  CHECK(r.per_class_hd95[1] == 0.0);
  CHECK(r.hd_excluded[1] == 1);

  CHECK(r.mean_dice == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(r.mean_hd95 == 0.5);
}

TEST_CASE("classes with no defined distance drop out of the mean") {
  LabelMask g = from_rows({"100", "000", "000"});
  LabelMask p = from_rows({"100", "000", "000"});
  MetricReport r = evaluate({p}, {g}, 3);  // class 2 never appears
  CHECK(r.per_class_dice[1] == 1.0);
  CHECK(!metric_defined(r.per_class_hd95[1]));
  CHECK(r.hd_excluded[1] == 1);
  CHECK(r.mean_hd95 == 0.0);  // only class 1 contributes
  CHECK(r.mean_dice == 1.0);
}

TEST_CASE("report serialization round trip") {
  LabelMask g = from_rows({"110", "000", "002"});
  LabelMask p = from_rows({"100", "000", "002"});
  MetricReport r = evaluate({p}, {g}, 3);
  const std::string csv = report_csv(r);
  CHECK(csv.substr(0, 19) == "class,dice,hd95_mm\n");
  MetricReport back = parse_report_csv(csv);
  CHECK(back.num_classes == r.num_classes);
  CHECK(report_csv(back) == csv);  // byte-for-byte stable

  // An undefined class serializes as "-" and survives the round trip.
  MetricReport nan_case = evaluate({from_rows({"100"})}, {from_rows({"100"})}, 3);
  const std::string csv2 = report_csv(nan_case);
  CHECK(csv2.find(",-") != std::string::npos);
  MetricReport back2 = parse_report_csv(csv2);
  CHECK(!metric_defined(back2.per_class_hd95[1]));
  CHECK(report_csv(back2) == csv2);

  CHECK_THROWS_AS(parse_report_csv("bogus header\n1,0.5,0.5\n"), CorruptFile);
  CHECK_THROWS_AS(parse_report_csv("class,dice,hd95_mm\nmean,0.5,0.5\n1,0.5,0.5\n"),
                  CorruptFile);

  const std::string table = report_table(nan_case);
  CHECK(table.find("class") != std::string::npos);
  CHECK(table.find("mean") != std::string::npos);
  CHECK(table.find("exclude") != std::string::npos);
}
