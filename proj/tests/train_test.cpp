#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "vitbis/rng.hpp"
#include "vitbis/train.hpp"
#include "vitbis/vtb.hpp"

using namespace vitbis;
using testsupport::bits_equal;
using testsupport::tiny_run_config;
namespace fs = std::filesystem;
using i64 = std::int64_t;

namespace {

std::string fresh_dir(const std::string& tag) {
  const std::string d = "/tmp/vitbis_train_test/" + tag;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<std::uint8_t> slurp(const std::string& path) {
  return read_file_bytes(path);
}

double cell_value(const std::string& s) { return std::stod(s); }

}  // namespace

TEST_CASE("training and evaluation sets") {
  RunConfig cfg = tiny_run_config(19);
  cfg.data.count = 4;
  cfg.eval_images = 3;
  cfg.validate();

  auto train = training_set(cfg);
  auto eval = evaluation_set(cfg);
  REQUIRE(train.size() == 4);
  REQUIRE(eval.size() == 3);

  // The data stream is the run seed shifted into its own stream; images are
  // addressed purely by index, so the two sets are disjoint by construction.
  SyntheticSpec spec = cfg.data;
  spec.seed = cfg.seed + stream::kData;
  for (std::size_t i = 0; i < train.size(); ++i) {
    Sample want = generate_sample(spec, i);
    CHECK(bits_equal(train[i].image.values(), want.image.values()));
  }
  for (std::size_t i = 0; i < eval.size(); ++i) {
    Sample want = generate_sample(spec, 4 + i);
    CHECK(bits_equal(eval[i].image.values(), want.image.values()));
  }

  // With eval_images == 0 evaluation falls back to the raw training images.
  RunConfig fallback = tiny_run_config(19);
  auto eval2 = evaluation_set(fallback);
  auto train2 = training_set(fallback);
  REQUIRE(eval2.size() == train2.size());
  CHECK(bits_equal(eval2[0].image.values(), train2[0].image.values()));

  // When augmentation crops below the raw size, eval images are centre
  // cropped to the model input.
  RunConfig cropped = tiny_run_config(19);
  cropped.data.image_size = 24;
  cropped.augment = AugmentConfig{};
  cropped.augment->crop_size = 16;
  cropped.eval_images = 2;
  SyntheticSpec spec24 = cropped.data;
  spec24.seed = cropped.seed + stream::kData;
  auto eval3 = evaluation_set(cropped);
  REQUIRE(eval3.size() == 2);
  REQUIRE(eval3[0].image.shape == Shape({1, 16, 16}));
  Sample raw = generate_sample(spec24, 2);
  Sample want = crop_pair(raw, 4, 4, 16);  // (24-16)/2 on both axes
  CHECK(bits_equal(eval3[0].image.values(), want.image.values()));
}

TEST_CASE("identical runs produce identical artifacts") {
  RunConfig cfg = tiny_run_config(23);
  cfg.train.checkpoint_interval = 2;

  const std::string da = fresh_dir("det_a"), db = fresh_dir("det_b");
  std::ostringstream log_a, log_b;
  TrainResult ra = run_training(cfg, {da, ""}, log_a);
  TrainResult rb = run_training(cfg, {db, ""}, log_b);

  CHECK(ra.first_step == 1);
  REQUIRE(ra.loss_trace.size() == 4);
  CHECK(bits_equal(ra.loss_trace, rb.loss_trace));
  CHECK(ra.param_count == rb.param_count);
  CHECK(ra.eval_ran);
  CHECK(ra.skips.empty());
  for (double l : ra.loss_trace) CHECK(std::isfinite(l));

  for (const char* f : {"loss.csv", "manifest.json", "metrics.csv",
                        "checkpoint-000002.vtb", "checkpoint-final.vtb"}) {
    INFO("file ", f);
    CHECK(slurp(da + "/" + std::string(f)) == slurp(db + "/" + std::string(f)));
  }

  // A different seed must produce a different trace.
  RunConfig other = tiny_run_config(24);
  other.train.checkpoint_interval = 2;
  std::ostringstream log_c;
  TrainResult rc = run_training(other, {"", ""}, log_c);
  CHECK(!bits_equal(ra.loss_trace, rc.loss_trace));
  CHECK(rc.manifest_path.empty());  // in-memory run writes nothing
}

TEST_CASE("the manifest ties the run together") {
  RunConfig cfg = tiny_run_config(29);
  cfg.train.checkpoint_interval = 2;
  cfg.train.target_dice = 0.5;
  const std::string dir = fresh_dir("manifest");
  std::ostringstream log;
  TrainResult r = run_training(cfg, {dir, ""}, log);
  CHECK(r.manifest_path == dir + "/manifest.json");

  nlohmann::json m = nlohmann::json::parse(slurp(dir + "/manifest.json"));
  CHECK(m.at("schema") == "vitbis-run@1");
  CHECK(m.at("param_count").get<i64>() == r.param_count);
  CHECK(m.at("first_step").get<i64>() == 1);
  CHECK(m.at("last_step").get<i64>() == 4);
  REQUIRE(m.at("loss_trace").size() == 4);
  CHECK(m.at("loss_trace")[0].get<double>() ==
        doctest::Approx(r.loss_trace[0]).epsilon(1e-9));
  CHECK(m.at("target").at("dice") == 0.5);

  // The config echo round-trips through the parser.
  RunConfig echoed = parse_run_config(m.at("config"));
  CHECK(run_config_to_json(echoed) == m.at("config"));

  // Each checkpoint row carries the checksum of the file it names.
  for (const auto& ck : m.at("checkpoints")) {
    const auto bytes = slurp(dir + "/" + ck.at("file").get<std::string>());
    CHECK(ck.at("crc32").get<std::uint32_t>() == crc32(bytes));
  }

  // loss.csv mirrors the trace.
  std::istringstream csv(std::string(
      reinterpret_cast<const char*>(slurp(dir + "/loss.csv").data()),
      slurp(dir + "/loss.csv").size()));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,loss");
  std::getline(csv, line);
  CHECK(line.substr(0, 2) == "1,");

  // The metrics block matches the returned report.
  CHECK(m.at("metrics").at("num_images").get<i64>() == r.eval.num_images);
  CHECK(m.at("metrics").at("csv") == "metrics.csv");
}

TEST_CASE("checkpoints round trip and support bit-identical resume") {
  RunConfig cfg = tiny_run_config(31);
  cfg.optim.max_steps = 6;
  cfg.train.checkpoint_interval = 3;

  const std::string full_dir = fresh_dir("full");
  std::ostringstream log1;
  TrainResult full = run_training(cfg, {full_dir, ""}, log1);
  REQUIRE(full.loss_trace.size() == 6);

  Checkpoint mid = load_checkpoint(full_dir + "/checkpoint-000003.vtb");
  CHECK(mid.step == 3);
  CHECK(mid.adam.t == 3);
  CHECK(run_config_to_json(mid.config) == run_config_to_json(cfg));

  const std::string resume_dir = fresh_dir("resumed");
  std::ostringstream log2;
  TrainResult tail = run_training(cfg, {resume_dir, full_dir + "/checkpoint-000003.vtb"},
                                  log2);
  CHECK(tail.first_step == 4);
  REQUIRE(tail.loss_trace.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(tail.loss_trace[i] == full.loss_trace[3 + i]);
  }
  CHECK(slurp(resume_dir + "/checkpoint-final.vtb") ==
        slurp(full_dir + "/checkpoint-final.vtb"));

  // Resuming under a different config is refused.
  RunConfig changed = cfg;
  changed.optim.lr *= 2.0;
  std::ostringstream log3;
  CHECK_THROWS_AS(
      run_training(changed, {"", full_dir + "/checkpoint-000003.vtb"}, log3),
      ConfigMismatch);

  // A corrupted checkpoint is rejected outright.
  auto bytes = slurp(full_dir + "/checkpoint-000003.vtb");
  bytes[bytes.size() / 2] ^= 0x10;
  const std::string bad = full_dir + "/corrupt.vtb";
  write_file_bytes(bad, bytes);
  CHECK_THROWS_AS(load_checkpoint(bad), CorruptFile);

  // Save/load round trip preserves every field bit for bit.
  const std::string again = full_dir + "/again.vtb";
  save_checkpoint(again, mid);
  Checkpoint mid2 = load_checkpoint(again);
  CHECK(mid2.step == mid.step);
  CHECK(mid2.sampling_state == mid.sampling_state);
  CHECK(mid2.augment_state == mid.augment_state);
  REQUIRE(mid2.params.size() == mid.params.size());
  for (std::size_t i = 0; i < mid.params.size(); ++i) {
    CHECK(mid2.params[i].name == mid.params[i].name);
    CHECK(bits_equal(*mid2.params[i].value, *mid.params[i].value));
    CHECK(bits_equal(mid2.adam.m[i], mid.adam.m[i]));
    CHECK(bits_equal(mid2.adam.v[i], mid.adam.v[i]));
  }
}

TEST_CASE("a zero learning rate freezes the loss") {
  RunConfig cfg = tiny_run_config(37);
  cfg.data.count = 1;
  cfg.optim.batch_size = 1;
  cfg.optim.lr = 0.0;
  cfg.optim.max_steps = 5;
  std::ostringstream log;
  TrainResult r = run_training(cfg, {"", ""}, log);
  REQUIRE(r.loss_trace.size() == 5);
  for (double l : r.loss_trace) CHECK(l == r.loss_trace[0]);
}

TEST_CASE("prediction argmax breaks ties toward the lowest class") {
  RunConfig cfg = tiny_run_config(41);
  VitbisModel model(cfg.model);
  model.init_params(1);
  for (Param& p : model.params()) {
    std::fill(p.value->begin(), p.value->end(), 0.0);
  }
  SplitMix64 rng(5);
  Tensor img = testsupport::rand_tensor(rng, {1, 1, 16, 16}, 0.0, 1.0);
  LabelMask mask = predict_mask(model, img);
  CHECK(mask.rows == 16);
  CHECK(mask.cols == 16);
  for (std::int32_t l : mask.labels) CHECK(l == 0);
}

TEST_CASE("model evaluation agrees with the metric module") {
  RunConfig cfg = tiny_run_config(43);
  VitbisModel model(cfg.model);
  model.init_params(7);
  auto data = training_set(cfg);
  MetricReport r = evaluate_model(model, data);
  CHECK(r.num_images == 2);
  CHECK(r.num_classes == 2);
  std::vector<LabelMask> pred, gt;
  for (const Sample& s : data) {
    Tensor batched = reshape(s.image, {1, 1, 16, 16});
    pred.push_back(predict_mask(model, batched));
    gt.push_back(s.mask);
  }
  MetricReport want = evaluate(pred, gt, 2);
  CHECK(r.mean_dice == want.mean_dice);
}

TEST_CASE("upsampling comparison table") {
  RunConfig base = tiny_run_config(47);
  base.optim.max_steps = 2;
  std::ostringstream log;
  AblationTable t = ablate_upsampling(base, log);

  CHECK(t.title == "Decoder upsampling comparison");
  REQUIRE(t.columns.size() == 3);  // Mode, one foreground class, mean
  CHECK(t.columns[0] == "Mode");
  CHECK(t.columns[1] == "DS% class 1");
  CHECK(t.columns[2] == "Mean DS%");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][0] == "BI");
  CHECK(t.rows[1][0] == "TC");
  for (const auto& row : t.rows) {
    REQUIRE(row.size() == 3);
    for (std::size_t c = 1; c < row.size(); ++c) {
      const double v = cell_value(row[c]);
      CHECK(v >= 0.0);
      CHECK(v <= 100.0);
    }
    // With one foreground class the mean equals that class's score.
    CHECK(row[1] == row[2]);
  }
  REQUIRE(t.notes.size() == 2);
  CHECK(t.notes[0].find("47") != std::string::npos);
  CHECK(t.notes[1].rfind("Expected direction, TC mean above BI: ", 0) == 0);
  const bool observed = t.notes[1].find(": observed.") != std::string::npos;
  const bool not_observed = t.notes[1].find("not observed.") != std::string::npos;
  CHECK((observed || not_observed));

  const std::string csv = t.csv();
  CHECK(csv.rfind("Mode,DS% class 1,Mean DS%\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  const std::string text = t.text();
  CHECK(text.find(t.title) != std::string::npos);
  CHECK(text.find("BI") != std::string::npos);
}

TEST_CASE("depth and width grid table") {
  RunConfig base = tiny_run_config(53);
  base.optim.max_steps = 1;
  std::ostringstream log;
  AblationTable t = ablate_scale(base, log);

  CHECK(t.title == "Depth and embedding width grid");
  REQUIRE(t.columns.size() == 4);
  CHECK(t.columns[0] == "Depth L");
  CHECK(t.columns[1] == "Dim d");
  REQUIRE(t.rows.size() == 6);
  const std::vector<std::pair<std::string, std::string>> want = {
      {"1", "48"}, {"1", "64"}, {"2", "48"}, {"2", "64"}, {"4", "48"}, {"4", "64"}};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(t.rows[i][0] == want[i].first);
    CHECK(t.rows[i][1] == want[i].second);
    const double v = cell_value(t.rows[i][3]);
    CHECK(v >= 0.0);
    CHECK(v <= 100.0);
  }
  REQUIRE(t.notes.size() == 2);
  CHECK(t.notes[0].find("53") != std::string::npos);
  CHECK(t.notes[1].rfind("Expected leader, deepest and widest cell L=4 d=64: ", 0) == 0);
  CHECK(t.notes[1].find("Best here: L=") != std::string::npos);
}
