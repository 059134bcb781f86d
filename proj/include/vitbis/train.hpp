#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vitbis/config.hpp"
#include "vitbis/data.hpp"
#include "vitbis/metrics.hpp"
#include "vitbis/model.hpp"
#include "vitbis/optim.hpp"

namespace vitbis {

// Training images are indices 0..train-1 of the run's data stream; a non-zero
// eval_images takes the indices immediately after, so the two sets never
// overlap. eval_images == 0 evaluates on the (un-augmented) training images.
// When augmentation crops below the raw size, eval samples are centre-cropped
// to the model input.
std::vector<Sample> training_set(const RunConfig& cfg);
std::vector<Sample> evaluation_set(const RunConfig& cfg);

struct SkipEvent {
  std::int64_t step = 0;
  std::string reason;
};

struct TrainResult {
  std::vector<double> loss_trace;  // entry per step, absolute step = first_step + i
  std::int64_t first_step = 1;
  std::vector<SkipEvent> skips;
  MetricReport eval;
  bool eval_ran = false;
  std::int64_t param_count = 0;
  bool target_reached = false;     // meaningful only when train.target_dice is set
  std::string manifest_path;       // empty when the run kept everything in memory
  std::string final_checkpoint;
};

// Checkpoint container (VTB1): every parameter by name, the Adam moments as
// "adam.m.<name>" / "adam.v.<name>", and metadata holding the full config
// echo, the step counter, and the live sampling/augment stream states, which
// is exactly what a resumed run needs to continue bit-identically.
struct Checkpoint {
  RunConfig config;
  std::vector<Param> params;  // model registration order
  AdamState adam;
  std::int64_t step = 0;
  std::uint64_t sampling_state = 0;
  std::uint64_t augment_state = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

struct RunOptions {
  std::string out_dir;  // "" keeps the run entirely in memory
  std::string resume;   // checkpoint path; its config echo must match cfg
};

// Runs cfg end to end: per-step loss trace, optional periodic checkpoints,
// final checkpoint, evaluation, and a manifest tying it all together. With an
// out_dir the run writes loss.csv, manifest.json, metrics.csv (when
// evaluation runs) and checkpoint files; nothing carries a timestamp, so
// identical (seed, config) runs produce bit-identical files. Throws
// DomainError if the loss itself turns non-finite; a non-finite gradient
// only skips that step and is logged.
TrainResult run_training(const RunConfig& cfg, const RunOptions& opts,
                         std::ostream& log);

// Inference-mode forward of one [1, C, H, W] image, argmax over classes.
LabelMask predict_mask(VitbisModel& model, const Tensor& image);

MetricReport evaluate_model(VitbisModel& model, const std::vector<Sample>& data);

// Small fixed-schema table for the comparison harnesses.
struct AblationTable {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> notes;

  std::string csv() const;   // header + rows only
  std::string text() const;  // padded table, title and notes included
};

// Trains twin runs that differ only in the decoder upsampling mode, same
// seed and data order. Rows are exactly {BI, TC}; columns are the per-class
// Dice percentages plus their mean. The expected direction (TC above BI) is
// recorded in the notes as observed / not observed, never asserted.
AblationTable ablate_upsampling(const RunConfig& base, std::ostream& log);

// Depth x width grid: depth in {1, 2, 4} by embed_dim in {48, 64}, six rows,
// every cell trained from the same root seed. The expectation that the
// deepest, widest cell leads is likewise only recorded in the notes.
AblationTable ablate_scale(const RunConfig& base, std::ostream& log);

}  // namespace vitbis
