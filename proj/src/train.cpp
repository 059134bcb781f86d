#include "vitbis/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <unordered_map>
#include <utility>

#include "vitbis/losses.hpp"
#include "vitbis/ops.hpp"
#include "vitbis/vtb.hpp"

namespace vitbis {

namespace {

using i64 = std::int64_t;
using u64 = std::uint64_t;

SyntheticSpec run_data_spec(const RunConfig& cfg) {
  SyntheticSpec s = cfg.data;
  s.seed = cfg.seed + stream::kData;
  return s;
}

Sample fit_to_model(Sample s, const ModelConfig& m) {
  if (s.mask.rows == m.in_h && s.mask.cols == m.in_w) return s;
  const i64 oy = (s.mask.rows - m.in_h) / 2;
  const i64 ox = (s.mask.cols - m.in_w) / 2;
  return crop_pair(s, oy, ox, m.in_h);
}

Tensor batch_images(const std::vector<Sample>& batch) {
  const i64 b = static_cast<i64>(batch.size());
  const Shape& s0 = batch.front().image.shape;  // [C,H,W]
  Tensor out = Tensor::zeros({b, s0[0], s0[1], s0[2]});
  const i64 per = s0.numel();
  for (i64 i = 0; i < b; ++i) {
    const auto& src = batch[static_cast<std::size_t>(i)].image.values();
    std::copy(src.begin(), src.end(),
              out.mutable_values().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

// One-hot targets in the same row order the flattened probabilities use:
// row index (b*H + r)*W + c.
Tensor batch_onehot(const std::vector<Sample>& batch, i64 num_classes) {
  const i64 b = static_cast<i64>(batch.size());
  const i64 h = batch.front().mask.rows, w = batch.front().mask.cols;
  Tensor out = Tensor::zeros({b * h * w, num_classes});
  std::vector<double>& v = out.mutable_values();
  for (i64 i = 0; i < b; ++i) {
    const LabelMask& m = batch[static_cast<std::size_t>(i)].mask;
    for (i64 r = 0; r < h; ++r) {
      for (i64 c = 0; c < w; ++c) {
        const i64 label = m.at(r, c);
        if (label < 0 || label >= num_classes) {
          throw DomainError("mask label " + std::to_string(label) +
                            " outside [0, " + std::to_string(num_classes) + ")");
        }
        v[static_cast<std::size_t>(((i * h + r) * w + c) * num_classes + label)] = 1.0;
      }
    }
  }
  return out;
}

// [B,J,H,W] logits -> per-pixel class probabilities [B*H*W, J].
Tensor flat_class_probs(const Tensor& logits) {
  const Shape& s = logits.shape;
  Tensor p = softmax(logits, 1);
  Tensor moved = permute(p, {0, 2, 3, 1});
  return reshape(moved, {s[0] * s[2] * s[3], s[1]});
}

Tensor training_loss(const std::string& kind, const Tensor& flat,
                     const Tensor& onehot) {
  if (kind == "combined") return combined_loss(flat, onehot);
  return voxelwise_combined_loss(flat, onehot, {}, /*trainable=*/true);
}

std::string step_checkpoint_name(i64 step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint-%06lld.vtb",
                static_cast<long long>(step));
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::vector<Sample> training_set(const RunConfig& cfg) {
  return generate_dataset(run_data_spec(cfg));
}

std::vector<Sample> evaluation_set(const RunConfig& cfg) {
  const SyntheticSpec spec = run_data_spec(cfg);
  std::vector<Sample> out;
  if (cfg.eval_images > 0) {
    out.reserve(static_cast<std::size_t>(cfg.eval_images));
    for (i64 i = 0; i < cfg.eval_images; ++i) {
      out.push_back(generate_sample(spec, static_cast<u64>(spec.count + i)));
    }
  } else {
    out = generate_dataset(spec);
  }
  for (Sample& s : out) s = fit_to_model(std::move(s), cfg.model);
  return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::vector<VtbTensor> tensors;
  tensors.reserve(c.params.size() * 3);
  for (const Param& p : c.params) {
    Tensor t;
    t.shape = p.shape;
    t.data = p.value;
    tensors.push_back(tensor_to_vtb(p.name, t));
  }
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    Tensor m, v;
    m.shape = v.shape = c.params[i].shape;
    m.data = std::make_shared<std::vector<double>>(c.adam.m[i]);
    v.data = std::make_shared<std::vector<double>>(c.adam.v[i]);
    tensors.push_back(tensor_to_vtb("adam.m." + c.params[i].name, m));
    tensors.push_back(tensor_to_vtb("adam.v." + c.params[i].name, v));
  }
  nlohmann::json meta{
      {"schema", "vitbis-checkpoint@1"},
      {"step", c.step},
      {"adam_t", c.adam.t},
      {"config", run_config_to_json(c.config)},
      {"rng", {{"sampling", c.sampling_state}, {"augment", c.augment_state}}}};
  write_vtb(path, tensors, meta);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto [tensors, meta] = read_vtb(path);
  if (!meta.is_object() || meta.value("schema", std::string()) != "vitbis-checkpoint@1") {
    throw CorruptFile("not a checkpoint container: " + path);
  }
  Checkpoint c;
  c.config = parse_run_config(meta.at("config"));
  c.step = meta.at("step").get<i64>();
  c.adam.t = meta.at("adam_t").get<i64>();
  c.sampling_state = meta.at("rng").at("sampling").get<u64>();
  c.augment_state = meta.at("rng").at("augment").get<u64>();

  std::unordered_map<std::string, const VtbTensor*> by_name;
  for (const VtbTensor& t : tensors) by_name.emplace(t.name, &t);

  VitbisModel reference(c.config.model);
  for (const Param& rp : reference.params()) {
    for (const std::string& name :
         {rp.name, "adam.m." + rp.name, "adam.v." + rp.name}) {
      auto it = by_name.find(name);
      if (it == by_name.end()) {
        throw CorruptFile("checkpoint is missing tensor " + name);
      }
      Tensor t = vtb_to_tensor(*it->second);
      if (t.shape != rp.shape) {
        throw CorruptFile("checkpoint tensor " + name + " has shape " +
                          t.shape.str() + ", expected " + rp.shape.str());
      }
      if (name == rp.name) {
        c.params.push_back({rp.name, rp.shape, t.data});
      } else if (name.starts_with("adam.m.")) {
        c.adam.m.push_back(std::move(*t.data));
      } else {
        c.adam.v.push_back(std::move(*t.data));
      }
    }
  }
  if (tensors.size() != c.params.size() * 3) {
    throw CorruptFile("checkpoint holds unexpected extra tensors");
  }
  return c;
}

LabelMask predict_mask(VitbisModel& model, const Tensor& image) {
  Tensor logits = model.forward(nullptr, image);
  const i64 j = logits.shape[1], h = logits.shape[2], w = logits.shape[3];
  LabelMask mask = LabelMask::filled(h, w, 0);
  const std::vector<double>& v = logits.values();
  for (i64 r = 0; r < h; ++r) {
    for (i64 c = 0; c < w; ++c) {
      i64 best = 0;
      double best_v = v[static_cast<std::size_t>(r * w + c)];
      for (i64 k = 1; k < j; ++k) {
        const double cand = v[static_cast<std::size_t>((k * h + r) * w + c)];
        if (cand > best_v) {
          best_v = cand;
          best = k;
        }
      }
      mask.at(r, c) = static_cast<std::int32_t>(best);
    }
  }
  return mask;
}

MetricReport evaluate_model(VitbisModel& model, const std::vector<Sample>& data) {
  std::vector<LabelMask> pred, gt;
  pred.reserve(data.size());
  gt.reserve(data.size());
  for (const Sample& s : data) {
    Tensor x;
    x.shape = Shape{1, s.image.shape[0], s.image.shape[1], s.image.shape[2]};
    x.data = s.image.data;
    pred.push_back(predict_mask(model, x));
    gt.push_back(s.mask);
  }
  return evaluate(pred, gt, model.config().num_classes);
}

TrainResult run_training(const RunConfig& cfg, const RunOptions& opts,
                         std::ostream& log) {
  cfg.validate();
  namespace fs = std::filesystem;

  VitbisModel model(cfg.model);
  model.init_params(cfg.seed);
  AdamState adam;
  adam.init(model.params());
  SplitMix64 sampler = derived_rng(cfg.seed, stream::kSampling);
  SplitMix64 augmenter = derived_rng(cfg.seed, stream::kAugment);
  i64 start_step = 0;

  if (!opts.resume.empty()) {
    Checkpoint c = load_checkpoint(opts.resume);
    if (run_config_to_json(c.config).dump() != run_config_to_json(cfg).dump()) {
      throw ConfigMismatch("resume checkpoint was written under a different config");
    }
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      *model.params()[i].value = *c.params[i].value;
    }
    adam = std::move(c.adam);
    start_step = c.step;
    sampler.set_state(c.sampling_state);
    augmenter.set_state(c.augment_state);
    log << "resumed from " << opts.resume << " at step " << start_step << "\n";
  }

  const std::vector<Sample> train = training_set(cfg);

  TrainResult res;
  res.first_step = start_step + 1;
  res.param_count = model.parameter_count();

  const bool writing = !opts.out_dir.empty();
  if (writing) fs::create_directories(opts.out_dir);
  std::vector<std::pair<i64, std::string>> checkpoint_files;

  auto write_ckpt = [&](i64 step, const std::string& fname) {
    Checkpoint c;
    c.config = cfg;
    c.params = model.params();
    c.adam = adam;
    c.step = step;
    c.sampling_state = sampler.state();
    c.augment_state = augmenter.state();
    save_checkpoint((fs::path(opts.out_dir) / fname).string(), c);
    checkpoint_files.emplace_back(step, fname);
  };

  for (i64 step = start_step + 1; step <= cfg.optim.max_steps; ++step) {
    std::vector<Sample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.optim.batch_size));
    for (i64 k = 0; k < cfg.optim.batch_size; ++k) {
      const std::size_t pick =
          static_cast<std::size_t>(sampler.uniform_int(train.size()));
      batch.push_back(cfg.augment ? augment(train[pick], *cfg.augment, augmenter)
                                  : train[pick]);
    }

    Tensor images = batch_images(batch);
    Tensor onehot = batch_onehot(batch, cfg.model.num_classes);

    Tape tape;
    Tensor logits = model.forward(&tape, images);
    Tensor loss = training_loss(cfg.train.loss, flat_class_probs(logits), onehot);
    const double loss_v = loss.values()[0];
    if (!std::isfinite(loss_v)) {
      throw DomainError("loss became non-finite at step " + std::to_string(step));
    }
    tape.backward(loss);

    std::vector<std::vector<double>> grads;
    grads.reserve(model.params().size());
    for (const Tensor& leaf : model.bound_leaves()) grads.push_back(tape.grad(leaf));

    if (!adam_step(model.params(), grads, adam, cfg.optim)) {
      res.skips.push_back({step, "non-finite gradient"});
      log << "step " << step << ": skipped, non-finite gradient\n";
    }
    res.loss_trace.push_back(loss_v);

    if (step % 50 == 0 || step == cfg.optim.max_steps) {
      char line[64];
      std::snprintf(line, sizeof line, "step %lld/%lld loss %.9f\n",
                    static_cast<long long>(step),
                    static_cast<long long>(cfg.optim.max_steps), loss_v);
      log << line;
    }
    if (writing && cfg.train.checkpoint_interval > 0 &&
        step % cfg.train.checkpoint_interval == 0 && step != cfg.optim.max_steps) {
      write_ckpt(step, step_checkpoint_name(step));
    }
  }

  if (writing) {
    write_ckpt(cfg.optim.max_steps, "checkpoint-final.vtb");
    res.final_checkpoint =
        (fs::path(opts.out_dir) / "checkpoint-final.vtb").string();
  }

  res.eval_ran = cfg.eval_images > 0 || cfg.train.eval_on_train;
  if (res.eval_ran) {
    res.eval = evaluate_model(model, evaluation_set(cfg));
    if (cfg.train.target_dice) {
      res.target_reached = res.eval.mean_dice >= *cfg.train.target_dice;
    }
    log << report_table(res.eval);
  }

  if (writing) {
    std::string loss_csv = "step,loss\n";
    for (std::size_t i = 0; i < res.loss_trace.size(); ++i) {
      char line[64];
      std::snprintf(line, sizeof line, "%lld,%.9f\n",
                    static_cast<long long>(res.first_step + static_cast<i64>(i)),
                    res.loss_trace[i]);
      loss_csv += line;
    }
    write_text_file((fs::path(opts.out_dir) / "loss.csv").string(), loss_csv);

    nlohmann::json manifest;
    manifest["schema"] = "vitbis-run@1";
    manifest["config"] = run_config_to_json(cfg);
    manifest["param_count"] = res.param_count;
    manifest["first_step"] = res.first_step;
    manifest["last_step"] = cfg.optim.max_steps;
    manifest["loss_trace"] = res.loss_trace;
    nlohmann::json skips = nlohmann::json::array();
    for (const SkipEvent& s : res.skips) {
      skips.push_back({{"step", s.step}, {"reason", s.reason}});
    }
    manifest["skipped_steps"] = skips;
    nlohmann::json cks = nlohmann::json::array();
    for (const auto& [step, fname] : checkpoint_files) {
      const auto bytes = read_file_bytes((fs::path(opts.out_dir) / fname).string());
      cks.push_back({{"file", fname}, {"step", step}, {"crc32", crc32(bytes)}});
    }
    manifest["checkpoints"] = cks;
    if (res.eval_ran) {
      write_text_file((fs::path(opts.out_dir) / "metrics.csv").string(),
                      report_csv(res.eval));
      nlohmann::json per_dice = nlohmann::json::array();
      nlohmann::json per_hd = nlohmann::json::array();
      for (double v : res.eval.per_class_dice) per_dice.push_back(finite_or_null(v));
      for (double v : res.eval.per_class_hd95) per_hd.push_back(finite_or_null(v));
      manifest["metrics"] = {{"csv", "metrics.csv"},
                             {"num_images", res.eval.num_images},
                             {"per_class_dice", per_dice},
                             {"per_class_hd95_mm", per_hd},
                             {"mean_dice", finite_or_null(res.eval.mean_dice)},
                             {"mean_hd95_mm", finite_or_null(res.eval.mean_hd95)}};
    } else {
      manifest["metrics"] = nullptr;
    }
    if (cfg.train.target_dice) {
      manifest["target"] = {{"dice", *cfg.train.target_dice},
                            {"reached", res.target_reached}};
    } else {
      manifest["target"] = nullptr;
    }
    res.manifest_path = (fs::path(opts.out_dir) / "manifest.json").string();
    write_text_file(res.manifest_path, manifest.dump(2) + "\n");
  }
  return res;
}

std::string AblationTable::csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    out += (i ? "," : "") + columns[i];
  }
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += "\n";
  }
  return out;
}

std::string AblationTable::text() const {
  std::vector<std::size_t> width(columns.size(), 0);
  for (std::size_t i = 0; i < columns.size(); ++i) width[i] = columns[i].size();
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      width[i] = std::max(width[i], row[i].size());
    }
  }
  auto emit_row = [&](const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) line += "  ";
      line += cells[i];
      line.append(width[i] - cells[i].size(), ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    return line + "\n";
  };
  std::string out = title + "\n";
  out += emit_row(columns);
  std::size_t total = 0;
  for (std::size_t i = 0; i < width.size(); ++i) total += width[i] + (i ? 2 : 0);
  out += std::string(total, '-') + "\n";
  for (const auto& row : rows) out += emit_row(row);
  for (const std::string& n : notes) out += "note: " + n + "\n";
  return out;
}

namespace {

// Shared shape of both comparison tables: label columns, then one Dice
// percentage per foreground class, then the mean.
void dice_columns(AblationTable& t, i64 num_classes) {
  for (i64 c = 1; c < num_classes; ++c) {
    t.columns.push_back("DS% class " + std::to_string(c));
  }
  t.columns.push_back("Mean DS%");
}

void append_dice_cells(std::vector<std::string>& row, const MetricReport& r) {
  for (double v : r.per_class_dice) row.push_back(pct(v));
  row.push_back(pct(r.mean_dice));
}

RunConfig with_eval(RunConfig cfg) {
  if (!cfg.train.eval_on_train && cfg.eval_images == 0) {
    cfg.train.eval_on_train = true;
  }
  return cfg;
}

}  // namespace

AblationTable ablate_upsampling(const RunConfig& base, std::ostream& log) {
  AblationTable t;
  t.title = "Decoder upsampling comparison";
  t.columns = {"Mode"};
  dice_columns(t, base.model.num_classes);

  const std::array<std::pair<const char*, UpsampleMode>, 2> runs{
      {{"BI", UpsampleMode::bilinear}, {"TC", UpsampleMode::transposed_conv}}};
  std::array<double, 2> mean{};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    RunConfig cfg = with_eval(base);
    cfg.model.upsample_mode = runs[i].second;
    log << "[" << runs[i].first << "] training\n";
    TrainResult r = run_training(cfg, {}, log);
    std::vector<std::string> row{runs[i].first};
    append_dice_cells(row, r.eval);
    t.rows.push_back(std::move(row));
    mean[i] = r.eval.mean_dice;
  }
  t.notes.push_back("Both runs share root seed " + std::to_string(base.seed) +
                    " and therefore identical data and batch order.");
  t.notes.push_back(std::string("Expected direction, TC mean above BI: ") +
                    (mean[1] > mean[0] ? "observed." : "not observed."));
  return t;
}

AblationTable ablate_scale(const RunConfig& base, std::ostream& log) {
  AblationTable t;
  t.title = "Depth and embedding width grid";
  t.columns = {"Depth L", "Dim d"};
  dice_columns(t, base.model.num_classes);

  const std::array<i64, 3> depths{1, 2, 4};
  const std::array<i64, 2> dims{48, 64};
  double best = -1.0;
  i64 best_l = 0, best_d = 0;
  for (i64 l : depths) {
    for (i64 d : dims) {
      RunConfig cfg = with_eval(base);
      cfg.model.depth = l;
      cfg.model.embed_dim = d;
      while (cfg.model.num_heads > 1 && d % cfg.model.num_heads != 0) {
        cfg.model.num_heads /= 2;
      }
      log << "[L=" << l << " d=" << d << "] training\n";
      TrainResult r = run_training(cfg, {}, log);
      std::vector<std::string> row{std::to_string(l), std::to_string(d)};
      append_dice_cells(row, r.eval);
      t.rows.push_back(std::move(row));
      if (r.eval.mean_dice > best) {
        best = r.eval.mean_dice;
        best_l = l;
        best_d = d;
      }
    }
  }
  t.notes.push_back("All six cells share root seed " + std::to_string(base.seed) + ".");
  t.notes.push_back(
      "Expected leader, deepest and widest cell L=4 d=64: " +
      std::string(best_l == 4 && best_d == 64 ? "observed." : "not observed.") +
      " Best here: L=" + std::to_string(best_l) + " d=" + std::to_string(best_d) +
      " at mean DS% " + pct(best) + ".");
  return t;
}

}  // namespace vitbis
