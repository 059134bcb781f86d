#include "vitbis/config.hpp"

#include <fstream>
#include <set>

namespace vitbis {

namespace {

using nlohmann::json;

// Wraps one JSON object; every read marks its key, and finish() rejects
// whatever was never asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw UsageError(where_ + " must be a JSON object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw UsageError(where_ + " is missing key \"" + key + "\"");
    return j_.at(key);
  }

  template <typename T>
  T get(const char* key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw UsageError(where_ + "." + key + " has the wrong type");
    }
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.contains(item.key())) {
        throw UsageError("unknown key \"" + item.key() + "\" in " + where_);
      }
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ModelConfig parse_model(const json& j) {
  StrictObject o(j, "model");
  ModelConfig m;
  m.patch_size = o.get<std::int64_t>("patch_size", m.patch_size);
  m.embed_dim = o.get<std::int64_t>("embed_dim", m.embed_dim);
  m.depth = o.get<std::int64_t>("depth", m.depth);
  m.num_heads = o.get<std::int64_t>("num_heads", m.num_heads);
  m.mlp_ratio = o.get<double>("mlp_ratio", m.mlp_ratio);
  m.reduced_channels = o.get<std::int64_t>("reduced_channels", m.reduced_channels);
  m.num_classes = o.get<std::int64_t>("num_classes", m.num_classes);
  m.num_stacks = o.get<std::int64_t>("num_stacks", m.num_stacks);
  m.upsample_mode = parse_upsample_mode(
      o.get<std::string>("upsample_mode", upsample_mode_name(m.upsample_mode)));
  m.window_size = o.get<std::int64_t>("window_size", m.window_size);
  m.use_gsa = o.get<bool>("use_gsa", m.use_gsa);
  m.use_relative_bias = o.get<bool>("use_relative_bias", m.use_relative_bias);
  m.gsa_verbatim_attention =
      o.get<bool>("gsa_verbatim_attention", m.gsa_verbatim_attention);
  m.mlp_activation = o.get<std::string>("mlp_activation", m.mlp_activation);
  if (o.has("input")) {
    StrictObject in(j.at("input"), "model.input");
    m.in_h = in.get<std::int64_t>("height", m.in_h);
    m.in_w = in.get<std::int64_t>("width", m.in_w);
    m.in_ch = in.get<std::int64_t>("channels", m.in_ch);
    in.finish();
  }
  o.finish();
  return m;
}

json model_to_json(const ModelConfig& m) {
  return json{{"patch_size", m.patch_size},
              {"embed_dim", m.embed_dim},
              {"depth", m.depth},
              {"num_heads", m.num_heads},
              {"mlp_ratio", m.mlp_ratio},
              {"reduced_channels", m.reduced_channels},
              {"num_classes", m.num_classes},
              {"num_stacks", m.num_stacks},
              {"upsample_mode", upsample_mode_name(m.upsample_mode)},
              {"window_size", m.window_size},
              {"use_gsa", m.use_gsa},
              {"use_relative_bias", m.use_relative_bias},
              {"gsa_verbatim_attention", m.gsa_verbatim_attention},
              {"mlp_activation", m.mlp_activation},
              {"input", {{"height", m.in_h}, {"width", m.in_w}, {"channels", m.in_ch}}}};
}

OptimConfig parse_optim(const json& j) {
  StrictObject o(j, "optim");
  OptimConfig c;
  c.lr = o.get<double>("lr", c.lr);
  c.weight_decay = o.get<double>("weight_decay", c.weight_decay);
  c.batch_size = o.get<std::int64_t>("batch_size", c.batch_size);
  c.beta1 = o.get<double>("beta1", c.beta1);
  c.beta2 = o.get<double>("beta2", c.beta2);
  c.adam_eps = o.get<double>("adam_eps", c.adam_eps);
  c.max_steps = o.get<std::int64_t>("max_steps", c.max_steps);
  c.coupled_weight_decay = o.get<bool>("coupled_weight_decay", c.coupled_weight_decay);
  o.finish();
  return c;
}

json optim_to_json(const OptimConfig& c) {
  return json{{"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"max_steps", c.max_steps},
              {"coupled_weight_decay", c.coupled_weight_decay}};
}

SyntheticSpec parse_data(const json& j, std::int64_t& eval_images) {
  StrictObject o(j, "data");
  SyntheticSpec s;
  s.image_size = o.get<std::int64_t>("image_size", s.image_size);
  s.num_classes = o.get<std::int64_t>("num_classes", s.num_classes);
  s.min_shapes = o.get<std::int64_t>("min_shapes", s.min_shapes);
  s.max_shapes = o.get<std::int64_t>("max_shapes", s.max_shapes);
  s.noise_sigma = o.get<double>("noise_sigma", s.noise_sigma);
  s.count = o.get<std::int64_t>("train_images", s.count);
  eval_images = o.get<std::int64_t>("eval_images", eval_images);
  if (o.has("class_intensity")) {
    const json& bands = j.at("class_intensity");
    if (!bands.is_array()) throw UsageError("data.class_intensity must be an array");
    for (const json& b : bands) {
      if (!b.is_array() || b.size() != 2) {
        throw UsageError("data.class_intensity entries must be [lo, hi]");
      }
      s.class_intensity.push_back({b[0].get<double>(), b[1].get<double>()});
    }
  }
  o.finish();
  return s;
}

json data_to_json(const SyntheticSpec& s, std::int64_t eval_images) {
  json bands = json::array();
  for (const auto& b : s.class_intensity) bands.push_back({b[0], b[1]});
  return json{{"image_size", s.image_size},
              {"num_classes", s.num_classes},
              {"min_shapes", s.min_shapes},
              {"max_shapes", s.max_shapes},
              {"noise_sigma", s.noise_sigma},
              {"train_images", s.count},
              {"eval_images", eval_images},
              {"class_intensity", bands}};
}

AugmentConfig parse_augment(const json& j) {
  StrictObject o(j, "augment");
  AugmentConfig a;
  a.crop_size = o.get<std::int64_t>("crop_size", a.crop_size);
  a.flip_prob = o.get<double>("flip_prob", a.flip_prob);
  if (o.has("intensity_shift")) {
    const json& r = j.at("intensity_shift");
    if (!r.is_array() || r.size() != 2) {
      throw UsageError("augment.intensity_shift must be [lo, hi]");
    }
    a.shift_lo = r[0].get<double>();
    a.shift_hi = r[1].get<double>();
  }
  if (o.has("intensity_scale")) {
    const json& r = j.at("intensity_scale");
    if (!r.is_array() || r.size() != 2) {
      throw UsageError("augment.intensity_scale must be [lo, hi]");
    }
    a.scale_lo = r[0].get<double>();
    a.scale_hi = r[1].get<double>();
  }
  o.finish();
  return a;
}

json augment_to_json(const AugmentConfig& a) {
  return json{{"crop_size", a.crop_size},
              {"flip_prob", a.flip_prob},
              {"intensity_shift", {a.shift_lo, a.shift_hi}},
              {"intensity_scale", {a.scale_lo, a.scale_hi}}};
}

TrainSettings parse_train(const json& j) {
  StrictObject o(j, "train");
  TrainSettings t;
  t.checkpoint_interval = o.get<std::int64_t>("checkpoint_interval", t.checkpoint_interval);
  t.loss = o.get<std::string>("loss", t.loss);
  t.eval_on_train = o.get<bool>("eval_on_train", t.eval_on_train);
  if (o.has("target_dice") && !j.at("target_dice").is_null()) {
    t.target_dice = j.at("target_dice").get<double>();
  }
  o.finish();
  return t;
}

json train_to_json(const TrainSettings& t) {
  json j{{"checkpoint_interval", t.checkpoint_interval},
         {"loss", t.loss},
         {"eval_on_train", t.eval_on_train}};
  j["target_dice"] = t.target_dice ? json(*t.target_dice) : json(nullptr);
  return j;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  optim.validate();
  data.validate();
  if (augment) augment->validate();
  if (eval_images < 0) throw ConfigMismatch("eval_images must be non-negative");
  if (model.num_classes != data.num_classes) {
    throw ConfigMismatch("model and data disagree on the number of classes");
  }
  if (model.in_ch != 1) {
    throw ConfigMismatch("the synthetic pipeline produces single-channel images");
  }
  const std::int64_t fed = (augment && augment->crop_size > 0)
                               ? augment->crop_size
                               : data.image_size;
  if (model.in_h != fed || model.in_w != fed) {
    throw ConfigMismatch("model input " + std::to_string(model.in_h) + "x" +
                         std::to_string(model.in_w) +
                         " does not match the data pipeline output " +
                         std::to_string(fed) + "x" + std::to_string(fed));
  }
  if (train.loss != "voxelwise" && train.loss != "combined") {
    throw ConfigMismatch("train.loss must be voxelwise or combined");
  }
  if (train.checkpoint_interval < 0) {
    throw ConfigMismatch("checkpoint_interval must be non-negative");
  }
}

RunConfig parse_run_config(const nlohmann::json& j) {
  StrictObject o(j, "config");
  RunConfig c;
  c.version = o.get<std::int64_t>("version", 1);
  if (c.version != 1) {
    throw VersionMismatch("unsupported config version " + std::to_string(c.version));
  }
  c.seed = o.get<std::uint64_t>("seed", 0);
  if (o.has("model")) c.model = parse_model(o.child("model"));
  if (o.has("optim")) c.optim = parse_optim(o.child("optim"));
  if (o.has("data")) c.data = parse_data(o.child("data"), c.eval_images);
  if (o.has("augment") && !o.child("augment").is_null()) {
    c.augment = parse_augment(o.child("augment"));
  }
  if (o.has("train")) c.train = parse_train(o.child("train"));
  o.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["version"] = c.version;
  j["seed"] = c.seed;
  j["model"] = model_to_json(c.model);
  j["optim"] = optim_to_json(c.optim);
  j["data"] = data_to_json(c.data, c.eval_images);
  j["augment"] = c.augment ? augment_to_json(*c.augment) : nlohmann::json(nullptr);
  j["train"] = train_to_json(c.train);
  return j;
}

}  // namespace vitbis
