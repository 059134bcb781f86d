#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "vitbis/config.hpp"
#include "vitbis/grad_suite.hpp"
#include "vitbis/train.hpp"
#include "vitbis/vtb.hpp"

namespace fs = std::filesystem;

namespace {

std::string numbered_name(const char* prefix, std::int64_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%05lld.vtb", prefix, static_cast<long long>(i));
  return buf;
}

vitbis::VitbisModel model_from_checkpoint(const vitbis::Checkpoint& c) {
  vitbis::VitbisModel model(c.config.model);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    *model.params()[i].value = *c.params[i].value;
  }
  return model;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw vitbis::UsageError("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace vitbis;

  CLI::App app{"Transformer segmentation workbench: train, evaluate and "
               "inspect models on the built-in synthetic dataset."};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, ablate_mode;
  std::uint64_t seed = 0;

  CLI::App* train = app.add_subcommand("train", "Train a model from a config, or resume a checkpoint");
  train->add_option("--config", config_path, "Run config JSON");
  train->add_option("--checkpoint", checkpoint_path, "Checkpoint to resume from");
  train->add_option("--out", out_dir, "Output directory")->required();
  CLI::Option* train_seed = train->add_option("--seed", seed, "Root seed override");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its eval split");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint to evaluate")->required();
  eval->add_option("--out", out_dir, "Directory for metrics.csv (optional)");

  CLI::App* predict = app.add_subcommand("predict", "Write one predicted mask per eval image");
  predict->add_option("--checkpoint", checkpoint_path, "Checkpoint to run")->required();
  predict->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference sweep over all primitives");
  gradcheck->add_option("--seed", seed, "Base seed");

  CLI::App* ablate = app.add_subcommand("ablate", "Comparison harnesses");
  ablate->add_option("mode", ablate_mode, "upsample | scale")
      ->required()
      ->check(CLI::IsMember({"upsample", "scale"}));
  ablate->add_option("--config", config_path, "Base run config JSON")->required();
  ablate->add_option("--out", out_dir, "Directory for the table files (optional)");
  CLI::Option* ablate_seed = ablate->add_option("--seed", seed, "Root seed override");

  CLI::App* gen = app.add_subcommand("gen-data", "Write the config's training images as VTB1 files");
  gen->add_option("--config", config_path, "Run config JSON")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();
  CLI::Option* gen_seed = gen->add_option("--seed", seed, "Root seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      RunConfig cfg;
      RunOptions opts;
      opts.out_dir = out_dir;
      if (!checkpoint_path.empty()) {
        if (!config_path.empty()) {
          throw UsageError("pass either --config or --checkpoint, not both");
        }
        if (train_seed->count()) {
          throw UsageError("--seed cannot override a resumed run");
        }
        cfg = load_checkpoint(checkpoint_path).config;
        opts.resume = checkpoint_path;
      } else {
        if (config_path.empty()) {
          throw UsageError("train needs --config or --checkpoint");
        }
        cfg = load_run_config(config_path);
        if (train_seed->count()) {
          cfg.seed = seed;
          cfg.validate();
        }
      }
      TrainResult r = run_training(cfg, opts, std::cout);
      std::cout << "manifest: " << r.manifest_path << "\n";
      return 0;
    }

    if (eval->parsed()) {
      Checkpoint c = load_checkpoint(checkpoint_path);
      VitbisModel model = model_from_checkpoint(c);
      MetricReport rep = evaluate_model(model, evaluation_set(c.config));
      std::cout << report_table(rep);
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "metrics.csv", report_csv(rep));
      }
      return 0;
    }

    if (predict->parsed()) {
      Checkpoint c = load_checkpoint(checkpoint_path);
      VitbisModel model = model_from_checkpoint(c);
      const std::vector<Sample> samples = evaluation_set(c.config);
      fs::create_directories(out_dir);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        Tensor x;
        x.shape = Shape{1, s.image.shape[0], s.image.shape[1], s.image.shape[2]};
        x.data = s.image.data;
        LabelMask mask = predict_mask(model, x);
        nlohmann::json meta{{"schema", "vitbis-prediction@1"},
                            {"index", static_cast<std::int64_t>(i)}};
        write_vtb((fs::path(out_dir) / numbered_name("mask", static_cast<std::int64_t>(i))).string(),
                  {mask_to_vtb("mask", mask)}, meta);
      }
      std::cout << "wrote " << samples.size() << " masks to " << out_dir << "\n";
      return 0;
    }

    if (gradcheck->parsed()) {
      return run_gradient_suite(seed, std::cout) ? 0 : 2;
    }

    if (ablate->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (ablate_seed->count()) {
        cfg.seed = seed;
        cfg.validate();
      }
      AblationTable table = ablate_mode == "upsample"
                                ? ablate_upsampling(cfg, std::cout)
                                : ablate_scale(cfg, std::cout);
      std::cout << table.text();
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / ("ablation-" + ablate_mode + ".csv"), table.csv());
        write_text(fs::path(out_dir) / ("ablation-" + ablate_mode + ".txt"), table.text());
      }
      return 0;
    }

    if (gen->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (gen_seed->count()) {
        cfg.seed = seed;
        cfg.validate();
      }
      const std::vector<Sample> samples = training_set(cfg);
      fs::create_directories(out_dir);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        nlohmann::json meta{{"schema", "vitbis-sample@1"},
                            {"index", static_cast<std::int64_t>(i)}};
        write_vtb((fs::path(out_dir) / numbered_name("sample", static_cast<std::int64_t>(i))).string(),
                  {tensor_to_vtb("image", samples[i].image),
                   mask_to_vtb("mask", samples[i].mask)},
                  meta);
      }
      std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
