// SPDX-License-Identifier: Apache-2.0
// Command-line front end: data generation, mask caching, training, evaluation,
// rendering and parameter sweeps.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "omim/checkpoint.hpp"
#include "omim/config.hpp"
#include "omim/error.hpp"
#include "omim/eval.hpp"
#include "omim/json_io.hpp"
#include "omim/mask_cache.hpp"
#include "omim/scene.hpp"
#include "omim/trainer.hpp"

namespace fs = std::filesystem;
using namespace omim;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  bool dump_config = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "JSON config file");
  cmd->add_option("--set", c.overrides, "key=value override (repeatable)");
  cmd->add_flag("--dump-config", c.dump_config, "print the effective config and exit");
}

RunConfig effective_config(const Common& c) {
  RunConfig cfg;
  if (!c.config_file.empty()) cfg.apply_file(c.config_file);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  try {
    cfg.scene.validate();
  } catch (const PlacementError& e) {
    throw ConfigError(e.what());
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
  write_text_atomic(dir / "config.json", dump_stable(cfg.to_json(), 2));
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

std::vector<Sample> load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw ConfigError("no manifest.json in " + dir.string());
  return load_samples(dir);
}

TrainState load_init(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint " + path + " does not exist");
  return load_checkpoint(path);
}

/// Evaluates one task and returns the report (config and checkpoint id filled in).
EvalReport run_eval(const std::string& task, const TrainState& state, const std::vector<Sample>& data,
                    const RunConfig& cfg) {
  const Reconstructor rec = model_reconstructor(state);
  const int c = state.model.patch_size;
  EvalReport report;
  if (task == "recovery")
    report = context_recovery_rate(rec, data, c, cfg.eval_max_scenes, cfg.judge);
  else if (task == "shortcut")
    report = shortcut_score(rec, data, c, cfg.eval_max_scenes);
  else if (task == "miou")
    report = prompt_grid_miou(rec, data, c);
  else
    throw ConfigError("unknown eval task '" + task + "'");
  report.config = cfg.to_json();
  report.checkpoint_id = checkpoint_id(state);
  return report;
}

struct TrainArgs {
  int stage = 1;
  std::string data, out, init, cache;
  bool resume = false;
  int max_epochs = 0;
};

TrainResult run_train(RunConfig& cfg, const TrainArgs& a) {
  cfg.train.stage = a.stage;
  cfg.train.validate();
  const auto data = load_dataset(a.data);
  std::optional<TrainState> init;
  if (!a.init.empty()) init = load_init(a.init);
  if (a.stage == 2 && !init && !cfg.train.allow_scratch)
    throw ConfigError("stage 2 requires --init <stage-1 checkpoint> (or train.allow_scratch=true)");
  if (a.resume && !init) throw ConfigError("--resume requires --init");

  TrainOptions opts;
  opts.out_dir = a.out;
  opts.resume = a.resume;
  opts.max_epochs = a.max_epochs;
  std::vector<std::vector<ObjectAnnotation>> cached;
  if (!a.cache.empty()) {
    cached = load_cached_objects(load_manifest(fs::path(a.data) / "manifest.json"), a.data, a.cache);
    opts.objects.kind = ObjectSource::Kind::cached;
    opts.objects.cached = &cached;
  } else if (cfg.backend != TokenizerBackend::oracle) {
    opts.objects.kind = ObjectSource::Kind::online;
    opts.objects.backend = cfg.backend;
    opts.objects.params = cfg.extractor;
  }
  opts.on_epoch = [](const EpochStats& e) {
    std::cerr << "epoch " << e.epoch << " l_total " << e.l_total << " l_mim " << e.l_mim << " l_obj " << e.l_obj
              << "\n";
  };
  // A fresh model takes its input size from the data; a checkpoint keeps its own.
  if (!data.empty() && !init) {
    cfg.model.height = data.front().image.height();
    cfg.model.width = data.front().image.width();
    cfg.model.validate();
  }
  fs::create_directories(a.out);
  echo_config(cfg, a.out);
  const ModelConfig model = init ? init->model : cfg.model;
  return train(cfg.train, model, data, init ? &*init : nullptr, opts);
}

/// Sets `key` to the JSON-parsed `value` via the same path as --set.
void set_param(RunConfig& cfg, const std::string& key, const std::string& value) {
  cfg.apply_override(key + "=" + value);
  cfg.train.validate();
}

int dispatch(int argc, char** argv) {
  CLI::App app{"object-centric masked image modeling toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "omim 0.1");

  Common common;

  auto* gen = app.add_subcommand("gen-data", "generate synthetic scenes or prompt grids");
  std::string gen_kind = "scenes", gen_out;
  int gen_n = 200;
  std::uint64_t gen_seed = 0;
  gen->add_option("--kind", gen_kind, "scenes | prompt_grid")->check(CLI::IsMember({"scenes", "prompt_grid"}));
  gen->add_option("--n", gen_n, "number of entries")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  add_common(gen, common);

  auto* pre = app.add_subcommand("preprocess", "segment every image once into an RLE cache");
  std::string pre_data, pre_cache;
  pre->add_option("--data", pre_data, "dataset directory")->required();
  pre->add_option("--cache", pre_cache, "cache directory")->required();
  add_common(pre, common);

  auto* tr = app.add_subcommand("train", "run one training stage");
  TrainArgs targs;
  tr->add_option("--stage", targs.stage, "1 or 2")->check(CLI::IsMember({1, 2}));
  tr->add_option("--data", targs.data, "dataset directory")->required();
  tr->add_option("--out", targs.out, "run directory")->required();
  tr->add_option("--init", targs.init, "checkpoint to start from");
  tr->add_option("--cache", targs.cache, "mask cache produced by preprocess");
  tr->add_flag("--resume", targs.resume, "continue the run stored in --init");
  tr->add_option("--max-epochs", targs.max_epochs, "stop after this many epochs");
  add_common(tr, common);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_task = "recovery", ev_ckpt, ev_data, ev_out;
  ev->add_option("--task", ev_task, "recovery | miou | shortcut")->check(CLI::IsMember({"recovery", "miou", "shortcut"}));
  ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "report path (JSON)");
  add_common(ev, common);

  auto* rd = app.add_subcommand("render", "write qualitative reconstruction panels");
  std::string rd_ckpt, rd_data, rd_out, rd_mode = "recovery";
  int rd_n = 8;
  rd->add_option("--ckpt", rd_ckpt, "checkpoint")->required();
  rd->add_option("--data", rd_data, "dataset directory")->required();
  rd->add_option("--out", rd_out, "output directory")->required();
  rd->add_option("--n", rd_n, "number of panels")->check(CLI::PositiveNumber);
  rd->add_option("--mode", rd_mode, "recovery | object | random | quadrant")
      ->check(CLI::IsMember({"recovery", "object", "random", "quadrant"}));
  add_common(rd, common);

  auto* sw = app.add_subcommand("sweep", "retrain stage 2 per value of one config key and evaluate recovery");
  std::string sw_param = "r_obj", sw_data, sw_heldout, sw_init, sw_out;
  std::vector<std::string> sw_values;
  sw->add_option("--param", sw_param, "config key; bare names resolve under train.")->required();
  sw->add_option("--values", sw_values, "comma-separated values")->required()->delimiter(',');
  sw->add_option("--data", sw_data, "training dataset")->required();
  sw->add_option("--heldout", sw_heldout, "evaluation dataset")->required();
  sw->add_option("--init", sw_init, "stage-1 checkpoint")->required();
  sw->add_option("--out", sw_out, "output directory")->required();
  add_common(sw, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  RunConfig cfg = effective_config(common);
  if (common.dump_config) {
    std::cout << dump_stable(cfg.to_json(), 2);
    return 0;
  }

  if (gen->parsed()) {
    const fs::path out = gen_out;
    const DatasetManifest m = gen_kind == "scenes" ? generate_dataset(cfg.scene, gen_n, gen_seed, out)
                                                   : generate_prompt_grid_dataset(cfg.scene, gen_n, gen_seed, out);
    echo_config(cfg, out);
    print_json({{"entries", m.entries.size()}, {"manifest", (out / "manifest.json").string()}});
  } else if (pre->parsed()) {
    const auto manifest = load_manifest(fs::path(pre_data) / "manifest.json");
    CacheStats stats;
    const auto index = preprocess_masks(manifest, pre_data, cfg.backend, pre_cache, &stats, cfg.extractor);
    echo_config(cfg, pre_cache);
    print_json({{"backend", std::string(backend_name(index.backend))},
                {"segmentations_run", stats.segmentations_run},
                {"cache_hits", stats.cache_hits}});
  } else if (tr->parsed()) {
    const TrainResult r = run_train(cfg, targs);
    print_json({{"checkpoint", (fs::path(targs.out) / "checkpoint.bin").string()},
                {"checkpoint_id", checkpoint_id(r.state)},
                {"steps", r.state.step},
                {"fallback_batch_fraction", r.fallback_batch_fraction}});
  } else if (ev->parsed()) {
    const auto data = load_dataset(ev_data);
    const EvalReport report = run_eval(ev_task, load_init(ev_ckpt), data, cfg);
    if (!ev_out.empty()) {
      save_report(report, ev_out);
      echo_config(cfg, fs::path(ev_out).parent_path().empty() ? fs::path(".") : fs::path(ev_out).parent_path());
    }
    print_json({{"metric", report.metric}, {"value", report.value}, {"breakdown", report.breakdown}});
  } else if (rd->parsed()) {
    const auto data = load_dataset(rd_data);
    const TrainState state = load_init(rd_ckpt);
    const Reconstructor rec = model_reconstructor(state);
    const int c = state.model.patch_size;
    std::vector<Panel> panels;
    if (rd_mode == "recovery") {
      for (const auto& t : recovery_trials(data, c)) {
        if (static_cast<int>(panels.size()) >= rd_n) break;
        const Image& img = data[static_cast<std::size_t>(t.sample)].image;
        panels.push_back({img, t.plan, rec(img, t.plan), img,
                          std::string(shape_name(t.visible)) + "_to_" + std::string(shape_name(t.partner))});
      }
    } else {
      for (int i = 0; i < rd_n && i < static_cast<int>(data.size()); ++i) {
        const Sample& s = data[static_cast<std::size_t>(i)];
        MaskPlan plan;
        if (rd_mode == "quadrant") {
          plan = quadrant_plan(s.image.height(), s.image.width(), c);
        } else {
          TrainConfig tc = cfg.train;
          tc.stage = rd_mode == "object" ? 2 : 1;
          plan = plan_for_sample(tc, state.model, s.objects, 0, i);
        }
        Image truth = s.image;
        panels.push_back({s.image, plan, rec(s.image, plan), truth, s.image_path});
      }
    }
    const auto paths = render_report(panels, c, rd_out);
    echo_config(cfg, rd_out);
    print_json({{"panels", paths.size()}, {"out", rd_out}});
  } else if (sw->parsed()) {
    std::string key = sw_param;
    if (key.find('.') == std::string::npos) key = "train." + key;
    const auto heldout = load_dataset(sw_heldout);
    fs::create_directories(sw_out);
    echo_config(cfg, sw_out);
    std::ostringstream csv;
    csv << "param,value,recovery,shortcut,checkpoint_id\n";
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& value : sw_values) {
      RunConfig run = cfg;
      set_param(run, key, value);
      TrainArgs a;
      a.stage = 2;
      a.data = sw_data;
      a.init = sw_init;
      a.out = (fs::path(sw_out) / (sw_param + "_" + value)).string();
      const TrainResult r = run_train(run, a);
      const EvalReport rec = run_eval("recovery", r.state, heldout, run);
      const EvalReport sc = run_eval("shortcut", r.state, heldout, run);
      save_report(rec, fs::path(a.out) / "recovery.json");
      save_report(sc, fs::path(a.out) / "shortcut.json");
      csv << sw_param << "," << value << "," << rec.value << "," << sc.value << "," << rec.checkpoint_id << "\n";
      rows.push_back({{"value", value}, {"recovery", rec.value}, {"shortcut", sc.value}});
      std::cerr << sw_param << "=" << value << " recovery " << rec.value << " shortcut " << sc.value << "\n";
    }
    write_text_atomic(fs::path(sw_out) / "sweep.csv", csv.str());
    write_text_atomic(fs::path(sw_out) / "sweep.json", dump_stable({{"param", key}, {"rows", rows}}, 2));
    print_json({{"csv", (fs::path(sw_out) / "sweep.csv").string()}, {"rows", rows.size()}});
  }
  return 0;
}

void report_error(const char* kind, const std::exception& e) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", e.what()}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    report_error("config", e);
    return kExitConfig;
  } catch (const Error& e) {
    report_error("runtime", e);
    return kExitRuntime;
  } catch (const std::exception& e) {
    report_error("runtime", e);
    return kExitRuntime;
  }
}
