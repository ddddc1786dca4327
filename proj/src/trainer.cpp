// SPDX-License-Identifier: Apache-2.0
#include "omim/trainer.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "omim/error.hpp"
#include "omim/random.hpp"

namespace omim {

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("train: stage must be 1 or 2");
  if (epochs < 0 || stage2_epochs < 0 || batch_size < 1 || grad_accum < 1) throw ConfigError("train: epochs, batch_size and grad_accum must be positive");
  if (!(base_lr >= 0.0) || warmup_epochs < 0 || !(weight_decay >= 0.0)) throw ConfigError("train: invalid optimizer settings");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
    throw ConfigError("train: invalid Adam betas or epsilon");
  if (!(r_patch > 0.0 && r_patch < 1.0)) throw ConfigError("train: r_patch must lie in (0, 1)");
  if (!(r_obj > 0.0 && r_obj <= 1.0)) throw ConfigError("train: r_obj must lie in (0, 1]");
  if (!(patch_cap > 0.0 && patch_cap < 1.0)) throw ConfigError("train: patch_cap must lie in (0, 1)");
  if (!(patch_cap < r_patch)) throw ConfigError("train: stage-2 patch_cap must be below r_patch");
  LossConfig{lambda1, enable_mim, enable_obj}.validate();
}

double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr) {
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const std::int64_t span = total_steps - warmup_steps;
  if (span <= 0) return base_lr;
  const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

namespace {

constexpr std::uint64_t kStageSalt = 0x5354414745ULL;

std::uint64_t epoch_seed(const TrainConfig& cfg, int epoch) {
  return derive_seed(derive_seed(cfg.seed, kStageSalt + static_cast<std::uint64_t>(cfg.stage)),
                     static_cast<std::uint64_t>(epoch));
}

std::string first_non_finite(const Params<float>& p, const Params<float>& g) {
  std::string found;
  auto scan = [&](const char* prefix, const Params<float>& t) {
    t.for_each([&](const std::string& name, const Mat<float>& m, Params<float>::Role) {
      if (found.empty() && !m.allFinite()) found = std::string(prefix) + name;
    });
  };
  scan("param/", p);
  scan("grad/", g);
  return found.empty() ? "none (loss only)" : found;
}

}  // namespace

MaskPlan plan_for_sample(const TrainConfig& cfg, const ModelConfig& model, const std::vector<ObjectAnnotation>& objects,
                         int epoch, int index) {
  const std::uint64_t s = derive_seed(epoch_seed(cfg, epoch), static_cast<std::uint64_t>(index));
  if (cfg.stage == 1 || cfg.stage2_masking == Stage2Masking::random)
    return plan_random_mask(model.num_patches(), cfg.r_patch, s);
  ObjectPlanConfig oc;
  oc.r_obj = cfg.r_obj;
  oc.patch_cap = cfg.patch_cap;
  oc.pixel_budget = cfg.pixel_budget;
  oc.expansion = cfg.expansion;
  return plan_object_mask(objects, model.patch_size, model.grid_h(), model.grid_w(), oc, s);
}

std::string step_record_json(const StepRecord& r) {
  nlohmann::json j{{"step", r.step}, {"epoch", r.epoch}, {"l_mim", r.l_mim},
                   {"l_obj", r.l_obj}, {"l_total", r.l_total}, {"lr", r.lr}};
  return j.dump();
}

TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, const std::vector<Sample>& data,
                  const TrainState* init, const TrainOptions& opts) {
  cfg.validate();
  model_cfg.validate();
  if (cfg.stage == 2 && !init && !cfg.allow_scratch)
    throw ConfigError("train: stage 2 needs a stage-1 checkpoint (set allow_scratch to train from scratch)");
  if (data.empty()) throw ConfigError("train: empty dataset");
  if (init && !(init->model == model_cfg)) throw ConfigError("train: checkpoint model config differs from the requested one");
  if (opts.objects.kind == ObjectSource::Kind::cached && (!opts.objects.cached || opts.objects.cached->size() != data.size()))
    throw ConfigError("train: cached object lists do not match the dataset");

  const int n = static_cast<int>(data.size());
  const int M = model_cfg.num_patches();
  const PatchLayout layout{model_cfg.patch_size, model_cfg.grid_h(), model_cfg.grid_w()};
  std::vector<PatchGrid> grids;
  grids.reserve(data.size());
  for (const auto& s : data) {
    if (s.image.height() != model_cfg.height || s.image.width() != model_cfg.width)
      throw ConfigError("train: image size does not match the model");
    grids.push_back(patchify(s.image, model_cfg.patch_size));
  }

  TrainResult result;
  TrainState& st = result.state;
  st.model = model_cfg;
  st.stage = static_cast<std::uint32_t>(cfg.stage);
  const bool resuming = opts.resume && init && init->stage == st.stage && init->adam_m.has_value();
  if (opts.resume && !resuming) throw ConfigError("train: resume needs a same-stage checkpoint with optimizer state");
  st.params = init ? init->params : init_params<float>(model_cfg, model_cfg.seed);
  st.adam_m = resuming ? *init->adam_m : st.params.zeros_like();
  st.adam_v = resuming ? *init->adam_v : st.params.zeros_like();
  st.step = resuming ? init->step : 0;

  const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int steps_per_epoch = (batches_per_epoch + cfg.grad_accum - 1) / cfg.grad_accum;
  const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs_for_stage();
  const std::int64_t warmup_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.warmup_epochs;
  if (st.step % static_cast<std::uint64_t>(steps_per_epoch) != 0)
    throw ConfigError("train: can only resume from an epoch boundary");
  const int start_epoch = static_cast<int>(st.step / static_cast<std::uint64_t>(steps_per_epoch));
  int end_epoch = cfg.epochs_for_stage();
  if (opts.max_epochs > 0) end_epoch = std::min(end_epoch, start_epoch + opts.max_epochs);

  const LossConfig loss_cfg{cfg.lambda1, cfg.enable_mim, cfg.enable_obj};
  std::ofstream log;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    log.open(*opts.out_dir / "log.jsonl", resuming ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open training log in " + opts.out_dir->string());
  }

  MaskedAutoencoder<float> net(model_cfg, st.params);
  Params<float> grads = st.params.zeros_like();
  Tape<float> tape;
  int total_batches = 0, total_fallback_batches = 0;

  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng(derive_seed(epoch_seed(cfg, epoch), 0xFFFFFFFFFFFFULL));
    shuffle_rng.shuffle(order);

    EpochStats es;
    es.epoch = epoch;
    int accumulated = 0;
    StepRecord pending;
    for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const int bn = std::min(cfg.batch_size, n - b0);
      std::vector<MaskPlan> plans(static_cast<std::size_t>(bn));
      std::vector<std::vector<ObjectAnnotation>> objects(static_cast<std::size_t>(bn));
      std::vector<ModelInput> inputs;
      bool any_fallback = false;
      for (int k = 0; k < bn; ++k) {
        const int idx = order[static_cast<std::size_t>(b0 + k)];
        auto& objs = objects[static_cast<std::size_t>(k)];
        if (cfg.stage == 2 && cfg.stage2_masking == Stage2Masking::object) {
          switch (opts.objects.kind) {
            case ObjectSource::Kind::annotations: objs = data[static_cast<std::size_t>(idx)].objects; break;
            case ObjectSource::Kind::cached: objs = (*opts.objects.cached)[static_cast<std::size_t>(idx)]; break;
            case ObjectSource::Kind::online:
              objs = extract_objects(data[static_cast<std::size_t>(idx)].image, opts.objects.backend,
                                     &data[static_cast<std::size_t>(idx)].objects, opts.objects.params);
              ++result.segmentations_run;
              break;
          }
        }
        plans[static_cast<std::size_t>(k)] = plan_for_sample(cfg, model_cfg, objs, epoch, idx);
        if (cfg.stage == 2 && cfg.stage2_masking == Stage2Masking::object && plans[static_cast<std::size_t>(k)].fallback) {
          ++es.fallback_samples;
          any_fallback = true;
        }
      }
      for (int k = 0; k < bn; ++k)
        inputs.push_back({&grids[static_cast<std::size_t>(order[static_cast<std::size_t>(b0 + k)])].patches,
                          &plans[static_cast<std::size_t>(k)]});

      const Mat<float> out = net.forward(inputs, &tape);
      Mat<float> d_out = Mat<float>::Zero(out.rows(), out.cols());
      double b_mim = 0.0, b_obj = 0.0, b_total = 0.0;
      for (int k = 0; k < bn; ++k) {
        const MaskPlan& plan = plans[static_cast<std::size_t>(k)];
        const Mat<float> pred = gather_masked(out, k, plan);
        Mat<float> g;
        const LossReport rep = loss_total(pred, grids[static_cast<std::size_t>(order[static_cast<std::size_t>(b0 + k)])].patches,
                                          plan, objects[static_cast<std::size_t>(k)], layout, loss_cfg, &g);
        b_mim += rep.l_mim;
        b_obj += rep.l_obj;
        b_total += rep.l_total;
        // Uniform batch mean; gradient accumulation averages micro-batches.
        const float scale = 1.0f / static_cast<float>(bn * cfg.grad_accum);
        for (std::size_t r = 0; r < plan.masked_idx.size(); ++r)
          d_out.row(k * M + plan.masked_idx[r]) = g.row(static_cast<Eigen::Index>(r)) * scale;
      }
      b_mim /= bn;
      b_obj /= bn;
      b_total /= bn;
      if (!std::isfinite(b_total)) {
        throw NonFiniteError("train: non-finite loss at step " + std::to_string(st.step) + " (epoch " +
                             std::to_string(epoch) + "); first non-finite tensor: " +
                             first_non_finite(net.params(), grads));
      }
      net.backward(tape, d_out, grads);

      es.l_mim += b_mim;
      es.l_obj += b_obj;
      es.l_total += b_total;
      ++es.batches;
      es.fallback_batches += any_fallback ? 1 : 0;
      pending.l_mim += b_mim / cfg.grad_accum;
      pending.l_obj += b_obj / cfg.grad_accum;
      pending.l_total += b_total / cfg.grad_accum;
      ++accumulated;

      const bool last_batch = b0 + cfg.batch_size >= n;
      if (accumulated < cfg.grad_accum && !last_batch) continue;

      // AdamW with decoupled weight decay on matrix weights only.
      const double lr = lr_at(static_cast<std::int64_t>(st.step), total_steps, warmup_steps, cfg.base_lr);
      const double t = static_cast<double>(st.step + 1);
      const double bc1 = 1.0 - std::pow(cfg.beta1, t);
      const double bc2 = 1.0 - std::pow(cfg.beta2, t);
      std::vector<Mat<float>*> gp, mp, vp;
      grads.for_each([&](const std::string&, Mat<float>& g, Params<float>::Role) { gp.push_back(&g); });
      st.adam_m->for_each([&](const std::string&, Mat<float>& m, Params<float>::Role) { mp.push_back(&m); });
      st.adam_v->for_each([&](const std::string&, Mat<float>& v, Params<float>::Role) { vp.push_back(&v); });
      bool grads_finite = true;
      grads.for_each([&](const std::string&, const Mat<float>& g, Params<float>::Role) { grads_finite &= g.allFinite(); });
      if (!grads_finite) {
        throw NonFiniteError("train: non-finite gradient at step " + std::to_string(st.step) +
                             "; first non-finite tensor: " + first_non_finite(net.params(), grads));
      }
      std::size_t ti = 0;
      net.params().for_each([&](const std::string&, Mat<float>& p, Params<float>::Role role) {
        const std::size_t i = ti++;
        if (role == Params<float>::Role::frozen) return;
        Mat<float>& g = *gp[i];
        Mat<float>& m = *mp[i];
        Mat<float>& v = *vp[i];
        const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
        m = b1 * m + (1.0f - b1) * g;
        v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
        const float step_size = static_cast<float>(lr / bc1);
        const float denom_scale = static_cast<float>(1.0 / std::sqrt(bc2));
        if (role == Params<float>::Role::weight) p *= static_cast<float>(1.0 - lr * cfg.weight_decay);
        p.array() -= step_size * m.array() / (v.array().sqrt() * denom_scale + static_cast<float>(cfg.adam_eps));
      });
      grads.for_each([](const std::string&, Mat<float>& g, Params<float>::Role) { g.setZero(); });

      pending.step = static_cast<std::int64_t>(st.step);
      pending.epoch = epoch;
      pending.lr = lr;
      if (accumulated < cfg.grad_accum) {
        const double f = static_cast<double>(cfg.grad_accum) / accumulated;
        pending.l_mim *= f;
        pending.l_obj *= f;
        pending.l_total *= f;
      }
      result.steps.push_back(pending);
      if (log) log << step_record_json(pending) << '\n';
      pending = StepRecord{};
      accumulated = 0;
      ++st.step;
    }
    es.l_mim /= es.batches;
    es.l_obj /= es.batches;
    es.l_total /= es.batches;
    total_batches += es.batches;
    total_fallback_batches += es.fallback_batches;
    result.epochs.push_back(es);
    st.params = net.params();
    if (opts.out_dir) {
      log.flush();
      save_checkpoint(st, *opts.out_dir / "checkpoint.bin");
    }
    if (opts.on_epoch) opts.on_epoch(es);
  }
  st.params = net.params();
  result.fallback_batch_fraction = total_batches ? static_cast<double>(total_fallback_batches) / total_batches : 0.0;
  return result;
}

}  // namespace omim
