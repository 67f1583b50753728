#pragma once

// Multi-scale training on one segment and coarse-to-fine generation.
//
// Stage 0 reads bar t at the coarsest scale and predicts bar t+1 position-wise.
// Stage i > 0 reads the upsampled stage i-1 version of bar t+1 and refines it to its
// own resolution. XL memory carries history between bars.

#include <sintra/error.hpp>
#include <sintra/nn/autograd.hpp>
#include <sintra/nn/optim.hpp>
#include <sintra/nn/stage_model.hpp>
#include <sintra/pgroup.hpp>
#include <sintra/pyramid.hpp>
#include <sintra/random.hpp>
#include <sintra/sampling.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace sintra {

/// Shared network shape for every stage; proc_len/mem_len come from the scale.
struct Architecture {
  int layers = 6;
  int heads = 8;
  int head_dim = 32;
  int model_dim = 256;
  int ffn_dim = 1024;
  double dropout = 0.09;

  nn::StageConfig stage_config(int tokens_per_bar) const {
    nn::StageConfig c;
    c.layers = layers;
    c.heads = heads;
    c.head_dim = head_dim;
    c.model_dim = model_dim;
    c.ffn_dim = ffn_dim;
    c.dropout = dropout;
    c.proc_len = tokens_per_bar;
    c.mem_len = tokens_per_bar;
    return c;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct TrainConfig {
  int steps_per_stage = 2000;
  bool teacher_forcing = true;
  double base_lr = 2e-4;
  int warmup_steps = 200;
  double min_lr_ratio = 0.01;
  std::uint64_t seed = 0;
  Architecture arch;
  /// Nucleus thresholds for upstream samples when teacher forcing is off.
  double sample_p_coarse = 0.9;
  double sample_p_refine = 0.3;

  void validate() const {
    if (steps_per_stage <= 0) throw UsageError("steps_per_stage must be positive");
    if (!(base_lr > 0)) throw UsageError("base_lr must be positive");
    if (warmup_steps < 0) throw UsageError("warmup_steps must be >= 0");
    if (!(min_lr_ratio >= 0 && min_lr_ratio <= 1)) throw UsageError("min_lr_ratio must be in [0, 1]");
    if (!(sample_p_coarse > 0 && sample_p_coarse <= 1) || !(sample_p_refine > 0 && sample_p_refine <= 1))
      throw UsageError("top-p thresholds must be in (0, 1]");
    arch.stage_config(1).validate();
  }

  double lr(std::int64_t step) const {
    return nn::lr_schedule(step, steps_per_stage, base_lr, warmup_steps, base_lr * min_lr_ratio);
  }
};

struct GenConfig {
  int primer_bars = 12;
  int gen_bars = 32;
  double p_coarse = 0.9;
  double p_refine = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (primer_bars < 1) throw UsageError("primer_bars must be >= 1");
    if (gen_bars < 1) throw UsageError("gen_bars must be >= 1");
    if (!(p_coarse > 0 && p_coarse <= 1) || !(p_refine > 0 && p_refine <= 1))
      throw UsageError("top-p thresholds must be in (0, 1]");
  }
};

struct Stage {
  ScaleSpec scale;
  nn::StageModel<float> model;
  nn::OptimizerState<float> optimizer;
  std::vector<double> nll_curve;  ///< training loss per step
  double final_nll = 0.0;         ///< eval-mode mean NLL over one epoch after training
};

/// Trained pyramid, coarse stage first.
struct SinTraModel {
  std::vector<Stage> stages;
  std::shared_ptr<const Dictionaries> dictionaries;
  TrainConfig train_config;
  bool single_stage = false;
  /// Training segment at the finest stage's resolution.
  TokenSequence segment;

  int depth() const { return static_cast<int>(stages.size()); }
  int finest_note_value() const { return stages.back().scale.note_value; }
  int steps_per_bar() const { return segment.steps_per_bar; }
  std::vector<ScaleSpec> scales() const {
    std::vector<ScaleSpec> out;
    for (const auto& s : stages) out.push_back(s.scale);
    return out;
  }
};

/// Called after every optimizer step: (stage index, step, loss).
using TrainObserver = std::function<void(int, int, double)>;

namespace pipeline_detail {

inline std::vector<std::vector<int>> rows_of(const TokenGrid& g) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(g.tracks));
  for (int k = 0; k < g.tracks; ++k)
    out[k].assign(g.data.begin() + static_cast<std::ptrdiff_t>(k) * g.steps,
                  g.data.begin() + static_cast<std::ptrdiff_t>(k + 1) * g.steps);
  return out;
}

/// allowed[k][v]: token v of track k occurs in the segment.
using TokenMask = std::vector<std::vector<bool>>;

/// Top-p sample per track and position (tracks outer, positions inner). Tokens outside
/// `allowed` get zero probability.
inline TokenGrid sample_grid(const std::vector<nn::Var<float>>& logits, double p, Rng& rng,
                             const TokenMask* allowed = nullptr) {
  const int tracks = static_cast<int>(logits.size());
  const int steps = static_cast<int>(logits[0]->value.rows());
  TokenGrid out(tracks, steps);
  std::vector<double> row;
  for (int k = 0; k < tracks; ++k) {
    const auto& z = logits[k]->value;
    for (int t = 0; t < steps; ++t) {
      row.assign(z.data() + static_cast<std::size_t>(t) * z.cols(), z.data() + static_cast<std::size_t>(t + 1) * z.cols());
      if (!allowed) {
        out.at(k, t) = top_p_sample(row, p, rng);
        continue;
      }
      auto probs = softmax(row);
      double mass = 0.0;
      for (std::size_t v = 0; v < probs.size(); ++v) mass += probs[v] *= (*allowed)[k][v] ? 1.0 : 0.0;
      if (!(mass > 0.0)) throw NumericError("no probability mass on segment tokens");
      for (auto& q : probs) q /= mass;
      out.at(k, t) = top_p_sample_probs(probs, p, rng);
    }
  }
  return out;
}

inline TokenMask occurring_tokens(const TokenSequence& seq) {
  TokenMask m;
  for (int k = 0; k < seq.tracks(); ++k) {
    m.emplace_back(static_cast<std::size_t>(seq.dicts()[k].size()), false);
    for (int t = 0; t < seq.steps(); ++t) m.back()[static_cast<std::size_t>(seq.tokens.at(k, t))] = true;
  }
  return m;
}

inline int ratio(const ScaleSpec& fine, const ScaleSpec& coarse) { return fine.note_value / coarse.note_value; }

/// Eval-mode mean NLL of a stage over one epoch of teacher-forced bar pairs.
/// Context-only forward of the upsampled coarse bar 0 through a refinement stage. With
/// empty memory the leading positions of an upsampled bar carry identical inputs and
/// cannot be told apart, so scored bars always follow at least one bar of context.
inline void warm_refiner(const nn::StageModel<float>& model, nn::XlMemory<float>& memory, const SequencePyramid& pyr,
                         std::size_t i) {
  nn::NoGradGuard no_grad;
  model.forward(upsample(pyr.levels[i - 1].bar(0), ratio(pyr.specs[i], pyr.specs[i - 1])), memory, false, nullptr);
}

inline double evaluate_stage(const Stage& stage, const SequencePyramid& pyr, std::size_t i) {
  nn::NoGradGuard no_grad;
  const auto& level = pyr.levels[i];
  auto memory = stage.model.new_memory();
  if (i > 0) warm_refiner(stage.model, memory, pyr, i);
  double total = 0.0;
  int pairs = level.bars() - 1;
  for (int t = 0; t < pairs; ++t) {
    TokenGrid input = i == 0 ? level.bar(t) : upsample(pyr.levels[i - 1].bar(t + 1), ratio(pyr.specs[i], pyr.specs[i - 1]));
    auto logits = stage.model.forward(input, memory, false, nullptr);
    total += nn::nll_loss(logits, rows_of(level.bar(t + 1)))->value[0];
  }
  return total / pairs;
}

inline SinTraModel train_pyramid(const TokenSequence& real, const std::vector<ScaleSpec>& specs, const TrainConfig& cfg,
                                 bool single_stage, const TrainObserver& observer) {
  cfg.validate();
  real.validate();
  if (real.bars() < 2) throw DataError("segment must span at least 2 bars, got " + std::to_string(real.bars()));
  if (real.steps() % real.steps_per_bar != 0) throw DataError("segment is not a whole number of bars");

  SequencePyramid pyr = build_pyramid(real, specs);
  SinTraModel model;
  model.dictionaries = real.dictionaries;
  model.train_config = cfg;
  model.single_stage = single_stage;
  model.segment = pyr.levels.back();
  const auto vocab = vocab_sizes(real.dicts());
  const int pairs = real.bars() - 1;

  for (std::size_t i = 0; i < pyr.depth(); ++i) {
    const auto& level = pyr.levels[i];
    const std::string tag = std::to_string(i);
    Stage stage;
    stage.scale = pyr.specs[i];
    stage.model = nn::StageModel<float>(cfg.arch.stage_config(level.steps_per_bar), vocab,
                                        substream_seed(cfg.seed, "train/init:" + tag));
    stage.optimizer = nn::OptimizerState<float>::for_parameters(stage.model.parameters());
    Rng dropout_rng(substream_seed(cfg.seed, "train/dropout:" + tag));
    Rng sample_rng(substream_seed(cfg.seed, "train/sample:" + tag));

    auto memory = stage.model.new_memory();
    std::vector<nn::XlMemory<float>> upstream;
    for (std::size_t j = 0; j < i; ++j) upstream.push_back(model.stages[j].model.new_memory());

    // Upstream prediction of bar t+1 at scale i-1, sampled from the frozen stages.
    auto sampled_upstream = [&](int t) {
      nn::NoGradGuard no_grad;
      auto logits = model.stages[0].model.forward(pyr.levels[0].bar(t), upstream[0], false, nullptr);
      TokenGrid cur = pipeline_detail::sample_grid(logits, cfg.sample_p_coarse, sample_rng);
      for (std::size_t j = 1; j < i; ++j) {
        TokenGrid in = upsample(cur, ratio(pyr.specs[j], pyr.specs[j - 1]));
        cur = pipeline_detail::sample_grid(model.stages[j].model.forward(in, upstream[j], false, nullptr),
                                           cfg.sample_p_refine, sample_rng);
      }
      return cur;
    };

    for (int s = 0; s < cfg.steps_per_stage; ++s) {
      const int t = s % pairs;
      if (t == 0) {
        memory.reset();
        for (auto& m : upstream) m.reset();
        for (std::size_t j = 1; j < i && !cfg.teacher_forcing; ++j) warm_refiner(model.stages[j].model, upstream[j], pyr, j);
        if (i > 0) warm_refiner(stage.model, memory, pyr, i);
      }
      TokenGrid input;
      if (i == 0) {
        input = level.bar(t);
      } else {
        TokenGrid coarse = cfg.teacher_forcing ? pyr.levels[i - 1].bar(t + 1) : sampled_upstream(t);
        input = upsample(coarse, ratio(pyr.specs[i], pyr.specs[i - 1]));
      }
      stage.model.zero_grad();
      auto logits = stage.model.forward(input, memory, true, &dropout_rng);
      auto loss = nn::nll_loss(logits, rows_of(level.bar(t + 1)));
      const double value = loss->value[0];
      if (!std::isfinite(value))
        throw NumericError("training diverged in stage " + tag + " at step " + std::to_string(s));
      nn::backward(loss);
      nn::adam_step(stage.model.parameters(), stage.optimizer, cfg.lr(s + 1));
      stage.nll_curve.push_back(value);
      if (observer) observer(static_cast<int>(i), s, value);
    }
    stage.final_nll = evaluate_stage(stage, pyr, i);
    model.stages.push_back(std::move(stage));
  }
  return model;
}

/// Express `seq` with the model's dictionaries; throws DataError for unseen groups.
inline TokenSequence remap(const TokenSequence& seq, const std::shared_ptr<const Dictionaries>& dicts) {
  seq.validate();
  if (seq.dictionaries == dicts || seq.dicts() == *dicts) {
    TokenSequence out = seq;
    out.dictionaries = dicts;
    return out;
  }
  if (seq.tracks() != static_cast<int>(dicts->size()))
    throw DataError("primer has " + std::to_string(seq.tracks()) + " tracks, model has " +
                    std::to_string(dicts->size()));
  TokenSequence out = seq;
  out.dictionaries = dicts;
  for (int k = 0; k < seq.tracks(); ++k)
    for (int t = 0; t < seq.steps(); ++t) {
      const auto& g = seq.dicts()[k].group(seq.tokens.at(k, t));
      auto idx = (*dicts)[k].index_of(g);
      if (!idx)
        throw DataError("primer pitch group {" + g.to_string() + "} in track " + std::to_string(k) + " at step " +
                        std::to_string(t) + " is not in the training dictionary");
      out.tokens.at(k, t) = *idx;
    }
  return out;
}

}  // namespace pipeline_detail

/// Train the full pyramid; scales come from choose_scales on the decoded segment. A
/// segment finer than the chosen finest scale is downsampled to it first.
inline SinTraModel train(const TokenSequence& real, const TrainConfig& cfg, const TrainObserver& observer = {}) {
  auto specs = choose_scales(decode(real));
  if (specs.back().note_value > real.note_value)
    throw DataError("segment resolution is coarser than its shortest note");
  TokenSequence finest = downsample(real, real.note_value / specs.back().note_value);
  return pipeline_detail::train_pyramid(finest, specs, cfg, false, observer);
}

/// Ablation baseline: one stage at the segment's own resolution (16th notes).
inline SinTraModel train_single_stage(const TokenSequence& real, const TrainConfig& cfg,
                                      const TrainObserver& observer = {}) {
  return pipeline_detail::train_pyramid(real, {ScaleSpec{real.note_value}}, cfg, true, observer);
}

/// One refinement pass over a bar: forward the upsampled coarse bar and draw every
/// position of every track from the stage's logits with top-p, optionally restricted
/// to `allowed` tokens.
inline TokenGrid refine_stage(const nn::StageModel<float>& stage, nn::XlMemory<float>& memory, const TokenGrid& coarse,
                              double p, Rng& rng, const pipeline_detail::TokenMask* allowed = nullptr) {
  if (coarse.steps != stage.config().proc_len)
    throw UsageError("refine_stage: input length " + std::to_string(coarse.steps) + " != processing length " +
                     std::to_string(stage.config().proc_len));
  nn::NoGradGuard no_grad;
  return pipeline_detail::sample_grid(stage.forward(coarse, memory, false, nullptr), p, rng, allowed);
}

struct Generation {
  TokenSequence tokens;  ///< generated bars only, at the finest scale
  std::vector<std::string> warnings;
};

/// Coarse-to-fine generation of cfg.gen_bars bars after a primer.
///
/// Stage 0 is warmed on primer bars 0..P-2 and then fed P-1; stages i > 0 are warmed
/// on the upsampled stage i-1 view of primer bars 0..P-1, the same inputs they saw in
/// training. Every new bar: stage 0 samples with p_coarse, each finer stage refines
/// the upsampled result with p_refine. Only tokens that occur in the training segment
/// are drawn; the rest token is in every dictionary even for tracks that never rest.
inline Generation generate(const SinTraModel& model, const TokenSequence& primer, const GenConfig& cfg) {
  cfg.validate();
  if (model.stages.empty()) throw UsageError("model has no stages");
  Generation out;
  TokenSequence seq = pipeline_detail::remap(primer, model.dictionaries);
  const int finest = model.finest_note_value();
  if (seq.note_value < finest || seq.note_value % finest != 0)
    throw DataError("primer resolution " + std::to_string(seq.note_value) + "th is coarser than the model");
  seq = downsample(seq, seq.note_value / finest);
  if (seq.steps_per_bar != model.steps_per_bar()) throw DataError("primer bar length does not match the model");
  if (seq.bars() < 1) throw DataError("primer must contain at least one bar");
  int bars = cfg.primer_bars;
  if (seq.bars() < bars) {
    out.warnings.push_back("primer has " + std::to_string(seq.bars()) + " bars, fewer than the requested " +
                           std::to_string(bars));
    bars = seq.bars();
  }
  seq.tokens = seq.tokens.slice(0, bars * seq.steps_per_bar);

  const std::size_t depth = model.stages.size();
  std::vector<TokenSequence> levels;
  std::vector<nn::XlMemory<float>> memory;
  for (const auto& st : model.stages) {
    levels.push_back(downsample(seq, finest / st.scale.note_value));
    memory.push_back(st.model.new_memory());
  }
  auto up = [&](std::size_t i, const TokenGrid& g) {
    return upsample(g, pipeline_detail::ratio(model.stages[i].scale, model.stages[i - 1].scale));
  };

  const auto allowed = pipeline_detail::occurring_tokens(model.segment);
  nn::NoGradGuard no_grad;
  Rng rng(cfg.seed);
  for (int t = 0; t + 1 < bars; ++t) model.stages[0].model.forward(levels[0].bar(t), memory[0], false, nullptr);
  for (std::size_t i = 1; i < depth; ++i)
    for (int t = 0; t < bars; ++t) model.stages[i].model.forward(up(i, levels[i - 1].bar(t)), memory[i], false, nullptr);

  TokenGrid previous = levels[0].bar(bars - 1);
  TokenGrid result(seq.tracks(), 0);
  for (int b = 0; b < cfg.gen_bars; ++b) {
    auto logits = model.stages[0].model.forward(previous, memory[0], false, nullptr);
    TokenGrid cur = pipeline_detail::sample_grid(logits, cfg.p_coarse, rng, &allowed);
    previous = cur;
    for (std::size_t i = 1; i < depth; ++i) cur = refine_stage(model.stages[i].model, memory[i], up(i, cur), cfg.p_refine, rng, &allowed);
    result.append(cur);
  }
  out.tokens.tokens = std::move(result);
  out.tokens.dictionaries = model.dictionaries;
  out.tokens.steps_per_bar = model.steps_per_bar();
  out.tokens.note_value = finest;
  return out;
}

}  // namespace sintra
