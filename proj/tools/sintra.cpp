// sintra: train, generate, evaluate and inspect from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <sintra/sintra.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace sintra;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct TrainArgs {
  std::string input, out, config;
  int resolution = 16;
  int segment_bars = 12;
  bool single_stage = false;
  bool quiet = false;
  std::optional<int> steps, warmup, layers, heads, head_dim, model_dim, ffn_dim;
  std::optional<double> lr, dropout, p_coarse, p_refine;
  std::optional<std::uint64_t> seed;
  std::optional<bool> teacher_forcing;
};

struct GenerateArgs {
  std::string model, out, primer, config;
  int n = 10;
  std::optional<int> bars, primer_bars;
  std::optional<double> p_coarse, p_refine;
  std::optional<std::uint64_t> seed;
};

struct EvaluateArgs {
  std::string real, model, out;
  std::vector<std::string> samples;
  int resolution = 16;
  int segment_bars = 12;
};

struct InspectArgs {
  std::string input;
  int resolution = 16;
  int segment_bars = 12;
};

struct InspectDictArgs {
  std::string model, input;
  int resolution = 16;
  int segment_bars = 12;
  int track = -1;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string(what) + " is required");
  if (!fs::is_regular_file(path)) throw DataError(std::string(what) + " not found: " + path);
}

TokenSequence load_segment(const std::string& path, int resolution, int bars) {
  auto roll = crop_bars(quantize(load_midi(path), resolution), bars);
  auto dicts = std::make_shared<const Dictionaries>(build_dictionary(roll));
  return encode(roll, dicts);
}

std::string scale_names(const std::vector<ScaleSpec>& specs) {
  std::string out;
  for (const auto& s : specs) out += (out.empty() ? "" : ", ") + s.name();
  return out;
}

int cmd_train(const TrainArgs& a) {
  require_file(a.input, "--input");
  if (a.out.empty()) throw UsageError("--out is required");
  TrainConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "--config");
    read_train_config(KeyValue::load(a.config), cfg);
  }
  if (a.steps) cfg.steps_per_stage = *a.steps;
  if (a.warmup) cfg.warmup_steps = *a.warmup;
  if (a.lr) cfg.base_lr = *a.lr;
  if (a.seed) cfg.seed = *a.seed;
  if (a.teacher_forcing) cfg.teacher_forcing = *a.teacher_forcing;
  if (a.p_coarse) cfg.sample_p_coarse = *a.p_coarse;
  if (a.p_refine) cfg.sample_p_refine = *a.p_refine;
  if (a.layers) cfg.arch.layers = *a.layers;
  if (a.heads) cfg.arch.heads = *a.heads;
  if (a.head_dim) cfg.arch.head_dim = *a.head_dim;
  if (a.model_dim) cfg.arch.model_dim = *a.model_dim;
  if (a.ffn_dim) cfg.arch.ffn_dim = *a.ffn_dim;
  if (a.dropout) cfg.arch.dropout = *a.dropout;
  cfg.validate();

  auto seq = load_segment(a.input, a.resolution, a.segment_bars);
  auto observer = [&](int stage, int step, double loss) {
    if (!a.quiet && (step % 100 == 0 || step + 1 == cfg.steps_per_stage))
      std::fprintf(stderr, "stage %d step %d nll %.6f\n", stage, step, loss);
  };
  auto model = a.single_stage ? train_single_stage(seq, cfg, observer) : train(seq, cfg, observer);
  save_model(model, a.out);

  auto input_bytes = read_file(a.input);
  auto kv = KeyValue::load(fs::path(a.out) / "manifest.txt");
  kv.set("input", fs::path(a.input).filename().string());
  kv.set("hash.input", hex64(hash_bytes(input_bytes)));
  kv.set("resolution", a.resolution);
  kv.set("segment_bars", a.segment_bars);
  write_text(fs::path(a.out) / "manifest.txt", kv.dump());

  std::printf("scales: %s\n", scale_names(model.scales()).c_str());
  for (int i = 0; i < model.depth(); ++i)
    std::printf("stage %d (%s) final nll %.6g\n", i, model.stages[i].scale.name().c_str(), model.stages[i].final_nll);
  std::printf("seed %llu, model written to %s\n", static_cast<unsigned long long>(cfg.seed), a.out.c_str());
  return kOk;
}

int cmd_generate(const GenerateArgs& a) {
  if (a.model.empty()) throw UsageError("--model is required");
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.n < 1) throw UsageError("--n must be >= 1");
  if (!fs::is_directory(a.model)) throw DataError("model directory not found: " + a.model);
  if (!a.primer.empty()) require_file(a.primer, "--primer");
  GenConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "--config");
    auto kv = KeyValue::load(a.config);
    if (kv.has("gen_bars")) cfg.gen_bars = static_cast<int>(kv.integer("gen_bars"));
    if (kv.has("primer_bars")) cfg.primer_bars = static_cast<int>(kv.integer("primer_bars"));
    if (kv.has("p_coarse")) cfg.p_coarse = kv.real("p_coarse");
    if (kv.has("p_refine")) cfg.p_refine = kv.real("p_refine");
    if (kv.has("seed")) cfg.seed = kv.unsigned_integer("seed");
  }
  if (a.bars) cfg.gen_bars = *a.bars;
  if (a.primer_bars) cfg.primer_bars = *a.primer_bars;
  if (a.p_coarse) cfg.p_coarse = *a.p_coarse;
  if (a.p_refine) cfg.p_refine = *a.p_refine;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();

  auto model = load_model(a.model);
  TokenSequence primer = model.segment;
  if (!a.primer.empty()) {
    auto roll = quantize(load_midi(a.primer), model.segment.note_value);
    primer = encode(roll, std::make_shared<const Dictionaries>(build_dictionary(roll)));
  }
  fs::create_directories(a.out);
  KeyValue kv;
  kv.set("format", "sintra-generation 1");
  kv.set("model", a.model);
  kv.set("hash.model_manifest", hex64(hash_bytes(read_file(fs::path(a.model) / "manifest.txt"))));
  kv.set("seed", cfg.seed);
  kv.set("gen_bars", cfg.gen_bars);
  kv.set("primer_bars", cfg.primer_bars);
  kv.set("p_coarse", cfg.p_coarse);
  kv.set("p_refine", cfg.p_refine);
  kv.set("primer", a.primer.empty() ? std::string("training segment") : fs::path(a.primer).filename().string());
  kv.set("velocity", 100);
  kv.set("n", a.n);
  for (int i = 0; i < a.n; ++i) {
    GenConfig sample_cfg = cfg;
    sample_cfg.seed = substream_seed(cfg.seed, "generate:" + std::to_string(i));
    auto gen = generate(model, primer, sample_cfg);
    for (const auto& w : gen.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    auto roll = decode(gen.tokens);
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%02d", i);
    auto midi = render_midi(roll, 120.0, 100);
    write_file(fs::path(a.out) / (std::string(stem) + ".mid"), midi);
    export_pianoroll_image(roll, fs::path(a.out) / (std::string(stem) + ".pgm"));
    kv.set(std::string("seed.") + stem, sample_cfg.seed);
    kv.set(std::string("hash.") + stem + ".mid", hex64(hash_bytes(midi)));
    std::printf("%s.mid  seed %llu\n", stem, static_cast<unsigned long long>(sample_cfg.seed));
  }
  write_text(fs::path(a.out) / "manifest.txt", kv.dump());
  return kOk;
}

int cmd_evaluate(const EvaluateArgs& a) {
  if (a.samples.empty()) throw UsageError("--samples needs at least one MIDI file");
  if (a.real.empty() == a.model.empty()) throw UsageError("give exactly one of --real or --model");
  for (const auto& s : a.samples) require_file(s, "sample");
  TokenSequence real;
  int resolution = a.resolution;
  if (!a.model.empty()) {
    real = load_model(a.model).segment;
    resolution = real.note_value;
  } else {
    require_file(a.real, "--real");
    real = load_segment(a.real, resolution, a.segment_bars);
  }
  std::vector<TokenSequence> samples;
  for (const auto& s : a.samples) samples.push_back(load_segment(s, resolution, 0));
  auto report = evaluate(samples, real);
  std::cout << report_table(report) << "\n" << report_keyvalue(report);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "report.txt", report_table(report));
    write_text(fs::path(a.out) / "report.kv", report_keyvalue(report));
    write_text(fs::path(a.out) / "per_sample.csv", report_csv(report));
  }
  return kOk;
}

int cmd_inspect(const InspectArgs& a) {
  require_file(a.input, "--input");
  auto song = load_midi(a.input);
  for (const auto& w : song.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  auto roll = crop_bars(quantize(song, a.resolution), a.segment_bars);
  auto dicts = build_dictionary(roll);
  std::printf("file: %s\n", a.input.c_str());
  std::printf("tracks: %zu\n", song.tracks.size());
  std::printf("tempo: %.3f bpm\n", song.tempo_bpm());
  std::printf("time signature: %d/%d\n", song.time_signature.numerator, song.time_signature.denominator);
  std::printf("notes: %zu\n", song.note_count());
  std::printf("resolution: %dth, steps per bar: %d\n", roll.resolution(), roll.steps_per_bar());
  std::printf("steps: %d, bars: %d, tokens: %lld\n", roll.steps(), roll.bars(),
              static_cast<long long>(roll.steps()) * roll.tracks());
  std::printf("scales: %s\n", scale_names(choose_scales(roll)).c_str());
  std::printf("vocab sizes:");
  for (int v : vocab_sizes(dicts)) std::printf(" %d", v);
  std::printf("\n");
  for (std::size_t k = 0; k < dicts.size(); ++k)
    std::printf("\n[track %zu]\n%s", k, dump_dictionary(dicts[k]).c_str());
  return kOk;
}

int cmd_inspect_dict(const InspectDictArgs& a) {
  if (a.model.empty() == a.input.empty()) throw UsageError("give exactly one of --model or --input");
  Dictionaries dicts;
  if (!a.model.empty()) {
    dicts = *load_model(a.model).dictionaries;
  } else {
    require_file(a.input, "--input");
    dicts = build_dictionary(crop_bars(quantize(load_midi(a.input), a.resolution), a.segment_bars));
  }
  if (a.track >= static_cast<int>(dicts.size())) throw UsageError("--track out of range");
  for (std::size_t k = 0; k < dicts.size(); ++k) {
    if (a.track >= 0 && static_cast<int>(k) != a.track) continue;
    if (a.track < 0) std::printf("# track %zu\n", k);
    std::fputs(dump_dictionary(dicts[k]).c_str(), stdout);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sintra: one-shot multi-track music generation with a coarse-to-fine Transformer-XL pyramid"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on one MIDI segment");
  train_cmd->add_option("--input", ta.input, "Training MIDI file")->required();
  train_cmd->add_option("--out", ta.out, "Output model directory")->required();
  train_cmd->add_option("--config", ta.config, "key = value config file (flags take precedence)");
  train_cmd->add_option("--steps", ta.steps, "Optimizer steps per stage (2000)");
  train_cmd->add_option("--seed", ta.seed, "Random seed (0)");
  train_cmd->add_option("--lr", ta.lr, "Peak learning rate (2e-4)");
  train_cmd->add_option("--warmup", ta.warmup, "Warmup steps (200)");
  train_cmd->add_option("--layers", ta.layers, "Encoder layers (6)");
  train_cmd->add_option("--heads", ta.heads, "Attention heads (8)");
  train_cmd->add_option("--head-dim", ta.head_dim, "Per-head dimension (32)");
  train_cmd->add_option("--model-dim", ta.model_dim, "Model dimension (256)");
  train_cmd->add_option("--ffn-dim", ta.ffn_dim, "Feed-forward dimension (1024)");
  train_cmd->add_option("--dropout", ta.dropout, "Dropout (0.09)");
  train_cmd->add_option("--teacher-forcing", ta.teacher_forcing, "Feed stages ground truth (true) or samples");
  train_cmd->add_option("--sample-p-coarse", ta.p_coarse, "Top-p for upstream samples without teacher forcing");
  train_cmd->add_option("--sample-p-refine", ta.p_refine, "Top-p for upstream refinements without teacher forcing");
  train_cmd->add_option("--resolution", ta.resolution, "Quantization grid as a note value")
      ->check(CLI::IsMember({4, 8, 16, 32}));
  train_cmd->add_option("--segment-bars", ta.segment_bars, "Bars of the input to train on (0 = all)")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_flag("--single-stage", ta.single_stage, "Train one stage at the segment resolution");
  train_cmd->add_flag("--quiet", ta.quiet, "Suppress progress output");

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "Generate continuations with a trained model");
  gen_cmd->add_option("--model", ga.model, "Model directory")->required();
  gen_cmd->add_option("--out", ga.out, "Output directory")->required();
  gen_cmd->add_option("--config", ga.config, "key = value config file (flags take precedence)");
  gen_cmd->add_option("--n", ga.n, "Number of samples (10)");
  gen_cmd->add_option("--bars", ga.bars, "Bars to generate (32)");
  gen_cmd->add_option("--primer-bars", ga.primer_bars, "Primer bars (12)");
  gen_cmd->add_option("--primer", ga.primer, "Primer MIDI (default: the training segment)");
  gen_cmd->add_option("--p-coarse", ga.p_coarse, "Top-p for the coarsest stage (0.9)");
  gen_cmd->add_option("--p-refine", ga.p_refine, "Top-p for refinement stages (0.3)");
  gen_cmd->add_option("--seed", ga.seed, "Random seed (0)");

  EvaluateArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "Pitch-group KL divergence and overlap against a segment");
  eval_cmd->add_option("--real", ea.real, "Real segment MIDI");
  eval_cmd->add_option("--model", ea.model, "Use the training segment stored in a model directory");
  eval_cmd->add_option("--samples", ea.samples, "Generated MIDI files")->required();
  eval_cmd->add_option("--out", ea.out, "Directory for report.txt, report.kv and per_sample.csv");
  eval_cmd->add_option("--resolution", ea.resolution, "Quantization grid")->check(CLI::IsMember({4, 8, 16, 32}));
  eval_cmd->add_option("--segment-bars", ea.segment_bars, "Bars of --real to use (0 = all)")
      ->check(CLI::NonNegativeNumber);

  InspectArgs ia;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print dictionaries, scales and segment statistics");
  inspect_cmd->add_option("--input", ia.input, "MIDI file")->required();
  inspect_cmd->add_option("--resolution", ia.resolution, "Quantization grid")->check(CLI::IsMember({4, 8, 16, 32}));
  inspect_cmd->add_option("--segment-bars", ia.segment_bars, "Bars to inspect (0 = all)")
      ->check(CLI::NonNegativeNumber);

  InspectDictArgs da;
  auto* dict_cmd = app.add_subcommand("inspect-dict", "Dump pitch-group dictionaries");
  dict_cmd->add_option("--model", da.model, "Model directory");
  dict_cmd->add_option("--input", da.input, "MIDI file");
  dict_cmd->add_option("--track", da.track, "Only this track");
  dict_cmd->add_option("--resolution", da.resolution, "Quantization grid")->check(CLI::IsMember({4, 8, 16, 32}));
  dict_cmd->add_option("--segment-bars", da.segment_bars, "Bars to use (0 = all)")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*gen_cmd) return cmd_generate(ga);
    if (*eval_cmd) return cmd_evaluate(ea);
    if (*inspect_cmd) return cmd_inspect(ia);
    if (*dict_cmd) return cmd_inspect_dict(da);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kData;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
