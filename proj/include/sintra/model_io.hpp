#pragma once

// Model directory layout:
//   manifest.txt       key = value: configuration, seed, scales, final NLLs, file hashes
//   dict_<k>.tsv       pitch-group dictionary of track k
//   segment.txt        training segment tokens at the finest scale
//   stage_<i>.ckpt     stage checkpoint (coarse stage first)
//   nll_stage_<i>.csv  training loss per step

#include <sintra/error.hpp>
#include <sintra/midi.hpp>
#include <sintra/nn/checkpoint.hpp>
#include <sintra/pgroup.hpp>
#include <sintra/pipeline.hpp>
#include <sintra/random.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace sintra {

/// Ordered `key = value` lines; `#` starts a comment line.
class KeyValue {
public:
  static KeyValue parse(const std::string& text) {
    KeyValue kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("line " + std::to_string(lineno) + ": expected key = value");
      auto key = trim(line.substr(0, eq));
      if (key.empty()) throw DataError("line " + std::to_string(lineno) + ": empty key");
      kv.set(key, trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValue load(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return parse(std::string(bytes.begin(), bytes.end()));
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }
  void set(const std::string& key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    set(key, std::string(buf));
  }
  void set(const std::string& key, long long v) { set(key, std::to_string(v)); }
  void set(const std::string& key, int v) { set(key, std::to_string(v)); }
  void set(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }
  void set(const std::string& key, bool v) { set(key, std::string(v ? "true" : "false")); }
  void set(const std::string& key, const char* v) { set(key, std::string(v)); }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::vector<std::string>& keys() const { return order_; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw DataError("missing key '" + key + "'");
    return it->second;
  }
  double real(const std::string& key) const {
    return convert(key, [](const std::string& s, std::size_t* n) { return std::stod(s, n); });
  }
  long long integer(const std::string& key) const {
    return convert(key, [](const std::string& s, std::size_t* n) { return std::stoll(s, n); });
  }
  std::uint64_t unsigned_integer(const std::string& key) const {
    const auto& s = str(key);
    if (!s.empty() && s[0] == '-') throw DataError("key '" + key + "' must be non-negative");
    return convert(key, [](const std::string& v, std::size_t* n) { return std::stoull(v, n); });
  }
  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw DataError("key '" + key + "' is not a boolean: " + s);
  }

  std::string dump() const {
    std::string out;
    for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

private:
  static std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  template <class F>
  std::invoke_result_t<F, const std::string&, std::size_t*> convert(const std::string& key, F f) const {
    const auto& s = str(key);
    try {
      std::size_t n = 0;
      auto v = f(s, &n);
      if (n != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::logic_error&) {
      throw DataError("key '" + key + "' has invalid value '" + s + "'");
    }
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t hash_bytes(std::span<const std::uint8_t> bytes) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string read_text(const std::filesystem::path& path) {
  auto b = read_file(path);
  return std::string(b.begin(), b.end());
}

inline void write_train_config(KeyValue& kv, const TrainConfig& c) {
  kv.set("seed", c.seed);
  kv.set("steps_per_stage", c.steps_per_stage);
  kv.set("teacher_forcing", c.teacher_forcing);
  kv.set("base_lr", c.base_lr);
  kv.set("warmup_steps", c.warmup_steps);
  kv.set("min_lr_ratio", c.min_lr_ratio);
  kv.set("sample_p_coarse", c.sample_p_coarse);
  kv.set("sample_p_refine", c.sample_p_refine);
  kv.set("layers", c.arch.layers);
  kv.set("heads", c.arch.heads);
  kv.set("head_dim", c.arch.head_dim);
  kv.set("model_dim", c.arch.model_dim);
  kv.set("ffn_dim", c.arch.ffn_dim);
  kv.set("dropout", c.arch.dropout);
}

/// Overlay any training keys present in `kv` onto `c`.
inline void read_train_config(const KeyValue& kv, TrainConfig& c) {
  if (kv.has("seed")) c.seed = kv.unsigned_integer("seed");
  if (kv.has("steps_per_stage")) c.steps_per_stage = static_cast<int>(kv.integer("steps_per_stage"));
  if (kv.has("teacher_forcing")) c.teacher_forcing = kv.boolean("teacher_forcing");
  if (kv.has("base_lr")) c.base_lr = kv.real("base_lr");
  if (kv.has("warmup_steps")) c.warmup_steps = static_cast<int>(kv.integer("warmup_steps"));
  if (kv.has("min_lr_ratio")) c.min_lr_ratio = kv.real("min_lr_ratio");
  if (kv.has("sample_p_coarse")) c.sample_p_coarse = kv.real("sample_p_coarse");
  if (kv.has("sample_p_refine")) c.sample_p_refine = kv.real("sample_p_refine");
  if (kv.has("layers")) c.arch.layers = static_cast<int>(kv.integer("layers"));
  if (kv.has("heads")) c.arch.heads = static_cast<int>(kv.integer("heads"));
  if (kv.has("head_dim")) c.arch.head_dim = static_cast<int>(kv.integer("head_dim"));
  if (kv.has("model_dim")) c.arch.model_dim = static_cast<int>(kv.integer("model_dim"));
  if (kv.has("ffn_dim")) c.arch.ffn_dim = static_cast<int>(kv.integer("ffn_dim"));
  if (kv.has("dropout")) c.arch.dropout = kv.real("dropout");
}

inline std::string segment_to_text(const TokenSequence& seq) {
  std::string out = std::to_string(seq.steps_per_bar) + ' ' + std::to_string(seq.note_value) + ' ' +
                    std::to_string(seq.tracks()) + ' ' + std::to_string(seq.steps()) + '\n';
  for (int k = 0; k < seq.tracks(); ++k) {
    for (int t = 0; t < seq.steps(); ++t) out += (t ? " " : "") + std::to_string(seq.tokens.at(k, t));
    out += '\n';
  }
  return out;
}

inline TokenSequence segment_from_text(const std::string& text, std::shared_ptr<const Dictionaries> dicts) {
  std::istringstream in(text);
  TokenSequence seq;
  int tracks = 0, steps = 0;
  if (!(in >> seq.steps_per_bar >> seq.note_value >> tracks >> steps) || tracks < 1 || steps < 0)
    throw DataError("malformed segment header");
  seq.tokens = TokenGrid(tracks, steps);
  for (auto& v : seq.tokens.data)
    if (!(in >> v)) throw DataError("segment file truncated");
  seq.dictionaries = std::move(dicts);
  seq.validate();
  return seq;
}

inline std::string nll_csv(const std::vector<double>& curve) {
  std::string out = "step,nll\n";
  char buf[48];
  for (std::size_t s = 0; s < curve.size(); ++s) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", s, curve[s]);
    out += buf;
  }
  return out;
}

inline void save_model(const SinTraModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KeyValue kv;
  kv.set("format", "sintra-model 1");
  write_train_config(kv, model.train_config);
  kv.set("single_stage", model.single_stage);
  std::string scales;
  for (const auto& s : model.stages) scales += (scales.empty() ? "" : ",") + std::to_string(s.scale.note_value);
  kv.set("scales", scales);
  kv.set("tracks", model.segment.tracks());
  kv.set("steps_per_bar", model.segment.steps_per_bar);
  kv.set("note_value", model.segment.note_value);

  auto put = [&](const std::string& name, std::span<const std::uint8_t> bytes) {
    write_file(dir / name, bytes);
    kv.set("hash." + name, hex64(hash_bytes(bytes)));
  };
  auto put_text = [&](const std::string& name, const std::string& text) {
    put(name, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  };
  for (std::size_t k = 0; k < model.dictionaries->size(); ++k)
    put_text("dict_" + std::to_string(k) + ".tsv", dump_dictionary((*model.dictionaries)[k]));
  put_text("segment.txt", segment_to_text(model.segment));
  for (std::size_t i = 0; i < model.stages.size(); ++i) {
    const auto& st = model.stages[i];
    const std::string tag = std::to_string(i);
    kv.set("final_nll." + tag, st.final_nll);
    put("stage_" + tag + ".ckpt", nn::save_checkpoint(st.model, st.optimizer, model.train_config.seed));
    put_text("nll_stage_" + tag + ".csv", nll_csv(st.nll_curve));
  }
  write_text(dir / "manifest.txt", kv.dump());
}

inline SinTraModel load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("model directory not found: " + dir.string());
  auto kv = KeyValue::load(dir / "manifest.txt");
  if (kv.str("format") != "sintra-model 1") throw DataError("unsupported model format: " + kv.str("format"));
  auto fetch = [&](const std::string& name) {
    auto bytes = read_file(dir / name);
    if (hex64(hash_bytes(bytes)) != kv.str("hash." + name)) throw DataError("hash mismatch for " + name);
    return bytes;
  };

  SinTraModel model;
  read_train_config(kv, model.train_config);
  model.single_stage = kv.boolean("single_stage");
  const int tracks = static_cast<int>(kv.integer("tracks"));
  if (tracks < 1) throw DataError("model has no tracks");
  auto dicts = std::make_shared<Dictionaries>();
  for (int k = 0; k < tracks; ++k) {
    auto b = fetch("dict_" + std::to_string(k) + ".tsv");
    dicts->push_back(parse_dictionary(std::string(b.begin(), b.end())));
  }
  model.dictionaries = dicts;
  auto seg = fetch("segment.txt");
  model.segment = segment_from_text(std::string(seg.begin(), seg.end()), model.dictionaries);

  std::istringstream scales(kv.str("scales"));
  std::string item;
  for (int i = 0; std::getline(scales, item, ','); ++i) {
    const std::string tag = std::to_string(i);
    Stage st;
    try {
      st.scale.note_value = std::stoi(item);
    } catch (const std::logic_error&) {
      throw DataError("bad scale '" + item + "'");
    }
    auto ck = nn::load_checkpoint<float>(fetch("stage_" + tag + ".ckpt"));
    if (ck.model.vocab_sizes() != vocab_sizes(*dicts)) throw DataError("stage " + tag + " vocabulary mismatch");
    st.model = std::move(ck.model);
    st.optimizer = std::move(ck.optimizer);
    st.final_nll = kv.real("final_nll." + tag);
    auto csv = fetch("nll_stage_" + tag + ".csv");
    std::istringstream lines(std::string(csv.begin(), csv.end()));
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
      auto comma = line.find(',');
      if (comma == std::string::npos) throw DataError("malformed NLL curve for stage " + tag);
      st.nll_curve.push_back(std::stod(line.substr(comma + 1)));
    }
    model.stages.push_back(std::move(st));
  }
  if (model.stages.empty()) throw DataError("model has no stages");
  if (model.stages.back().scale.note_value != model.segment.note_value)
    throw DataError("segment resolution does not match the finest stage");
  return model;
}

}  // namespace sintra
