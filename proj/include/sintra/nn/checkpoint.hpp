#pragma once

// Versioned binary checkpoint for one stage. Layout (little-endian throughout) is
// documented in docs/FORMATS.md; version 1:
//
//   "SINTRACK" | u32 version | u32 scalar bytes (4|8)
//   i32 layers, heads, head_dim, model_dim, ffn_dim, proc_len, mem_len | f64 dropout
//   i32 tracks | i32 vocab[tracks] | u64 seed
//   i64 adam step | f64 beta1, beta2, eps
//   u32 n_params | n_params x { u16 name_len | name | u32 rank | u32 dims[rank]
//                               | values | first moments | second moments }
//   u64 FNV-1a of every preceding byte

#include <sintra/error.hpp>
#include <sintra/midi.hpp>
#include <sintra/nn/optim.hpp>
#include <sintra/nn/stage_model.hpp>
#include <sintra/random.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace sintra::nn {

inline constexpr char kCheckpointMagic[8] = {'S', 'I', 'N', 'T', 'R', 'A', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
struct StageCheckpoint {
  StageModel<T> model;
  OptimizerState<T> optimizer;
  std::uint64_t seed = 0;
};

namespace ckpt_detail {

class Writer {
public:
  template <class U>
  void put(U v) {
    static_assert(std::is_arithmetic_v<U>);
    if constexpr (std::is_floating_point_v<U>) {
      using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
      put(std::bit_cast<Bits>(v));
    } else {
      auto u = static_cast<std::make_unsigned_t<U>>(v);
      for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
  }
  void put_bytes(std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

  Bytes out;
};

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  template <class U>
  U get() {
    if constexpr (std::is_floating_point_v<U>) {
      using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
      return std::bit_cast<U>(get<Bits>());
    } else {
      need(sizeof(U));
      std::make_unsigned_t<U> u = 0;
      for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<std::make_unsigned_t<U>>(data_[pos_ + i]) << (8 * i);
      pos_ += sizeof(U);
      return static_cast<U>(u);
    }
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

private:
  void need(std::size_t n) {
    if (n > data_.size() - pos_) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

template <class T>
Bytes save_checkpoint(const StageModel<T>& model, const OptimizerState<T>& opt, std::uint64_t seed) {
  ckpt_detail::Writer w;
  w.put_bytes(std::string_view(kCheckpointMagic, 8));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(sizeof(T)));
  const auto& c = model.config();
  for (int v : {c.layers, c.heads, c.head_dim, c.model_dim, c.ffn_dim, c.proc_len, c.mem_len})
    w.put(static_cast<std::int32_t>(v));
  w.put(c.dropout);
  w.put(static_cast<std::int32_t>(model.tracks()));
  for (int v : model.vocab_sizes()) w.put(static_cast<std::int32_t>(v));
  w.put(seed);
  w.put(static_cast<std::int64_t>(opt.step));
  w.put(opt.beta1);
  w.put(opt.beta2);
  w.put(opt.eps);
  const auto& params = model.parameters();
  const bool has_moments = opt.first_moment.size() == params.size();
  w.put(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    w.put(static_cast<std::uint16_t>(p.name.size()));
    w.put_bytes(p.name);
    w.put(std::uint32_t{2});
    w.put(static_cast<std::uint32_t>(p.var->value.rows()));
    w.put(static_cast<std::uint32_t>(p.var->value.cols()));
    for (T v : p.var->value.values()) w.put(v);
    for (std::size_t j = 0; j < p.var->value.size(); ++j) w.put(has_moments ? opt.first_moment[i][j] : T(0));
    for (std::size_t j = 0; j < p.var->value.size(); ++j) w.put(has_moments ? opt.second_moment[i][j] : T(0));
  }
  std::string_view body(reinterpret_cast<const char*>(w.out.data()), w.out.size());
  w.put(fnv1a64(body));
  return std::move(w.out);
}

template <class T>
StageCheckpoint<T> load_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 + 8) throw DataError("checkpoint too short");
  std::string_view body(reinterpret_cast<const char*>(bytes.data()), bytes.size() - 8);
  ckpt_detail::Reader tail(bytes.subspan(bytes.size() - 8));
  if (tail.get<std::uint64_t>() != fnv1a64(body)) throw DataError("checkpoint checksum mismatch");

  ckpt_detail::Reader r(bytes.first(bytes.size() - 8));
  if (r.get_string(8) != std::string_view(kCheckpointMagic, 8)) throw DataError("not a checkpoint file");
  auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  if (r.get<std::uint32_t>() != sizeof(T)) throw DataError("checkpoint scalar width does not match");

  StageConfig c;
  c.layers = r.get<std::int32_t>();
  c.heads = r.get<std::int32_t>();
  c.head_dim = r.get<std::int32_t>();
  c.model_dim = r.get<std::int32_t>();
  c.ffn_dim = r.get<std::int32_t>();
  c.proc_len = r.get<std::int32_t>();
  c.mem_len = r.get<std::int32_t>();
  c.dropout = r.get<double>();
  auto tracks = r.get<std::int32_t>();
  if (tracks < 1 || tracks > 1024) throw DataError("checkpoint track count out of range");
  std::vector<int> vocab;
  for (int k = 0; k < tracks; ++k) vocab.push_back(r.get<std::int32_t>());

  StageCheckpoint<T> out;
  out.seed = r.get<std::uint64_t>();
  try {
    out.model = StageModel<T>(c, vocab, 0);
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint config invalid: ") + e.what());
  }
  out.optimizer = OptimizerState<T>::for_parameters(out.model.parameters());
  out.optimizer.step = r.get<std::int64_t>();
  out.optimizer.beta1 = r.get<double>();
  out.optimizer.beta2 = r.get<double>();
  out.optimizer.eps = r.get<double>();

  const auto& params = out.model.parameters();
  if (r.get<std::uint32_t>() != params.size()) throw DataError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto name = r.get_string(r.get<std::uint16_t>());
    if (name != params[i].name) throw DataError("checkpoint parameter '" + name + "' where '" + params[i].name + "' expected");
    if (r.get<std::uint32_t>() != 2) throw DataError("checkpoint parameter rank must be 2");
    auto rows = r.get<std::uint32_t>();
    auto cols = r.get<std::uint32_t>();
    auto& value = params[i].var->value;
    if (rows != value.rows() || cols != value.cols()) throw DataError("checkpoint shape mismatch for " + name);
    for (auto& v : value.values()) v = r.get<T>();
    for (auto& v : out.optimizer.first_moment[i].values()) v = r.get<T>();
    for (auto& v : out.optimizer.second_moment[i].values()) v = r.get<T>();
  }
  return out;
}

}  // namespace sintra::nn
