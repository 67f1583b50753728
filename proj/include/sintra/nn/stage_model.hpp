#pragma once

// One pyramid stage: per-track embeddings fused by a 1x1 convolution over the track
// axis, a Transformer-XL encoder (relative positions, recurrent memory), per-track
// projections back out, and an independent output head per track.

#include <sintra/error.hpp>
#include <sintra/nn/autograd.hpp>
#include <sintra/nn/tensor.hpp>
#include <sintra/pgroup.hpp>
#include <sintra/random.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace sintra::nn {

struct StageConfig {
  int layers = 6;
  int heads = 8;
  int head_dim = 32;
  int model_dim = 256;
  int ffn_dim = 1024;
  double dropout = 0.09;
  int proc_len = 16;  ///< tokens per forward pass (one bar)
  int mem_len = 16;   ///< cached positions per layer

  void validate() const {
    if (layers < 1 || heads < 1 || head_dim < 1 || ffn_dim < 1 || proc_len < 1 || mem_len < 0)
      throw UsageError("stage config: sizes must be positive");
    if (heads * head_dim != model_dim) throw UsageError("stage config: heads x head_dim must equal model_dim");
    if (dropout < 0.0 || dropout >= 1.0) throw UsageError("stage config: dropout must be in [0, 1)");
  }

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

/// Per-layer cached inputs from earlier segments; never longer than mem_len rows.
template <class T>
struct XlMemory {
  std::vector<Tensor<T>> layers;

  std::size_t length() const { return layers.empty() ? 0 : layers[0].rows(); }
  void reset() {
    for (auto& l : layers) l = Tensor<T>(0, l.cols());
  }
};

template <class T>
struct Param {
  std::string name;
  Var<T> var;
};

/// Sinusoidal embeddings for relative distances count-1 down to 0 (count x dim).
template <class T>
Tensor<T> relative_positions(std::size_t count, std::size_t dim) {
  Tensor<T> out(count, dim);
  const std::size_t half = dim / 2;
  for (std::size_t r = 0; r < count; ++r) {
    double pos = static_cast<double>(count - 1 - r);
    for (std::size_t i = 0; i < half; ++i) {
      double freq = 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
      out(r, i) = static_cast<T>(std::sin(pos * freq));
      out(r, half + i) = static_cast<T>(std::cos(pos * freq));
    }
  }
  return out;
}

template <class T>
class StageModel {
public:
  struct Layer {
    Var<T> wq, wk, wv, wr, wo;
    Var<T> ln1_gain, ln1_bias;
    Var<T> w1, b1, w2, b2;
    Var<T> ln2_gain, ln2_bias;
  };

  StageModel() = default;

  /// Fresh parameters: uniform in +-1/sqrt(fan_in) for weights, zero biases, unit gains.
  StageModel(StageConfig cfg, std::vector<int> vocab, std::uint64_t seed) : cfg_(cfg), vocab_(std::move(vocab)) {
    cfg_.validate();
    if (vocab_.empty()) throw UsageError("stage model needs at least one track");
    for (int v : vocab_)
      if (v < 1) throw UsageError("vocabulary sizes must be positive");
    Rng rng(seed);
    const std::size_t D = static_cast<std::size_t>(cfg_.model_dim), F = static_cast<std::size_t>(cfg_.ffn_dim);
    const std::size_t K = vocab_.size();

    auto uniform = [&rng](std::size_t rows, std::size_t cols, double fan_in) {
      Tensor<T> t(rows, cols);
      double bound = 1.0 / std::sqrt(fan_in);
      for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
      return parameter(std::move(t));
    };
    auto zeros = [](std::size_t rows, std::size_t cols) { return parameter(Tensor<T>(rows, cols)); };
    auto ones = [](std::size_t rows, std::size_t cols) { return parameter(Tensor<T>(rows, cols, T(1))); };

    for (std::size_t k = 0; k < K; ++k) embed_.push_back(uniform(static_cast<std::size_t>(vocab_[k]), D, 1.0));
    fuse_weight_ = uniform(1, K, static_cast<double>(K));
    fuse_bias_ = zeros(1, 1);
    content_bias_ = zeros(1, D);
    position_bias_ = zeros(1, D);
    for (int l = 0; l < cfg_.layers; ++l) {
      Layer ly;
      ly.wq = uniform(D, D, double(D));
      ly.wk = uniform(D, D, double(D));
      ly.wv = uniform(D, D, double(D));
      ly.wr = uniform(D, D, double(D));
      ly.wo = uniform(D, D, double(D));
      ly.ln1_gain = ones(1, D);
      ly.ln1_bias = zeros(1, D);
      ly.w1 = uniform(D, F, double(D));
      ly.b1 = zeros(1, F);
      ly.w2 = uniform(F, D, double(F));
      ly.b2 = zeros(1, D);
      ly.ln2_gain = ones(1, D);
      ly.ln2_bias = zeros(1, D);
      layers_.push_back(ly);
    }
    for (std::size_t k = 0; k < K; ++k) {
      proj_weight_.push_back(uniform(D, D, double(D)));
      proj_bias_.push_back(zeros(1, D));
      head_weight_.push_back(uniform(D, static_cast<std::size_t>(vocab_[k]), double(D)));
      head_bias_.push_back(zeros(1, static_cast<std::size_t>(vocab_[k])));
    }
    index_parameters();
  }

  StageModel(const StageModel& other) { *this = other; }

  /// Deep copy: parameters are cloned, not shared.
  StageModel& operator=(const StageModel& other) {
    if (this == &other) return *this;
    cfg_ = other.cfg_;
    vocab_ = other.vocab_;
    auto clone = [](const Var<T>& v) { return parameter(v->value); };
    auto clone_all = [&](const std::vector<Var<T>>& vs) {
      std::vector<Var<T>> out;
      for (const auto& v : vs) out.push_back(clone(v));
      return out;
    };
    embed_ = clone_all(other.embed_);
    fuse_weight_ = clone(other.fuse_weight_);
    fuse_bias_ = clone(other.fuse_bias_);
    content_bias_ = clone(other.content_bias_);
    position_bias_ = clone(other.position_bias_);
    layers_.clear();
    for (const auto& o : other.layers_) {
      layers_.push_back({clone(o.wq), clone(o.wk), clone(o.wv), clone(o.wr), clone(o.wo), clone(o.ln1_gain),
                         clone(o.ln1_bias), clone(o.w1), clone(o.b1), clone(o.w2), clone(o.b2), clone(o.ln2_gain),
                         clone(o.ln2_bias)});
    }
    proj_weight_ = clone_all(other.proj_weight_);
    proj_bias_ = clone_all(other.proj_bias_);
    head_weight_ = clone_all(other.head_weight_);
    head_bias_ = clone_all(other.head_bias_);
    index_parameters();
    return *this;
  }

  StageModel(StageModel&&) noexcept = default;
  StageModel& operator=(StageModel&&) noexcept = default;

  const StageConfig& config() const { return cfg_; }
  const std::vector<int>& vocab_sizes() const { return vocab_; }
  int tracks() const { return static_cast<int>(vocab_.size()); }

  /// Every trainable tensor in a fixed order with a stable name.
  const std::vector<Param<T>>& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var->zero_grad();
  }

  Layer& layer(int l) { return layers_.at(static_cast<std::size_t>(l)); }
  Var<T>& fuse_weight() { return fuse_weight_; }
  Var<T>& fuse_bias() { return fuse_bias_; }
  Var<T>& projection(int k) { return proj_weight_.at(static_cast<std::size_t>(k)); }
  Var<T>& projection_bias(int k) { return proj_bias_.at(static_cast<std::size_t>(k)); }
  Var<T>& head(int k) { return head_weight_.at(static_cast<std::size_t>(k)); }
  Var<T>& head_bias(int k) { return head_bias_.at(static_cast<std::size_t>(k)); }
  Var<T>& embedding_table(int k) { return embed_.at(static_cast<std::size_t>(k)); }

  XlMemory<T> new_memory() const {
    XlMemory<T> m;
    m.layers.assign(static_cast<std::size_t>(cfg_.layers), Tensor<T>(0, static_cast<std::size_t>(cfg_.model_dim)));
    return m;
  }

  /// Embed each track's tokens and fuse across tracks: L x model_dim.
  Var<T> track_multi2one(const TokenGrid& tokens, bool train = false, Rng* rng = nullptr) const {
    if (tokens.tracks != tracks())
      throw UsageError("expected " + std::to_string(tracks()) + " tracks, got " + std::to_string(tokens.tracks));
    std::vector<Var<T>> embedded;
    for (int k = 0; k < tracks(); ++k) {
      std::span<const int> row(tokens.data.data() + static_cast<std::size_t>(k) * tokens.steps,
                               static_cast<std::size_t>(tokens.steps));
      embedded.push_back(embedding(embed_[static_cast<std::size_t>(k)], row));
    }
    return dropout(weighted_sum(embedded, fuse_weight_, fuse_bias_), cfg_.dropout, train, rng);
  }

  /// Transformer-XL encoder over [memory | features]. Causal over current positions;
  /// every layer's input is appended to its memory, which keeps the last mem_len rows.
  /// Throws NumericError naming the layer if an activation is not finite.
  Var<T> xl_encoder_forward(const Var<T>& features, XlMemory<T>& memory, bool train = false,
                            Rng* rng = nullptr) const {
    const std::size_t D = static_cast<std::size_t>(cfg_.model_dim);
    const std::size_t dh = static_cast<std::size_t>(cfg_.head_dim);
    if (features->value.cols() != D) throw UsageError("encoder input width must equal model_dim");
    if (memory.layers.size() != layers_.size()) memory = new_memory();
    const std::size_t L = features->value.rows();
    const std::size_t M = memory.length();
    const std::size_t K = M + L;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    auto positions = constant(relative_positions<T>(K, D));

    std::vector<Tensor<T>> next_memory;
    Var<T> h = features;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& ly = layers_[l];
      Var<T> keys_in = M ? concat_rows(constant(memory.layers[l]), h) : h;
      Var<T> q = matmul(h, ly.wq);
      Var<T> k = matmul(keys_in, ly.wk);
      Var<T> v = matmul(keys_in, ly.wv);
      Var<T> r = matmul(positions, ly.wr);
      Var<T> q_content = add_row(q, content_bias_);
      Var<T> q_position = add_row(q, position_bias_);

      std::vector<Var<T>> heads;
      for (int hd = 0; hd < cfg_.heads; ++hd) {
        std::size_t c0 = static_cast<std::size_t>(hd) * dh;
        Var<T> content = matmul_nt(slice_cols(q_content, c0, dh), slice_cols(k, c0, dh));
        Var<T> position = rel_shift(matmul_nt(slice_cols(q_position, c0, dh), slice_cols(r, c0, dh)),
                                    static_cast<long>(M));
        Var<T> probs = masked_softmax(scale(add(content, position), inv_sqrt), static_cast<long>(M));
        heads.push_back(matmul(probs, slice_cols(v, c0, dh)));
      }
      Var<T> attn = dropout(matmul(concat_cols(heads), ly.wo), cfg_.dropout, train, rng);
      Var<T> h1 = layer_norm(add(h, attn), ly.ln1_gain, ly.ln1_bias);
      Var<T> inner = dropout(relu(add_row(matmul(h1, ly.w1), ly.b1)), cfg_.dropout, train, rng);
      Var<T> ff = dropout(add_row(matmul(inner, ly.w2), ly.b2), cfg_.dropout, train, rng);
      Var<T> h2 = layer_norm(add(h1, ff), ly.ln2_gain, ly.ln2_bias);
      if (!h2->value.all_finite()) throw NumericError("non-finite activation in encoder layer " + std::to_string(l));

      // Memory keeps the last mem_len inputs to this layer.
      const std::size_t keep = std::min<std::size_t>(K, static_cast<std::size_t>(cfg_.mem_len));
      Tensor<T> mem(keep, D);
      for (std::size_t i = 0; i < keep; ++i) {
        std::size_t src = K - keep + i;
        if (src < M)
          mem.mat().row(i) = memory.layers[l].mat().row(src);
        else
          mem.mat().row(i) = h->value.mat().row(src - M);
      }
      next_memory.push_back(std::move(mem));
      h = h2;
    }
    memory.layers = std::move(next_memory);
    return dropout(h, cfg_.dropout, train, rng);
  }

  /// Learned per-track projection of the shared hidden sequence.
  std::vector<Var<T>> track_one2multi(const Var<T>& hidden) const {
    std::vector<Var<T>> out;
    for (std::size_t k = 0; k < proj_weight_.size(); ++k)
      out.push_back(add_row(matmul(hidden, proj_weight_[k]), proj_bias_[k]));
    return out;
  }

  /// Independent affine head per track: logits L x vocab_k.
  std::vector<Var<T>> trackwise_decode(const std::vector<Var<T>>& per_track) const {
    if (per_track.size() != head_weight_.size()) throw UsageError("trackwise_decode: one input per track");
    std::vector<Var<T>> out;
    for (std::size_t k = 0; k < head_weight_.size(); ++k)
      out.push_back(add_row(matmul(per_track[k], head_weight_[k]), head_bias_[k]));
    return out;
  }

  /// Full stage: tokens (tracks x L) to per-track logits. Advances `memory`.
  std::vector<Var<T>> forward(const TokenGrid& tokens, XlMemory<T>& memory, bool train = false,
                              Rng* rng = nullptr) const {
    Var<T> fused = track_multi2one(tokens, train, rng);
    Var<T> hidden = xl_encoder_forward(fused, memory, train, rng);
    return trackwise_decode(track_one2multi(hidden));
  }

private:
  void index_parameters() {
    params_.clear();
    for (std::size_t k = 0; k < embed_.size(); ++k) params_.push_back({"embed." + std::to_string(k), embed_[k]});
    params_.push_back({"fuse.weight", fuse_weight_});
    params_.push_back({"fuse.bias", fuse_bias_});
    params_.push_back({"attn.content_bias", content_bias_});
    params_.push_back({"attn.position_bias", position_bias_});
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string p = "layer." + std::to_string(l) + ".";
      const Layer& ly = layers_[l];
      params_.push_back({p + "attn.query", ly.wq});
      params_.push_back({p + "attn.key", ly.wk});
      params_.push_back({p + "attn.value", ly.wv});
      params_.push_back({p + "attn.relative", ly.wr});
      params_.push_back({p + "attn.output", ly.wo});
      params_.push_back({p + "norm1.gain", ly.ln1_gain});
      params_.push_back({p + "norm1.bias", ly.ln1_bias});
      params_.push_back({p + "ffn.in.weight", ly.w1});
      params_.push_back({p + "ffn.in.bias", ly.b1});
      params_.push_back({p + "ffn.out.weight", ly.w2});
      params_.push_back({p + "ffn.out.bias", ly.b2});
      params_.push_back({p + "norm2.gain", ly.ln2_gain});
      params_.push_back({p + "norm2.bias", ly.ln2_bias});
    }
    for (std::size_t k = 0; k < proj_weight_.size(); ++k) {
      params_.push_back({"one2multi." + std::to_string(k) + ".weight", proj_weight_[k]});
      params_.push_back({"one2multi." + std::to_string(k) + ".bias", proj_bias_[k]});
    }
    for (std::size_t k = 0; k < head_weight_.size(); ++k) {
      params_.push_back({"head." + std::to_string(k) + ".weight", head_weight_[k]});
      params_.push_back({"head." + std::to_string(k) + ".bias", head_bias_[k]});
    }
  }

  StageConfig cfg_;
  std::vector<int> vocab_;
  std::vector<Var<T>> embed_;
  Var<T> fuse_weight_, fuse_bias_;
  Var<T> content_bias_, position_bias_;
  std::vector<Layer> layers_;
  std::vector<Var<T>> proj_weight_, proj_bias_;
  std::vector<Var<T>> head_weight_, head_bias_;
  std::vector<Param<T>> params_;
};

}  // namespace sintra::nn
