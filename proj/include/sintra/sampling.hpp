#pragma once

#include <sintra/error.hpp>
#include <sintra/random.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace sintra {

/// Indices of the nucleus: the shortest prefix of tokens sorted by descending
/// probability (lower index first on ties) whose mass reaches p.
inline std::vector<int> nucleus(std::span<const double> probs, double p) {
  if (probs.empty()) throw UsageError("nucleus of an empty distribution");
  if (!(p > 0.0 && p <= 1.0)) throw UsageError("top-p threshold must be in (0, 1]");
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  // Slack absorbs rounding in probabilities that sum to 1 only approximately.
  constexpr double kSlack = 1e-12;
  double mass = 0.0;
  std::size_t n = 0;
  while (n < order.size()) {
    mass += probs[order[n++]];
    if (mass >= p - kSlack) break;
  }
  order.resize(n);
  return order;
}

/// Draw from the renormalized nucleus of a probability vector.
inline int top_p_sample_probs(std::span<const double> probs, double p, Rng& rng) {
  auto keep = nucleus(probs, p);
  double mass = 0.0;
  for (int i : keep) mass += probs[i];
  double u = rng.uniform() * mass;
  for (int i : keep) {
    u -= probs[i];
    if (u < 0.0) return i;
  }
  return keep.back();
}

inline std::vector<double> softmax(std::span<const double> logits) {
  for (double z : logits)
    if (!std::isfinite(z)) throw NumericError("non-finite logit");
  double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += p[i] = std::exp(logits[i] - mx);
  for (auto& v : p) v /= total;
  return p;
}

/// Top-p (nucleus) sampling from logits. p -> 0 degenerates to argmax.
inline int top_p_sample(std::span<const double> logits, double p, Rng& rng) {
  if (logits.empty()) throw UsageError("top_p_sample: empty logits");
  auto probs = softmax(logits);
  return top_p_sample_probs(probs, p, rng);
}

}  // namespace sintra
