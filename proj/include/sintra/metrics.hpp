#pragma once

// Objective metrics comparing generated samples with the real segment: pitch-group
// KL divergence (bits) and pitch-group overlap (IoU of distinct groups). Groups are
// compared by value, so samples and segment may use different dictionaries.

#include <sintra/error.hpp>
#include <sintra/pgroup.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sintra {

/// Relative frequency of each pitch group over all (track, step) cells.
struct GroupDistribution {
  std::map<PitchGroup, double> mass;

  double at(const PitchGroup& g) const {
    auto it = mass.find(g);
    return it == mass.end() ? 0.0 : it->second;
  }
  std::set<PitchGroup> support() const {
    std::set<PitchGroup> s;
    for (const auto& [g, m] : mass) s.insert(g);
    return s;
  }
};

inline GroupDistribution group_distribution(const TokenSequence& seq) {
  seq.validate();
  if (seq.steps() == 0 || seq.tracks() == 0) throw DataError("empty token sequence");
  std::map<PitchGroup, long> counts;
  for (int k = 0; k < seq.tracks(); ++k)
    for (int t = 0; t < seq.steps(); ++t) ++counts[seq.dicts()[k].group(seq.tokens.at(k, t))];
  const double total = static_cast<double>(seq.tracks()) * seq.steps();
  GroupDistribution d;
  for (const auto& [g, c] : counts) d.mass[g] = static_cast<double>(c) / total;
  return d;
}

inline constexpr double kKlSmoothing = 1e-6;

/// D(P || Q) in bits over the union support. Q is smoothed by kKlSmoothing and
/// renormalized only when it has zeros there; otherwise the sum is exact.
inline double kl_divergence(const GroupDistribution& p, const GroupDistribution& q) {
  std::set<PitchGroup> support = p.support();
  for (const auto& [g, m] : q.mass) support.insert(g);
  bool zeros = false;
  for (const auto& g : support) zeros = zeros || q.at(g) <= 0.0;
  const double norm = zeros ? 1.0 + kKlSmoothing * static_cast<double>(support.size()) : 1.0;
  double d = 0.0;
  for (const auto& g : support) {
    const double pi = p.at(g);
    if (pi <= 0.0) continue;
    const double qi = zeros ? (q.at(g) + kKlSmoothing) / norm : q.at(g);
    d += pi * std::log2(pi / qi);
  }
  return d < 0.0 ? 0.0 : d;
}

inline double overlap(const std::set<PitchGroup>& a, const std::set<PitchGroup>& b) {
  std::size_t inter = 0;
  for (const auto& g : a) inter += b.count(g);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double kl_divergence(const std::vector<TokenSequence>& samples, const TokenSequence& real) {
  if (samples.empty()) throw UsageError("kl_divergence needs at least one sample");
  const auto q = group_distribution(real);
  double sum = 0.0;
  for (const auto& s : samples) sum += kl_divergence(group_distribution(s), q);
  return sum / static_cast<double>(samples.size());
}

inline double overlap(const std::vector<TokenSequence>& samples, const TokenSequence& real) {
  if (samples.empty()) throw UsageError("overlap needs at least one sample");
  const auto q = group_distribution(real).support();
  double sum = 0.0;
  for (const auto& s : samples) sum += overlap(group_distribution(s).support(), q);
  return sum / static_cast<double>(samples.size());
}

struct SampleScore {
  double kl = 0.0;
  double overlap = 0.0;
};

struct EvalReport {
  double kl = 0.0;
  double overlap = 0.0;
  int n_samples = 0;
  std::vector<SampleScore> per_sample;
};

inline EvalReport evaluate(const std::vector<TokenSequence>& samples, const TokenSequence& real) {
  if (samples.empty()) throw UsageError("evaluate needs at least one sample");
  const auto q = group_distribution(real);
  const auto qs = q.support();
  EvalReport r;
  for (const auto& s : samples) {
    auto p = group_distribution(s);
    r.per_sample.push_back({kl_divergence(p, q), overlap(p.support(), qs)});
    r.kl += r.per_sample.back().kl;
    r.overlap += r.per_sample.back().overlap;
  }
  r.n_samples = static_cast<int>(samples.size());
  r.kl /= r.n_samples;
  r.overlap /= r.n_samples;
  return r;
}

namespace metrics_detail {
inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}
}  // namespace metrics_detail

inline std::string report_table(const EvalReport& r) {
  std::ostringstream out;
  out << "sample        kl_bits   overlap\n";
  for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-8zu %12.6f %9.4f\n", i, r.per_sample[i].kl, r.per_sample[i].overlap);
    out << buf;
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-8s %12.6f %9.4f\n", "mean", r.kl, r.overlap);
  out << buf;
  return out.str();
}

inline std::string report_keyvalue(const EvalReport& r) {
  return "n_samples = " + std::to_string(r.n_samples) + "\nkl = " + metrics_detail::fmt("%.17g", r.kl) +
         "\noverlap = " + metrics_detail::fmt("%.17g", r.overlap) + "\n";
}

inline std::string report_csv(const EvalReport& r) {
  std::string out = "sample,kl,overlap\n";
  for (std::size_t i = 0; i < r.per_sample.size(); ++i)
    out += std::to_string(i) + ',' + metrics_detail::fmt("%.17g", r.per_sample[i].kl) + ',' +
           metrics_detail::fmt("%.17g", r.per_sample[i].overlap) + '\n';
  return out;
}

}  // namespace sintra
