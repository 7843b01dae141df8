#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "driftwatch/error.hpp"
#include "driftwatch/rng.hpp"

// Two-sample location test for response-embedding distributions.
//
// Given two groups of embeddings collected under system prompts A and B
// (n task prompts, k replicates each), the observed statistic is the cosine
// similarity of the two group means. The null "both prompts induce the same
// response distribution" is tested by permutation: within each task prompt,
// the 2k embeddings from both groups are pooled and reassigned uniformly at
// random, k per side, and the statistic is recomputed. Low similarity is the
// extreme direction, so the one-sided p-value is the fraction of permuted
// statistics that are <= the observed one (ties count as extreme: two
// identical groups must come out at p = 1, never significant).

namespace driftwatch::stats {

using EmbeddingVector = std::vector<double>;

// ============================================================================
// embedding groups
// ============================================================================

// Rectangular grid of embeddings: n task prompts x k replicates, all of one
// dimension, stored row major by (prompt j, replicate i). Entries must be
// finite; zero vectors are legal here and only rejected where a norm is
// needed.
class EmbeddingGroup {
 public:
  EmbeddingGroup(std::size_t n_prompts, std::size_t replicates,
                 std::size_t dimension)
      : n_(n_prompts), k_(replicates), d_(dimension),
        data_(n_prompts * replicates * dimension, 0.0) {
    if (n_ == 0 || k_ == 0 || d_ == 0)
      throw ShapeError("embedding group: n, k and dimension must be >= 1");
  }

  static EmbeddingGroup from_rows(std::size_t n_prompts, std::size_t replicates,
                                  const std::vector<EmbeddingVector>& rows) {
    if (rows.size() != n_prompts * replicates)
      throw ShapeError("embedding group: expected " +
                       std::to_string(n_prompts * replicates) + " rows, got " +
                       std::to_string(rows.size()));
    if (rows.empty() || rows.front().empty())
      throw ShapeError("embedding group: empty");
    EmbeddingGroup g(n_prompts, replicates, rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r)
      g.assign_row(r / replicates, r % replicates, rows[r]);
    return g;
  }

  std::size_t prompt_count() const { return n_; }
  std::size_t replicate_count() const { return k_; }
  std::size_t dimension() const { return d_; }

  std::span<const double> vec(std::size_t j, std::size_t i) const {
    return {data_.data() + (j * k_ + i) * d_, d_};
  }

  void assign_row(std::size_t j, std::size_t i, const EmbeddingVector& v) {
    if (v.size() != d_)
      throw ShapeError("embedding group: row dimension " +
                       std::to_string(v.size()) + " != " + std::to_string(d_));
    for (double x : v)
      if (!std::isfinite(x))
        throw ShapeError("embedding group: non-finite entry");
    std::copy(v.begin(), v.end(), data_.begin() + (j * k_ + i) * d_);
  }

  bool same_shape(const EmbeddingGroup& o) const {
    return n_ == o.n_ && k_ == o.k_ && d_ == o.d_;
  }

 private:
  std::size_t n_, k_, d_;
  std::vector<double> data_;
};

// ============================================================================
// similarity
// ============================================================================

// cosine(u, v) = <u,v> / sqrt(<u,u><v,v>), clamped into [-1, 1] so float
// noise can never push a statistic past the tie boundary. sqrt(x*x) == x in
// round-to-nearest, so cosine(u, u) is exactly 1.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw ShapeError("cosine: dimension mismatch " + std::to_string(u.size()) +
                     " vs " + std::to_string(v.size()));
  if (u.empty()) throw ShapeError("cosine: empty vectors");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0)
    throw DegenerateEmbeddingError("cosine: degenerate embedding (zero norm)");
  double s = dot / std::sqrt(uu * vv);
  return std::clamp(s, -1.0, 1.0);
}

inline double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  return cosine(std::span<const double>(u), std::span<const double>(v));
}

// Coordinate-wise mean over all n*k embeddings of a group.
inline EmbeddingVector mean_embedding(const EmbeddingGroup& g) {
  EmbeddingVector m(g.dimension(), 0.0);
  for (std::size_t j = 0; j < g.prompt_count(); ++j)
    for (std::size_t i = 0; i < g.replicate_count(); ++i) {
      auto v = g.vec(j, i);
      for (std::size_t d = 0; d < m.size(); ++d) m[d] += v[d];
    }
  double inv = 1.0 / static_cast<double>(g.prompt_count() * g.replicate_count());
  for (double& x : m) x *= inv;
  return m;
}

// Cosine similarity of the two group means.
inline double observed_statistic(const EmbeddingGroup& v1,
                                 const EmbeddingGroup& v2) {
  if (!v1.same_shape(v2))
    throw ShapeError("observed_statistic: group shapes differ");
  EmbeddingVector m1 = mean_embedding(v1);
  EmbeddingVector m2 = mean_embedding(v2);
  return cosine(m1, m2);
}

// ============================================================================
// permutation test
// ============================================================================

enum class PEstimator { plain, add_one };

struct TestConfig {
  std::size_t n_perm = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  PEstimator p_estimator = PEstimator::plain;
};

enum class Decision { distinct, insufficient_evidence };

inline const char* to_string(Decision d) {
  return d == Decision::distinct ? "distinct" : "insufficient_evidence";
}

struct PermutationTestResult {
  double s_obs = 0.0;
  std::size_t extreme_count = 0;
  double p_value = 1.0;
  Decision decision = Decision::insufficient_evidence;
  std::size_t n_perm = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Pools both groups per prompt: slot t of prompt j is row j,t of v1 for
// t < k and row j,t-k of v2 otherwise.
//
// Tie discipline: every arrangement's statistic is computed by walking slots
// in pool order and accumulating each slot into its assigned group's sum, so
// the value is a pure function of the assignment, never of shuffle order.
// Arrangements that are mathematically tied (the identity split, and any
// split versus its complement) therefore produce bit-identical statistics,
// and the extreme count compares against the identity-assignment statistic
// from this same pipeline. That keeps "ties count as extreme" exact: two
// identical groups always land at p = 1.
struct PermutationWorkspace {
  std::size_t n, k, d;
  std::vector<const double*> rows;  // [j * 2k + slot], slots 0..k-1 from v1

  PermutationWorkspace(const EmbeddingGroup& v1, const EmbeddingGroup& v2)
      : n(v1.prompt_count()), k(v1.replicate_count()), d(v1.dimension()),
        rows(n * 2 * k) {
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < k; ++i) {
        rows[j * 2 * k + i] = v1.vec(j, i).data();
        rows[j * 2 * k + k + i] = v2.vec(j, i).data();
      }
  }

  // adds prompt j's slots into the two group sums; in_group1[t] says where
  // slot t goes
  void accumulate_prompt(std::size_t j, const std::uint8_t* in_group1,
                         double* sum1, double* sum2) const {
    const double* const* base = rows.data() + j * 2 * k;
    for (std::size_t t = 0; t < 2 * k; ++t) {
      double* dst = in_group1[t] ? sum1 : sum2;
      const double* row = base[t];
      for (std::size_t x = 0; x < d; ++x) dst[x] += row[x];
    }
  }

  // cosine of the two group sums (scale invariant, so sums stand in for
  // means); same arithmetic and clamp as cosine()
  double group_statistic(const double* sum1, const double* sum2) const {
    double dot = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t x = 0; x < d; ++x) {
      dot += sum1[x] * sum2[x];
      uu += sum1[x] * sum1[x];
      vv += sum2[x] * sum2[x];
    }
    if (uu == 0.0 || vv == 0.0)
      throw DegenerateEmbeddingError(
          "permutation statistic: degenerate group mean (zero norm)");
    return std::clamp(dot / std::sqrt(uu * vv), -1.0, 1.0);
  }

  // statistic of the un-permuted assignment, used as the comparison
  // threshold; mathematically equal to observed_statistic(v1, v2)
  double identity_statistic() const {
    std::vector<std::uint8_t> in_group1(2 * k, 0);
    for (std::size_t t = 0; t < k; ++t) in_group1[t] = 1;
    std::vector<double> sum1(d, 0.0), sum2(d, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      accumulate_prompt(j, in_group1.data(), sum1.data(), sum2.data());
    return group_statistic(sum1.data(), sum2.data());
  }
};

}  // namespace detail

// Monte Carlo permutation test. Round r draws its generator from
// substream(cfg.seed, r) and nothing else, so the result is identical for any
// worker count and any scheduling of rounds.
inline PermutationTestResult permutation_test(const EmbeddingGroup& v1,
                                              const EmbeddingGroup& v2,
                                              const TestConfig& cfg,
                                              unsigned workers = 1) {
  if (!v1.same_shape(v2))
    throw ShapeError("permutation_test: group shapes differ");
  if (cfg.n_perm == 0)
    throw Error("permutation_test: n_perm must be >= 1");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    throw Error("permutation_test: alpha must lie in (0, 1)");

  const double s_obs = observed_statistic(v1, v2);
  detail::PermutationWorkspace ws(v1, v2);
  const std::size_t n = ws.n, k = ws.k, d = ws.d;
  const double s_ref = ws.identity_statistic();

  std::atomic<std::uint64_t> first_bad_round{
      std::numeric_limits<std::uint64_t>::max()};
  std::vector<std::size_t> counts(std::max(1u, workers), 0);

  auto run_rounds = [&](unsigned who, std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> idx(2 * k);
    std::vector<std::uint8_t> in_group1(2 * k);
    std::vector<double> sum1(d), sum2(d);
    for (std::size_t r = lo; r < hi; ++r) {
      auto gen = rng::substream(cfg.seed, r);
      std::fill(sum1.begin(), sum1.end(), 0.0);
      std::fill(sum2.begin(), sum2.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t = 0; t < 2 * k; ++t) idx[t] = t;
        rng::shuffle(idx, gen);
        std::fill(in_group1.begin(), in_group1.end(), 0);
        for (std::size_t t = 0; t < k; ++t) in_group1[idx[t]] = 1;
        ws.accumulate_prompt(j, in_group1.data(), sum1.data(), sum2.data());
      }
      double s;
      try {
        s = ws.group_statistic(sum1.data(), sum2.data());
      } catch (const DegenerateEmbeddingError&) {
        std::uint64_t cur = first_bad_round.load();
        while (r < cur && !first_bad_round.compare_exchange_weak(cur, r)) {
        }
        return;
      }
      if (s <= s_ref) ++counts[who];
    }
  };

  unsigned w = std::max(1u, workers);
  if (w == 1) {
    run_rounds(0, 0, cfg.n_perm);
  } else {
    std::vector<std::thread> pool;
    std::size_t per = (cfg.n_perm + w - 1) / w;
    for (unsigned t = 0; t < w; ++t) {
      std::size_t lo = std::min<std::size_t>(t * per, cfg.n_perm);
      std::size_t hi = std::min<std::size_t>(lo + per, cfg.n_perm);
      pool.emplace_back(run_rounds, t, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  if (first_bad_round.load() != std::numeric_limits<std::uint64_t>::max())
    throw DegenerateEmbeddingError(
        "permutation_test: degenerate group mean in round " +
        std::to_string(first_bad_round.load()));

  std::size_t c = 0;
  for (std::size_t x : counts) c += x;

  PermutationTestResult res;
  res.s_obs = s_obs;
  res.extreme_count = c;
  res.n_perm = cfg.n_perm;
  res.seed = cfg.seed;
  res.p_value = cfg.p_estimator == PEstimator::plain
                    ? static_cast<double>(c) / static_cast<double>(cfg.n_perm)
                    : static_cast<double>(c + 1) /
                          static_cast<double>(cfg.n_perm + 1);
  res.decision = res.p_value < cfg.alpha ? Decision::distinct
                                         : Decision::insufficient_evidence;
  return res;
}

// ============================================================================
// exact enumeration (reference oracle)
// ============================================================================

inline constexpr std::uint64_t kExactArrangementGuard = 1000000;

namespace detail {

// C(n, r), saturating at cap + 1. Each intermediate product divides exactly.
inline std::uint64_t binomial_capped(std::uint64_t n, std::uint64_t r,
                                     std::uint64_t cap) {
  if (r > n) return 0;
  r = std::min(r, n - r);
  std::uint64_t out = 1;
  for (std::uint64_t i = 1; i <= r; ++i) {
    out = out * (n - r + i) / i;
    if (out > cap) return cap + 1;
  }
  return out;
}

}  // namespace detail

// Enumerates every within-prompt split combination exactly once (all ways of
// choosing k of the pooled 2k per prompt for group 1, product across prompts)
// and returns the exact fraction with statistic <= observed. Refuses when the
// arrangement count exceeds kExactArrangementGuard.
inline double exact_permutation_test(const EmbeddingGroup& v1,
                                     const EmbeddingGroup& v2) {
  if (!v1.same_shape(v2))
    throw ShapeError("exact_permutation_test: group shapes differ");
  const std::size_t n = v1.prompt_count(), k = v1.replicate_count();

  const std::uint64_t per_prompt =
      detail::binomial_capped(2 * k, k, kExactArrangementGuard);
  std::uint64_t arrangements = 1;
  for (std::size_t j = 0; j < n; ++j) {
    if (per_prompt > kExactArrangementGuard / arrangements) {
      arrangements = kExactArrangementGuard + 1;
      break;
    }
    arrangements *= per_prompt;
  }
  if (arrangements > kExactArrangementGuard)
    throw GuardExceededError(
        "exact_permutation_test: arrangement count exceeds the guard of " +
        std::to_string(kExactArrangementGuard));

  detail::PermutationWorkspace ws(v1, v2);
  const std::size_t d = ws.d;
  const double s_ref = ws.identity_statistic();

  // after the guard, k <= 11, so per-prompt assignments fit in a 32-bit mask
  const std::uint32_t full = (1u << (2 * k)) - 1;
  const std::uint32_t first_mask = (1u << k) - 1;

  // per-depth group sums: depth j holds the accumulation over prompts < j
  std::vector<std::vector<double>> part1(n + 1, std::vector<double>(d, 0.0));
  std::vector<std::vector<double>> part2(n + 1, std::vector<double>(d, 0.0));
  std::vector<std::uint8_t> in_group1(2 * k);

  std::uint64_t extreme = 0, totalcnt = 0;

  std::function<void(std::size_t)> walk = [&](std::size_t j) {
    // Gosper's hack: all 2k-bit masks with popcount k, ascending
    std::uint32_t mask = first_mask;
    while (true) {
      for (std::size_t t = 0; t < 2 * k; ++t)
        in_group1[t] = (mask >> t) & 1u;
      part1[j + 1] = part1[j];
      part2[j + 1] = part2[j];
      ws.accumulate_prompt(j, in_group1.data(), part1[j + 1].data(),
                           part2[j + 1].data());
      if (j + 1 == n) {
        ++totalcnt;
        if (ws.group_statistic(part1[n].data(), part2[n].data()) <= s_ref)
          ++extreme;
      } else {
        walk(j + 1);
      }
      const std::uint32_t c = mask & (0u - mask);
      const std::uint32_t r = mask + c;
      mask = (((r ^ mask) >> 2) / c) | r;
      if (mask > full) break;
    }
  };
  walk(0);

  return static_cast<double>(extreme) / static_cast<double>(totalcnt);
}

// ============================================================================
// multiple-comparison corrections
// ============================================================================

// Benjamini-Hochberg step-up at FDR level q. Returns rejected indices into
// the input order, sorted ascending: find the largest rank r (1-based, over
// p sorted ascending) with p_(r) <= r*q/m, then reject every p <= p_(r).
inline std::vector<std::size_t> benjamini_hochberg(
    const std::vector<double>& p_values, double q) {
  if (!(q > 0.0 && q < 1.0))
    throw Error("benjamini_hochberg: q must lie in (0, 1)");
  const std::size_t m = p_values.size();
  if (m == 0) return {};
  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0))
      throw Error("benjamini_hochberg: p-values must lie in [0, 1]");

  std::vector<double> sorted(p_values);
  std::sort(sorted.begin(), sorted.end());
  double threshold = -1.0;
  for (std::size_t r = m; r >= 1; --r) {
    if (sorted[r - 1] <= static_cast<double>(r) * q / static_cast<double>(m)) {
      threshold = sorted[r - 1];
      break;
    }
  }
  std::vector<std::size_t> rejected;
  if (threshold < 0.0) return rejected;
  for (std::size_t i = 0; i < m; ++i)
    if (p_values[i] <= threshold) rejected.push_back(i);
  return rejected;
}

// Bonferroni: reject i iff p_i < alpha / m. Strict, matching the single-test
// decision rule.
inline std::vector<std::size_t> bonferroni(const std::vector<double>& p_values,
                                           double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error("bonferroni: alpha must lie in (0, 1)");
  const std::size_t m = p_values.size();
  std::vector<std::size_t> rejected;
  if (m == 0) return rejected;
  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0))
      throw Error("bonferroni: p-values must lie in [0, 1]");
  const double cut = alpha / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    if (p_values[i] < cut) rejected.push_back(i);
  return rejected;
}

}  // namespace driftwatch::stats
