// SPDX-License-Identifier: Apache-2.0
//
// Pyramid compatibility graph over putative correspondences and the
// graduated maximum-clique solver. Pairs are tested with the
// translation-and-rotation-invariant gap against per-level thresholds
// derived from chi-square confidence values and cheap eigenvalue upper
// bounds, giving M nested graphs solved top-down.

#pragma once

#include "gemreg/association.hpp"
#include "gemreg/parallel.hpp"
#include "gemreg/stats.hpp"

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

namespace gemreg {

/// Gap between the two sides' center distances; zero under any exact rigid
/// transform.
inline double trim_gap(const Vec3& x_i, const Vec3& x_j, const Vec3& y_i, const Vec3& y_j) {
  return std::abs((x_i - x_j).norm() - (y_i - y_j).norm());
}

/// The three upper bounds on the largest eigenvalue of s1 + s2.
struct EigenUpperBounds {
  double column_sum = 0;  // Perron-Frobenius style absolute column sum
  double trace = 0;       // Wolkowicz's m + sqrt(2 s^2)
  double weyl = 0;        // lambda1(s1) + lambda1(s2)

  double min() const { return std::min(column_sum, std::min(trace, weyl)); }
};

inline EigenUpperBounds eigen_upper_bounds(const Mat3& s1, const Mat3& s2, double lambda1_s1,
                                           double lambda1_s2) {
  const Mat3 s = s1 + s2;
  EigenUpperBounds b;
  for (int j = 0; j < 3; ++j) {
    const double col = std::abs(s(0, j)) + std::abs(s(1, j)) + std::abs(s(2, j));
    b.column_sum = std::max(b.column_sum, col);
  }
  const double m = s.trace() / 3.0;
  const double s_sq = std::max((s * s).trace() / 3.0 - m * m, 0.0);
  b.trace = m + std::sqrt(2.0 * s_sq);
  b.weyl = lambda1_s1 + lambda1_s2;
  return b;
}

inline EigenUpperBounds eigen_upper_bounds(const Mat3& s1, const Mat3& s2) {
  Vec3 ev1, ev2;
  symmetric_eigen_desc(s1, &ev1, nullptr);
  symmetric_eigen_desc(s2, &ev2, nullptr);
  return eigen_upper_bounds(s1, s2, ev1[0], ev2[0]);
}

/// Upper bound on the largest eigenvalue of s1 + s2: the minimum of the
/// column-sum bound, Wolkowicz's trace bound, and Weyl's sum of the two
/// largest eigenvalues (passed precomputed here).
inline double upper_eigenvalue(const Mat3& s1, const Mat3& s2, double lambda1_s1,
                               double lambda1_s2) {
  return eigen_upper_bounds(s1, s2, lambda1_s1, lambda1_s2).min();
}

inline double upper_eigenvalue(const Mat3& s1, const Mat3& s2) {
  return eigen_upper_bounds(s1, s2).min();
}

/// Fixed-capacity bitset over graph vertices.
class VertexSet {
 public:
  VertexSet() = default;
  explicit VertexSet(std::size_t n) : n_(n), words_((n + 63) / 64, 0) {}

  std::size_t capacity() const { return n_; }
  void set(std::size_t i) { words_[i >> 6] |= (1ULL << (i & 63)); }
  void reset(std::size_t i) { words_[i >> 6] &= ~(1ULL << (i & 63)); }
  bool test(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1ULL; }
  void set_all() {
    for (auto& w : words_) w = ~0ULL;
    trim();
  }

  std::size_t count() const {
    std::size_t c = 0;
    for (std::uint64_t w : words_) c += static_cast<std::size_t>(__builtin_popcountll(w));
    return c;
  }
  bool empty() const {
    for (std::uint64_t w : words_)
      if (w) return false;
    return true;
  }

  /// First set bit at or after `from`, or -1.
  int next(std::size_t from = 0) const {
    if (from >= n_) return -1;
    std::size_t wi = from >> 6;
    std::uint64_t w = words_[wi] & (~0ULL << (from & 63));
    while (true) {
      if (w) return static_cast<int>((wi << 6) + static_cast<std::size_t>(__builtin_ctzll(w)));
      if (++wi >= words_.size()) return -1;
      w = words_[wi];
    }
  }

  VertexSet& operator&=(const VertexSet& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
    return *this;
  }

  friend VertexSet operator&(VertexSet a, const VertexSet& b) {
    a &= b;
    return a;
  }

 private:
  void trim() {
    if (n_ & 63) words_.back() &= (1ULL << (n_ & 63)) - 1;
    if (n_ == 0 && !words_.empty()) words_.back() = 0;
  }
  std::size_t n_ = 0;
  std::vector<std::uint64_t> words_;
};

struct AdjacencyGraph {
  std::size_t n = 0;
  std::vector<VertexSet> adj;

  explicit AdjacencyGraph(std::size_t size = 0) : n(size), adj(size, VertexSet(size)) {}

  void add_edge(std::size_t i, std::size_t j) {
    adj[i].set(j);
    adj[j].set(i);
  }
  bool has_edge(std::size_t i, std::size_t j) const { return adj[i].test(j); }
  std::size_t degree(std::size_t i) const { return adj[i].count(); }
};

struct PyramidLevel {
  double p_value = 0;  // upper-tail probability of the chi-square threshold
  double chi2 = 0;
  std::vector<std::pair<int, int>> edges;  // i < j, sorted
  AdjacencyGraph graph;
};

struct PyramidGraph {
  std::vector<Correspondence> correspondences;
  std::vector<PyramidLevel> levels;  // tightest (smallest chi2) first

  std::size_t size() const { return correspondences.size(); }
};

/// Build the M nested compatibility graphs. For each unordered pair the gap
/// and the two eigenvalue bounds are computed once; the pair joins every
/// level from the first whose threshold accepts it. Chunked so the result is
/// identical for any worker count.
inline PyramidGraph build_pyramid(const std::vector<Correspondence>& corrs,
                                  std::span<const Gem> xs, std::span<const Gem> ys,
                                  const std::vector<double>& p_values, unsigned workers = 1) {
  for (double p : p_values)
    if (!(p > 0 && p < 1)) throw std::invalid_argument("build_pyramid: p-values must be in (0,1)");
  for (std::size_t m = 1; m < p_values.size(); ++m)
    if (!(p_values[m] < p_values[m - 1]))
      throw std::invalid_argument("build_pyramid: p-values must be strictly descending");

  PyramidGraph pyr;
  pyr.correspondences = corrs;
  const std::size_t n = corrs.size();
  const std::size_t m_levels = p_values.size();
  pyr.levels.resize(m_levels);
  for (std::size_t m = 0; m < m_levels; ++m) {
    pyr.levels[m].p_value = p_values[m];
    pyr.levels[m].chi2 = chi2_quantile(p_values[m]);
    pyr.levels[m].graph = AdjacencyGraph(n);
  }
  if (n < 2) return pyr;

  const std::size_t pairs = n * (n - 1) / 2;
  constexpr std::size_t kBlock = 2048;
  const std::size_t chunks = chunk_count(pairs, kBlock);
  // per chunk, per level: locally collected edges, merged in chunk order
  std::vector<std::vector<std::vector<std::pair<int, int>>>> chunk_edges(
      chunks, std::vector<std::vector<std::pair<int, int>>>(m_levels));

  parallel_chunks(pairs, kBlock, workers, [&](std::size_t chunk, std::size_t begin,
                                              std::size_t end) {
    for (std::size_t f = begin; f < end; ++f) {
      // unrank the flat pair index: f = i*n - i*(i+1)/2 + (j - i - 1)
      std::size_t i = static_cast<std::size_t>(
          (2.0 * static_cast<double>(n) - 1.0 -
           std::sqrt((2.0 * static_cast<double>(n) - 1.0) * (2.0 * static_cast<double>(n) - 1.0) -
                     8.0 * static_cast<double>(f))) /
          2.0);
      while (i * n - i * (i + 1) / 2 > f) --i;
      while ((i + 1) * n - (i + 1) * (i + 2) / 2 <= f) ++i;
      const std::size_t j = f - (i * n - i * (i + 1) / 2) + i + 1;

      const Correspondence& a = corrs[i];
      const Correspondence& b = corrs[j];
      const Gem& xi = xs[static_cast<std::size_t>(a.x_index)];
      const Gem& xj = xs[static_cast<std::size_t>(b.x_index)];
      const Gem& yi = ys[static_cast<std::size_t>(a.y_index)];
      const Gem& yj = ys[static_cast<std::size_t>(b.y_index)];

      const double gap = trim_gap(xi.mean, xj.mean, yi.mean, yj.mean);
      const double lam_x = upper_eigenvalue(xi.pseudo_cov, xj.pseudo_cov,
                                            xi.pseudo_eigenvalues[0], xj.pseudo_eigenvalues[0]);
      const double lam_y = upper_eigenvalue(yi.pseudo_cov, yj.pseudo_cov,
                                            yi.pseudo_eigenvalues[0], yj.pseudo_eigenvalues[0]);
      const double sqrt_lx = std::sqrt(std::max(lam_x, 0.0));
      const double sqrt_ly = std::sqrt(std::max(lam_y, 0.0));
      for (std::size_t m = 0; m < m_levels; ++m) {
        const double root = std::sqrt(pyr.levels[m].chi2);
        const double delta = root * sqrt_lx + root * sqrt_ly;
        if (gap <= delta) {
          chunk_edges[chunk][m].emplace_back(static_cast<int>(i), static_cast<int>(j));
          break;  // nested levels: recorded once, expanded below
        }
      }
    }
  });

  for (std::size_t c = 0; c < chunks; ++c)
    for (std::size_t m = 0; m < m_levels; ++m)
      for (const auto& e : chunk_edges[c][m])
        for (std::size_t k = m; k < m_levels; ++k) {
          pyr.levels[k].edges.push_back(e);
          pyr.levels[k].graph.add_edge(static_cast<std::size_t>(e.first),
                                       static_cast<std::size_t>(e.second));
        }
  for (std::size_t m = 0; m < m_levels; ++m)
    std::sort(pyr.levels[m].edges.begin(), pyr.levels[m].edges.end());
  return pyr;
}

namespace detail {

/// Greedy sequential coloring of the candidate set; returns vertices sorted
/// by ascending color with their color numbers (1-based). color[i] bounds
/// the largest clique inside {vs[0..i]}.
inline void color_sort(const AdjacencyGraph& g, const VertexSet& candidates,
                       std::vector<int>* vertices, std::vector<int>* colors) {
  vertices->clear();
  colors->clear();
  std::vector<std::vector<int>> classes;
  for (int v = candidates.next(0); v >= 0; v = candidates.next(static_cast<std::size_t>(v) + 1)) {
    bool placed = false;
    for (std::size_t c = 0; c < classes.size() && !placed; ++c) {
      bool conflict = false;
      for (int u : classes[c])
        if (g.has_edge(static_cast<std::size_t>(u), static_cast<std::size_t>(v))) {
          conflict = true;
          break;
        }
      if (!conflict) {
        classes[c].push_back(v);
        placed = true;
      }
    }
    if (!placed) classes.push_back({v});
  }
  for (std::size_t c = 0; c < classes.size(); ++c)
    for (int v : classes[c]) {
      vertices->push_back(v);
      colors->push_back(static_cast<int>(c) + 1);
    }
}

/// Cardinality search (Tomita-style branch and bound with coloring bound).
inline void max_clique_size(const AdjacencyGraph& g, VertexSet candidates, std::size_t r_size,
                            std::size_t* best) {
  std::vector<int> vs, cs;
  color_sort(g, candidates, &vs, &cs);
  for (std::size_t idx = vs.size(); idx-- > 0;) {
    const int v = vs[idx];
    if (r_size + static_cast<std::size_t>(cs[idx]) <= *best) return;  // colors ascending
    VertexSet next = candidates & g.adj[static_cast<std::size_t>(v)];
    if (next.empty()) {
      if (r_size + 1 > *best) *best = r_size + 1;
    } else {
      max_clique_size(g, next, r_size + 1, best);
    }
    candidates.reset(static_cast<std::size_t>(v));
  }
}

/// Decision search: does `candidates` contain a clique of size k?
inline bool has_clique_of_size(const AdjacencyGraph& g, VertexSet candidates, std::size_t k) {
  if (k == 0) return true;
  if (candidates.count() < k) return false;
  if (k == 1) return true;
  std::vector<int> vs, cs;
  color_sort(g, candidates, &vs, &cs);
  if (static_cast<std::size_t>(cs.back()) < k) return false;
  for (std::size_t idx = vs.size(); idx-- > 0;) {
    const int v = vs[idx];
    if (static_cast<std::size_t>(cs[idx]) < k) return false;  // colors ascending
    VertexSet next = candidates & g.adj[static_cast<std::size_t>(v)];
    if (has_clique_of_size(g, next, k - 1)) return true;
    candidates.reset(static_cast<std::size_t>(v));
  }
  return false;
}

}  // namespace detail

/// Maximum clique, ties broken toward the lexicographically smallest vertex
/// set. `incumbent` must be a clique of the graph (it seeds the cardinality
/// bound); `restrict_to` limits the search to a vertex subset.
inline std::vector<int> max_clique_bnb(const AdjacencyGraph& g,
                                       const std::vector<int>& incumbent = {},
                                       const VertexSet* restrict_to = nullptr) {
  if (g.n == 0) return {};
  VertexSet all(g.n);
  if (restrict_to)
    all = *restrict_to;
  else
    all.set_all();
  if (all.empty() && incumbent.empty()) return {};

  std::size_t best = incumbent.size();
  detail::max_clique_size(g, all, 0, &best);
  if (best == 0) return {};

  // lexicographically smallest clique of the found cardinality
  std::vector<int> result;
  VertexSet candidates = all;
  std::size_t remaining = best;
  while (remaining > 0) {
    bool advanced = false;
    for (int v = candidates.next(0); v >= 0;
         v = candidates.next(static_cast<std::size_t>(v) + 1)) {
      VertexSet next = candidates & g.adj[static_cast<std::size_t>(v)];
      // only vertices after v keep the construction lexicographic
      for (int u = next.next(0); u >= 0 && u <= v; u = next.next(static_cast<std::size_t>(u) + 1))
        next.reset(static_cast<std::size_t>(u));
      if (detail::has_clique_of_size(g, next, remaining - 1)) {
        result.push_back(v);
        candidates = next;
        --remaining;
        advanced = true;
        break;
      }
    }
    if (!advanced)
      throw ConsistencyError("max_clique_bnb: reconstruction failed");  // unreachable
  }
  return result;
}

struct CliqueResult {
  std::vector<std::vector<int>> cliques;  // one vertex set per level, ascending indices
};

/// Solve the clique per level top-down. Each level seeds the next with its
/// clique as incumbent and prunes vertices whose degree cannot reach the
/// incumbent cardinality (degree < c-1), which is safe because the edge sets
/// are nested and clique cardinalities are non-decreasing.
inline CliqueResult graduated_max_clique(const PyramidGraph& pyr) {
  CliqueResult out;
  std::vector<int> previous;
  for (std::size_t m = 0; m < pyr.levels.size(); ++m) {
    const AdjacencyGraph& g = pyr.levels[m].graph;
    VertexSet keep(g.n);
    if (previous.empty()) {
      keep.set_all();
    } else {
      const std::size_t need = previous.size() - 1;  // clique members have degree >= c-1
      for (std::size_t v = 0; v < g.n; ++v)
        if (g.degree(v) >= need) keep.set(v);
    }
    std::vector<int> clique = max_clique_bnb(g, previous, &keep);
    out.cliques.push_back(clique);
    previous = std::move(clique);
  }
  return out;
}

}  // namespace gemreg
