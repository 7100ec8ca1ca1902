#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <vector>

namespace sloc {

struct Rule1D {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Gauss-Legendre on [-1, 1], cached per order.
inline const Rule1D& gauss_legendre(int m) {
  static std::mutex mu;
  static std::map<int, Rule1D> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(m);
  if (it != cache.end()) return it->second;
  Rule1D r{std::vector<double>(m), std::vector<double>(m)};
  for (int i = 0; i < (m + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (m + 0.5)), pp = 0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1, p2 = 0;
      for (int j = 1; j <= m; ++j) {
        double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1) * z * p2 - (j - 1.0) * p3) / j;
      }
      pp = m * (z * p1 - p2) / (z * z - 1);
      double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) < 1e-15) break;
    }
    r.nodes[i] = -z;
    r.nodes[m - 1 - i] = z;
    r.weights[i] = r.weights[m - 1 - i] = 2.0 / ((1 - z * z) * pp * pp);
  }
  return cache.emplace(m, std::move(r)).first->second;
}

// Composite rule on [lo, hi] split at the given cut points; `order` points
// in total, shared evenly between panels.
inline Rule1D panel_rule(double lo, double hi, std::vector<double> cuts, int order) {
  std::vector<double> edges{lo};
  std::sort(cuts.begin(), cuts.end());
  for (double c : cuts)
    if (c > lo + 1e-12 * (hi - lo) && c < hi - 1e-12 * (hi - lo) && c > edges.back()) edges.push_back(c);
  edges.push_back(hi);
  const int panels = static_cast<int>(edges.size()) - 1;
  const int m = std::max(4, (order + panels - 1) / panels);
  const Rule1D& gl = gauss_legendre(m);
  Rule1D out;
  for (int p = 0; p < panels; ++p) {
    double half = 0.5 * (edges[p + 1] - edges[p]), mid = 0.5 * (edges[p + 1] + edges[p]);
    for (int k = 0; k < m; ++k) {
      out.nodes.push_back(mid + half * gl.nodes[k]);
      out.weights.push_back(half * gl.weights[k]);
    }
  }
  return out;
}

}  // namespace sloc
