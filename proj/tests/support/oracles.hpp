#pragma once

// Test-only reference implementations, independent of the library's
// algorithmic paths: exhaustive LCS, basis-enumeration transport, and
// central-difference gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "manualqa/encoder.hpp"
#include "manualqa/metrics.hpp"

namespace testsupport {

// longest common subsequence by enumerating every subsequence of `a`
inline std::size_t brute_force_lcs(std::span<const std::string> a,
                                   std::span<const std::string> b) {
    const std::size_t n = a.size();
    std::size_t best = 0;
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
        std::vector<const std::string*> sub;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (std::size_t{1} << i)) sub.push_back(&a[i]);
        }
        if (sub.size() <= best) continue;
        std::size_t j = 0;
        for (const std::string& tok : b) {
            if (j < sub.size() && *sub[j] == tok) ++j;
        }
        if (j == sub.size()) best = sub.size();
    }
    return best;
}

// Exact transportation optimum by enumerating every spanning-tree basis of
// the complete bipartite graph: each basis determines a unique flow; feasible
// bases are vertices of the transportation polytope.
inline double brute_force_emd(const manualqa::Bag& a, const manualqa::Bag& b) {
    const std::size_t n = a.points.size();
    const std::size_t m = b.points.size();
    const std::size_t nodes = n + m;
    const std::size_t n_edges = n * m;
    const std::size_t basis_size = nodes - 1;

    std::vector<double> cost(n_edges);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double sum = 0.0;
            for (std::size_t c = 0; c < a.points[i].embedding.size(); ++c) {
                const double diff = a.points[i].embedding[c] - b.points[j].embedding[c];
                sum += diff * diff;
            }
            cost[i * m + j] = std::sqrt(sum);
        }
    }

    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> chosen;

    // solve the flow on a candidate tree by repeatedly peeling leaves
    auto evaluate = [&](const std::vector<std::size_t>& edges) {
        std::vector<std::size_t> degree(nodes, 0);
        for (std::size_t e : edges) {
            ++degree[e / m];
            ++degree[n + e % m];
        }
        std::vector<double> balance(nodes);
        for (std::size_t i = 0; i < n; ++i) balance[i] = a.points[i].mass;
        for (std::size_t j = 0; j < m; ++j) balance[n + j] = b.points[j].mass;

        std::vector<char> edge_done(edges.size(), 0);
        std::vector<double> flow(edges.size(), 0.0);
        for (std::size_t round = 0; round < edges.size(); ++round) {
            bool progressed = false;
            for (std::size_t k = 0; k < edges.size(); ++k) {
                if (edge_done[k]) continue;
                const std::size_t src = edges[k] / m;
                const std::size_t snk = n + edges[k] % m;
                std::size_t leaf = nodes;
                if (degree[src] == 1) leaf = src;
                else if (degree[snk] == 1) leaf = snk;
                if (leaf == nodes) continue;
                // the leaf's full remaining balance must ride its only edge
                const double f = balance[leaf];
                flow[k] = f;
                balance[src] -= f;
                balance[snk] -= f;
                --degree[src];
                --degree[snk];
                edge_done[k] = 1;
                progressed = true;
            }
            if (!progressed) break;
        }
        if (std::count(edge_done.begin(), edge_done.end(), 1) !=
            static_cast<std::ptrdiff_t>(edges.size())) {
            return;  // cycle: not a tree
        }
        double total = 0.0;
        for (std::size_t k = 0; k < edges.size(); ++k) {
            if (flow[k] < -1e-12) return;  // infeasible basis
            total += flow[k] * cost[edges[k]];
        }
        best = std::min(best, total);
    };

    // enumerate all edge subsets of size nodes-1 that touch every node
    std::vector<std::size_t> combo(basis_size);
    std::function<void(std::size_t, std::size_t)> recurse = [&](std::size_t start,
                                                                std::size_t depth) {
        if (depth == basis_size) {
            std::vector<char> touched(nodes, 0);
            for (std::size_t e : combo) {
                touched[e / m] = 1;
                touched[n + e % m] = 1;
            }
            if (std::count(touched.begin(), touched.end(), 1) ==
                static_cast<std::ptrdiff_t>(nodes)) {
                evaluate(combo);
            }
            return;
        }
        for (std::size_t e = start; e + (basis_size - depth) <= n_edges; ++e) {
            combo[depth] = e;
            recurse(e + 1, depth + 1);
        }
    };
    recurse(0, 0);
    return best;
}

// flat read/write access to every encoder parameter, for finite differences
class FlatParams {
public:
    explicit FlatParams(manualqa::LayeredEncoder& model) {
        model.for_each_tensor([this](manualqa::Tensor& t) {
            starts_.push_back(total_);
            tensors_.push_back(&t);
            total_ += t.size();
        });
    }

    std::size_t size() const { return total_; }

    double get(std::size_t i) const {
        const auto [t, off] = locate(i);
        return t->values[off];
    }

    void set(std::size_t i, double v) {
        const auto [t, off] = locate(i);
        t->values[off] = v;
    }

private:
    std::pair<manualqa::Tensor*, std::size_t> locate(std::size_t i) const {
        std::size_t lo = 0;
        std::size_t hi = tensors_.size() - 1;
        while (lo < hi) {
            const std::size_t mid = (lo + hi + 1) / 2;
            if (starts_[mid] <= i) lo = mid;
            else hi = mid - 1;
        }
        return {tensors_[lo], i - starts_[lo]};
    }

    std::vector<manualqa::Tensor*> tensors_;
    std::vector<std::size_t> starts_;
    std::size_t total_ = 0;
};

// central finite difference of a scalar loss with respect to parameter i
inline double central_difference(FlatParams& params, std::size_t i,
                                 const std::function<double()>& loss) {
    const double orig = params.get(i);
    const double h = 1e-5 * std::max(1.0, std::abs(orig));
    params.set(i, orig + h);
    const double up = loss();
    params.set(i, orig - h);
    const double down = loss();
    params.set(i, orig);
    return (up - down) / (2.0 * h);
}

// relative agreement with an absolute guard for near-zero gradients
inline bool gradients_agree(double analytic, double numeric, double rel_tol = 1e-4,
                            double abs_guard = 1e-7) {
    const double diff = std::abs(analytic - numeric);
    return diff <= std::max(abs_guard, rel_tol * std::max(std::abs(analytic),
                                                          std::abs(numeric)));
}

}  // namespace testsupport
