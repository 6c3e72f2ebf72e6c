#pragma once

#include "conformal.hpp"
#include "embed.hpp"
#include "error.hpp"
#include "random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace cal {

struct SelectionConfig {
    std::size_t k_top = 500;
    std::size_t k_cluster = 6;
    /// share of the pool taken from the most uncertain end of the ranking
    double high_fraction = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (k_top == 0 || k_cluster == 0) {
            throw Error(ErrorCode::bad_request, "k_top and k_cluster must be positive");
        }
        if (k_cluster >= k_top) {
            throw Error(ErrorCode::bad_request, "k_cluster must be smaller than k_top");
        }
        if (!(high_fraction > 0.0 && high_fraction <= 1.0)) {
            throw Error(ErrorCode::bad_request, "high_fraction must lie in (0, 1]");
        }
        if (high_fraction * static_cast<double>(k_top) < static_cast<double>(k_cluster)) {
            throw Error(ErrorCode::bad_request, "high_fraction * k_top must be at least k_cluster");
        }
    }
};

struct ScoredDoc {
    std::string doc_id;
    double s_x = 0.0;

    bool operator==(const ScoredDoc&) const = default;
};

/// Most uncertain first; equal scores by doc id.
inline std::vector<ScoredDoc> rank_unlabeled(std::span<const PredictionRecord> records) {
    std::vector<ScoredDoc> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        out.push_back({r.doc_id, r.s_x});
    }
    std::sort(out.begin(), out.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        return a.s_x != b.s_x ? a.s_x > b.s_x : a.doc_id < b.doc_id;
    });
    return out;
}

struct Pool {
    std::vector<ScoredDoc> high; // S descending
    std::vector<ScoredDoc> low;  // S ascending

    std::size_t size() const { return high.size() + low.size(); }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(size());
        for (const auto& d : high) out.push_back(d.doc_id);
        for (const auto& d : low) out.push_back(d.doc_id);
        return out;
    }

    bool operator==(const Pool&) const = default;
};

inline std::size_t high_share(std::size_t pool_size, double high_fraction) {
    const auto h = static_cast<std::size_t>(std::ceil(high_fraction * static_cast<double>(pool_size) - 1e-9));
    return std::min(h, pool_size);
}

inline Pool build_pool(std::span<const ScoredDoc> ordering, const SelectionConfig& cfg) {
    const std::size_t m = std::min(ordering.size(), cfg.k_top);
    const std::size_t n_high = high_share(m, cfg.high_fraction);
    const std::size_t n_low = m - n_high;
    Pool pool;
    pool.high.assign(ordering.begin(), ordering.begin() + static_cast<std::ptrdiff_t>(n_high));
    for (std::size_t i = 0; i < n_low; ++i) {
        pool.low.push_back(ordering[ordering.size() - 1 - i]);
    }
    return pool;
}

struct Clustering {
    std::vector<std::size_t> assignment;
    /// k dense centroids of the embedding dimension
    std::vector<std::vector<double>> centroids;
    /// inertia after every centroid update
    std::vector<double> inertia_trace;
    std::size_t iterations = 0;

    std::size_t k() const { return centroids.size(); }
    double inertia() const { return inertia_trace.empty() ? 0.0 : inertia_trace.back(); }
};

namespace detail {

inline double squared_distance(const SparseVector& x, double x_sq, std::span<const double> c, double c_sq) {
    return std::max(0.0, x_sq - 2.0 * x.dot(c) + c_sq);
}

inline double squared_norm(std::span<const double> c) {
    double s = 0.0;
    for (double v : c) s += v * v;
    return s;
}

} // namespace detail

inline constexpr std::size_t kmeans_max_iterations = 100;

inline constexpr std::size_t kmeans_restarts = 10;

/// One k-means++ seeding followed by Lloyd iterations until the assignment
/// stops changing or 100 iterations elapse. An emptied cluster takes over the
/// point farthest from its own centroid.
inline Clustering kmeans_single(std::span<const SparseVector> points, std::size_t k, std::uint64_t seed,
                                std::size_t restart = 0) {
    const std::size_t n = points.size();
    if (k == 0) {
        throw Error(ErrorCode::bad_request, "k-means needs k >= 1");
    }
    if (n < k) {
        throw Error(ErrorCode::bad_request, "k-means got " + std::to_string(n) + " points for k = " +
                                                std::to_string(k) + "; shrink k to at most the number of points");
    }
    const std::size_t dim = points[0].dim;
    std::vector<double> point_sq(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (points[i].dim != dim) {
            throw Error(ErrorCode::bad_request, "k-means points differ in dimension");
        }
        point_sq[i] = points[i].squared_norm();
    }

    Clustering out;
    auto densify = [&](const SparseVector& x) {
        std::vector<double> c(dim, 0.0);
        for (const auto& [i, w] : x.entries) c[i] = w;
        return c;
    };

    // k-means++ seeding
    Rng rng(derive_seed(seed, {0x4B4D, restart}));
    std::vector<bool> chosen(n, false);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t first = static_cast<std::size_t>(uniform_index(rng, n));
    chosen[first] = true;
    out.centroids.push_back(densify(points[first]));
    while (out.centroids.size() < k) {
        const auto& c = out.centroids.back();
        const double c_sq = detail::squared_norm(c);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], detail::squared_distance(points[i], point_sq[i], c, c_sq));
            if (!chosen[i]) total += nearest[i];
        }
        std::size_t pick = n;
        if (total > 0.0) {
            double target = uniform01(rng) * total;
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i] || nearest[i] <= 0.0) continue;
                pick = i;
                target -= nearest[i];
                if (target < 0.0) break;
            }
        }
        if (pick == n) {
            // every remaining point coincides with a center
            std::vector<std::size_t> rest;
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) rest.push_back(i);
            }
            pick = rest[static_cast<std::size_t>(uniform_index(rng, rest.size()))];
        }
        chosen[pick] = true;
        out.centroids.push_back(densify(points[pick]));
    }

    std::vector<double> centroid_sq(k);
    std::vector<double> dist(n);
    auto assign = [&] {
        for (std::size_t j = 0; j < k; ++j) centroid_sq[j] = detail::squared_norm(out.centroids[j]);
        std::vector<std::size_t> a(n);
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < k; ++j) {
                const double d = detail::squared_distance(points[i], point_sq[i], out.centroids[j], centroid_sq[j]);
                if (d < best) {
                    best = d;
                    a[i] = j;
                }
            }
            dist[i] = best;
        }
        return a;
    };

    std::vector<std::size_t> sizes(k);
    // coincident centroids can leave a cluster empty after any assignment step
    auto repair = [&](std::vector<std::size_t>& a) {
        std::fill(sizes.begin(), sizes.end(), 0);
        for (auto j : a) ++sizes[j];
        for (std::size_t j = 0; j < k; ++j) {
            if (sizes[j] > 0) continue;
            std::size_t far = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (sizes[a[i]] > 1 && (far == n || dist[i] > dist[far])) far = i;
            }
            --sizes[a[far]];
            a[far] = j;
            dist[far] = 0.0;
            ++sizes[j];
        }
    };
    auto update_centroids = [&] {
        for (auto& c : out.centroids) std::fill(c.begin(), c.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& c = out.centroids[out.assignment[i]];
            for (const auto& [d, w] : points[i].entries) c[d] += w;
        }
        for (std::size_t j = 0; j < k; ++j) {
            const double inv = 1.0 / static_cast<double>(sizes[j]);
            for (auto& v : out.centroids[j]) v *= inv;
        }
    };

    auto push_inertia = [&] {
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& c = out.centroids[out.assignment[i]];
            inertia += detail::squared_distance(points[i], point_sq[i], c, detail::squared_norm(c));
        }
        out.inertia_trace.push_back(inertia);
    };

    out.assignment = assign();
    repair(out.assignment);
    bool converged = false;
    for (std::size_t iter = 0; iter < kmeans_max_iterations; ++iter) {
        out.iterations = iter + 1;
        update_centroids();
        push_inertia();
        auto next = assign();
        repair(next);
        if (next == out.assignment) {
            converged = true;
            break;
        }
        out.assignment = std::move(next);
    }
    if (!converged) {
        update_centroids();
        push_inertia();
    }
    return out;
}

/// Best of `restarts` seeded k-means runs by final inertia; ties keep the
/// earlier run.
inline Clustering kmeans(std::span<const SparseVector> points, std::size_t k, std::uint64_t seed,
                         std::size_t restarts = kmeans_restarts) {
    Clustering best = kmeans_single(points, k, seed, 0);
    for (std::size_t r = 1; r < restarts; ++r) {
        auto c = kmeans_single(points, k, seed, r);
        if (c.inertia() < best.inertia()) best = std::move(c);
    }
    return best;
}

/// Member closest to each centroid, in cluster order; distance ties go to the
/// smaller doc id.
inline std::vector<std::string> pick_representatives(std::span<const std::string> ids,
                                                     std::span<const SparseVector> points,
                                                     const Clustering& clustering) {
    const std::size_t k = clustering.k();
    std::vector<std::size_t> best(k, ids.size());
    std::vector<double> best_d(k, std::numeric_limits<double>::infinity());
    std::vector<double> c_sq(k);
    for (std::size_t j = 0; j < k; ++j) c_sq[j] = detail::squared_norm(clustering.centroids[j]);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::size_t j = clustering.assignment[i];
        const double d = detail::squared_distance(points[i], points[i].squared_norm(), clustering.centroids[j], c_sq[j]);
        if (best[j] == ids.size() || d < best_d[j] || (d == best_d[j] && ids[i] < ids[best[j]])) {
            best[j] = i;
            best_d[j] = d;
        }
    }
    std::vector<std::string> out;
    for (std::size_t j = 0; j < k; ++j) {
        if (best[j] != ids.size()) out.push_back(ids[best[j]]);
    }
    return out;
}

struct RefillResult {
    std::vector<std::string> ids;
    bool exhausted = false;
};

/// Seeded draw without replacement from the pool minus `excluded`, high part
/// first.
inline RefillResult refill(const Pool& pool, const std::set<std::string>& excluded, std::size_t n,
                           std::uint64_t seed) {
    RefillResult out;
    Rng rng(derive_seed(seed, {0x5EF1}));
    for (const auto* part : {&pool.high, &pool.low}) {
        if (out.ids.size() >= n) break;
        std::vector<std::string> candidates;
        for (const auto& d : *part) {
            if (!excluded.count(d.doc_id)) candidates.push_back(d.doc_id);
        }
        shuffle(std::span<std::string>(candidates), rng);
        for (auto& c : candidates) {
            if (out.ids.size() >= n) break;
            out.ids.push_back(std::move(c));
        }
    }
    out.exhausted = out.ids.size() < n;
    return out;
}

struct Selection {
    Pool pool;
    Clustering clustering;
    std::vector<std::string> queue;
};

/// rank -> pool -> k-means over the whole pool -> one representative per
/// cluster. `vector_of` maps a doc id to its embedding.
inline Selection select_batch(std::span<const PredictionRecord> records,
                              const std::function<const SparseVector&(const std::string&)>& vector_of,
                              const SelectionConfig& cfg) {
    cfg.validate();
    Selection sel;
    auto ordering = rank_unlabeled(records);
    sel.pool = build_pool(ordering, cfg);
    if (sel.pool.size() == 0) return sel;
    const auto ids = sel.pool.ids();
    std::vector<SparseVector> points;
    points.reserve(ids.size());
    for (const auto& id : ids) points.push_back(vector_of(id));
    const std::size_t k = std::min(cfg.k_cluster, ids.size());
    sel.clustering = kmeans(points, k, cfg.seed);
    sel.queue = pick_representatives(ids, points, sel.clustering);
    return sel;
}

} // namespace cal
