#include "dosegnn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dosegnn/error.hpp"
#include "dosegnn/parallel.hpp"

namespace dosegnn {

using nlohmann::json;

void GraphConfig::validate() const {
    if (!(threshold > 0.0) || !std::isfinite(threshold)) throw DataError("graph threshold must be > 0");
    if (margin() < threshold) throw DataError("ct_margin must be >= threshold");
}

json to_json(const GraphConfig& cfg) { return {{"threshold_mm", cfg.threshold}, {"ct_margin_mm", cfg.margin()}}; }

GraphConfig graph_config_from_json(const json& j) {
    GraphConfig cfg;
    cfg.threshold = j.at("threshold_mm").get<double>();
    cfg.ct_margin = j.value("ct_margin_mm", -1.0);
    cfg.validate();
    return cfg;
}

std::vector<Edge> BipartiteGraph::edges() const {
    std::vector<Edge> out;
    out.reserve(neighbors.size());
    for (std::size_t v = 0; v < dose_nodes.size(); ++v) {
        for (auto u : row(v)) out.push_back({static_cast<std::uint32_t>(v), u, fallback[v] != 0});
    }
    return out;
}

SpatialHash::SpatialHash(std::span<const Vec3> points, double cell_size) : points_(points), cell_(cell_size) {
    if (!(cell_size > 0.0)) throw std::invalid_argument("SpatialHash: cell size must be > 0");
    bool first = true;
    for (std::uint32_t i = 0; i < points.size(); ++i) {
        const Key k = key_of(points[i]);
        cells_[k].push_back(i);
        if (first) {
            lo_ = hi_ = k;
            first = false;
        } else {
            lo_ = {std::min(lo_.x, k.x), std::min(lo_.y, k.y), std::min(lo_.z, k.z)};
            hi_ = {std::max(hi_.x, k.x), std::max(hi_.y, k.y), std::max(hi_.z, k.z)};
        }
    }
}

SpatialHash::Key SpatialHash::key_of(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x / cell_)), static_cast<std::int64_t>(std::floor(p.y / cell_)),
            static_cast<std::int64_t>(std::floor(p.z / cell_))};
}

void SpatialHash::query_radius(const Vec3& q, double radius, std::vector<std::uint32_t>& out) const {
    out.clear();
    const double r2 = radius * radius;
    const Key c = key_of(q);
    for (std::int64_t dz = -1; dz <= 1; ++dz) {
        for (std::int64_t dy = -1; dy <= 1; ++dy) {
            for (std::int64_t dx = -1; dx <= 1; ++dx) {
                const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
                if (it == cells_.end()) continue;
                for (auto i : it->second) {
                    if (squared_distance(points_[i], q) <= r2) out.push_back(i);
                }
            }
        }
    }
    // Bucket iteration order is unspecified; sorting makes rows canonical.
    std::sort(out.begin(), out.end());
}

void SpatialHash::visit_cell(const Key& key, const Vec3& q, double& best_d2, std::uint32_t& best) const {
    const auto it = cells_.find(key);
    if (it == cells_.end()) return;
    for (auto i : it->second) {
        const double d2 = squared_distance(points_[i], q);
        if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
            best_d2 = d2;
            best = i;
        }
    }
}

std::uint32_t SpatialHash::nearest(const Vec3& q) const {
    if (points_.empty()) throw std::invalid_argument("SpatialHash::nearest on an empty set");
    const Key c = key_of(q);
    const std::int64_t reach = std::max({std::abs(c.x - lo_.x), std::abs(c.x - hi_.x), std::abs(c.y - lo_.y),
                                         std::abs(c.y - hi_.y), std::abs(c.z - lo_.z), std::abs(c.z - hi_.z)});
    double best_d2 = std::numeric_limits<double>::infinity();
    std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
    for (std::int64_t s = 0; s <= reach; ++s) {
        // Shell of cells at Chebyshev distance exactly s.
        for (std::int64_t dz = -s; dz <= s; ++dz) {
            for (std::int64_t dy = -s; dy <= s; ++dy) {
                const bool face = std::abs(dz) == s || std::abs(dy) == s;
                const std::int64_t step = face ? 1 : 2 * s;
                for (std::int64_t dx = -s; dx <= s; dx += std::max<std::int64_t>(step, 1)) {
                    visit_cell({c.x + dx, c.y + dy, c.z + dz}, q, best_d2, best);
                }
            }
        }
        // Points in unvisited shells are at least (s - 1) cells away once
        // floating-point cell assignment is accounted for.
        const double bound = static_cast<double>(s - 1) * cell_;
        if (s >= 1 && best_d2 < bound * bound) break;
    }
    return best;
}

std::vector<GraphNode> grid_nodes(const GridGeometry& geometry) {
    const auto centers = voxel_centers(geometry);
    std::vector<GraphNode> nodes(centers.size());
    for (std::size_t f = 0; f < centers.size(); ++f) nodes[f] = {f, centers[f]};
    return nodes;
}

std::vector<GraphNode> select_ct_nodes(const GridGeometry& ct, const GridGeometry& dose, const GraphConfig& cfg) {
    cfg.validate();
    Box box = center_bounds(dose);
    const double margin = cfg.margin();
    for (int a = 0; a < 3; ++a) {
        box.lo[a] -= margin;
        box.hi[a] += margin;
    }
    std::vector<GraphNode> out;
    const auto centers = voxel_centers(ct);
    for (std::size_t f = 0; f < centers.size(); ++f) {
        if (box.contains(centers[f])) out.push_back({f, centers[f]});
    }
    if (out.empty()) {
        throw DataError("no CT voxel lies within " + std::to_string(margin) +
                        " mm of the dose grid; geometries do not overlap");
    }
    return out;
}

BipartiteGraph build_graph(std::vector<GraphNode> ct_nodes, std::vector<GraphNode> dose_nodes, double threshold,
                           int threads) {
    if (!(threshold > 0.0)) throw DataError("graph threshold must be > 0");
    if (ct_nodes.empty() && !dose_nodes.empty()) throw DataError("graph has dose nodes but no CT nodes");

    BipartiteGraph g;
    g.threshold = threshold;
    g.ct_nodes = std::move(ct_nodes);
    g.dose_nodes = std::move(dose_nodes);

    std::vector<Vec3> ct_points(g.ct_nodes.size());
    for (std::size_t i = 0; i < ct_points.size(); ++i) ct_points[i] = g.ct_nodes[i].position;
    // Cells marginally wider than the radius so the 27-cell stencil stays
    // exhaustive under rounding in the cell assignment.
    const SpatialHash hash(ct_points, threshold * (1.0 + 1e-9));

    const std::size_t n_dose = g.dose_nodes.size();
    std::vector<std::vector<std::uint32_t>> rows(n_dose);
    g.fallback.assign(n_dose, 0);
    parallel_for(n_dose, threads, [&](std::size_t v) {
        hash.query_radius(g.dose_nodes[v].position, threshold, rows[v]);
        if (rows[v].empty()) {
            rows[v].push_back(hash.nearest(g.dose_nodes[v].position));
            g.fallback[v] = 1;
        }
    });

    g.offsets.assign(n_dose + 1, 0);
    for (std::size_t v = 0; v < n_dose; ++v) g.offsets[v + 1] = g.offsets[v] + rows[v].size();
    g.neighbors.reserve(g.offsets.back());
    for (const auto& r : rows) g.neighbors.insert(g.neighbors.end(), r.begin(), r.end());
    return g;
}

BipartiteGraph build_graph(const GridGeometry& ct, const GridGeometry& dose, const GraphConfig& cfg, int threads) {
    return build_graph(select_ct_nodes(ct, dose, cfg), grid_nodes(dose), cfg.threshold, threads);
}

std::vector<Edge> brute_force_edges(std::span<const GraphNode> ct_nodes, std::span<const GraphNode> dose_nodes,
                                    double threshold) {
    std::vector<Edge> out;
    const double t2 = threshold * threshold;
    for (std::size_t v = 0; v < dose_nodes.size(); ++v) {
        bool any = false;
        std::size_t best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u < ct_nodes.size(); ++u) {
            const double d2 = squared_distance(ct_nodes[u].position, dose_nodes[v].position);
            if (d2 <= t2) {
                out.push_back({static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(u), false});
                any = true;
            }
            if (d2 < best_d2 || (d2 == best_d2 && ct_nodes[u].flat < ct_nodes[best].flat)) {
                best_d2 = d2;
                best = u;
            }
        }
        if (!any && !ct_nodes.empty()) {
            out.push_back({static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(best), true});
        }
    }
    return out;
}

std::map<std::size_t, std::size_t> degree_histogram(const BipartiteGraph& graph) {
    std::map<std::size_t, std::size_t> hist;
    for (std::size_t v = 0; v < graph.dose_nodes.size(); ++v) ++hist[graph.degree(v)];
    return hist;
}

json graph_summary(const BipartiteGraph& graph) {
    json hist = json::array();
    for (const auto& [degree, count] : degree_histogram(graph)) hist.push_back({{"degree", degree}, {"count", count}});
    std::size_t n_fallback = 0;
    for (auto f : graph.fallback) n_fallback += f;
    return {{"ct_nodes", graph.ct_nodes.size()},
            {"dose_nodes", graph.dose_nodes.size()},
            {"edges", graph.edge_count()},
            {"fallback_nodes", n_fallback},
            {"threshold_mm", graph.threshold},
            {"degree_histogram", hist}};
}

}  // namespace dosegnn
