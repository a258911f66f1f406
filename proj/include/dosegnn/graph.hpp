#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dosegnn/volume.hpp"

namespace dosegnn {

struct GraphConfig {
    double threshold = 5.0;  ///< mm, inclusive
    /// CT nodes are CT voxel centers inside the dose center box dilated by
    /// this margin; negative means "use threshold".
    double ct_margin = -1.0;

    double margin() const { return ct_margin < 0.0 ? threshold : ct_margin; }
    void validate() const;
};

nlohmann::json to_json(const GraphConfig& cfg);
GraphConfig graph_config_from_json(const nlohmann::json& j);

struct GraphNode {
    std::size_t flat = 0;  ///< flat index on the node's own grid
    Vec3 position;
};

struct Edge {
    std::uint32_t dose = 0;  ///< dose-node ordinal
    std::uint32_t ct = 0;    ///< CT-node ordinal
    bool fallback = false;

    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge& a, const Edge& b) {
        if (a.dose != b.dose) return a.dose <=> b.dose;
        return a.ct <=> b.ct;
    }
};

/// CT <-> dose bipartite graph in compressed-row form keyed by dose node.
struct BipartiteGraph {
    std::vector<GraphNode> ct_nodes;
    std::vector<GraphNode> dose_nodes;
    std::vector<std::size_t> offsets;      ///< size dose_nodes + 1
    std::vector<std::uint32_t> neighbors;  ///< CT ordinals, ascending per row
    std::vector<std::uint8_t> fallback;    ///< per dose node
    double threshold = 0.0;

    std::span<const std::uint32_t> row(std::size_t dose) const {
        return {neighbors.data() + offsets[dose], offsets[dose + 1] - offsets[dose]};
    }
    std::size_t degree(std::size_t dose) const { return offsets[dose + 1] - offsets[dose]; }
    std::size_t edge_count() const { return neighbors.size(); }
    /// Sorted by (dose, ct).
    std::vector<Edge> edges() const;
};

/// Uniform hash grid with cubic cells, used for fixed-radius and
/// nearest-point queries over a static point set.
class SpatialHash {
public:
    SpatialHash(std::span<const Vec3> points, double cell_size);

    /// Ordinals of points with |p - q| <= radius, ascending. radius must be
    /// <= cell_size.
    void query_radius(const Vec3& q, double radius, std::vector<std::uint32_t>& out) const;

    /// Nearest point; ties go to the smaller ordinal. Requires a non-empty set.
    std::uint32_t nearest(const Vec3& q) const;

private:
    struct Key {
        std::int64_t x, y, z;
        friend bool operator==(const Key&, const Key&) = default;
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const {
            std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
            h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4FULL;
            h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ULL;
            return static_cast<std::size_t>(h ^ (h >> 29));
        }
    };

    Key key_of(const Vec3& p) const;
    void visit_cell(const Key& key, const Vec3& q, double& best_d2, std::uint32_t& best) const;

    std::span<const Vec3> points_;
    double cell_;
    std::unordered_map<Key, std::vector<std::uint32_t>, KeyHash> cells_;
    Key lo_{0, 0, 0};
    Key hi_{0, 0, 0};
};

/// CT voxel centers inside the dilated dose box, in flat order.
/// Throws DataError when none qualify.
std::vector<GraphNode> select_ct_nodes(const GridGeometry& ct, const GridGeometry& dose, const GraphConfig& cfg);

std::vector<GraphNode> grid_nodes(const GridGeometry& geometry);

/// Hash-grid construction over explicit node lists.
BipartiteGraph build_graph(std::vector<GraphNode> ct_nodes, std::vector<GraphNode> dose_nodes, double threshold,
                           int threads = 1);

/// Full pipeline: CT node selection, all dose voxels as dose nodes.
BipartiteGraph build_graph(const GridGeometry& ct, const GridGeometry& dose, const GraphConfig& cfg,
                           int threads = 1);

/// O(n*m) reference enumeration with the same inclusive threshold and
/// nearest-node fallback (ties to the smaller CT flat index).
std::vector<Edge> brute_force_edges(std::span<const GraphNode> ct_nodes, std::span<const GraphNode> dose_nodes,
                                    double threshold);

std::map<std::size_t, std::size_t> degree_histogram(const BipartiteGraph& graph);

/// Diagnostic summary: counts, threshold, degree histogram.
nlohmann::json graph_summary(const BipartiteGraph& graph);

}  // namespace dosegnn
