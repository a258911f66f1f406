#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dosegnn/autodiff.hpp"
#include "dosegnn/features.hpp"
#include "dosegnn/graph.hpp"
#include "dosegnn/nn.hpp"
#include "dosegnn/volume.hpp"

namespace dosegnn {

enum class EncoderKind { Mlp, Cnn3d };
enum class ModelKind { DoseGnn, Heuristic1, Heuristic2 };

std::string to_string(EncoderKind kind);
std::string to_string(ModelKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);
ModelKind model_kind_from_string(const std::string& s);

struct EncoderConfig {
    EncoderKind kind = EncoderKind::Mlp;
    int patch_size = 5;  ///< odd
    int embed_dim = 64;  ///< even, >= 4
    std::vector<int> mlp_hidden{128, 64};
    int cnn_kernels = 8;
    int cnn_kernel_size = 3;

    void validate() const;
};

struct ModelConfig {
    ModelKind kind = ModelKind::DoseGnn;
    EncoderConfig encoder;
    GraphConfig graph;
    int n_rounds = 2;
    double pe_base = 10000.0;
    std::vector<int> message_hidden{64};
    std::vector<int> update_hidden{64};
    std::vector<int> readout_hidden{64};
    int k = 8;  ///< neighbours averaged by heuristic 2

    void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Base image encoder mapping normalized p^3 CT patches to embed_dim vectors.
class Encoder {
public:
    Encoder() = default;
    explicit Encoder(const EncoderConfig& cfg);

    ad::Tensor forward(ad::Tape& tape, const ad::Tensor& patches);
    void collect(std::vector<ad::Parameter*>& out);

private:
    EncoderConfig cfg_;
    Mlp mlp_;                // kind == Mlp
    ad::Parameter kernels_;  // kind == Cnn3d
    ad::Parameter kernel_bias_;
    Linear head_;
};

/// Parameters of one predictor family. Only the pieces relevant to
/// `config().kind` are allocated.
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    ModelKind kind() const { return cfg_.kind; }

    /// Stable order; used for initialization, optimization and serialization.
    std::vector<ad::Parameter*> parameters();

    Encoder encoder;
    Mlp message;  ///< DoseGNN only
    Mlp update;   ///< DoseGNN only
    Mlp readout;

private:
    ModelConfig cfg_;
};

/// Model file: kind, full config echo, named parameter arrays.
nlohmann::json model_to_json(Model& model);
Model model_from_json(const nlohmann::json& j);
/// FNV-1a over parameter bytes in parameter order, as 16 hex digits.
std::string parameter_checksum(Model& model);

// --- featurization -------------------------------------------------------

/// (HU + 1000) / 1080.
double normalize_hu(double hu);

/// Edge-clamped p^3 cube of normalized values around `center`, x fastest.
std::vector<double> extract_patch(const VoxelGrid& ct, const Index3& center, int patch_size);

/// One patch row per requested voxel.
ad::Matrix patch_matrix(const VoxelGrid& ct, std::span<const std::size_t> flat_indices, int patch_size,
                        int threads = 1);

std::vector<DoseNodeFeatures> dose_node_features(const GridGeometry& dose, const Vec3& ptv_center);

/// Sinusoidal encoding: for each of distance and angle, d/4 (sin, cos)
/// pairs at frequencies base^(-4j/d); distance half first. d % 4 == 0.
std::vector<double> positional_encode(const DoseNodeFeatures& f, int d, double base = 10000.0);

ad::Matrix positional_matrix(std::span<const DoseNodeFeatures> features, int d, double base);

/// Rows are encoder outputs for the given CT nodes.
ad::Matrix encode_ct_nodes(Model& model, const VoxelGrid& ct, std::span<const GraphNode> ct_nodes, int threads = 1);

// --- predictors ----------------------------------------------------------

/// out[v] = ct[nearest CT voxel to the center of target voxel v].
VoxelGrid resample_greedy(const VoxelGrid& ct, const GridGeometry& target);

/// Flat indices of the k CT voxels nearest to p, ordered by (distance,
/// flat index). Throws DataError when the grid has fewer than k voxels.
std::vector<std::size_t> k_nearest_voxels(const GridGeometry& ct, const Vec3& p, int k);

/// Message passing over a graph given precomputed node embeddings; returns
/// normalized dose (one column) on the tape.
ad::Tensor dosegnn_forward(ad::Tape& tape, Model& model, std::span<const std::size_t> offsets,
                           std::span<const std::uint32_t> neighbors, const ad::Tensor& ct_embeddings,
                           const ad::Tensor& dose_encodings);

/// Convenience wrapper returning dose in Gy.
std::vector<double> dosegnn_forward(Model& model, const BipartiteGraph& graph, const ad::Matrix& ct_embeddings,
                                    const ad::Matrix& dose_encodings, double prescription_dose);

/// Everything a forward pass needs from one plan that does not depend on
/// the parameters. Built once per plan and reused across epochs.
struct PreparedPlan {
    std::string name;
    ModelKind kind = ModelKind::DoseGnn;
    GridGeometry dose_geometry;
    double prescription_dose = 0.0;
    ad::Matrix patches;           ///< encoder inputs, one row per encoded node
    ad::Matrix dose_encodings;    ///< DoseGNN positional encodings
    std::vector<std::size_t> offsets;       ///< per dose voxel, into `neighbors`
    std::vector<std::uint32_t> neighbors;   ///< rows of `patches`
    std::optional<ad::Matrix> target;       ///< dose / prescription, n_dose x 1
};

PreparedPlan prepare_plan(const ModelConfig& cfg, const PlanBundle& plan, int threads = 1);

/// Normalized prediction (n_dose x 1) on `tape`.
ad::Tensor forward(ad::Tape& tape, Model& model, const PreparedPlan& prepared);

/// Dose in Gy on the plan's dose grid, rounded to float32 storage.
VoxelGrid predict_dose(Model& model, const PlanBundle& plan, int threads = 1);
VoxelGrid predict_dose(Model& model, const PreparedPlan& prepared);

std::vector<double> heuristic1_predict(Model& model, const PlanBundle& plan, int threads = 1);
std::vector<double> heuristic2_predict(Model& model, const PlanBundle& plan, int threads = 1);

}  // namespace dosegnn
