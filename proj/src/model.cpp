#include "dosegnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "dosegnn/error.hpp"
#include "dosegnn/parallel.hpp"

namespace dosegnn {

using nlohmann::json;
using ad::Matrix;
using ad::Tensor;

std::string to_string(EncoderKind kind) { return kind == EncoderKind::Mlp ? "mlp" : "cnn3d"; }

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::DoseGnn: return "dosegnn";
        case ModelKind::Heuristic1: return "heuristic1";
        case ModelKind::Heuristic2: return "heuristic2";
    }
    return "unknown";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "mlp") return EncoderKind::Mlp;
    if (s == "cnn3d") return EncoderKind::Cnn3d;
    throw DataError("unknown encoder kind '" + s + "' (expected mlp or cnn3d)");
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "dosegnn") return ModelKind::DoseGnn;
    if (s == "heuristic1") return ModelKind::Heuristic1;
    if (s == "heuristic2") return ModelKind::Heuristic2;
    throw DataError("unknown model kind '" + s + "' (expected dosegnn, heuristic1 or heuristic2)");
}

void EncoderConfig::validate() const {
    if (patch_size < 1 || patch_size % 2 == 0) throw DataError("patch_size must be odd and >= 1");
    if (embed_dim < 4 || embed_dim % 2 != 0) throw DataError("embed_dim must be even and >= 4");
    for (int h : mlp_hidden) {
        if (h < 1) throw DataError("mlp hidden widths must be >= 1");
    }
    if (kind == EncoderKind::Cnn3d) {
        if (cnn_kernels < 1) throw DataError("cnn_kernels must be >= 1");
        if (cnn_kernel_size < 1 || cnn_kernel_size > patch_size) {
            throw DataError("cnn kernel size " + std::to_string(cnn_kernel_size) + " does not fit patch size " +
                            std::to_string(patch_size));
        }
    }
}

void ModelConfig::validate() const {
    encoder.validate();
    graph.validate();
    if (kind == ModelKind::DoseGnn) {
        if (encoder.embed_dim % 4 != 0) throw DataError("DoseGNN needs embed_dim divisible by 4");
        if (n_rounds < 1) throw DataError("n_rounds must be >= 1");
        if (!(pe_base > 1.0)) throw DataError("pe_base must be > 1");
    }
    if (kind == ModelKind::Heuristic2 && k < 1) throw DataError("heuristic 2 needs k >= 1");
}

json to_json(const ModelConfig& c) {
    return {{"kind", to_string(c.kind)},
            {"encoder",
             {{"kind", to_string(c.encoder.kind)},
              {"patch_size", c.encoder.patch_size},
              {"embed_dim", c.encoder.embed_dim},
              {"mlp_hidden", c.encoder.mlp_hidden},
              {"cnn_kernels", c.encoder.cnn_kernels},
              {"cnn_kernel_size", c.encoder.cnn_kernel_size}}},
            {"graph", to_json(c.graph)},
            {"n_rounds", c.n_rounds},
            {"pe_base", c.pe_base},
            {"message_hidden", c.message_hidden},
            {"update_hidden", c.update_hidden},
            {"readout_hidden", c.readout_hidden},
            {"k", c.k}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    try {
        c.kind = model_kind_from_string(j.at("kind").get<std::string>());
        const auto& e = j.at("encoder");
        c.encoder.kind = encoder_kind_from_string(e.at("kind").get<std::string>());
        c.encoder.patch_size = e.at("patch_size").get<int>();
        c.encoder.embed_dim = e.at("embed_dim").get<int>();
        c.encoder.mlp_hidden = e.at("mlp_hidden").get<std::vector<int>>();
        c.encoder.cnn_kernels = e.at("cnn_kernels").get<int>();
        c.encoder.cnn_kernel_size = e.at("cnn_kernel_size").get<int>();
        c.graph = graph_config_from_json(j.at("graph"));
        c.n_rounds = j.at("n_rounds").get<int>();
        c.pe_base = j.at("pe_base").get<double>();
        c.message_hidden = j.at("message_hidden").get<std::vector<int>>();
        c.update_hidden = j.at("update_hidden").get<std::vector<int>>();
        c.readout_hidden = j.at("readout_hidden").get<std::vector<int>>();
        c.k = j.at("k").get<int>();
    } catch (const json::exception& ex) {
        throw DataError(std::string("bad model config: ") + ex.what());
    }
    c.validate();
    return c;
}

namespace {

std::vector<int> widths(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return w;
}

}  // namespace

Encoder::Encoder(const EncoderConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int p3 = cfg.patch_size * cfg.patch_size * cfg.patch_size;
    if (cfg.kind == EncoderKind::Mlp) {
        mlp_ = Mlp("encoder.mlp", widths(p3, cfg.mlp_hidden, cfg.embed_dim));
    } else {
        const int q = cfg.cnn_kernel_size;
        const int o = cfg.patch_size - q + 1;
        kernels_ = ad::Parameter("encoder.conv.kernels", cfg.cnn_kernels, q * q * q);
        kernel_bias_ = ad::Parameter("encoder.conv.bias", 1, cfg.cnn_kernels);
        head_ = Linear("encoder.head", cfg.cnn_kernels * o * o * o, cfg.embed_dim);
    }
}

Tensor Encoder::forward(ad::Tape& tape, const Tensor& patches) {
    if (cfg_.kind == EncoderKind::Mlp) return mlp_.forward(tape, patches);
    Tensor maps = ad::conv3d_valid(patches, tape.parameter(kernels_), tape.parameter(kernel_bias_),
                                   cfg_.patch_size, cfg_.cnn_kernel_size);
    return head_.forward(tape, ad::relu(maps));
}

void Encoder::collect(std::vector<ad::Parameter*>& out) {
    if (cfg_.kind == EncoderKind::Mlp) {
        mlp_.collect(out);
    } else {
        out.push_back(&kernels_);
        out.push_back(&kernel_bias_);
        out.push_back(&head_.weight);
        out.push_back(&head_.bias);
    }
}

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed) : encoder(cfg.encoder), cfg_(cfg) {
    cfg.validate();
    const int d = cfg.encoder.embed_dim;
    if (cfg.kind == ModelKind::DoseGnn) {
        message = Mlp("message", widths(d, cfg.message_hidden, d));
        update = Mlp("update", widths(2 * d, cfg.update_hidden, d));
    }
    readout = Mlp("readout", widths(d, cfg.readout_hidden, 1));
    SplitMix64 rng(init_seed);
    glorot_init(parameters(), rng);
}

std::vector<ad::Parameter*> Model::parameters() {
    std::vector<ad::Parameter*> out;
    encoder.collect(out);
    if (cfg_.kind == ModelKind::DoseGnn) {
        message.collect(out);
        update.collect(out);
    }
    readout.collect(out);
    return out;
}

json model_to_json(Model& model) {
    json params = json::array();
    for (auto* p : model.parameters()) {
        std::vector<double> data(p->value.data(), p->value.data() + p->value.size());
        params.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}, {"data", data}});
    }
    return {{"kind", to_string(model.kind())}, {"config", to_json(model.config())}, {"parameters", params}};
}

Model model_from_json(const json& j) {
    try {
        const ModelConfig cfg = model_config_from_json(j.at("config"));
        if (j.at("kind").get<std::string>() != to_string(cfg.kind)) throw DataError("model kind does not match config");
        Model model(cfg, 0);
        const auto& params = j.at("parameters");
        auto targets = model.parameters();
        if (params.size() != targets.size()) {
            throw DataError("model file has " + std::to_string(params.size()) + " parameters, config implies " +
                            std::to_string(targets.size()));
        }
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const auto& pj = params[i];
            auto* p = targets[i];
            if (pj.at("name").get<std::string>() != p->name) {
                throw DataError("parameter " + std::to_string(i) + " is '" + pj.at("name").get<std::string>() +
                                "', expected '" + p->name + "'");
            }
            const auto shape = pj.at("shape").get<std::vector<ad::Index>>();
            const auto data = pj.at("data").get<std::vector<double>>();
            if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols() ||
                static_cast<ad::Index>(data.size()) != p->value.size()) {
                throw DataError("parameter '" + p->name + "' has the wrong shape");
            }
            std::copy(data.begin(), data.end(), p->value.data());
            p->zero_grad();
        }
        return model;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad model file: ") + e.what());
    }
}

std::string parameter_checksum(Model& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto* p : model.parameters()) {
        h = fnv1a(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double), h);
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double normalize_hu(double hu) { return (hu + 1000.0) / 1080.0; }

std::vector<double> extract_patch(const VoxelGrid& ct, const Index3& center, int patch_size) {
    const auto& g = ct.geometry();
    const int half = (patch_size - 1) / 2;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(patch_size) * patch_size * patch_size);
    for (int dz = -half; dz <= half; ++dz) {
        const std::int64_t z = std::clamp<std::int64_t>(center.z + dz, 0, g.dims.z - 1);
        for (int dy = -half; dy <= half; ++dy) {
            const std::int64_t y = std::clamp<std::int64_t>(center.y + dy, 0, g.dims.y - 1);
            for (int dx = -half; dx <= half; ++dx) {
                const std::int64_t x = std::clamp<std::int64_t>(center.x + dx, 0, g.dims.x - 1);
                out.push_back(normalize_hu(ct.at({x, y, z})));
            }
        }
    }
    return out;
}

Matrix patch_matrix(const VoxelGrid& ct, std::span<const std::size_t> flat_indices, int patch_size, int threads) {
    const ad::Index p3 = ad::Index{patch_size} * patch_size * patch_size;
    Matrix out(static_cast<ad::Index>(flat_indices.size()), p3);
    parallel_for(flat_indices.size(), threads, [&](std::size_t i) {
        const auto patch = extract_patch(ct, unflatten(ct.geometry(), flat_indices[i]), patch_size);
        out.row(static_cast<ad::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(patch.data(), p3);
    });
    return out;
}

std::vector<DoseNodeFeatures> dose_node_features(const GridGeometry& dose, const Vec3& ptv_center) {
    const auto centers = voxel_centers(dose);
    std::vector<DoseNodeFeatures> out(centers.size());
    for (std::size_t f = 0; f < centers.size(); ++f) out[f] = relative_features(centers[f], ptv_center);
    return out;
}

std::vector<double> positional_encode(const DoseNodeFeatures& f, int d, double base) {
    if (d < 4 || d % 4 != 0) throw std::invalid_argument("positional_encode: d must be a positive multiple of 4");
    std::vector<double> pe(static_cast<std::size_t>(d));
    const int quarter = d / 4;
    const double values[2] = {f.distance, f.angle};
    for (int half = 0; half < 2; ++half) {
        for (int j = 0; j < quarter; ++j) {
            const double freq = std::pow(base, -4.0 * j / static_cast<double>(d));
            const std::size_t at = static_cast<std::size_t>(half * (d / 2) + 2 * j);
            pe[at] = std::sin(values[half] * freq);
            pe[at + 1] = std::cos(values[half] * freq);
        }
    }
    return pe;
}

Matrix positional_matrix(std::span<const DoseNodeFeatures> features, int d, double base) {
    Matrix out(static_cast<ad::Index>(features.size()), d);
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto pe = positional_encode(features[i], d, base);
        out.row(static_cast<ad::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(pe.data(), d);
    }
    return out;
}

Matrix encode_ct_nodes(Model& model, const VoxelGrid& ct, std::span<const GraphNode> ct_nodes, int threads) {
    std::vector<std::size_t> flats(ct_nodes.size());
    for (std::size_t i = 0; i < ct_nodes.size(); ++i) flats[i] = ct_nodes[i].flat;
    ad::Tape tape;
    const Tensor patches = tape.constant(patch_matrix(ct, flats, model.config().encoder.patch_size, threads));
    return model.encoder.forward(tape, patches).value();
}

VoxelGrid resample_greedy(const VoxelGrid& ct, const GridGeometry& target) {
    VoxelGrid out(target, ct.unit());
    const auto centers = voxel_centers(target);
    for (std::size_t f = 0; f < centers.size(); ++f) {
        out.values()[f] = ct.at(world_to_nearest_index(ct.geometry(), centers[f]));
    }
    return out;
}

std::vector<std::size_t> k_nearest_voxels(const GridGeometry& ct, const Vec3& p, int k) {
    if (k < 1) throw std::invalid_argument("k_nearest_voxels: k must be >= 1");
    if (static_cast<std::size_t>(k) > ct.voxel_count()) {
        throw DataError("k = " + std::to_string(k) + " exceeds the " + std::to_string(ct.voxel_count()) +
                        " CT voxels available");
    }
    const Index3 c = world_to_nearest_index(ct, p);
    struct Candidate {
        double d2;
        std::size_t flat;
    };
    std::vector<Candidate> cand;
    for (std::int64_t r = 0;; ++r) {
        Index3 lo, hi;
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max<std::int64_t>(0, c[a] - r);
            hi[a] = std::min<std::int64_t>(ct.dims[a] - 1, c[a] + r);
        }
        cand.clear();
        for (std::int64_t z = lo.z; z <= hi.z; ++z)
            for (std::int64_t y = lo.y; y <= hi.y; ++y)
                for (std::int64_t x = lo.x; x <= hi.x; ++x) {
                    const Index3 idx{x, y, z};
                    cand.push_back({squared_distance(index_to_world(ct, idx), p), flatten(ct, idx)});
                }
        if (cand.size() < static_cast<std::size_t>(k)) continue;
        std::sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b) {
            return a.d2 != b.d2 ? a.d2 < b.d2 : a.flat < b.flat;
        });
        // Any voxel outside the cube lies beyond one of the next layers.
        double bound = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
            if (hi[a] + 1 < ct.dims[a]) {
                bound = std::min(bound, ct.origin[a] + static_cast<double>(hi[a] + 1) * ct.spacing[a] - p[a]);
            }
            if (lo[a] - 1 >= 0) {
                bound = std::min(bound, p[a] - (ct.origin[a] + static_cast<double>(lo[a] - 1) * ct.spacing[a]));
            }
        }
        const double kth = cand[static_cast<std::size_t>(k) - 1].d2;
        if (std::isinf(bound) || (bound > 0.0 && kth < bound * bound)) break;
    }
    std::vector<std::size_t> out(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = cand[static_cast<std::size_t>(i)].flat;
    return out;
}

Tensor dosegnn_forward(ad::Tape& tape, Model& model, std::span<const std::size_t> offsets,
                       std::span<const std::uint32_t> neighbors, const Tensor& ct_embeddings,
                       const Tensor& dose_encodings) {
    if (model.kind() != ModelKind::DoseGnn) throw std::invalid_argument("dosegnn_forward: model is not a DoseGNN");
    if (offsets.size() != static_cast<std::size_t>(dose_encodings.rows()) + 1) {
        throw DataError("dosegnn_forward: graph has " + std::to_string(offsets.empty() ? 0 : offsets.size() - 1) +
                        " dose nodes but " + std::to_string(dose_encodings.rows()) + " dose encodings were given");
    }
    for (auto u : neighbors) {
        if (u >= static_cast<std::size_t>(ct_embeddings.rows())) {
            throw DataError("dosegnn_forward: graph references CT node " + std::to_string(u) + " but only " +
                            std::to_string(ct_embeddings.rows()) + " CT embeddings were given");
        }
    }
    // CT embeddings are static across rounds, so their messages are too.
    const Tensor messages = ad::segment_mean(model.message.forward(tape, ct_embeddings), offsets, neighbors);
    Tensor h = dose_encodings;
    for (int round = 0; round < model.config().n_rounds; ++round) {
        h = model.update.forward(tape, ad::concat(h, messages));
    }
    return model.readout.forward(tape, h);
}

std::vector<double> dosegnn_forward(Model& model, const BipartiteGraph& graph, const Matrix& ct_embeddings,
                                    const Matrix& dose_encodings, double prescription_dose) {
    if (static_cast<std::size_t>(ct_embeddings.rows()) != graph.ct_nodes.size()) {
        throw DataError("dosegnn_forward: " + std::to_string(ct_embeddings.rows()) + " CT embeddings for " +
                        std::to_string(graph.ct_nodes.size()) + " CT nodes");
    }
    ad::Tape tape;
    const Tensor out = dosegnn_forward(tape, model, graph.offsets, graph.neighbors, tape.constant(ct_embeddings),
                                       tape.constant(dose_encodings));
    std::vector<double> dose(static_cast<std::size_t>(out.rows()));
    for (std::size_t i = 0; i < dose.size(); ++i) dose[i] = prescription_dose * out.value()(static_cast<ad::Index>(i), 0);
    return dose;
}

namespace {

/// Keeps only the CT nodes that appear in `rows`, renumbering references
/// to the compact set (ascending by original ordinal).
std::vector<std::size_t> compact_references(std::vector<std::uint32_t>& refs, std::size_t universe) {
    std::vector<std::int64_t> remap(universe, -1);
    for (auto r : refs) remap[r] = 0;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < universe; ++i) {
        if (remap[i] == 0) {
            remap[i] = static_cast<std::int64_t>(kept.size());
            kept.push_back(i);
        }
    }
    for (auto& r : refs) r = static_cast<std::uint32_t>(remap[r]);
    return kept;
}

}  // namespace

PreparedPlan prepare_plan(const ModelConfig& cfg, const PlanBundle& plan, int threads) {
    cfg.validate();
    PreparedPlan out;
    out.name = plan.name;
    out.kind = cfg.kind;
    out.dose_geometry = plan.target_geometry();
    out.prescription_dose = plan.prescription_dose;
    const int p = cfg.encoder.patch_size;
    const std::size_t n_dose = out.dose_geometry.voxel_count();

    switch (cfg.kind) {
        case ModelKind::DoseGnn: {
            BipartiteGraph graph = build_graph(plan.ct.geometry(), out.dose_geometry, cfg.graph, threads);
            out.offsets = graph.offsets;
            out.neighbors = graph.neighbors;
            const auto kept = compact_references(out.neighbors, graph.ct_nodes.size());
            std::vector<std::size_t> flats(kept.size());
            for (std::size_t i = 0; i < kept.size(); ++i) flats[i] = graph.ct_nodes[kept[i]].flat;
            out.patches = patch_matrix(plan.ct, flats, p, threads);
            const auto features = dose_node_features(out.dose_geometry, plan.ptv_center);
            out.dose_encodings = positional_matrix(features, cfg.encoder.embed_dim, cfg.pe_base);
            break;
        }
        case ModelKind::Heuristic1: {
            const VoxelGrid distorted = resample_greedy(plan.ct, out.dose_geometry);
            std::vector<std::size_t> flats(n_dose);
            for (std::size_t f = 0; f < n_dose; ++f) flats[f] = f;
            out.patches = patch_matrix(distorted, flats, p, threads);
            break;
        }
        case ModelKind::Heuristic2: {
            const auto centers = voxel_centers(out.dose_geometry);
            const auto k = static_cast<std::size_t>(cfg.k);
            std::vector<std::uint32_t> refs(n_dose * k);
            parallel_for(n_dose, threads, [&](std::size_t v) {
                const auto nearest = k_nearest_voxels(plan.ct.geometry(), centers[v], cfg.k);
                for (std::size_t j = 0; j < k; ++j) refs[v * k + j] = static_cast<std::uint32_t>(nearest[j]);
            });
            out.offsets.resize(n_dose + 1);
            for (std::size_t v = 0; v <= n_dose; ++v) out.offsets[v] = v * k;
            const auto kept = compact_references(refs, plan.ct.size());
            out.neighbors = std::move(refs);
            out.patches = patch_matrix(plan.ct, kept, p, threads);
            break;
        }
    }
    if (plan.dose) {
        if (!(plan.dose->geometry() == out.dose_geometry)) throw DataError("plan '" + plan.name + "': dose geometry mismatch");
        Matrix target(static_cast<ad::Index>(n_dose), 1);
        for (std::size_t f = 0; f < n_dose; ++f) {
            target(static_cast<ad::Index>(f), 0) = static_cast<double>(plan.dose->values()[f]) / plan.prescription_dose;
        }
        out.target = std::move(target);
    }
    return out;
}

Tensor forward(ad::Tape& tape, Model& model, const PreparedPlan& prepared) {
    if (prepared.kind != model.kind()) {
        throw DataError("plan '" + prepared.name + "' was prepared for " + to_string(prepared.kind) +
                        ", model is " + to_string(model.kind()));
    }
    const Tensor patches = tape.constant(prepared.patches);
    const Tensor embeddings = model.encoder.forward(tape, patches);
    switch (model.kind()) {
        case ModelKind::DoseGnn:
            return dosegnn_forward(tape, model, prepared.offsets, prepared.neighbors, embeddings,
                                   tape.constant(prepared.dose_encodings));
        case ModelKind::Heuristic1:
            return model.readout.forward(tape, embeddings);
        case ModelKind::Heuristic2:
            return model.readout.forward(tape, ad::segment_mean(embeddings, prepared.offsets, prepared.neighbors));
    }
    throw std::logic_error("unreachable");
}

VoxelGrid predict_dose(Model& model, const PreparedPlan& prepared) {
    ad::Tape tape;
    const Tensor y = forward(tape, model, prepared);
    VoxelGrid out(prepared.dose_geometry, "Gy");
    for (std::size_t f = 0; f < out.size(); ++f) {
        out.values()[f] = static_cast<float>(prepared.prescription_dose * y.value()(static_cast<ad::Index>(f), 0));
    }
    return out;
}

VoxelGrid predict_dose(Model& model, const PlanBundle& plan, int threads) {
    return predict_dose(model, prepare_plan(model.config(), plan, threads));
}

namespace {

std::vector<double> predict_normalized(Model& model, const PlanBundle& plan, int threads) {
    const PreparedPlan prepared = prepare_plan(model.config(), plan, threads);
    ad::Tape tape;
    const Tensor y = forward(tape, model, prepared);
    std::vector<double> out(static_cast<std::size_t>(y.rows()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = plan.prescription_dose * y.value()(static_cast<ad::Index>(i), 0);
    return out;
}

}  // namespace

std::vector<double> heuristic1_predict(Model& model, const PlanBundle& plan, int threads) {
    if (model.kind() != ModelKind::Heuristic1) throw std::invalid_argument("heuristic1_predict: wrong model kind");
    return predict_normalized(model, plan, threads);
}

std::vector<double> heuristic2_predict(Model& model, const PlanBundle& plan, int threads) {
    if (model.kind() != ModelKind::Heuristic2) throw std::invalid_argument("heuristic2_predict: wrong model kind");
    return predict_normalized(model, plan, threads);
}

}  // namespace dosegnn
