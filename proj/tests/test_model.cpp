#include <gtest/gtest.h>

#include <algorithm>

#include "dosegnn/error.hpp"
#include "dosegnn/model.hpp"
#include "support.hpp"

using namespace dosegnn;
using testing_support::mini_config;
using testing_support::mini_plan;

TEST(Featurize, NormalizeHu) {
    EXPECT_DOUBLE_EQ(normalize_hu(-1000.0), 0.0);
    EXPECT_DOUBLE_EQ(normalize_hu(80.0), 1.0);
    EXPECT_DOUBLE_EQ(normalize_hu(-460.0), 0.5);
}

TEST(Featurize, PositionalEncodingFormula) {
    const DoseNodeFeatures f{7.5, 1.2};
    const int d = 16;
    const double base = 10000.0;
    const auto pe = positional_encode(f, d, base);
    ASSERT_EQ(pe.size(), 16u);
    for (int j = 0; j < d / 4; ++j) {
        const double w = std::pow(base, -4.0 * j / d);
        EXPECT_NEAR(pe[2 * j], std::sin(f.distance * w), 1e-15);
        EXPECT_NEAR(pe[2 * j + 1], std::cos(f.distance * w), 1e-15);
        EXPECT_NEAR(pe[d / 2 + 2 * j], std::sin(f.angle * w), 1e-15);
        EXPECT_NEAR(pe[d / 2 + 2 * j + 1], std::cos(f.angle * w), 1e-15);
    }
    EXPECT_THROW(positional_encode(f, 6), std::invalid_argument);
}

TEST(Featurize, PatchClampsAtEdges) {
    GridGeometry g{{0, 0, 0}, {1, 1, 1}, {3, 3, 3}};
    VoxelGrid ct(g, "HU");
    for (std::size_t f = 0; f < ct.size(); ++f) ct.values()[f] = static_cast<float>(f);
    const auto patch = extract_patch(ct, {0, 0, 0}, 3);
    ASSERT_EQ(patch.size(), 27u);
    // Offset (-1,-1,-1) clamps to voxel 0; offset (+1,+1,+1) is voxel (1,1,1).
    EXPECT_DOUBLE_EQ(patch[0], normalize_hu(0.0));
    EXPECT_DOUBLE_EQ(patch[26], normalize_hu(static_cast<double>(flatten(g, {1, 1, 1}))));
    // Centre entry is the voxel itself.
    EXPECT_DOUBLE_EQ(extract_patch(ct, {2, 1, 0}, 3)[13], normalize_hu(static_cast<double>(flatten(g, {2, 1, 0}))));
}

TEST(Heuristics, ResampleOntoSameGeometryIsBitIdentical) {
    SplitMix64 rng(12);
    for (int t = 0; t < 10; ++t) {
        const GridGeometry g = testing_support::random_geometry(rng, 9);
        VoxelGrid ct(g, "HU");
        for (auto& v : ct.values()) v = static_cast<float>(rng.uniform(-1000, 1000));
        const VoxelGrid out = resample_greedy(ct, g);
        ASSERT_EQ(out.geometry(), g);
        EXPECT_EQ(0, std::memcmp(out.values().data(), ct.values().data(), ct.size() * sizeof(float)));
    }
}

TEST(Heuristics, ResamplePicksNearestVoxel) {
    GridGeometry src{{0, 0, 0}, {2, 2, 2}, {4, 1, 1}};
    VoxelGrid ct(src, {10, 20, 30, 40}, "HU");
    GridGeometry dst{{1.2, 0, 0}, {3, 1, 1}, {2, 1, 1}};  // centers 1.2 and 4.2
    const VoxelGrid out = resample_greedy(ct, dst);
    EXPECT_EQ(out.values()[0], 20.0f);
    EXPECT_EQ(out.values()[1], 30.0f);
}

TEST(Heuristics, KNearestMatchesSortedScan) {
    SplitMix64 rng(21);
    for (int t = 0; t < 30; ++t) {
        const GridGeometry g = testing_support::random_geometry(rng, 7);
        const int k = 1 + static_cast<int>(rng.below(std::min<std::uint64_t>(10, g.voxel_count())));
        const Vec3 p{rng.uniform(-15, 25), rng.uniform(-15, 25), rng.uniform(-15, 25)};
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t f = 0; f < g.voxel_count(); ++f) {
            all.push_back({squared_distance(index_to_world(g, unflatten(g, f)), p), f});
        }
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect;
        for (int i = 0; i < k; ++i) expect.push_back(all[i].second);
        EXPECT_EQ(k_nearest_voxels(g, p, k), expect) << "trial " << t;
    }
}

TEST(Heuristics, KNearestRejectsOversizedK) {
    GridGeometry g{{}, {1, 1, 1}, {2, 2, 1}};
    EXPECT_THROW(k_nearest_voxels(g, {0, 0, 0}, 5), DataError);
}

TEST(Heuristics, MatchedGeometryHeuristic1EqualsHeuristic2WithKOne) {
    GridGeometry g{{0, 0, 0}, {2, 2, 2}, {6, 6, 6}};
    const PlanBundle plan = testing_support::tiny_plan(g, g, 3);
    ModelConfig c1 = mini_config(ModelKind::Heuristic1);
    ModelConfig c2 = mini_config(ModelKind::Heuristic2);
    c2.k = 1;
    Model h1(c1, 42), h2(c2, 42);
    EXPECT_EQ(parameter_checksum(h1), parameter_checksum(h2));
    EXPECT_EQ(heuristic1_predict(h1, plan), heuristic2_predict(h2, plan));
}

TEST(Heuristics, WrongKindThrows) {
    GridGeometry g{{0, 0, 0}, {2, 2, 2}, {4, 4, 4}};
    const PlanBundle plan = testing_support::tiny_plan(g, g, 3);
    Model gnn(mini_config(), 1);
    EXPECT_THROW(heuristic1_predict(gnn, plan), std::invalid_argument);
}

TEST(DoseGnn, AdjacencyPermutationInvariance) {
    const PlanBundle plan = mini_plan(5);
    ModelConfig cfg = mini_config();
    Model model(cfg, 3);
    BipartiteGraph g = build_graph(plan.ct.geometry(), plan.target_geometry(), cfg.graph);
    SplitMix64 rng(9);
    const auto emb = testing_support::random_matrix(rng, static_cast<long>(g.ct_nodes.size()), 8);
    const auto enc = testing_support::random_matrix(rng, static_cast<long>(g.dose_nodes.size()), 8);
    const auto base = dosegnn_forward(model, g, emb, enc, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        BipartiteGraph s = g;
        for (std::size_t v = 0; v < s.dose_nodes.size(); ++v) {
            std::vector<std::uint32_t> row(s.row(v).begin(), s.row(v).end());
            rng.shuffle(row);
            std::copy(row.begin(), row.end(), s.neighbors.begin() + static_cast<long>(s.offsets[v]));
        }
        const auto out = dosegnn_forward(model, s, emb, enc, 1.0);
        for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], base[i], 1e-9);
    }
}

TEST(DoseGnn, ForwardRejectsMismatchedCounts) {
    const PlanBundle plan = mini_plan(5);
    ModelConfig cfg = mini_config();
    Model model(cfg, 3);
    BipartiteGraph g = build_graph(plan.ct.geometry(), plan.target_geometry(), cfg.graph);
    ad::Matrix emb = ad::Matrix::Zero(static_cast<long>(g.ct_nodes.size()) - 1, 8);
    ad::Matrix enc = ad::Matrix::Zero(static_cast<long>(g.dose_nodes.size()), 8);
    EXPECT_THROW(dosegnn_forward(model, g, emb, enc, 1.0), DataError);
}

TEST(DoseGnn, EndToEndGradientMlpEncoder) {
    EXPECT_LE(testing_support::model_gradient_error(mini_config(), mini_plan(1), 11), 1e-4);
}

TEST(DoseGnn, EndToEndGradientCnnEncoder) {
    ModelConfig cfg = mini_config();
    cfg.encoder.kind = EncoderKind::Cnn3d;
    EXPECT_LE(testing_support::model_gradient_error(cfg, mini_plan(2), 12), 1e-4);
}

TEST(Heuristics, EndToEndGradients) {
    EXPECT_LE(testing_support::model_gradient_error(mini_config(ModelKind::Heuristic1), mini_plan(3), 13), 1e-4);
    EXPECT_LE(testing_support::model_gradient_error(mini_config(ModelKind::Heuristic2), mini_plan(4), 14), 1e-4);
}

TEST(DoseGnn, PredictionShapeAndUnit) {
    const PlanBundle plan = mini_plan(6);
    Model model(mini_config(), 1);
    const VoxelGrid pred = predict_dose(model, plan);
    EXPECT_EQ(pred.geometry(), plan.target_geometry());
    EXPECT_EQ(pred.unit(), "Gy");
    for (float v : pred.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(DoseGnn, PredictionIndependentOfThreadCount) {
    const PlanBundle plan = mini_plan(6);
    Model model(mini_config(), 1);
    EXPECT_EQ(predict_dose(model, plan, 1).values(), predict_dose(model, plan, 3).values());
}

TEST(ModelFile, JsonRoundTripIsExact) {
    for (auto kind : {ModelKind::DoseGnn, ModelKind::Heuristic1, ModelKind::Heuristic2}) {
        ModelConfig cfg = mini_config(kind);
        cfg.encoder.kind = EncoderKind::Cnn3d;
        Model m(cfg, 77);
        const auto j = model_to_json(m);
        Model back = model_from_json(nlohmann::json::parse(j.dump()));
        EXPECT_EQ(parameter_checksum(back), parameter_checksum(m));
        EXPECT_EQ(to_json(back.config()), to_json(m.config()));
    }
}

TEST(ModelFile, ShapeMismatchIsADataError) {
    Model m(mini_config(), 1);
    auto j = model_to_json(m);
    j["parameters"][0]["data"].erase(0);
    EXPECT_THROW(model_from_json(j), DataError);
}

TEST(ModelConfigTest, RejectsBadSettings) {
    ModelConfig cfg = mini_config();
    cfg.encoder.embed_dim = 6;
    EXPECT_THROW(cfg.validate(), DataError);
    cfg = mini_config();
    cfg.encoder.patch_size = 4;
    EXPECT_THROW(cfg.validate(), DataError);
    EXPECT_THROW(model_kind_from_string("unet"), DataError);
}

TEST(ModelConfigTest, InitIsSeeded) {
    Model a(mini_config(), 5), b(mini_config(), 5), c(mini_config(), 6);
    EXPECT_EQ(parameter_checksum(a), parameter_checksum(b));
    EXPECT_NE(parameter_checksum(a), parameter_checksum(c));
}
