#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "dosegnn/error.hpp"
#include "dosegnn/eval.hpp"
#include "dosegnn/plan_io.hpp"
#include "support.hpp"

using namespace dosegnn;

namespace {

/// Percent of masked values >= t, by sorting the masked doses and counting.
std::vector<double> sort_and_count(const std::vector<double>& dose, const std::vector<std::uint8_t>& mask,
                                   const std::vector<double>& bins) {
    std::vector<double> in;
    for (std::size_t i = 0; i < dose.size(); ++i)
        if (mask[i]) in.push_back(dose[i]);
    std::sort(in.begin(), in.end());
    std::vector<double> out;
    for (double t : bins) {
        const auto n = in.end() - std::lower_bound(in.begin(), in.end(), t);
        out.push_back(100.0 * static_cast<double>(n) / static_cast<double>(in.size()));
    }
    return out;
}

}  // namespace

TEST(Rmse, IdentityShiftAndFormula) {
    std::vector<double> a{1, 2, 3, 4};
    EXPECT_EQ(rmse(a, a), 0.0);
    std::vector<double> b{2, 3, 4, 5};
    EXPECT_EQ(rmse(a, b), 1.0);
    std::vector<double> c{1, 2, 3, 8};
    EXPECT_DOUBLE_EQ(rmse(a, c), std::sqrt(16.0 / 4.0));
    EXPECT_THROW(rmse(a, std::vector<double>{1, 2}), std::invalid_argument);
    EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
}

TEST(Rmse, SymmetricAndNonNegative) {
    SplitMix64 rng(4);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> a(50), b(50);
        for (auto& v : a) v = rng.uniform(-5, 5);
        for (auto& v : b) v = rng.uniform(-5, 5);
        EXPECT_EQ(rmse(a, b), rmse(b, a));
        EXPECT_GE(rmse(a, b), 0.0);
    }
}

TEST(Cdvh, DefaultBinsSpanToTenPercentAbovePrescription) {
    const auto bins = default_dvh_bins(60.0);
    ASSERT_EQ(bins.size(), 100u);
    EXPECT_EQ(bins.front(), 0.0);
    EXPECT_NEAR(bins.back(), 66.0, 1e-12);
}

TEST(Cdvh, UniformDoseIsAStep) {
    std::vector<double> dose(30, 40.0);
    StructureMask m{"PTV", MaskGrid::Dose, std::vector<std::uint8_t>(30, 1)};
    const std::vector<double> bins{0.0, 39.999, 40.0, 40.001, 60.0};
    const auto c = cdvh(dose, m, bins);
    EXPECT_EQ(c.volume_pct, (std::vector<double>{100, 100, 100, 0, 0}));
}

TEST(Cdvh, MatchesSortAndCountAndIsMonotone) {
    SplitMix64 rng(17);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 20 + rng.below(200);
        std::vector<double> dose(n);
        StructureMask m{"S", MaskGrid::Dose, std::vector<std::uint8_t>(n, 0)};
        for (auto& v : dose) v = rng.uniform(0, 70);
        for (auto& v : m.values) v = rng.uniform() < 0.5;
        m.values[0] = 1;
        const auto bins = default_dvh_bins(60.0);
        const auto c = cdvh(dose, m, bins);
        const auto expect = sort_and_count(dose, m.values, bins);
        for (std::size_t i = 0; i < bins.size(); ++i) {
            EXPECT_NEAR(c.volume_pct[i], expect[i], 1e-12);
            if (i) EXPECT_LE(c.volume_pct[i], c.volume_pct[i - 1]);
        }
    }
}

TEST(Cdvh, EmptyMaskIsADataError) {
    std::vector<double> dose(4, 1.0);
    StructureMask m{"S", MaskGrid::Dose, std::vector<std::uint8_t>(4, 0)};
    EXPECT_THROW(cdvh(dose, m, default_dvh_bins(60.0)), DataError);
}

TEST(Cdvh, GapAndCsv) {
    DvhCurve a{"PTV", {0, 1}, {100, 50}};
    DvhCurve b{"PTV", {0, 1}, {90, 60}};
    EXPECT_DOUBLE_EQ(mean_cdvh_gap(a, b), 10.0);
    EXPECT_EQ(cdvh_csv(a), "dose_gy,volume_pct\n0.000000,100.000000\n1.000000,50.000000\n");
    DvhCurve c{"PTV", {0, 2}, {100, 50}};
    EXPECT_THROW(mean_cdvh_gap(a, c), std::invalid_argument);
}

TEST(Compare, PerfectPredictorScoresZero) {
    GridGeometry ct{{0, 0, 0}, {1.5, 1.5, 1.5}, {9, 9, 9}};
    GridGeometry dose{{2.2, 2.4, 2.1}, {2.0, 2.0, 2.0}, {4, 4, 4}};
    std::vector<PlanBundle> plans{testing_support::tiny_plan(ct, dose, 1), testing_support::tiny_plan(ct, dose, 2)};
    plans[1].name = "tiny2";
    std::vector<Predictor> preds{{"oracle", [](const PlanBundle& p) { return *p.dose; }},
                                 {"zero", [](const PlanBundle& p) { return VoxelGrid(p.target_geometry(), "Gy"); }}};
    const EvalReport r = compare_models(preds, plans);
    ASSERT_EQ(r.models.size(), 2u);
    EXPECT_EQ(r.models[0].mean_rmse, 0.0);
    EXPECT_EQ(r.models[0].mean_ptv_cdvh_gap, 0.0);
    EXPECT_GT(r.models[1].mean_rmse, 0.0);
    const auto j = report_to_json(r);
    EXPECT_EQ(j["models"].size(), 2u);

    const auto dir = std::filesystem::temp_directory_path() / "dosegnn_test_cdvh";
    std::filesystem::remove_all(dir);
    write_cdvh_files(dir, r);
    EXPECT_TRUE(std::filesystem::exists(dir / "tiny" / "cdvh_oracle_PTV.csv"));
    EXPECT_TRUE(std::filesystem::exists(dir / "tiny2" / "cdvh_truth_PTV.csv"));
    EXPECT_EQ(read_text(dir / "tiny" / "cdvh_oracle_PTV.csv"), read_text(dir / "tiny" / "cdvh_truth_PTV.csv"));
}

TEST(Compare, StructureRestrictedRmse) {
    GridGeometry g{{0, 0, 0}, {2, 2, 2}, {5, 5, 5}};
    PlanBundle plan = testing_support::tiny_plan(g, g, 1);
    std::vector<Predictor> preds{{"shift", [](const PlanBundle& p) {
                                      VoxelGrid out = *p.dose;
                                      const auto& ptv = p.ptv();
                                      for (std::size_t i = 0; i < out.size(); ++i)
                                          if (!ptv.values[i]) out.values()[i] += 3.0f;
                                      return out;
                                  }}};
    EvalOptions opt;
    opt.rmse_structure = "PTV";
    EXPECT_EQ(compare_models(preds, std::span<const PlanBundle>(&plan, 1), opt).models[0].mean_rmse, 0.0);
    opt.rmse_structure = "nope";
    EXPECT_THROW(compare_models(preds, std::span<const PlanBundle>(&plan, 1), opt), DataError);
}

TEST(Compare, MissingTruthIsADataError) {
    GridGeometry g{{0, 0, 0}, {2, 2, 2}, {4, 4, 4}};
    PlanBundle plan = testing_support::tiny_plan(g, g, 1);
    plan.dose.reset();
    std::vector<Predictor> preds{{"zero", [](const PlanBundle& p) { return VoxelGrid(p.target_geometry(), "Gy"); }}};
    EXPECT_THROW(compare_models(preds, std::span<const PlanBundle>(&plan, 1)), DataError);
}
