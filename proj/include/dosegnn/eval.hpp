#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dosegnn/volume.hpp"

namespace dosegnn {

/// sqrt(mean((pred - truth)^2)). Throws std::invalid_argument on a length
/// mismatch or empty input.
double rmse(std::span<const double> pred, std::span<const double> truth);

std::vector<double> to_double(std::span<const float> values);

/// Cumulative dose-volume histogram of one structure.
struct DvhCurve {
    std::string structure;
    std::vector<double> dose_gy;     ///< ascending thresholds
    std::vector<double> volume_pct;  ///< percent of structure with dose >= threshold
};

/// n_bins thresholds evenly spaced on [0, 1.1 * prescription], inclusive.
std::vector<double> default_dvh_bins(double prescription_dose, int n_bins = 100);

/// Inclusive >= at every threshold. `mask` must match `dose` in length and be
/// non-empty (DataError otherwise).
DvhCurve cdvh(std::span<const double> dose, const StructureMask& mask, std::span<const double> bins);

/// Mean over bins of |a - b|; curves must share thresholds.
double mean_cdvh_gap(const DvhCurve& a, const DvhCurve& b);

/// `dose_gy,volume_pct` header, one row per bin, 6-decimal fixed.
std::string cdvh_csv(const DvhCurve& curve);

/// A named dose predictor; returns a dose grid on the plan's dose geometry.
struct Predictor {
    std::string name;
    std::function<VoxelGrid(const PlanBundle&)> predict;
};

struct EvalOptions {
    int bins = 100;
    /// Restrict RMSE to one structure instead of the whole dose grid.
    std::optional<std::string> rmse_structure;
};

struct PlanEval {
    std::string plan;
    double rmse = 0.0;
    double ptv_cdvh_gap = 0.0;
    std::vector<DvhCurve> curves;  ///< aligned with EvalReport::structures[plan index]
};

struct ModelEval {
    std::string name;
    std::vector<PlanEval> plans;
    double mean_rmse = 0.0;
    double mean_ptv_cdvh_gap = 0.0;
};

struct EvalReport {
    std::vector<std::string> plans;
    std::vector<std::vector<DvhCurve>> truth_curves;  ///< per plan, per structure
    std::vector<ModelEval> models;
};

/// Structures of `plan` expressed on its dose grid; CT-grid masks are
/// transferred by nearest-voxel lookup and empty results are dropped.
std::vector<StructureMask> dose_grid_structures(const PlanBundle& plan);

/// Evaluates every predictor on every plan in order. Plans must carry
/// ground-truth dose.
EvalReport compare_models(std::span<const Predictor> models, std::span<const PlanBundle> test_set,
                          const EvalOptions& options = {});

/// metrics.json body: RMSE and PTV CDVH gaps per model and plan.
nlohmann::json report_to_json(const EvalReport& report);

/// Writes `<dir>/<plan>/cdvh_<model>_<structure>.csv` for truth and every model.
void write_cdvh_files(const std::filesystem::path& dir, const EvalReport& report);

}  // namespace dosegnn
