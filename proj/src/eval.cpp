#include "dosegnn/eval.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "dosegnn/error.hpp"
#include "dosegnn/plan_io.hpp"

namespace dosegnn {

using nlohmann::json;

double rmse(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw std::invalid_argument("rmse: prediction has " + std::to_string(pred.size()) + " values, truth has " +
                                    std::to_string(truth.size()));
    }
    if (pred.empty()) throw std::invalid_argument("rmse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

std::vector<double> to_double(std::span<const float> values) { return {values.begin(), values.end()}; }

std::vector<double> default_dvh_bins(double prescription_dose, int n_bins) {
    if (n_bins < 2) throw std::invalid_argument("default_dvh_bins: need at least 2 bins");
    const double top = 1.1 * prescription_dose;
    std::vector<double> bins(static_cast<std::size_t>(n_bins));
    for (int i = 0; i < n_bins; ++i) bins[static_cast<std::size_t>(i)] = top * i / static_cast<double>(n_bins - 1);
    return bins;
}

DvhCurve cdvh(std::span<const double> dose, const StructureMask& mask, std::span<const double> bins) {
    if (mask.values.size() != dose.size()) {
        throw DataError("cdvh: mask '" + mask.name + "' has " + std::to_string(mask.values.size()) +
                        " voxels, dose has " + std::to_string(dose.size()));
    }
    std::vector<double> inside;
    for (std::size_t i = 0; i < dose.size(); ++i) {
        if (mask.values[i] != 0) inside.push_back(dose[i]);
    }
    if (inside.empty()) throw DataError("cdvh: mask '" + mask.name + "' is empty");
    DvhCurve curve{mask.name, {bins.begin(), bins.end()}, std::vector<double>(bins.size(), 0.0)};
    const double n = static_cast<double>(inside.size());
    for (std::size_t b = 0; b < bins.size(); ++b) {
        std::size_t count = 0;
        for (double d : inside) count += d >= bins[b] ? 1 : 0;
        curve.volume_pct[b] = 100.0 * static_cast<double>(count) / n;
    }
    return curve;
}

double mean_cdvh_gap(const DvhCurve& a, const DvhCurve& b) {
    if (a.dose_gy != b.dose_gy || a.volume_pct.empty()) {
        throw std::invalid_argument("mean_cdvh_gap: curves use different thresholds");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.volume_pct.size(); ++i) acc += std::abs(a.volume_pct[i] - b.volume_pct[i]);
    return acc / static_cast<double>(a.volume_pct.size());
}

std::string cdvh_csv(const DvhCurve& curve) {
    std::string out = "dose_gy,volume_pct\n";
    char buf[96];
    for (std::size_t i = 0; i < curve.dose_gy.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f\n", curve.dose_gy[i], curve.volume_pct[i]);
        out += buf;
    }
    return out;
}

std::vector<StructureMask> dose_grid_structures(const PlanBundle& plan) {
    const GridGeometry& dose = plan.target_geometry();
    std::vector<StructureMask> out;
    for (const auto& s : plan.structures) {
        StructureMask m = s.grid == MaskGrid::Dose ? s : transfer_mask(s, plan.ct.geometry(), dose);
        if (m.count() > 0) out.push_back(std::move(m));
    }
    return out;
}

namespace {

std::vector<double> masked(const std::vector<double>& values, const StructureMask& mask) {
    std::vector<double> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (mask.values[i] != 0) out.push_back(values[i]);
    }
    return out;
}

}  // namespace

EvalReport compare_models(std::span<const Predictor> models, std::span<const PlanBundle> test_set,
                          const EvalOptions& options) {
    if (models.empty()) throw std::invalid_argument("compare_models: no models given");
    if (test_set.empty()) throw std::invalid_argument("compare_models: no test plans given");

    EvalReport report;
    for (const auto& m : models) report.models.push_back({m.name, {}, 0.0, 0.0});

    for (const auto& plan : test_set) {
        if (!plan.dose) throw DataError("plan '" + plan.name + "' has no ground-truth dose to evaluate against");
        const auto structures = dose_grid_structures(plan);
        const auto bins = default_dvh_bins(plan.prescription_dose, options.bins);
        const auto truth = to_double(plan.dose->values());

        std::optional<StructureMask> rmse_mask;
        if (options.rmse_structure) {
            for (const auto& s : structures) {
                if (s.name == *options.rmse_structure) rmse_mask = s;
            }
            if (!rmse_mask) {
                throw DataError("plan '" + plan.name + "' has no structure '" + *options.rmse_structure +
                                "' on the dose grid");
            }
        }

        std::vector<DvhCurve> truth_curves;
        std::size_t ptv_slot = structures.size();
        for (std::size_t s = 0; s < structures.size(); ++s) {
            truth_curves.push_back(cdvh(truth, structures[s], bins));
            if (structures[s].name == "PTV") ptv_slot = s;
        }
        if (ptv_slot == structures.size()) throw DataError("plan '" + plan.name + "': PTV missing on the dose grid");

        for (std::size_t m = 0; m < models.size(); ++m) {
            VoxelGrid predicted = models[m].predict(plan);
            if (!(predicted.geometry() == plan.dose->geometry())) {
                throw DataError("model '" + models[m].name + "' produced a dose grid incompatible with plan '" +
                                plan.name + "'");
            }
            const auto pred = to_double(predicted.values());
            PlanEval pe;
            pe.plan = plan.name;
            pe.rmse = rmse_mask ? rmse(masked(pred, *rmse_mask), masked(truth, *rmse_mask)) : rmse(pred, truth);
            for (const auto& s : structures) pe.curves.push_back(cdvh(pred, s, bins));
            pe.ptv_cdvh_gap = mean_cdvh_gap(pe.curves[ptv_slot], truth_curves[ptv_slot]);
            report.models[m].plans.push_back(std::move(pe));
        }
        report.plans.push_back(plan.name);
        report.truth_curves.push_back(std::move(truth_curves));
    }

    const double n = static_cast<double>(test_set.size());
    for (auto& m : report.models) {
        double rmse_sum = 0.0, gap_sum = 0.0;
        for (const auto& p : m.plans) {
            rmse_sum += p.rmse;
            gap_sum += p.ptv_cdvh_gap;
        }
        m.mean_rmse = rmse_sum / n;
        m.mean_ptv_cdvh_gap = gap_sum / n;
    }
    return report;
}

json report_to_json(const EvalReport& report) {
    json models = json::array();
    for (const auto& m : report.models) {
        json per_plan = json::array();
        for (const auto& p : m.plans) {
            per_plan.push_back({{"plan", p.plan}, {"rmse_gy", p.rmse}, {"ptv_cdvh_gap_pct", p.ptv_cdvh_gap}});
        }
        models.push_back({{"name", m.name},
                          {"mean_rmse_gy", m.mean_rmse},
                          {"mean_ptv_cdvh_gap_pct", m.mean_ptv_cdvh_gap},
                          {"per_plan", per_plan}});
    }
    return {{"plans", report.plans}, {"models", models}};
}

void write_cdvh_files(const std::filesystem::path& dir, const EvalReport& report) {
    for (std::size_t p = 0; p < report.plans.size(); ++p) {
        const auto plan_dir = dir / report.plans[p];
        std::filesystem::create_directories(plan_dir);
        for (const auto& c : report.truth_curves[p]) {
            write_text(plan_dir / ("cdvh_truth_" + c.structure + ".csv"), cdvh_csv(c));
        }
        for (const auto& m : report.models) {
            for (const auto& c : m.plans[p].curves) {
                write_text(plan_dir / ("cdvh_" + m.name + "_" + c.structure + ".csv"), cdvh_csv(c));
            }
        }
    }
}

}  // namespace dosegnn
