#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dosegnn/autodiff.hpp"
#include "dosegnn/graph.hpp"
#include "dosegnn/model.hpp"
#include "dosegnn/random.hpp"
#include "dosegnn/train.hpp"
#include "dosegnn/volume.hpp"

namespace testing_support {

using dosegnn::ad::Matrix;

inline Matrix random_matrix(dosegnn::SplitMix64& rng, long rows, long cols, double lo = -1.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

/// Values bounded away from zero so ReLU kinks stay outside +-h.
inline Matrix random_away_from_zero(dosegnn::SplitMix64& rng, long rows, long cols) {
    Matrix m(rows, cols);
    for (long i = 0; i < m.size(); ++i) {
        const double mag = rng.uniform(0.05, 1.0);
        m.data()[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    return m;
}

/// Relative error with a 1e-6 floor so exact zeros compare absolutely.
inline double grad_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

using ScalarFn = std::function<dosegnn::ad::Tensor(dosegnn::ad::Tape&, const std::vector<dosegnn::ad::Tensor>&)>;

/// Max error between tape gradients of `f` at `inputs` and central differences.
inline double gradient_check(const ScalarFn& f, std::vector<Matrix> inputs, double h = 1e-5) {
    std::vector<Matrix> analytic;
    {
        dosegnn::ad::Tape tape;
        std::vector<dosegnn::ad::Tensor> leaves;
        for (const auto& m : inputs) leaves.push_back(tape.variable(m));
        tape.backward(f(tape, leaves));
        for (const auto& t : leaves) analytic.push_back(t.grad());
    }
    auto eval = [&](const std::vector<Matrix>& xs) {
        dosegnn::ad::Tape tape;
        std::vector<dosegnn::ad::Tensor> leaves;
        for (const auto& m : xs) leaves.push_back(tape.constant(m));
        return f(tape, leaves).value()(0, 0);
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (long i = 0; i < inputs[k].size(); ++i) {
            const double x = inputs[k].data()[i];
            inputs[k].data()[i] = x + h;
            const double up = eval(inputs);
            inputs[k].data()[i] = x - h;
            const double down = eval(inputs);
            inputs[k].data()[i] = x;
            worst = std::max(worst, grad_error(analytic[k].data()[i], (up - down) / (2.0 * h)));
        }
    }
    return worst;
}

/// Projects a non-scalar output onto fixed random weights so every Jacobian
/// entry contributes to the checked scalar.
inline dosegnn::ad::Tensor project(dosegnn::ad::Tape& tape, const dosegnn::ad::Tensor& out, std::uint64_t seed) {
    dosegnn::SplitMix64 rng(seed);
    return dosegnn::ad::sum(dosegnn::ad::mul(out, tape.constant(random_matrix(rng, out.rows(), out.cols()))));
}

/// Random small geometry with spacings from a fixed set and an offset origin.
inline dosegnn::GridGeometry random_geometry(dosegnn::SplitMix64& rng, int max_dim) {
    dosegnn::GridGeometry g;
    for (int a = 0; a < 3; ++a) {
        g.dims[a] = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_dim)));
        g.spacing[a] = rng.uniform(0.5, 4.0);
        g.origin[a] = rng.uniform(-10.0, 10.0);
    }
    return g;
}

/// Hand-built bundle: CT with a bright sphere, PTV mask on the CT grid,
/// analytic-looking dose on an offset grid.
inline dosegnn::PlanBundle tiny_plan(const dosegnn::GridGeometry& ct_geom, const dosegnn::GridGeometry& dose_geom,
                                     std::uint64_t seed, double rx = 60.0) {
    using namespace dosegnn;
    SplitMix64 rng(seed);
    PlanBundle plan;
    plan.name = "tiny";
    plan.prescription_dose = rx;
    plan.ct = VoxelGrid(ct_geom, "HU");
    const Box box = center_bounds(ct_geom);
    const Vec3 mid = (box.lo + box.hi) * 0.5;
    const double radius = 0.3 * std::min({box.hi.x - box.lo.x, box.hi.y - box.lo.y, box.hi.z - box.lo.z}) + 1.0;
    StructureMask ptv{"PTV", MaskGrid::Ct, std::vector<std::uint8_t>(ct_geom.voxel_count(), 0)};
    const auto centers = voxel_centers(ct_geom);
    for (std::size_t f = 0; f < centers.size(); ++f) {
        const bool inside = squared_distance(centers[f], mid) <= radius * radius;
        ptv.values[f] = inside;
        plan.ct.values()[f] = static_cast<float>((inside ? 80.0 : -200.0) + rng.uniform(-50.0, 50.0));
    }
    if (ptv.count() == 0) ptv.values[flatten(ct_geom, world_to_nearest_index(ct_geom, mid))] = 1;
    plan.structures.push_back(ptv);
    plan.update_ptv_center();
    VoxelGrid dose(dose_geom, "Gy");
    const auto dcenters = voxel_centers(dose_geom);
    for (std::size_t f = 0; f < dcenters.size(); ++f) {
        const double r = std::sqrt(squared_distance(dcenters[f], plan.ptv_center));
        dose.values()[f] = static_cast<float>(rx * std::exp(-r / 6.0));
    }
    plan.dose = dose;
    plan.dose_geometry = dose_geom;
    return plan;
}

/// DoseGNN config small enough for exhaustive finite differences.
inline dosegnn::ModelConfig mini_config(dosegnn::ModelKind kind = dosegnn::ModelKind::DoseGnn) {
    dosegnn::ModelConfig cfg;
    cfg.kind = kind;
    cfg.encoder.patch_size = 3;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.mlp_hidden = {8};
    cfg.encoder.cnn_kernels = 2;
    cfg.encoder.cnn_kernel_size = 2;
    cfg.message_hidden = {8};
    cfg.update_hidden = {8};
    cfg.readout_hidden = {8};
    cfg.k = 3;
    return cfg;
}

/// Max error between backpropagated parameter gradients of the training
/// loss and central differences over every parameter entry.
inline double model_gradient_error(const dosegnn::ModelConfig& cfg, const dosegnn::PlanBundle& plan,
                                   std::uint64_t seed, double h = 1e-5) {
    using namespace dosegnn;
    const PreparedPlan prepared = prepare_plan(cfg, plan);
    Model model(cfg, seed);
    auto params = model.parameters();
    for (auto* p : params) p->zero_grad();
    {
        ad::Tape tape;
        tape.backward(plan_loss(tape, model, prepared));
    }
    auto loss = [&] {
        ad::Tape tape;
        return plan_loss(tape, model, prepared).value()(0, 0);
    };
    double worst = 0.0;
    for (auto* p : params) {
        for (long i = 0; i < p->value.size(); ++i) {
            const double x = p->value.data()[i];
            p->value.data()[i] = x + h;
            const double up = loss();
            p->value.data()[i] = x - h;
            const double down = loss();
            p->value.data()[i] = x;
            worst = std::max(worst, grad_error(p->grad.data()[i], (up - down) / (2.0 * h)));
        }
    }
    return worst;
}

/// Miniature DoseGNN instance: 2^3 dose grid inside a 7^3 CT.
inline dosegnn::PlanBundle mini_plan(std::uint64_t seed) {
    dosegnn::GridGeometry ct{{0, 0, 0}, {1.5, 1.5, 1.5}, {7, 7, 7}};
    dosegnn::GridGeometry dose{{3.1, 3.6, 2.9}, {2.5, 2.5, 2.5}, {2, 2, 2}};
    return tiny_plan(ct, dose, seed);
}

}  // namespace testing_support
