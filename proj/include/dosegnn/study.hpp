#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dosegnn/eval.hpp"
#include "dosegnn/model.hpp"
#include "dosegnn/phantom.hpp"
#include "dosegnn/train.hpp"

namespace dosegnn {

/// End-to-end synthetic comparison: generate phantoms, split, train every
/// model kind with the same encoder and seed, evaluate on the test split.
struct StudyConfig {
    std::uint64_t seed = 7;
    std::size_t count = 20;
    PhantomConfig phantom;  ///< its seed is replaced by the "phantom" sub-seed
    TrainConfig train;      ///< its seed is replaced by `seed`
    EncoderConfig encoder;
    GraphConfig graph;
    std::vector<ModelKind> kinds{ModelKind::DoseGnn, ModelKind::Heuristic1, ModelKind::Heuristic2};
};

nlohmann::json to_json(const StudyConfig& cfg);

struct StudyResult {
    EvalReport report;
    std::vector<TrainReport> training;  ///< aligned with cfg.kinds
    std::vector<Model> models;
    /// metrics.json contents; excludes wall-clock timings.
    nlohmann::json metrics;
};

using StudyLog = std::function<void(const std::string&)>;

StudyResult run_study(const StudyConfig& cfg, const StudyLog& log = {});

}  // namespace dosegnn
