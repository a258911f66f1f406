#include "dosegnn/study.hpp"

#include <cstdio>

namespace dosegnn {

using nlohmann::json;

json to_json(const StudyConfig& cfg) {
    PhantomConfig phantom = cfg.phantom;
    phantom.seed = derive_seed(cfg.seed, "phantom");
    TrainConfig train = cfg.train;
    train.seed = cfg.seed;
    ModelConfig model;
    model.encoder = cfg.encoder;
    model.graph = cfg.graph;
    json kinds = json::array();
    for (auto k : cfg.kinds) kinds.push_back(to_string(k));
    return {{"seed", cfg.seed},     {"count", cfg.count}, {"phantom", to_json(phantom)},
            {"train", to_json(train)}, {"model", to_json(model)}, {"kinds", kinds}};
}

StudyResult run_study(const StudyConfig& cfg, const StudyLog& log) {
    PhantomConfig phantom = cfg.phantom;
    phantom.seed = derive_seed(cfg.seed, "phantom");
    TrainConfig train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;

    const auto dataset = generate_dataset(phantom, cfg.count);
    const auto split = split_dataset(dataset.size(), train_cfg);
    std::vector<PlanBundle> train_set, test_set;
    for (auto i : split.train) train_set.push_back(dataset[i]);
    for (auto i : split.test) test_set.push_back(dataset[i]);

    StudyResult result;
    for (auto kind : cfg.kinds) {
        ModelConfig mc;
        mc.kind = kind;
        mc.encoder = cfg.encoder;
        mc.graph = cfg.graph;
        if (log) log("training " + to_string(kind));
        auto on_epoch = [&](int epoch, double loss) {
            if (log && (epoch % 20 == 0 || epoch + 1 == train_cfg.epochs)) {
                char buf[128];
                std::snprintf(buf, sizeof(buf), "  %s epoch %d loss %.6g", to_string(kind).c_str(), epoch, loss);
                log(buf);
            }
        };
        auto [model, report] = train_model(mc, train_set, train_cfg, on_epoch);
        result.models.push_back(std::move(model));
        result.training.push_back(std::move(report));
    }

    std::vector<Predictor> predictors;
    for (auto& model : result.models) {
        Model* m = &model;
        const int threads = train_cfg.threads;
        predictors.push_back({to_string(model.kind()), [m, threads](const PlanBundle& p) {
                                  return predict_dose(*m, p, threads);
                              }});
    }
    result.report = compare_models(predictors, test_set);
    result.metrics = report_to_json(result.report);
    result.metrics["config"] = to_json(cfg);
    return result;
}

}  // namespace dosegnn
