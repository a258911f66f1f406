#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dosegnn/model.hpp"

namespace dosegnn {

struct TrainConfig {
    int epochs = 200;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 7;  ///< root seed; init/shuffle/split use named sub-seeds
    std::size_t n_train = 15;
    std::size_t n_test = 5;
    int threads = 1;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

struct TrainReport {
    std::vector<double> epoch_loss;  ///< mean per-plan training loss of each epoch
    std::string checksum;            ///< parameter checksum after training
    double seconds = 0.0;
};

nlohmann::json to_json(const TrainReport& report);

struct DatasetSplit {
    std::vector<std::size_t> train;  ///< ascending dataset indices
    std::vector<std::size_t> test;
};

/// Seeded permutation; first n_train go to train. Throws DataError unless
/// n_train + n_test == dataset_size and both are >= 1.
DatasetSplit split_dataset(std::size_t dataset_size, const TrainConfig& cfg);

/// Adam with bias correction over a fixed parameter list.
class Adam {
public:
    Adam(std::vector<ad::Parameter*> params, double lr, double beta1, double beta2, double eps);
    void step();
    void zero_grad();

private:
    std::vector<ad::Parameter*> params_;
    std::vector<ad::Matrix> m_;
    std::vector<ad::Matrix> v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

/// Normalized-dose MSE of one prepared plan; the plan must carry a target.
ad::Tensor plan_loss(ad::Tape& tape, Model& model, const PreparedPlan& prepared);

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// One Adam step per plan, plans visited in a fresh seeded order each epoch.
/// Throws NumericalError on a non-finite loss.
std::pair<Model, TrainReport> train_model(const ModelConfig& model_cfg, std::span<const PlanBundle> train_set,
                                          const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Same, over plans already prepared for `model_cfg`.
std::pair<Model, TrainReport> train_prepared(const ModelConfig& model_cfg, std::span<const PreparedPlan> train_set,
                                             const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace dosegnn
