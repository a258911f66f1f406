#include "dosegnn/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "dosegnn/error.hpp"
#include "dosegnn/random.hpp"

namespace dosegnn {

using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 0) throw DataError("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw DataError("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw DataError("adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw DataError("adam eps must be > 0");
}

json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"adam_betas", {c.beta1, c.beta2}},
            {"adam_eps", c.eps},
            {"seed", c.seed},
            {"n_train", c.n_train},
            {"n_test", c.n_test}};
}

json to_json(const TrainReport& r) {
    return {{"epoch_loss", r.epoch_loss}, {"checksum", r.checksum}, {"seconds", r.seconds}};
}

DatasetSplit split_dataset(std::size_t dataset_size, const TrainConfig& cfg) {
    if (dataset_size < 2) throw DataError("dataset needs at least 2 plans to split, has " + std::to_string(dataset_size));
    if (cfg.n_train < 1 || cfg.n_test < 1 || cfg.n_train + cfg.n_test != dataset_size) {
        throw DataError("split " + std::to_string(cfg.n_train) + "/" + std::to_string(cfg.n_test) +
                        " does not partition " + std::to_string(dataset_size) + " plans");
    }
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(derive_seed(cfg.seed, "split"));
    rng.shuffle(order);
    DatasetSplit split;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.n_train));
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(cfg.n_train), order.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

Adam::Adam(std::vector<ad::Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
        m_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
        p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

void Adam::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

ad::Tensor plan_loss(ad::Tape& tape, Model& model, const PreparedPlan& prepared) {
    if (!prepared.target) throw DataError("plan '" + prepared.name + "' has no ground-truth dose to train on");
    const ad::Tensor prediction = forward(tape, model, prepared);
    return ad::mse_loss(prediction, tape.constant(*prepared.target));
}

std::pair<Model, TrainReport> train_prepared(const ModelConfig& model_cfg, std::span<const PreparedPlan> train_set,
                                             const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty()) throw DataError("training set is empty");
    const auto start = std::chrono::steady_clock::now();

    Model model(model_cfg, derive_seed(cfg.seed, "init"));
    Adam adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    SplitMix64 shuffle_rng(derive_seed(cfg.seed, "shuffle"));

    TrainReport report;
    std::vector<std::size_t> order(train_set.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(order);
        double total = 0.0;
        for (auto i : order) {
            ad::Tape tape;
            const ad::Tensor loss = plan_loss(tape, model, train_set[i]);
            const double value = loss.value()(0, 0);
            if (!std::isfinite(value)) {
                throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", plan '" +
                                     train_set[i].name + "'");
            }
            total += value;
            adam.zero_grad();
            tape.backward(loss);
            adam.step();
        }
        const double mean = total / static_cast<double>(train_set.size());
        report.epoch_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    report.checksum = parameter_checksum(model);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(model), std::move(report)};
}

std::pair<Model, TrainReport> train_model(const ModelConfig& model_cfg, std::span<const PlanBundle> train_set,
                                          const TrainConfig& cfg, const EpochCallback& on_epoch) {
    std::vector<PreparedPlan> prepared;
    prepared.reserve(train_set.size());
    for (const auto& plan : train_set) prepared.push_back(prepare_plan(model_cfg, plan, cfg.threads));
    return train_prepared(model_cfg, prepared, cfg, on_epoch);
}

}  // namespace dosegnn
