#include "dosegnn/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dosegnn {

Linear::Linear(const std::string& name, int in, int out)
    : weight(name + ".weight", in, out), bias(name + ".bias", 1, out) {}

ad::Tensor Linear::forward(ad::Tape& tape, const ad::Tensor& x) {
    return ad::linear(x, tape.parameter(weight), tape.parameter(bias));
}

Mlp::Mlp(const std::string& name, const std::vector<int>& sizes) {
    if (sizes.size() < 2) throw std::invalid_argument("Mlp '" + name + "' needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        if (sizes[i] < 1 || sizes[i + 1] < 1) throw std::invalid_argument("Mlp '" + name + "': widths must be >= 1");
        layers_.emplace_back(name + "." + std::to_string(i), sizes[i], sizes[i + 1]);
    }
}

ad::Tensor Mlp::forward(ad::Tape& tape, const ad::Tensor& x) {
    ad::Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(tape, h);
        if (i + 1 < layers_.size()) h = ad::relu(h);
    }
    return h;
}

void Mlp::collect(std::vector<ad::Parameter*>& out) {
    for (auto& l : layers_) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
}

int Mlp::in_dim() const { return static_cast<int>(layers_.front().weight.value.rows()); }
int Mlp::out_dim() const { return static_cast<int>(layers_.back().weight.value.cols()); }

void glorot_init(const std::vector<ad::Parameter*>& params, SplitMix64& rng) {
    for (auto* p : params) {
        const bool is_bias = p->value.rows() == 1 && p->name.ends_with(".bias");
        if (is_bias) {
            p->value.setZero();
        } else {
            const double fan_in = static_cast<double>(p->value.rows());
            const double fan_out = static_cast<double>(p->value.cols());
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (ad::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.uniform(-limit, limit);
        }
        p->zero_grad();
    }
}

}  // namespace dosegnn
