#pragma once

#include <string>
#include <vector>

#include "dosegnn/autodiff.hpp"
#include "dosegnn/random.hpp"

namespace dosegnn {

/// Dense layer y = x W + b, W stored (in x out).
struct Linear {
    Linear() = default;
    Linear(const std::string& name, int in, int out);

    ad::Parameter weight;
    ad::Parameter bias;

    ad::Tensor forward(ad::Tape& tape, const ad::Tensor& x);
};

/// Stack of Linear layers with ReLU between them and no activation after
/// the last. `sizes` lists widths from input to output.
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::string& name, const std::vector<int>& sizes);

    ad::Tensor forward(ad::Tape& tape, const ad::Tensor& x);
    void collect(std::vector<ad::Parameter*>& out);
    int in_dim() const;
    int out_dim() const;
    const std::vector<Linear>& layers() const { return layers_; }
    std::vector<Linear>& layers() { return layers_; }

private:
    std::vector<Linear> layers_;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
/// Parameters are filled in the order given.
void glorot_init(const std::vector<ad::Parameter*>& params, SplitMix64& rng);

}  // namespace dosegnn
