#pragma once

#include <string>

#include "cft/checkpoint.hpp"
#include "cft/tensor.hpp"

namespace cft {

// Affine map on the last axis of a [rows x in] tensor.
struct Linear {
    Tensor w;  // [in x out]
    Tensor b;  // [out]

    Linear() = default;
    Linear(ParamSet& params, const std::string& name, int64_t in, int64_t out, Rng& rng);
    Tensor operator()(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }
};

// Two affine layers with one rectifier in between; hidden width 2x input.
struct Ffn {
    Linear fc1, fc2;

    Ffn() = default;
    Ffn(ParamSet& params, const std::string& name, int64_t in, int64_t out, Rng& rng);
    Tensor operator()(const Tensor& x) const { return fc2(relu(fc1(x))); }
};

struct LayerNorm {
    Tensor gain, bias;

    LayerNorm() = default;
    LayerNorm(ParamSet& params, const std::string& name, int64_t width);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

// AdamW with decoupled weight decay and a step learning-rate schedule.
class AdamW {
public:
    struct Options {
        double lr = 2e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 1e-4;
    };

    AdamW(ParamSet& params, Options opts);
    void step();
    void set_lr(double lr) { opts_.lr = lr; }
    double lr() const { return opts_.lr; }

private:
    ParamSet& params_;
    Options opts_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

Tensor ffn_forward(const Tensor& x, const Ffn& ffn);

}  // namespace cft
