#pragma once

#include <cstdint>
#include <vector>

#include "diffclone/tensor.hpp"

namespace diffclone {

// Adam with bias correction over a fixed set of parameter tensors. Each
// step consumes the accumulated gradients and zeroes them afterward.
class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<Tensor> params, double learning_rate = 1e-4,
                           double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

    // UsageError when any bound parameter has no gradient.
    void step();

    std::int64_t step_count() const { return step_count_; }
    double learning_rate() const { return learning_rate_; }
    void set_learning_rate(double lr) { learning_rate_ = lr; }

private:
    std::vector<Tensor> params_;
    double learning_rate_;
    double beta1_;
    double beta2_;
    double epsilon_;
    std::int64_t step_count_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace diffclone
