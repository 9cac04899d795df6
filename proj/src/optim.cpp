#include "diffclone/optim.hpp"

#include <cmath>

namespace diffclone {

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double learning_rate, double beta1,
                             double beta2, double epsilon)
    : params_(std::move(params)),
      learning_rate_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {
    if (params_.empty()) throw UsageError("optimizer needs at least one parameter");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        if (!p.requires_grad()) throw UsageError("optimizer parameters must require grad");
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void AdamOptimizer::step() {
    for (const auto& p : params_) {
        if (!p.has_grad()) throw UsageError("adam step: parameter has no gradient");
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto data = params_[pi].data_mut();
        const auto grad = params_[pi].grad();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            data[i] -= learning_rate_ * mhat / (std::sqrt(vhat) + epsilon_);
        }
        params_[pi].zero_grad();
    }
}

}  // namespace diffclone
