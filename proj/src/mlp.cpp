#include "diffclone/mlp.hpp"

#include <cmath>

#include "diffclone/errors.hpp"
#include "diffclone/rng.hpp"

namespace diffclone {

void MlpConfig::validate() const {
    if (in_dim < 1) throw ConfigError("mlp: in_dim must be positive");
    if (out_dim < 1) throw ConfigError("mlp: out_dim must be positive");
    for (int h : hidden)
        if (h < 1) throw ConfigError("mlp: hidden widths must be positive");
}

Mlp Mlp::build(const MlpConfig& config, std::uint64_t seed) {
    config.validate();
    Mlp net;
    net.config_ = config;

    std::vector<int> widths;
    widths.push_back(config.in_dim);
    widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
    widths.push_back(config.out_dim);

    Rng rng(seed);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const int fan_in = widths[i];
        const int fan_out = widths[i + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        net.weights_.push_back(Tensor::uniform({fan_out, fan_in}, bound, rng, true));
        net.biases_.push_back(Tensor::uniform({fan_out}, bound, rng, true));
    }
    return net;
}

Tensor Mlp::forward(const Tensor& x) const {
    if (weights_.empty()) throw UsageError("mlp: forward on an unbuilt network");
    Tensor h = x;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        h = linear(h, weights_[i], biases_[i]);
        if (i + 1 < weights_.size()) h = mish(h);
    }
    return h;
}

Mlp Mlp::clone() const {
    Mlp copy;
    copy.config_ = config_;
    for (const auto& w : weights_) copy.weights_.push_back(w.clone());
    for (const auto& b : biases_) copy.biases_.push_back(b.clone());
    return copy;
}

std::vector<std::pair<std::string, Tensor>> Mlp::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        const std::string prefix = "layer" + std::to_string(i) + ".";
        out.emplace_back(prefix + "w", weights_[i]);
        out.emplace_back(prefix + "b", biases_[i]);
    }
    return out;
}

std::vector<Tensor> Mlp::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
}

}  // namespace diffclone
