#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diffclone/tensor.hpp"

namespace diffclone {

struct MlpConfig {
    int in_dim = 0;
    std::vector<int> hidden;
    int out_dim = 0;

    void validate() const;  // ConfigError on non-positive widths
};

// Fully connected stack with mish on hidden layers and a linear output.
// An empty hidden list makes it a single affine map.
class Mlp {
public:
    Mlp() = default;

    // Weights drawn U(-1/sqrt(fan_in), 1/sqrt(fan_in)) in declared parameter
    // order; each bias reuses the preceding weight's bound.
    static Mlp build(const MlpConfig& config, std::uint64_t seed);

    const MlpConfig& config() const { return config_; }

    // x: [in_dim] or [batch, in_dim].
    Tensor forward(const Tensor& x) const;

    // Deep copy with independent storage.
    Mlp clone() const;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;

private:
    MlpConfig config_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
};

}  // namespace diffclone
