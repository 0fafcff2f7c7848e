#pragma once

#include "bagan/autograd.hpp"
#include "bagan/npz.hpp"

#include <cstdint>
#include <vector>

namespace bagan {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps = 1e-7;
};

class Adam {
public:
    Adam(std::vector<ag::Var> params, AdamConfig cfg = {});

    // Applies one update; grads align with the parameter list.
    void step(const std::vector<ag::Var>& grads);

    std::int64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    npz::Archive state() const;
    // Throws CheckpointIncompatible when shapes or counts differ.
    void load_state(const npz::Archive& a);

private:
    std::vector<ag::Var> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
};

} // namespace bagan
