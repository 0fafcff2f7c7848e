#include "bagan/optim.hpp"

#include "bagan/errors.hpp"

#include <cmath>

namespace bagan {

Adam::Adam(std::vector<ag::Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg)
{
    for (const auto& p : params_) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
    }
}

void Adam::step(const std::vector<ag::Var>& grads)
{
    if (grads.size() != params_.size())
        throw std::invalid_argument("Adam::step: gradient count does not match parameter count");
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double lr_t = cfg_.lr * std::sqrt(1 - std::pow(b2, double(t_))) / (1 - std::pow(b1, double(t_)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].mutable_value();
        const Tensor& g = grads[i].value();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::int64_t j = 0; j < p.size(); ++j) {
            m[j] = b1 * m[j] + (1 - b1) * g[j];
            v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
            p[j] -= lr_t * m[j] / (std::sqrt(v[j]) + cfg_.eps);
        }
    }
}

npz::Archive Adam::state() const
{
    npz::Archive a;
    const std::int64_t t = t_;
    a.add("t", npz::Array::from_i64({}, std::span<const std::int64_t>(&t, 1)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        a.add("m_" + std::to_string(i), npz::Array::from_tensor(m_[i]));
        a.add("v_" + std::to_string(i), npz::Array::from_tensor(v_[i]));
    }
    return a;
}

void Adam::load_state(const npz::Archive& a)
{
    if (!a.contains("t") || a.entries().size() != 1 + 2 * params_.size())
        throw CheckpointIncompatible("optimizer state does not match the parameter list");
    std::vector<Tensor> m, v;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m.push_back(a.at("m_" + std::to_string(i)).to_tensor());
        v.push_back(a.at("v_" + std::to_string(i)).to_tensor());
        if (m.back().shape() != params_[i].shape() || v.back().shape() != params_[i].shape())
            throw CheckpointIncompatible("optimizer slot " + std::to_string(i) + " has the wrong shape");
    }
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = a.at("t").to_int64().at(0);
}

} // namespace bagan
