#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "attempt/model.hpp"

namespace attempt {

// Linear warmup from 0 to base_lr over warmup_steps, then linear decay to 0
// at total_steps. Steps are 1-based.
struct LrSchedule {
    double base_lr = 1e-3;
    int64_t total_steps = 1;
    int64_t warmup_steps = 0;

    double at(int64_t step) const {
        if (step < 1 || step > total_steps) return 0.0;
        if (warmup_steps > 0 && step <= warmup_steps)
            return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
        if (total_steps == warmup_steps) return base_lr;
        return base_lr * static_cast<double>(total_steps - step) /
               static_cast<double>(total_steps - warmup_steps);
    }
};

template <typename T>
class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void init(const Model<T>& model) {
        m_.clear();
        v_.clear();
        for (const auto& name : model.names) {
            m_.push_back(Tensor<T>(model.values.at(name).shape));
            v_.push_back(Tensor<T>(model.values.at(name).shape));
        }
        t_ = 0;
    }

    void step(Model<T>& model, double lr) {
        if (m_.size() != model.names.size()) fail("adam: not initialized for this model");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (size_t p = 0; p < model.names.size(); ++p) {
            auto& theta = model.values.at(model.names[p]);
            const auto& g = model.grads.at(model.names[p]);
            auto& m = m_[p];
            auto& v = v_[p];
            for (size_t i = 0; i < theta.data.size(); ++i) {
                double gi = static_cast<double>(g.data[i]);
                double mi = beta1 * static_cast<double>(m.data[i]) + (1.0 - beta1) * gi;
                double vi = beta2 * static_cast<double>(v.data[i]) + (1.0 - beta2) * gi * gi;
                m.data[i] = static_cast<T>(mi);
                v.data[i] = static_cast<T>(vi);
                double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
                theta.data[i] = static_cast<T>(static_cast<double>(theta.data[i]) - update);
            }
        }
    }

    int64_t steps_taken() const { return t_; }
    const std::vector<Tensor<T>>& m() const { return m_; }
    const std::vector<Tensor<T>>& v() const { return v_; }
    void restore(std::vector<Tensor<T>> m, std::vector<Tensor<T>> v, int64_t t) {
        m_ = std::move(m);
        v_ = std::move(v);
        t_ = t;
    }

private:
    std::vector<Tensor<T>> m_, v_;
    int64_t t_ = 0;
};

}  // namespace attempt
