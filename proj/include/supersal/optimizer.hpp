#pragma once

#include <vector>

#include "supersal/common.hpp"

namespace sal {

// SGD with momentum over a flat parameter array:
//   v <- momentum * v + g
//   theta <- theta - lr * v
template <typename T>
class SgdMomentum {
public:
    explicit SgdMomentum(size_t n) : velocity_(n, T(0)) {}

    void step(std::vector<T>& params, const std::vector<T>& grads, double lr, double momentum) {
        check(params.size() == velocity_.size() && grads.size() == velocity_.size(),
              "sgd: size mismatch: params ", params.size(), ", grads ", grads.size(),
              ", velocity ", velocity_.size());
        const T m = static_cast<T>(momentum);
        const T step_lr = static_cast<T>(lr);
        for (size_t i = 0; i < params.size(); ++i) {
            velocity_[i] = m * velocity_[i] + grads[i];
            params[i] -= step_lr * velocity_[i];
        }
    }

    const std::vector<T>& velocity() const { return velocity_; }
    void reset() { std::fill(velocity_.begin(), velocity_.end(), T(0)); }

private:
    std::vector<T> velocity_;
};

}  // namespace sal
