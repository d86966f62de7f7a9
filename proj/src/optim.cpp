#include "sglab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace sglab {

template <typename T>
void Adam<T>::step(ParameterSet<T>& params, const TensorMap<T>& grads) {
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (const auto& [name, g] : grads) {
        Tensor<T>& p = params.at(name);
        if (p.shape() != g.shape())
            throw std::invalid_argument("gradient for " + name + " has shape " + shape_string(g.shape()) +
                                        ", parameter has " + shape_string(p.shape()));
        auto [mi, fresh_m] = m_.try_emplace(name, p.shape());
        auto [vi, fresh_v] = v_.try_emplace(name, p.shape());
        Tensor<T>& m = mi->second;
        Tensor<T>& v = vi->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double mn = b1 * m[i] + (1.0 - b1) * gi;
            const double vn = b2 * v[i] + (1.0 - b2) * gi * gi;
            m[i] = static_cast<T>(mn);
            v[i] = static_cast<T>(vn);
            const double update = config_.lr * (mn / c1) / (std::sqrt(vn / c2) + config_.eps);
            p[i] = static_cast<T>(p[i] - update);
        }
    }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace sglab
