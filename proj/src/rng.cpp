#include "avfp/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <utility>

namespace avfp {

double CounterRng::normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor CounterRng::normal_tensor(Shape shape) {
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = normal();
    return Tensor(std::move(shape), std::move(values));
}

std::vector<std::size_t> permutation(CounterRng& rng, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

}  // namespace avfp
