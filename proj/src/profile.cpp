#include "jumpctl/profile.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace jumpctl {

CouplingProfile CouplingProfile::constant(double value) {
    if (!std::isfinite(value)) throw std::invalid_argument("coupling profile: non-finite value");
    return CouplingProfile(std::vector<double>{value});
}

CouplingProfile CouplingProfile::tabulate(const std::function<double(double)>& f, int points) {
    if (points < 2) throw std::invalid_argument("coupling profile: need at least 2 points");
    std::vector<double> v(static_cast<std::size_t>(points));
    for (int k = 0; k < points; ++k) v[k] = f(static_cast<double>(k) / (points - 1));
    return from_table(std::move(v));
}

CouplingProfile CouplingProfile::from_table(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("coupling profile: empty table");
    for (double v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("coupling profile: non-finite value");
    return CouplingProfile(std::move(values));
}

double CouplingProfile::operator()(double x) const {
    if (values_.size() == 1) return values_[0];
    const auto last = static_cast<double>(values_.size() - 1);
    const double s = std::clamp(x, 0.0, 1.0) * last;
    const auto k = std::min(static_cast<std::size_t>(s), values_.size() - 2);
    const double w = s - static_cast<double>(k);
    return (1.0 - w) * values_[k] + w * values_[k + 1];
}

std::vector<double> CouplingProfile::sample(int nodes) const {
    std::vector<double> out(static_cast<std::size_t>(nodes));
    for (int k = 0; k < nodes; ++k)
        out[k] = (*this)(nodes == 1 ? 0.0 : static_cast<double>(k) / (nodes - 1));
    return out;
}

double CouplingProfile::sup_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
}

double sup_distance(const CouplingProfile& a, const CouplingProfile& b) {
    // Both are piecewise linear, so the sup is attained at a node of either table.
    double m = 0.0;
    for (const CouplingProfile* p : {&a, &b}) {
        const auto n = p->values_.size();
        for (std::size_t k = 0; k < n; ++k) {
            const double x = n == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n - 1);
            m = std::max(m, std::abs(a(x) - b(x)));
        }
    }
    return m;
}

}  // namespace jumpctl
