#pragma once

#include <functional>
#include <span>
#include <vector>

namespace jumpctl {

/// A real function of the normalized position x in [0, 1], stored as a table
/// on a uniform grid and evaluated by linear interpolation. A scalar
/// coefficient is the one-entry table.
class CouplingProfile {
public:
    CouplingProfile() : values_{0.0} {}

    static CouplingProfile constant(double value);
    static CouplingProfile tabulate(const std::function<double(double)>& f,
                                    int points = 1025);
    static CouplingProfile from_table(std::vector<double> values);

    double operator()(double x) const;

    bool is_constant() const { return values_.size() == 1; }
    std::span<const double> table() const { return values_; }

    /// Values at the nodes k/(nodes-1), k = 0..nodes-1.
    std::vector<double> sample(int nodes) const;

    double sup_abs() const;
    /// sup_x |a(x) - b(x)| over the union of both tables' nodes.
    friend double sup_distance(const CouplingProfile& a, const CouplingProfile& b);

    friend bool operator==(const CouplingProfile&, const CouplingProfile&) = default;

private:
    explicit CouplingProfile(std::vector<double> values) : values_(std::move(values)) {}
    std::vector<double> values_;
};

}  // namespace jumpctl
