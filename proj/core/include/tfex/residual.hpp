#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tfex/expression.hpp"
#include "tfex/trajectory.hpp"

namespace tfex {

/// Per-step residuals R_n = u(t_{n+1}) - u(t_n) - h*C*(u(t_n)), flattened over
/// (trajectory, step) with the trajectory index major.
struct ResidualSet {
    std::size_t d = 0;
    double h = 0.0;
    double smoothing_std = 0.0;  // C0 used by downstream smoothing; 0 = unset
    std::vector<double> values;  // count x d

    std::size_t count() const { return d == 0 ? 0 : values.size() / d; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * d, d}; }
};

ResidualSet compute_residuals(const TrajectoryBatch& batch,
                              const std::vector<ExpressionTemplate>& exprs);

/// Residuals of one time step only (all trajectories), for per-step modeling.
ResidualSet residuals_at_step(const TrajectoryBatch& batch,
                              const std::vector<ExpressionTemplate>& exprs, std::size_t step);

/// Exact k nearest rows by Euclidean distance, ties broken by lower index.
/// Returns the selected rows flattened (k x d).
std::vector<double> knn_select(const ResidualSet& residuals, std::span<const double> query,
                               std::size_t k);

std::vector<double> residual_centroid(const ResidualSet& residuals);
std::vector<double> residual_componentwise_std(const ResidualSet& residuals);

/// Seeded uniform subsample without replacement (whole set when n >= count).
ResidualSet residual_subsample(const ResidualSet& residuals, std::size_t n, std::uint64_t seed);

void save_residuals(const ResidualSet& residuals, const std::string& path);
ResidualSet load_residuals(const std::string& path);

}  // namespace tfex
