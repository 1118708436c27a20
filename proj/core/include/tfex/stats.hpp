#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "tfex/trajectory.hpp"

namespace tfex {

/// M states of dimension d with an arbitrary stride between rows; a time
/// slice of a TrajectoryBatch without copying.
struct EnsembleView {
    const double* base = nullptr;
    std::size_t M = 0;
    std::size_t d = 0;
    std::size_t stride = 0;

    const double* row(std::size_t m) const { return base + m * stride; }
};

EnsembleView slice_at(const TrajectoryBatch& batch, std::size_t step);

/// Raw mixed moment (1/M) sum_m prod_{i in indices} u_i^(m); indices are
/// 0-based component indices, repeats allowed, order <= 7.
double mixed_moment(const EnsembleView& states, const std::vector<std::size_t>& indices);

/// l2 norm of the componentwise mean state.
double mean_norm(const EnsembleView& states);

/// Unbiased sample covariance (M >= 2).
Eigen::MatrixXd covariance(const EnsembleView& states);

/// Modal energies E_i = (1/M) sum_m (u_i^(m))^2.
std::vector<double> energy(const EnsembleView& states);

struct Histogram2d {
    std::size_t bins = 0;
    double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
    std::vector<double> counts;   // bins x bins, row-major over x bins
    std::vector<double> density;  // counts normalized to integrate to 1
    std::size_t overflow = 0;     // samples outside the range
};

Histogram2d histogram2d(const EnsembleView& states, std::size_t axis_x, std::size_t axis_y,
                        std::size_t bins, double x_min, double x_max, double y_min, double y_max);

struct MomentSeries {
    std::string label;
    std::vector<double> times;
    std::vector<double> values;
};

/// "123" <-> {0,1,2}: tuple labels use 1-based component digits.
std::vector<std::size_t> parse_moment_label(const std::string& label, std::size_t d);
std::string moment_label(const std::vector<std::size_t>& indices);

/// All distinct tuples of orders 1..3 plus the order-4 and order-5 diagonals.
std::vector<std::string> default_moment_labels(std::size_t d);

/// Streaming per-step accumulator: moment series over an ensemble visited one
/// trajectory at a time, without materializing the batch.
class EnsembleAccumulator {
public:
    EnsembleAccumulator(std::vector<std::string> labels, std::size_t d, std::size_t steps,
                        double h, double t0 = 0.0);

    /// Feed trajectory sample u at time index n (0..steps-1).
    void add(std::size_t n, const double* u);

    std::size_t steps() const { return steps_; }
    const std::vector<std::string>& labels() const { return labels_; }

    /// Per-label series; values divided by the per-step sample count.
    std::vector<MomentSeries> series() const;
    /// Series of the l2 norm of the mean state.
    MomentSeries mean_norm_series() const;
    /// Energy series per mode.
    std::vector<MomentSeries> energy_series() const;

private:
    std::vector<std::string> labels_;
    std::vector<std::vector<std::size_t>> tuples_;
    std::size_t d_ = 0;
    std::size_t steps_ = 0;
    double h_ = 0;
    double t0_ = 0;
    std::vector<double> sums_;         // labels x steps
    std::vector<double> mean_sums_;    // d x steps
    std::vector<double> energy_sums_;  // d x steps
    std::vector<double> count_;        // steps
};

}  // namespace tfex
