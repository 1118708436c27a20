#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tfex {

/// Ensemble of M trajectories sampled at N+1 uniform time points in d
/// dimensions. Row-major layout: data[(m*(N+1) + n)*d + i].
struct TrajectoryBatch {
    std::size_t M = 0;
    std::size_t N = 0;  // step count; N+1 stored points per trajectory
    std::size_t d = 0;
    double h = 0.0;
    double t0 = 0.0;
    std::vector<double> data;

    TrajectoryBatch() = default;
    TrajectoryBatch(std::size_t M_, std::size_t N_, std::size_t d_, double h_, double t0_ = 0.0)
        : M(M_), N(N_), d(d_), h(h_), t0(t0_), data(M_ * (N_ + 1) * d_, 0.0) {}

    double time(std::size_t n) const { return t0 + static_cast<double>(n) * h; }

    double* state(std::size_t m, std::size_t n) {
        return data.data() + (m * (N + 1) + n) * d;
    }
    const double* state(std::size_t m, std::size_t n) const {
        return data.data() + (m * (N + 1) + n) * d;
    }
    std::span<const double> state_view(std::size_t m, std::size_t n) const {
        return {state(m, n), d};
    }

    bool all_finite() const;
};

// Binary layout: magic "TFEX", version u32, M u32, N u32, then d u32, h f64,
// then the row-major f64 payload.
void save_batch(const TrajectoryBatch& batch, const std::string& path);
TrajectoryBatch load_batch(const std::string& path);

// Same container reused for flat residual files: N holds the row count and the
// payload is N*d values (no N+1 convention).
void save_rows(const std::vector<double>& rows, std::size_t d, double h, const std::string& path);
std::vector<double> load_rows(const std::string& path, std::size_t& d_out, double& h_out);

/// CSV with header traj,step,t,u1..ud.
void export_csv(const TrajectoryBatch& batch, const std::string& path);

}  // namespace tfex
