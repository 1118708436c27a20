#include "tfex/residual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tfex/rng.hpp"

namespace tfex {

namespace {

void check_exprs(const TrajectoryBatch& batch, const std::vector<ExpressionTemplate>& exprs) {
    if (exprs.size() != batch.d)
        throw std::invalid_argument("compute_residuals: need one expression per component");
    if (batch.N < 1) throw std::invalid_argument("compute_residuals: need >= 2 time points");
}

void append_residual(const TrajectoryBatch& batch, const std::vector<ExpressionTemplate>& exprs,
                     std::size_t m, std::size_t n, std::vector<double>& out) {
    const double* u = batch.state(m, n);
    const double* next = batch.state(m, n + 1);
    const double t = batch.time(n);
    for (std::size_t i = 0; i < batch.d; ++i) {
        const double drift = eval_expression(exprs[i], {u, batch.d}, t);
        out.push_back(next[i] - u[i] - batch.h * drift);
    }
}

}  // namespace

ResidualSet compute_residuals(const TrajectoryBatch& batch,
                              const std::vector<ExpressionTemplate>& exprs) {
    check_exprs(batch, exprs);
    ResidualSet set;
    set.d = batch.d;
    set.h = batch.h;
    set.values.reserve(batch.M * batch.N * batch.d);
    for (std::size_t m = 0; m < batch.M; ++m)
        for (std::size_t n = 0; n < batch.N; ++n) append_residual(batch, exprs, m, n, set.values);
    return set;
}

ResidualSet residuals_at_step(const TrajectoryBatch& batch,
                              const std::vector<ExpressionTemplate>& exprs, std::size_t step) {
    check_exprs(batch, exprs);
    if (step >= batch.N) throw std::invalid_argument("residuals_at_step: step out of range");
    ResidualSet set;
    set.d = batch.d;
    set.h = batch.h;
    set.values.reserve(batch.M * batch.d);
    for (std::size_t m = 0; m < batch.M; ++m) append_residual(batch, exprs, m, step, set.values);
    return set;
}

std::vector<double> knn_select(const ResidualSet& residuals, std::span<const double> query,
                               std::size_t k) {
    const std::size_t n = residuals.count();
    if (n == 0) throw std::invalid_argument("knn_select: empty residual set");
    if (query.size() != residuals.d) throw std::invalid_argument("knn_select: query dimension");
    if (k > n) throw std::invalid_argument("knn_select: k exceeds set size");

    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = residuals.row(i);
        double d2 = 0.0;
        for (std::size_t j = 0; j < residuals.d; ++j) {
            const double diff = row[j] - query[j];
            d2 += diff * diff;
        }
        dist[i] = {d2, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

    std::vector<double> out;
    out.reserve(k * residuals.d);
    for (std::size_t i = 0; i < k; ++i) {
        const auto row = residuals.row(dist[i].second);
        out.insert(out.end(), row.begin(), row.end());
    }
    return out;
}

std::vector<double> residual_centroid(const ResidualSet& residuals) {
    const std::size_t n = residuals.count();
    if (n == 0) throw std::invalid_argument("residual_centroid: empty residual set");
    std::vector<double> c(residuals.d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = residuals.row(i);
        for (std::size_t j = 0; j < residuals.d; ++j) c[j] += row[j];
    }
    for (double& v : c) v /= static_cast<double>(n);
    return c;
}

std::vector<double> residual_componentwise_std(const ResidualSet& residuals) {
    const std::size_t n = residuals.count();
    if (n < 2) throw std::invalid_argument("residual_componentwise_std: need >= 2 rows");
    const auto mean = residual_centroid(residuals);
    std::vector<double> acc(residuals.d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = residuals.row(i);
        for (std::size_t j = 0; j < residuals.d; ++j) {
            const double diff = row[j] - mean[j];
            acc[j] += diff * diff;
        }
    }
    for (double& v : acc) v = std::sqrt(v / static_cast<double>(n - 1));
    return acc;
}

ResidualSet residual_subsample(const ResidualSet& residuals, std::size_t n, std::uint64_t seed) {
    const std::size_t total = residuals.count();
    if (n >= total) return residuals;
    // partial Fisher-Yates over an index vector
    std::vector<std::uint32_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0u);
    GaussStream rng(stream_seed(seed, 0x5ab5aULL));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
        std::swap(idx[i], idx[j]);
    }
    ResidualSet out;
    out.d = residuals.d;
    out.h = residuals.h;
    out.smoothing_std = residuals.smoothing_std;
    out.values.reserve(n * residuals.d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = residuals.row(idx[i]);
        out.values.insert(out.values.end(), row.begin(), row.end());
    }
    return out;
}

void save_residuals(const ResidualSet& residuals, const std::string& path) {
    save_rows(residuals.values, residuals.d, residuals.h, path);
}

ResidualSet load_residuals(const std::string& path) {
    ResidualSet set;
    set.values = load_rows(path, set.d, set.h);
    return set;
}

}  // namespace tfex
