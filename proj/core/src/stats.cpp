#include "tfex/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tfex {

EnsembleView slice_at(const TrajectoryBatch& batch, std::size_t step) {
    if (step > batch.N) throw std::invalid_argument("slice_at: step out of range");
    return EnsembleView{batch.state(0, step), batch.M, batch.d, (batch.N + 1) * batch.d};
}

double mixed_moment(const EnsembleView& states, const std::vector<std::size_t>& indices) {
    if (indices.empty() || indices.size() > 7)
        throw std::invalid_argument("mixed_moment: order must be in 1..7");
    if (states.M < 1) throw std::invalid_argument("mixed_moment: empty ensemble");
    for (std::size_t i : indices)
        if (i >= states.d) throw std::invalid_argument("mixed_moment: index out of range");
    double acc = 0.0;
    for (std::size_t m = 0; m < states.M; ++m) {
        const double* u = states.row(m);
        double p = 1.0;
        for (std::size_t i : indices) p *= u[i];
        acc += p;
    }
    return acc / static_cast<double>(states.M);
}

double mean_norm(const EnsembleView& states) {
    if (states.M < 1) throw std::invalid_argument("mean_norm: empty ensemble");
    double norm2 = 0.0;
    for (std::size_t i = 0; i < states.d; ++i) {
        double mi = 0.0;
        for (std::size_t m = 0; m < states.M; ++m) mi += states.row(m)[i];
        mi /= static_cast<double>(states.M);
        norm2 += mi * mi;
    }
    return std::sqrt(norm2);
}

Eigen::MatrixXd covariance(const EnsembleView& states) {
    if (states.M < 2) throw std::invalid_argument("covariance: need M >= 2");
    const auto d = static_cast<Eigen::Index>(states.d);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (std::size_t m = 0; m < states.M; ++m)
        mean += Eigen::Map<const Eigen::VectorXd>(states.row(m), d);
    mean /= static_cast<double>(states.M);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t m = 0; m < states.M; ++m) {
        const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(states.row(m), d) - mean;
        cov += c * c.transpose();
    }
    return cov / static_cast<double>(states.M - 1);
}

std::vector<double> energy(const EnsembleView& states) {
    if (states.M < 1) throw std::invalid_argument("energy: empty ensemble");
    std::vector<double> e(states.d, 0.0);
    for (std::size_t m = 0; m < states.M; ++m) {
        const double* u = states.row(m);
        for (std::size_t i = 0; i < states.d; ++i) e[i] += u[i] * u[i];
    }
    for (double& v : e) v /= static_cast<double>(states.M);
    return e;
}

Histogram2d histogram2d(const EnsembleView& states, std::size_t axis_x, std::size_t axis_y,
                        std::size_t bins, double x_min, double x_max, double y_min, double y_max) {
    if (axis_x >= states.d || axis_y >= states.d)
        throw std::invalid_argument("histogram2d: axis out of range");
    if (bins < 1 || !(x_max > x_min) || !(y_max > y_min) || !std::isfinite(x_min) ||
        !std::isfinite(x_max) || !std::isfinite(y_min) || !std::isfinite(y_max))
        throw std::invalid_argument("histogram2d: bad bins/range");

    Histogram2d hist;
    hist.bins = bins;
    hist.x_min = x_min;
    hist.x_max = x_max;
    hist.y_min = y_min;
    hist.y_max = y_max;
    hist.counts.assign(bins * bins, 0.0);

    const double sx = static_cast<double>(bins) / (x_max - x_min);
    const double sy = static_cast<double>(bins) / (y_max - y_min);
    for (std::size_t m = 0; m < states.M; ++m) {
        const double x = states.row(m)[axis_x];
        const double y = states.row(m)[axis_y];
        if (x < x_min || x >= x_max || y < y_min || y >= y_max) {
            hist.overflow += 1;
            continue;
        }
        const auto bx = static_cast<std::size_t>((x - x_min) * sx);
        const auto by = static_cast<std::size_t>((y - y_min) * sy);
        hist.counts[std::min(bx, bins - 1) * bins + std::min(by, bins - 1)] += 1.0;
    }

    hist.density = hist.counts;
    const double total = static_cast<double>(states.M - hist.overflow);
    if (total > 0) {
        const double cell = (x_max - x_min) * (y_max - y_min) /
                            static_cast<double>(bins * bins);
        for (double& v : hist.density) v /= total * cell;
    }
    return hist;
}

std::vector<std::size_t> parse_moment_label(const std::string& label, std::size_t d) {
    if (label.empty() || label.size() > 7)
        throw std::invalid_argument("moment label must have 1..7 digits");
    std::vector<std::size_t> indices;
    for (char c : label) {
        if (c < '1' || c > '9') throw std::invalid_argument("bad moment label: " + label);
        const std::size_t i = static_cast<std::size_t>(c - '1');
        if (i >= d) throw std::invalid_argument("moment label index out of range: " + label);
        indices.push_back(i);
    }
    return indices;
}

std::string moment_label(const std::vector<std::size_t>& indices) {
    std::string s;
    for (std::size_t i : indices) s += static_cast<char>('1' + i);
    return s;
}

std::vector<std::string> default_moment_labels(std::size_t d) {
    std::vector<std::string> labels;
    // orders 1..3, non-decreasing index tuples
    for (std::size_t i = 0; i < d; ++i) labels.push_back(moment_label({i}));
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) labels.push_back(moment_label({i, j}));
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j)
            for (std::size_t k = j; k < d; ++k) labels.push_back(moment_label({i, j, k}));
    // order-4 and order-5 diagonals
    for (std::size_t i = 0; i < d; ++i) labels.push_back(moment_label({i, i, i, i}));
    for (std::size_t i = 0; i < d; ++i) labels.push_back(moment_label({i, i, i, i, i}));
    return labels;
}

EnsembleAccumulator::EnsembleAccumulator(std::vector<std::string> labels, std::size_t d,
                                         std::size_t steps, double h, double t0)
    : labels_(std::move(labels)), d_(d), steps_(steps), h_(h), t0_(t0) {
    tuples_.reserve(labels_.size());
    for (const auto& l : labels_) tuples_.push_back(parse_moment_label(l, d));
    sums_.assign(labels_.size() * steps_, 0.0);
    mean_sums_.assign(d_ * steps_, 0.0);
    energy_sums_.assign(d_ * steps_, 0.0);
    count_.assign(steps_, 0.0);
}

void EnsembleAccumulator::add(std::size_t n, const double* u) {
    if (n >= steps_) throw std::invalid_argument("EnsembleAccumulator::add: step out of range");
    count_[n] += 1.0;
    for (std::size_t i = 0; i < d_; ++i) {
        mean_sums_[i * steps_ + n] += u[i];
        energy_sums_[i * steps_ + n] += u[i] * u[i];
    }
    for (std::size_t l = 0; l < tuples_.size(); ++l) {
        double p = 1.0;
        for (std::size_t i : tuples_[l]) p *= u[i];
        sums_[l * steps_ + n] += p;
    }
}

std::vector<MomentSeries> EnsembleAccumulator::series() const {
    std::vector<MomentSeries> out(labels_.size());
    for (std::size_t l = 0; l < labels_.size(); ++l) {
        out[l].label = labels_[l];
        out[l].times.resize(steps_);
        out[l].values.resize(steps_);
        for (std::size_t n = 0; n < steps_; ++n) {
            out[l].times[n] = t0_ + static_cast<double>(n) * h_;
            out[l].values[n] = count_[n] > 0 ? sums_[l * steps_ + n] / count_[n] : 0.0;
        }
    }
    return out;
}

MomentSeries EnsembleAccumulator::mean_norm_series() const {
    MomentSeries s;
    s.label = "mean_norm";
    s.times.resize(steps_);
    s.values.resize(steps_);
    for (std::size_t n = 0; n < steps_; ++n) {
        s.times[n] = t0_ + static_cast<double>(n) * h_;
        double norm2 = 0.0;
        if (count_[n] > 0) {
            for (std::size_t i = 0; i < d_; ++i) {
                const double mi = mean_sums_[i * steps_ + n] / count_[n];
                norm2 += mi * mi;
            }
        }
        s.values[n] = std::sqrt(norm2);
    }
    return s;
}

std::vector<MomentSeries> EnsembleAccumulator::energy_series() const {
    std::vector<MomentSeries> out(d_);
    for (std::size_t i = 0; i < d_; ++i) {
        out[i].label = "E" + std::to_string(i + 1);
        out[i].times.resize(steps_);
        out[i].values.resize(steps_);
        for (std::size_t n = 0; n < steps_; ++n) {
            out[i].times[n] = t0_ + static_cast<double>(n) * h_;
            out[i].values[n] = count_[n] > 0 ? energy_sums_[i * steps_ + n] / count_[n] : 0.0;
        }
    }
    return out;
}

}  // namespace tfex
