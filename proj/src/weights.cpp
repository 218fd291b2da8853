#include "sbias/weights.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "sbias/error.hpp"

namespace sbias {

WeightMatrix::WeightMatrix(Matrix w, WeightScheme scheme, double parameter, bool standardized)
    : w_(std::move(w)), scheme_(scheme), parameter_(parameter), standardized_(standardized) {
    if (w_.rows() != w_.cols()) throw InvalidArgument("weight matrix must be square");
    for (Eigen::Index i = 0; i < w_.rows(); ++i) {
        if (w_(i, i) != 0.0) throw InvalidArgument("weight matrix must have a zero diagonal");
        for (Eigen::Index j = 0; j < w_.cols(); ++j)
            if (!(w_(i, j) >= 0.0) || !std::isfinite(w_(i, j)))
                throw InvalidArgument("weight matrix entries must be finite and nonnegative");
    }
}

std::size_t WeightMatrix::isolated_units() const noexcept {
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < w_.rows(); ++i)
        if (w_.row(i).sum() == 0.0) ++count;
    return count;
}

std::string WeightMatrix::label() const {
    std::ostringstream s;
    switch (scheme_) {
        case WeightScheme::knn:
            s << "knn" << static_cast<long>(parameter_);
            break;
        case WeightScheme::distance:
            s << "dist" << std::lround(parameter_ * 100.0);
            break;
        case WeightScheme::custom:
            s << "custom";
            break;
    }
    return s.str();
}

WeightMatrix knn_weights(const DistanceMatrix& d, std::size_t k) {
    const std::size_t n = d.size();
    if (k < 1 || k > n - 1) throw InvalidArgument("knn_weights: k must lie in [1, n-1]");
    Matrix w = Matrix::Zero(Eigen::Index(n), Eigen::Index(n));
    std::vector<std::size_t> order;
    const double share = 1.0 / double(k);
    for (std::size_t i = 0; i < n; ++i) {
        order.resize(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        order.erase(order.begin() + std::ptrdiff_t(i));
        std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              const double da = d(i, a), db = d(i, b);
                              return da < db || (da == db && a < b);
                          });
        for (std::size_t r = 0; r < k; ++r) w(Eigen::Index(i), Eigen::Index(order[r])) = share;
    }
    return WeightMatrix(std::move(w), WeightScheme::knn, double(k), true);
}

double distance_threshold(const DistanceMatrix& d, double percentile) {
    if (!(percentile > 0.0 && percentile <= 1.0)) throw InvalidArgument("percentile must lie in (0, 1]");
    const std::size_t n = d.size();
    std::vector<double> pairs;
    pairs.reserve(n * (n - 1) / 2);
    for (std::size_t j = 1; j < n; ++j)
        for (std::size_t i = 0; i < j; ++i) pairs.push_back(d(i, j));
    std::sort(pairs.begin(), pairs.end());
    const double h = double(pairs.size() - 1) * percentile;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, pairs.size() - 1);
    return pairs[lo] + (h - double(lo)) * (pairs[hi] - pairs[lo]);
}

WeightMatrix distance_weights_at(const DistanceMatrix& d, double cutoff, double percentile) {
    if (!(cutoff >= 0.0)) throw InvalidArgument("distance cutoff must be nonnegative");
    const auto n = static_cast<Eigen::Index>(d.size());
    Matrix w = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double dij = d.values()(i, j);
            if (dij <= cutoff) {
                w(i, j) = 1.0 / dij;
            }
        }
    return WeightMatrix(std::move(w), WeightScheme::distance, percentile, false);
}

WeightMatrix distance_weights(const DistanceMatrix& d, double percentile) {
    return distance_weights_at(d, distance_threshold(d, percentile), percentile);
}

WeightMatrix row_standardize(const WeightMatrix& w) {
    Matrix v = w.values();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double s = v.row(i).sum();
        if (s > 0.0) v.row(i) /= s;
    }
    return WeightMatrix(std::move(v), w.scheme(), w.parameter(), true);
}

Vector apply_weights(const WeightMatrix& w, const Vector& field) {
    if (Eigen::Index(w.size()) != field.size()) throw InvalidArgument("apply_weights: dimension mismatch");
    return w.values() * field;
}

void write_weights_csv(const WeightMatrix& w, std::ostream& out) {
    const Matrix& v = w.values();
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        for (Eigen::Index j = 0; j < v.cols(); ++j) {
            if (j) out << ',';
            out << v(i, j);
        }
        out << '\n';
    }
}

WeightMatrix read_weights_csv(std::istream& in) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                throw ParseError("non-numeric weight '" + cell + "'", lineno);
            }
        }
        rows.push_back(std::move(row));
    }
    const auto n = static_cast<Eigen::Index>(rows.size());
    Matrix w(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (Eigen::Index(rows[std::size_t(i)].size()) != n) throw ParseError("weight matrix is not square", std::size_t(i) + 1);
        for (Eigen::Index j = 0; j < n; ++j) w(i, j) = rows[std::size_t(i)][std::size_t(j)];
    }
    bool standardized = n > 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s = w.row(i).sum();
        if (s != 0.0 && std::abs(s - 1.0) > 1e-12) standardized = false;
    }
    return WeightMatrix(std::move(w), WeightScheme::custom, 0.0, standardized);
}

WeightMatrix WeightConfig::build(const DistanceMatrix& d) const {
    switch (scheme) {
        case WeightScheme::knn: {
            if (!(parameter >= 1.0) || parameter != std::floor(parameter))
                throw InvalidArgument("knn weights need a positive integer k");
            return knn_weights(d, static_cast<std::size_t>(parameter));
        }
        case WeightScheme::distance: {
            WeightMatrix raw = distance_weights(d, parameter);
            return standardize ? row_standardize(raw) : raw;
        }
        case WeightScheme::custom:
            break;
    }
    throw InvalidArgument("custom weights cannot be built from distances");
}

std::string WeightConfig::label() const {
    std::ostringstream s;
    if (scheme == WeightScheme::knn)
        s << "knn" << static_cast<long>(parameter);
    else
        s << "dist" << std::lround(parameter * 100.0);
    return s.str();
}

}  // namespace sbias
