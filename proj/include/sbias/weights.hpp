#pragma once

#include <iosfwd>
#include <string>

#include "sbias/geo.hpp"

namespace sbias {

enum class WeightScheme { knn, distance, custom };

// Interference weights. Zero diagonal, nonnegative entries.
// `parameter` is k for knn and the percentile (fraction) for distance.
class WeightMatrix {
public:
    WeightMatrix() = default;
    WeightMatrix(Matrix w, WeightScheme scheme, double parameter, bool standardized);

    const Matrix& values() const noexcept { return w_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(w_.rows()); }
    WeightScheme scheme() const noexcept { return scheme_; }
    double parameter() const noexcept { return parameter_; }
    bool standardized() const noexcept { return standardized_; }

    // True when no pair survived (e.g. a distance cutoff below every distance).
    bool empty_neighbourhood() const noexcept { return w_.size() == 0 || w_.isZero(0.0); }
    std::size_t isolated_units() const noexcept;

    std::string label() const;

private:
    Matrix w_;
    WeightScheme scheme_ = WeightScheme::custom;
    double parameter_ = 0.0;
    bool standardized_ = false;
};

// Each row gets 1/k on its k nearest neighbours; ties go to the smaller index.
WeightMatrix knn_weights(const DistanceMatrix& d, std::size_t k);

// Type-7 quantile of the unordered off-diagonal distances (each pair once).
double distance_threshold(const DistanceMatrix& d, double percentile);

// Raw reciprocal-distance weights for pairs within the percentile threshold.
WeightMatrix distance_weights(const DistanceMatrix& d, double percentile);

// Same with an explicit cutoff; `percentile` is only recorded.
WeightMatrix distance_weights_at(const DistanceMatrix& d, double cutoff, double percentile = 0.0);

WeightMatrix row_standardize(const WeightMatrix& w);

Vector apply_weights(const WeightMatrix& w, const Vector& field);
inline Vector apply_weights(const WeightMatrix& w, const SpatialFieldSample& field) {
    return apply_weights(w, field.values);
}

// Dense CSV grid, one row per line, no header.
void write_weights_csv(const WeightMatrix& w, std::ostream& out);
WeightMatrix read_weights_csv(std::istream& in);

struct WeightConfig {
    WeightScheme scheme = WeightScheme::knn;
    double parameter = 4.0;
    bool standardize = true;

    WeightMatrix build(const DistanceMatrix& d) const;
    std::string label() const;
    static WeightConfig knn(std::size_t k) { return {WeightScheme::knn, double(k), true}; }
    static WeightConfig distance(double percentile, bool standardize = true) {
        return {WeightScheme::distance, percentile, standardize};
    }
};

}  // namespace sbias
