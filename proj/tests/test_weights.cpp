#include <sstream>

#include "doctest.h"
#include "sbias/error.hpp"
#include "sbias/weights.hpp"

using namespace sbias;

namespace {

DistanceMatrix line3() { return distance_matrix(LocationSet({{0, 0}, {1, 0}, {3, 0}}, Bounds{})); }

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(Eigen::Index(rows.size()), Eigen::Index(rows.begin()->size()));
    Eigen::Index i = 0;
    for (auto r : rows) {
        Eigen::Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

long nonzeros(const Matrix& m) { return (m.array() != 0.0).count(); }

}  // namespace

TEST_SUITE("weights") {

TEST_CASE("knn on three collinear points") {
    const WeightMatrix w = knn_weights(line3(), 1);
    CHECK(w.values() == mat({{0, 1, 0}, {1, 0, 0}, {0, 1, 0}}));
    CHECK(w.label() == "knn1");
    CHECK_THROWS_AS(knn_weights(line3(), 0), InvalidArgument);
    CHECK_THROWS_AS(knn_weights(line3(), 3), InvalidArgument);
}

TEST_CASE("knn with k = n - 1 weights everyone equally") {
    const DistanceMatrix d = distance_matrix(sample_locations(7, Bounds{}, 3));
    const Matrix w = knn_weights(d, 6).values();
    for (Eigen::Index i = 0; i < 7; ++i)
        for (Eigen::Index j = 0; j < 7; ++j) CHECK(w(i, j) == doctest::Approx(i == j ? 0.0 : 1.0 / 6.0));
}

TEST_CASE("knn k = 4 on 100 points has four entries of 1/4 per row") {
    const DistanceMatrix d = distance_matrix(sample_locations(100, Bounds{}, 8));
    const Matrix w = knn_weights(d, 4).values();
    for (Eigen::Index i = 0; i < 100; ++i) {
        CHECK((w.row(i).array() == 0.25).count() == 4);
        CHECK(nonzeros(w.row(i)) == 4);
        CHECK(w(i, i) == 0.0);
    }
}

TEST_CASE("knn ties go to the smaller index") {
    // Point 0 is equidistant from 1 and 2.
    const DistanceMatrix d = distance_matrix(LocationSet({{0, 0}, {1, 0}, {-1, 0}}, Bounds{-2, 2, -2, 2}));
    const Matrix w = knn_weights(d, 1).values();
    CHECK(w(0, 1) == 1.0);
    CHECK(w(0, 2) == 0.0);
}

TEST_CASE("distance weights with the full threshold") {
    const WeightMatrix w = distance_weights(line3(), 1.0);
    CHECK(w.values().isApprox(mat({{0, 1, 1.0 / 3}, {1, 0, 0.5}, {1.0 / 3, 0.5, 0}}), 1e-15));
    CHECK(w.values().diagonal().isZero(0.0));
    CHECK_FALSE(w.standardized());
}

TEST_CASE("type-7 threshold and the empty neighbourhood") {
    // Unique pair distances {1, 2, 3}; median = 2.
    CHECK(distance_threshold(line3(), 0.5) == doctest::Approx(2.0));
    CHECK(distance_threshold(line3(), 0.75) == doctest::Approx(2.5));
    const WeightMatrix z = distance_weights_at(line3(), 0.5);
    CHECK(z.empty_neighbourhood());
    CHECK(z.values().isZero(0.0));
    CHECK(z.isolated_units() == 3);
    CHECK_FALSE(distance_weights(line3(), 0.5).empty_neighbourhood());
    CHECK_THROWS_AS(distance_threshold(line3(), 0.0), InvalidArgument);
    CHECK_THROWS_AS(distance_threshold(line3(), 1.5), InvalidArgument);
}

TEST_CASE("95th percentile keeps about 95% of pairs") {
    const DistanceMatrix d = distance_matrix(sample_locations(100, Bounds{}, 12));
    const Matrix w = distance_weights(d, 0.95).values();
    const double share = double(nonzeros(w)) / (100.0 * 99.0);
    CHECK(share == doctest::Approx(0.95).epsilon(0.01));
}

TEST_CASE("lowering the percentile never adds a neighbour") {
    const DistanceMatrix d = distance_matrix(sample_locations(40, Bounds{}, 13));
    Matrix prev = distance_weights(d, 1.0).values();
    for (double p : {0.95, 0.9, 0.8, 0.75, 0.5, 0.25, 0.05}) {
        const Matrix cur = distance_weights(d, p).values();
        CHECK(((cur.array() != 0.0) && (prev.array() == 0.0)).count() == 0);
        prev = cur;
    }
}

TEST_CASE("row standardization") {
    const Matrix raw = mat({{0, 1, 1.0 / 3, 0.5}, {1, 0, 0, 0}, {0, 0, 0, 0}, {1, 1, 1, 0}});
    const WeightMatrix s = row_standardize(WeightMatrix(raw, WeightScheme::custom, 0, false));
    CHECK(s.values().row(0).isApprox(mat({{0, 6.0 / 11, 2.0 / 11, 3.0 / 11}}), 1e-15));
    CHECK(s.values().row(2).isZero(0.0));
    CHECK(s.isolated_units() == 1);
    CHECK(s.values().diagonal().isZero(0.0));
    CHECK(s.standardized());

    const WeightMatrix k = knn_weights(distance_matrix(sample_locations(20, Bounds{}, 1)), 3);
    CHECK(row_standardize(k).values() == k.values());
}

TEST_CASE("constructor validation") {
    CHECK_THROWS_AS(WeightMatrix(mat({{1, 0}, {0, 0}}), WeightScheme::custom, 0, false), InvalidArgument);
    CHECK_THROWS_AS(WeightMatrix(mat({{0, -1}, {0, 0}}), WeightScheme::custom, 0, false), InvalidArgument);
    CHECK_THROWS_AS(WeightMatrix(Matrix::Zero(2, 3), WeightScheme::custom, 0, false), InvalidArgument);
}

TEST_CASE("apply_weights") {
    const WeightMatrix swap(mat({{0, 1}, {1, 0}}), WeightScheme::custom, 0, true);
    Vector f(2);
    f << 1, 2;
    Vector expected(2);
    expected << 2, 1;
    CHECK(apply_weights(swap, f) == expected);

    const WeightMatrix zero(Matrix::Zero(2, 2), WeightScheme::custom, 0, false);
    CHECK(apply_weights(zero, f).isZero(0.0));

    const WeightMatrix k = knn_weights(distance_matrix(sample_locations(30, Bounds{}, 4)), 4);
    CHECK(apply_weights(k, Vector::Constant(30, 2.5)).isApprox(Vector::Constant(30, 2.5), 1e-14));
    CHECK_THROWS_AS(apply_weights(k, Vector::Zero(3)), InvalidArgument);
}

TEST_CASE("apply_weights is linear") {
    const WeightMatrix w = WeightConfig::distance(0.8).build(distance_matrix(sample_locations(50, Bounds{}, 6)));
    Engine eng = make_engine(3);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 20; ++t) {
        Vector x(50), y(50);
        for (Eigen::Index i = 0; i < 50; ++i) x(i) = nd(eng), y(i) = nd(eng);
        const double a = nd(eng), b = nd(eng);
        const Vector lhs = apply_weights(w, Vector(a * x + b * y));
        const Vector rhs = a * apply_weights(w, x) + b * apply_weights(w, y);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("weights csv round trip") {
    const WeightMatrix w = WeightConfig::distance(0.9).build(distance_matrix(sample_locations(10, Bounds{}, 2)));
    std::stringstream ss;
    write_weights_csv(w, ss);
    const WeightMatrix r = read_weights_csv(ss);
    CHECK(r.values() == w.values());
    CHECK(r.standardized());
    std::stringstream bad("0,1\n1,x\n");
    CHECK_THROWS_AS(read_weights_csv(bad), ParseError);
}

TEST_CASE("config labels") {
    CHECK(WeightConfig::knn(4).label() == "knn4");
    CHECK(WeightConfig::distance(0.95).label() == "dist95");
    CHECK(WeightConfig::distance(0.5).build(line3()).standardized());
}

}  // TEST_SUITE
