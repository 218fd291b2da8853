#include <sstream>

#include "doctest.h"
#include "sbias/dgp.hpp"
#include "sbias/error.hpp"
#include "sbias/estimate.hpp"

using namespace sbias;

TEST_SUITE("dgp") {

TEST_CASE("term set labels") {
    CHECK(TermSet::parse("T+I+DSC+ISC").label() == "T+I+DSC+ISC");
    CHECK(TermSet::parse("T").has(Term::intercept));
    CHECK(TermSet::parse("FULL") == TermSet::parse("T+I+DSC+ISC"));
    CHECK_FALSE(TermSet::parse("T+noint").has(Term::intercept));
    CHECK_THROWS_AS(TermSet::parse("T+X"), InvalidArgument);
}

TEST_CASE("M6 with the full-model coefficients follows its generating equation") {
    const auto err = CovarianceSpec::exponential(2.0, 1.0, 0.0);
    const ModelSpec spec = ModelSpec::m6(0, 5, 3, 2.5, 2, WeightConfig::knn(4), std::nullopt, err);
    const LocationSet loc = sample_locations(100, Bounds{}, 4);
    const DataSet d = generate(spec, loc, 99);
    REQUIRE(d.Atilde);
    REQUIRE(d.U);
    REQUIRE(d.Utilde);
    const Vector recon = 5 * d.A + 3 * *d.Atilde + 2.5 * *d.U + 2 * *d.Utilde + *d.eps;
    CHECK((d.Y - recon).cwiseAbs().maxCoeff() <= 1e-10);
    // Generated spatial lags are exactly the weighted fields.
    CHECK(*d.Atilde == apply_weights(*d.psi, d.A));
    CHECK(*d.Utilde == apply_weights(*d.phi, *d.U));
}

TEST_CASE("degenerate M1 is constant") {
    const ModelSpec spec = ModelSpec::m1(3.5, 0.0, CovarianceSpec::iid(0.0));
    const DataSet d = generate(spec, sample_locations(20, Bounds{}, 1), 5);
    CHECK((d.Y.array() == 3.5).all());
}

TEST_CASE("M4 reconstruction") {
    const ModelSpec spec = ModelSpec::m4(0, 2, 1.5, CovarianceSpec::exponential(2.0));
    const DataSet d = generate(spec, sample_locations(50, Bounds{}, 2), 6);
    const Vector r = d.Y - 2 * d.A - 1.5 * *d.U - *d.eps;
    CHECK(r.cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("generation is deterministic in the seed") {
    const ModelSpec spec = ModelSpec::m3(1, 8, 2, 1, WeightConfig::distance(0.95));
    const LocationSet loc = sample_locations(40, Bounds{}, 2);
    CHECK(generate(spec, loc, 7).Y == generate(spec, loc, 7).Y);
    CHECK(generate(spec, loc, 7).Y != generate(spec, loc, 8).Y);
}

TEST_CASE("inconsistent specs are rejected") {
    ModelSpec s = ModelSpec::m2(0, 8, 2, WeightConfig::knn(4));
    s.psi.reset();
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    ModelSpec p = ModelSpec::m4(0, 1, 1);
    p.mechanism = ConfounderMechanism::poisson_pair;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p.treatment_kind = p.confounder_kind = FieldKind::poisson;
    CHECK_NOTHROW(p.validate());
}

TEST_CASE("design matrices") {
    const ModelSpec spec = ModelSpec::m2(0, 8, 2, WeightConfig::knn(4));
    const DataSet d = generate(spec, sample_locations(30, Bounds{}, 3), 3);

    const Design t = design_matrix(d, TermSet{Term::treatment});
    CHECK(t.X.cols() == 1);
    CHECK(Vector(t.X.col(0)) == d.A);

    const Design full = design_matrix(d, TermSet{Term::intercept, Term::treatment, Term::interference});
    CHECK(full.names == std::vector<std::string>{"intercept", "A", "Atilde"});
    Vector beta(3);
    beta << 0, 8, 2;
    CHECK(((d.Y - full.X * beta) - *d.eps).cwiseAbs().maxCoeff() <= 1e-10);

    const Design c = design_matrix(d, TermSet{Term::intercept, Term::treatment, Term::interference}, true);
    CHECK(c.X.cols() == 2);
    CHECK(c.X.colwise().mean().cwiseAbs().maxCoeff() <= 1e-12);

    CHECK_THROWS_AS(design_matrix(d, TermSet{Term::treatment, Term::direct}), InvalidArgument);
}

TEST_CASE("binary and poisson treatments") {
    ModelSpec s = ModelSpec::m1(0, 1);
    s.treatment_kind = FieldKind::binary;
    const DataSet b = generate(s, sample_locations(60, Bounds{}, 1), 1);
    CHECK(((b.A.array() == 0.0) || (b.A.array() == 1.0)).all());
    s.treatment_kind = FieldKind::poisson;
    const DataSet p = generate(s, sample_locations(60, Bounds{}, 1), 1);
    CHECK((p.A.array() >= 0.0).all());
    CHECK((p.A.array() == p.A.array().round()).all());
}

TEST_CASE("the full design recovers every coefficient in expectation") {
    // 1e4 replicates on 30 fixed locations; each coefficient within 3 MC standard errors.
    ModelSpec spec = ModelSpec::m6(1, 5, 3, 2.5, 2, WeightConfig::knn(4), std::nullopt,
                                   CovarianceSpec::exponential(2.0, 1.0, 0.5));
    spec.pair.rho = 0.5;
    const LocationSet loc = sample_locations(30, Bounds{}, 17);
    const DistanceMatrix dist = distance_matrix(loc);
    const TermSet all = TermSet::parse("FULL");
    const int reps = 10000;
    Vector sum = Vector::Zero(5), sum2 = Vector::Zero(5);
    for (int r = 0; r < reps; ++r) {
        const DataSet d = generate(spec, loc, dist, StreamSeeds::from(std::uint64_t(r) + 1000));
        const Design des = design_matrix(d, all);
        const Vector b = ols_fit(des.X, d.Y).coef;
        sum += b;
        sum2 += b.cwiseProduct(b);
    }
    const Vector mean = sum / reps;
    const Vector sd = (sum2 / reps - mean.cwiseProduct(mean)).cwiseSqrt();
    const double truth[] = {1, 5, 3, 2.5, 2};
    for (int i = 0; i < 5; ++i) CHECK(std::abs(mean(i) - truth[i]) <= 3.0 * sd(i) / std::sqrt(double(reps)));
}

TEST_CASE("dataset csv has the optional columns") {
    const ModelSpec spec = ModelSpec::m6(0, 5, 3, 2.5, 2, WeightConfig::knn(4));
    const DataSet d = generate(spec, sample_locations(5, Bounds{}, 1), 1);
    std::stringstream ss;
    write_dataset_csv(d, ss);
    std::string header;
    std::getline(ss, header);
    CHECK(header == "x,y,Y,A,Atilde,U,Utilde");
}

}  // TEST_SUITE
