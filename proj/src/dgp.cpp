#include "sbias/dgp.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "sbias/error.hpp"

namespace sbias {

std::string TermSet::label() const {
    std::string out;
    auto add = [&](Term t, const char* name) {
        if (!has(t)) return;
        if (!out.empty()) out += '+';
        out += name;
    };
    add(Term::treatment, "T");
    add(Term::interference, "I");
    add(Term::direct, "DSC");
    add(Term::indirect, "ISC");
    return out;
}

TermSet TermSet::parse(const std::string& label) {
    TermSet s{Term::intercept};
    if (label == "FULL" || label == "full") return s.with(Term::treatment).with(Term::interference).with(Term::direct).with(Term::indirect);
    std::stringstream ss(label);
    std::string tok;
    while (std::getline(ss, tok, '+')) {
        if (tok == "T")
            s = s.with(Term::treatment);
        else if (tok == "I")
            s = s.with(Term::interference);
        else if (tok == "DSC")
            s = s.with(Term::direct);
        else if (tok == "ISC")
            s = s.with(Term::indirect);
        else if (tok == "noint")
            s = s.without(Term::intercept);
        else
            throw InvalidArgument("unknown model term '" + tok + "' in '" + label + "'");
    }
    if (!s.has(Term::treatment)) throw InvalidArgument("model '" + label + "' lacks the treatment term T");
    return s;
}

void ModelSpec::validate() const {
    std::vector<std::string> problems;
    for (double b : {beta.b0, beta.a, beta.atilde, beta.u, beta.utilde})
        if (!std::isfinite(b)) problems.emplace_back("coefficients must be finite");
    if (!terms.has(Term::treatment)) problems.emplace_back("terms must include the treatment");
    if (terms.has(Term::interference) && !psi) problems.emplace_back("interference term requires a treatment weight config (psi)");
    if (terms.has(Term::indirect) && !phi) problems.emplace_back("indirect-confounder term requires a confounder weight config (phi)");
    if (mechanism == ConfounderMechanism::poisson_pair && has_confounder() &&
        (treatment_kind != FieldKind::poisson || confounder_kind != FieldKind::poisson))
        problems.emplace_back("the poisson pair mechanism produces poisson treatment and confounder");
    if (!problems.empty()) {
        std::string msg = "inconsistent model spec:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw InvalidArgument(msg);
    }
    error.validate();
    treatment_cov.validate();
    if (has_confounder()) {
        if (mechanism == ConfounderMechanism::gaussian_pair)
            pair.validate();
        else
            poisson_pair.validate();
    }
}

ModelSpec ModelSpec::m1(double b0, double ba, CovarianceSpec error) {
    ModelSpec s;
    s.terms = {Term::intercept, Term::treatment};
    s.beta = {b0, ba, 0.0, 0.0, 0.0};
    s.error = error;
    return s;
}

ModelSpec ModelSpec::m2(double b0, double ba, double bat, WeightConfig psi, CovarianceSpec error) {
    ModelSpec s = m1(b0, ba, error);
    s.terms = s.terms.with(Term::interference);
    s.beta.atilde = bat;
    s.psi = psi;
    return s;
}

ModelSpec ModelSpec::m3(double b0, double ba, double bat, double bu, WeightConfig psi, CovarianceSpec error) {
    ModelSpec s = m2(b0, ba, bat, psi, error);
    s.terms = s.terms.with(Term::direct);
    s.beta.u = bu;
    return s;
}

ModelSpec ModelSpec::m4(double b0, double ba, double bu, CovarianceSpec error) {
    ModelSpec s = m1(b0, ba, error);
    s.terms = s.terms.with(Term::direct);
    s.beta.u = bu;
    return s;
}

ModelSpec ModelSpec::m5(double b0, double ba, double bu, double but, WeightConfig phi, CovarianceSpec error) {
    ModelSpec s = m4(b0, ba, bu, error);
    s.terms = s.terms.with(Term::indirect);
    s.beta.utilde = but;
    s.phi = phi;
    return s;
}

ModelSpec ModelSpec::m6(double b0, double ba, double bat, double bu, double but, WeightConfig psi,
                        std::optional<WeightConfig> phi, CovarianceSpec error) {
    ModelSpec s = m3(b0, ba, bat, bu, psi, error);
    s.terms = s.terms.with(Term::indirect);
    s.beta.utilde = but;
    s.phi = phi ? *phi : psi;
    return s;
}

bool DataSet::has(Term t) const noexcept {
    switch (t) {
        case Term::intercept:
        case Term::treatment:
            return true;
        case Term::interference:
            return Atilde.has_value();
        case Term::direct:
            return U.has_value();
        case Term::indirect:
            return Utilde.has_value();
    }
    return false;
}

void DataSet::validate() const {
    const auto n = static_cast<Eigen::Index>(loc.size());
    auto check = [&](const Vector& v, const char* name) {
        if (v.size() != n) throw InvalidArgument(std::string("dataset field ") + name + " has the wrong length");
    };
    check(Y, "Y");
    check(A, "A");
    if (Atilde) check(*Atilde, "Atilde");
    if (U) check(*U, "U");
    if (Utilde) check(*Utilde, "Utilde");
    if (eps) check(*eps, "eps");
}

namespace {

Vector draw_error(const CovarianceSpec& error, const DistanceMatrix& d, std::uint64_t seed) {
    const std::size_t n = d.size();
    Engine engine = make_engine(seed);
    if (error.family == CovarianceFamily::identity) {
        const double sd = std::sqrt(error.variance + error.nugget);
        return standard_normals(n, engine) * sd;
    }
    GaussianSampler sampler(Vector::Zero(Eigen::Index(n)), covariance_matrix(d, error));
    return sampler.draw(engine);
}

}  // namespace

DataSet generate(const ModelSpec& spec, const LocationSet& loc, const DistanceMatrix& d, const StreamSeeds& seeds) {
    spec.validate();
    if (d.size() != loc.size()) throw InvalidArgument("distance matrix does not match the location set");
    const std::size_t n = loc.size();

    Engine treat = make_engine(seeds.treatment);
    Engine conf = make_engine(seeds.confounder);

    DataSet out{loc, {}, {}, {}, {}, {}, {}, {}, {}, Provenance{spec, 0}};
    if (!spec.has_confounder()) {
        GaussianSampler sampler(Vector::Zero(Eigen::Index(n)), covariance_matrix(d, spec.treatment_cov));
        Vector latent = sampler.draw(treat);
        out.A = transform_latent(spec.treatment_kind, latent, spec.poisson_intercept, spec.binary_threshold, treat);
    } else if (spec.mechanism == ConfounderMechanism::gaussian_pair) {
        GaussianPairSampler sampler(spec.pair, d);
        FieldPair p = sampler.draw(treat, conf);
        out.A = transform_latent(spec.treatment_kind, p.treatment.values, spec.poisson_intercept,
                                 spec.binary_threshold, treat);
        out.U = transform_latent(spec.confounder_kind, p.confounder.values, spec.poisson_intercept,
                                 spec.binary_threshold, conf);
    } else {
        FieldPair p = sample_poisson_pair(spec.poisson_pair, n, treat, conf);
        out.A = p.treatment.values;
        out.U = p.confounder.values;
    }

    if (spec.psi) {
        out.psi = std::make_shared<const WeightMatrix>(spec.psi->build(d));
        out.Atilde = apply_weights(*out.psi, out.A);
    }
    if (spec.phi && out.U) {
        out.phi = std::make_shared<const WeightMatrix>(spec.phi->build(d));
        out.Utilde = apply_weights(*out.phi, *out.U);
    }

    out.eps = draw_error(spec.error, d, seeds.error);

    const auto& b = spec.beta;
    Vector y = *out.eps;
    if (spec.terms.has(Term::intercept)) y.array() += b.b0;
    y += b.a * out.A;
    if (spec.terms.has(Term::interference)) y += b.atilde * *out.Atilde;
    if (spec.terms.has(Term::direct)) y += b.u * *out.U;
    if (spec.terms.has(Term::indirect)) y += b.utilde * *out.Utilde;
    out.Y = std::move(y);
    return out;
}

DataSet generate(const ModelSpec& spec, const LocationSet& loc, std::uint64_t seed) {
    DataSet out = generate(spec, loc, distance_matrix(loc), StreamSeeds::from(seed));
    out.provenance->seed = seed;
    return out;
}

Design design_matrix(const DataSet& data, TermSet fitted, bool center) {
    if (!fitted.has(Term::treatment)) throw InvalidArgument("design_matrix: the treatment column is mandatory");
    struct Col {
        Term term;
        const char* name;
        const Vector* v;
    };
    std::vector<Col> cols{{Term::treatment, "A", &data.A}};
    auto add = [&](Term t, const char* name, const std::optional<Vector>& v) {
        if (!fitted.has(t)) return;
        if (!v) throw InvalidArgument(std::string("design_matrix: term ") + name + " was never generated");
        cols.push_back({t, name, &*v});
    };
    add(Term::interference, "Atilde", data.Atilde);
    add(Term::direct, "U", data.U);
    add(Term::indirect, "Utilde", data.Utilde);

    // A centred design has no intercept column: it would be identically zero.
    const bool intercept = fitted.has(Term::intercept) && !center;
    const auto n = data.A.size();
    Design out;
    out.X.resize(n, Eigen::Index(cols.size()) + (intercept ? 1 : 0));
    Eigen::Index c = 0;
    if (intercept) {
        out.X.col(c++).setOnes();
        out.names.emplace_back("intercept");
    }
    out.treatment_column = c;
    for (const auto& col : cols) {
        out.X.col(c) = *col.v;
        if (center) out.X.col(c).array() -= col.v->mean();
        out.names.emplace_back(col.name);
        ++c;
    }
    return out;
}

void write_dataset_csv(const DataSet& data, std::ostream& out) {
    out << "x,y,Y,A";
    if (data.Atilde) out << ",Atilde";
    if (data.U) out << ",U";
    if (data.Utilde) out << ",Utilde";
    out << '\n' << std::setprecision(17);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto r = Eigen::Index(i);
        out << data.loc[i].x << ',' << data.loc[i].y << ',' << data.Y(r) << ',' << data.A(r);
        if (data.Atilde) out << ',' << (*data.Atilde)(r);
        if (data.U) out << ',' << (*data.U)(r);
        if (data.Utilde) out << ',' << (*data.Utilde)(r);
        out << '\n';
    }
}

}  // namespace sbias
