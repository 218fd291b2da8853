#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sbias/geo.hpp"
#include "sbias/weights.hpp"

namespace sbias {

enum class Term : unsigned {
    intercept = 1u << 0,
    treatment = 1u << 1,
    interference = 1u << 2,
    direct = 1u << 3,
    indirect = 1u << 4,
};

class TermSet {
public:
    constexpr TermSet() = default;
    constexpr TermSet(std::initializer_list<Term> terms) {
        for (Term t : terms) bits_ |= static_cast<unsigned>(t);
    }
    constexpr bool has(Term t) const noexcept { return bits_ & static_cast<unsigned>(t); }
    constexpr TermSet with(Term t) const noexcept { TermSet s = *this; s.bits_ |= unsigned(t); return s; }
    constexpr TermSet without(Term t) const noexcept { TermSet s = *this; s.bits_ &= ~unsigned(t); return s; }
    constexpr bool contains(TermSet o) const noexcept { return (bits_ & o.bits_) == o.bits_; }
    constexpr unsigned bits() const noexcept { return bits_; }
    constexpr bool operator==(const TermSet&) const = default;

    // "T+I+DSC" style label; the intercept is not shown.
    std::string label() const;
    static TermSet parse(const std::string& label);

private:
    unsigned bits_ = 0;
};

enum class ConfounderMechanism { gaussian_pair, poisson_pair };

struct Coefficients {
    double b0 = 0.0;
    double a = 1.0;
    double atilde = 0.0;
    double u = 0.0;
    double utilde = 0.0;
};

struct ModelSpec {
    TermSet terms{Term::intercept, Term::treatment};
    Coefficients beta;
    CovarianceSpec error = CovarianceSpec::iid(1.0);

    // Treatment without a confounder: latent GP with `treatment_cov`, then
    // transformed according to `treatment_kind`.
    FieldKind treatment_kind = FieldKind::normal;
    CovarianceSpec treatment_cov = CovarianceSpec::exponential(1.0);

    // With a confounder the pair is drawn jointly; the latent pair is then
    // transformed per kind (normal leaves it untouched).
    ConfounderMechanism mechanism = ConfounderMechanism::gaussian_pair;
    GaussianPairSpec pair;
    FieldKind confounder_kind = FieldKind::normal;
    PoissonPairSpec poisson_pair;

    double poisson_intercept = 0.0;
    double binary_threshold = 0.0;

    std::optional<WeightConfig> psi;
    std::optional<WeightConfig> phi;

    bool has_confounder() const noexcept { return terms.has(Term::direct) || terms.has(Term::indirect); }
    void validate() const;

    static ModelSpec m1(double b0, double ba, CovarianceSpec error = CovarianceSpec::iid());
    static ModelSpec m2(double b0, double ba, double bat, WeightConfig psi, CovarianceSpec error = CovarianceSpec::iid());
    static ModelSpec m3(double b0, double ba, double bat, double bu, WeightConfig psi,
                        CovarianceSpec error = CovarianceSpec::iid());
    static ModelSpec m4(double b0, double ba, double bu, CovarianceSpec error = CovarianceSpec::iid());
    static ModelSpec m5(double b0, double ba, double bu, double but, WeightConfig phi,
                        CovarianceSpec error = CovarianceSpec::iid());
    static ModelSpec m6(double b0, double ba, double bat, double bu, double but, WeightConfig psi,
                        std::optional<WeightConfig> phi = std::nullopt, CovarianceSpec error = CovarianceSpec::iid());
};

struct Provenance {
    ModelSpec spec;
    std::uint64_t seed = 0;
};

struct DataSet {
    LocationSet loc;
    Vector Y;
    Vector A;
    std::optional<Vector> Atilde;
    std::optional<Vector> U;
    std::optional<Vector> Utilde;
    std::optional<Vector> eps;
    std::shared_ptr<const WeightMatrix> psi;
    std::shared_ptr<const WeightMatrix> phi;
    std::optional<Provenance> provenance;

    std::size_t size() const noexcept { return static_cast<std::size_t>(Y.size()); }
    bool has(Term t) const noexcept;
    void validate() const;
};

// Per-stream seeds; generate(spec, loc, seed) derives them from one seed.
struct StreamSeeds {
    std::uint64_t treatment;
    std::uint64_t confounder;
    std::uint64_t error;

    static StreamSeeds from(std::uint64_t seed) {
        return {stream_seed(seed, StreamId::treatment), stream_seed(seed, StreamId::confounder),
                stream_seed(seed, StreamId::error)};
    }
};

DataSet generate(const ModelSpec& spec, const LocationSet& loc, std::uint64_t seed);
DataSet generate(const ModelSpec& spec, const LocationSet& loc, const DistanceMatrix& d, const StreamSeeds& seeds);

struct Design {
    Matrix X;
    std::vector<std::string> names;
    Eigen::Index treatment_column = 0;
};

// Columns in the order intercept, A, Atilde, U, Utilde (those requested).
Design design_matrix(const DataSet& data, TermSet fitted, bool center = false);

void write_dataset_csv(const DataSet& data, std::ostream& out);

}  // namespace sbias
