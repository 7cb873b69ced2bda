#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace fdpm {

// Base class for everything the library throws on purpose.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Evaluation point coincides with an eigenvalue (Cauchy-kernel pole).
class pole_error : public error {
public:
    using error::error;
};

// Argument outside the mathematical domain of an operation.
class domain_error : public error {
public:
    using error::error;
};

// Structurally invalid parameters (wrong arity, repeated atoms, ...).
class parameter_error : public error {
public:
    using error::error;
};

// Infeasible configuration (contour geometry, ladder sizes, ...).
class config_error : public error {
public:
    using error::error;
};

// Moment constraints left no feasible coefficient direction.
class constraint_error : public error {
public:
    using error::error;
};

// Physical-root anchoring failed at the requested point.
class anchor_error : public error {
public:
    using error::error;
};

// Path or flow continuation could not resolve a segment.  Carries the
// failing location so callers can report where the geometry got stiff.
class stiffness_error : public error {
public:
    stiffness_error(const std::string& msg, std::complex<double> where, double tau = 1.0)
        : error(msg), where_(where), tau_(tau) {}
    std::complex<double> where() const { return where_; }
    double tau() const { return tau_; }

private:
    std::complex<double> where_;
    double tau_;
};

// Continuation ran into a point with vanishing sheet separation.
class branch_point_collision_error : public error {
public:
    using error::error;
};

// All polynomial coefficients vanish at the query point.
class degenerate_point_error : public error {
public:
    using error::error;
};

// The algebraic relation admits no branch with Stieltjes-compatible
// far-field behaviour.
class no_stieltjes_branch_error : public error {
public:
    using error::error;
};

// The far-field expansion is degenerate (multiple root of the leading-edge
// polynomial).
class degenerate_expansion_error : public error {
public:
    using error::error;
};

// Input fails a structural validation check (e.g. matrix not symmetric).
class validation_error : public error {
public:
    using error::error;
};

// Requested job exceeds a configured resource cap.
class resource_error : public error {
public:
    using error::error;
};

// Atom residue requested at a higher-order root of the leading coefficient.
class higher_order_root_error : public error {
public:
    using error::error;
};

// Velocity system singular: the tracked point sits (numerically) on a cusp.
class cusp_proximity_error : public error {
public:
    using error::error;
};

// Edge with vanishing Hilbert transform; the initial velocity is undefined.
class degenerate_edge_error : public error {
public:
    using error::error;
};

}  // namespace fdpm
