#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "magshell/common.hpp"
#include "magshell/geometry.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace magshell {

/// Wavenumber of the induction operator: k^2 = -i omega / lambda with the
/// principal branch Re k >= 0.  The conjugate branch (decaying kernel) is
/// available behind a flag for sensitivity checks.
struct WaveNumber {
    double omega = 0.0;
    double lambda = 1.0;  // magnetic diffusivity 1/(mu*sigma)
    Complex k = {0.0, 0.0};

    static WaveNumber static_limit() { return WaveNumber{}; }

    static WaveNumber from_omega(double omega, double lambda, bool conjugate_branch = false) {
        if (lambda <= 0) throw ArgumentError("WaveNumber: lambda must be positive");
        if (omega < 0) throw ArgumentError("WaveNumber: omega must be nonnegative");
        WaveNumber w;
        w.omega = omega;
        w.lambda = lambda;
        if (omega == 0.0) {
            w.k = {0.0, 0.0};
        } else {
            w.k = std::sqrt(Complex(0.0, -omega / lambda));
            if (w.k.real() < 0) w.k = -w.k;
            if (conjugate_branch) w.k = std::conj(w.k);
        }
        return w;
    }

    bool is_static() const { return k == Complex(0.0, 0.0); }
};

/// Gamma_k(x) = -exp(ik|x|) / (4 pi |x|); Gamma_0 = -1/(4 pi |x|).
inline Complex gamma_k(const Vec3& x, const WaveNumber& k) {
    double r = x.norm();
    if (r == 0.0) throw SingularityError("gamma_k: evaluation at the singularity");
    if (k.is_static()) return {-1.0 / (4.0 * kPi * r), 0.0};
    return -std::exp(Complex(0, 1) * k.k * r) / (4.0 * kPi * r);
}

namespace panel {

/// Exact integrals over a flat triangle T = (a, b, c):
///   grad = int_T (x - y)/|x - y|^3 dA(y)   (p.v. when x lies in the plane)
///   invr = int_T 1/|x - y| dA(y)
/// The gradient splits into normal solid-angle and in-plane edge-log parts;
/// on the panel plane the solid-angle term takes its principal value zero.
struct Integrals {
    Vec3 grad;
    double invr;
};

inline Integrals integrals(const Vec3& x, const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 n = (b - a).cross(c - a);
    double two_area = n.norm();
    n /= two_area;
    const double scale = std::sqrt(0.5 * two_area);
    const double dn = (x - a).dot(n);
    const Vec3 xpar = x - dn * n;

    double omega = 0.0;
    if (std::abs(dn) > 1e-10 * scale) {
        Vec3 r1 = a - x, r2 = b - x, r3 = c - x;
        double l1 = r1.norm(), l2 = r2.norm(), l3 = r3.norm();
        double num = r1.dot(r2.cross(r3));
        double den = l1 * l2 * l3 + r1.dot(r2) * l3 + r1.dot(r3) * l2 + r2.dot(r3) * l1;
        omega = std::abs(2.0 * std::atan2(num, den));
    }

    Vec3 edge_vec = Vec3::Zero();
    double edge_sl = 0.0;
    const Vec3 centroid = (a + b + c) / 3.0;
    const Vec3 verts[4] = {a, b, c, a};
    for (int e = 0; e < 3; ++e) {
        Vec3 u = verts[e], v = verts[e + 1];
        Vec3 ev = v - u;
        double le = ev.norm();
        Vec3 eh = ev / le;
        Vec3 m = eh.cross(n);
        if (m.dot(0.5 * (u + v) - centroid) < 0) m = -m;
        Vec3 au = u - x;
        double t0 = -au.dot(eh);
        double h2 = std::max(au.squaredNorm() - t0 * t0, 0.0);
        double h = std::sqrt(h2);
        double L;
        if (h < 1e-12 * le) {
            L = (t0 < 0 || t0 > le) ? std::log(std::abs(le - t0) / std::abs(t0)) : 0.0;
        } else {
            L = std::asinh((le - t0) / h) - std::asinh(-t0 / h);
        }
        edge_vec += m * L;
        edge_sl += (u - xpar).dot(m) * L;
    }

    Integrals out;
    out.grad = n * ((dn > 0) ? omega : (dn < 0 ? -omega : 0.0)) + edge_vec;
    if (std::abs(dn) <= 1e-10 * scale) out.grad = edge_vec;
    out.invr = edge_sl - std::abs(dn) * omega;
    return out;
}

}  // namespace panel

namespace detail {

// Smooth remainders of the k-kernels relative to the static ones; bounded as
// r -> 0, so plain panel quadrature integrates them.
inline Complex gamma_remainder(double r, const Complex& k) {
    // Gamma_k - Gamma_0 = -(exp(ikr) - 1)/(4 pi r)
    Complex ikr = Complex(0, 1) * k * r;
    if (std::abs(ikr) < 1e-6) {
        // series to avoid cancellation
        return -(Complex(0, 1) * k) / (4.0 * kPi) * (1.0 + ikr / 2.0 + ikr * ikr / 6.0);
    }
    return -(std::exp(ikr) - 1.0) / (4.0 * kPi * r);
}

// grad_x (Gamma_k - Gamma_0)(d) = d * g(r) with g bounded at r -> 0.
inline Complex grad_gamma_remainder_scale(double r, const Complex& k) {
    // grad Gamma_k = d * exp(ikr)(1 - ikr)/(4 pi r^3); static part d/(4 pi r^3)
    Complex ikr = Complex(0, 1) * k * r;
    Complex num;
    if (std::abs(ikr) < 1e-4) {
        // exp(ikr)(1 - ikr) - 1 = -(ikr)^2/2 - (ikr)^3/3 - ...
        num = -ikr * ikr * (0.5 + ikr / 3.0 + ikr * ikr / 8.0);
    } else {
        num = std::exp(ikr) * (1.0 - ikr) - 1.0;
    }
    return num / (4.0 * kPi * r * r * r);
}

template <class Scalar>
constexpr bool is_complex_v = std::is_same_v<Scalar, Complex>;

template <class Scalar>
inline Scalar to_scalar(const Complex& z) {
    if constexpr (is_complex_v<Scalar>) {
        return z;
    } else {
        return z.real();
    }
}

inline const detail::TriRule& smooth_rule() { return detail::tri_rule(6); }

}  // namespace detail

/// Dense discretization of a layer-potential operator.  Scalar is double for
/// static (k = 0) assembly and std::complex<double> otherwise.
template <class Scalar>
struct OperatorMatrix {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> mat;
    std::uint64_t source_id = 0;
    std::uint64_t target_id = 0;
    std::string kind;
};

using OperatorMatrixD = OperatorMatrix<double>;
using OperatorMatrixC = OperatorMatrix<Complex>;

namespace detail {

// per-panel helper: integral of grad Gamma_k over source panel j seen from x
template <class Scalar>
inline Eigen::Matrix<Scalar, 3, 1> grad_gamma_panel(const Vec3& x, const TriangleMesh& mesh, int j,
                                                    const WaveNumber& k) {
    const Vec3& a = mesh.vertices[mesh.triangles[j][0]];
    const Vec3& b = mesh.vertices[mesh.triangles[j][1]];
    const Vec3& c = mesh.vertices[mesh.triangles[j][2]];
    panel::Integrals pi = panel::integrals(x, a, b, c);
    Eigen::Matrix<Scalar, 3, 1> out = (pi.grad / (4.0 * kPi)).cast<Scalar>();
    if (!k.is_static()) {
        if constexpr (is_complex_v<Scalar>) {
            const auto& rule = smooth_rule();
            CVec3 rem = CVec3::Zero();
            for (std::size_t q = 0; q < rule.w.size(); ++q) {
                Vec3 y = rule.bary[q][0] * a + rule.bary[q][1] * b + rule.bary[q][2] * c;
                Vec3 d = x - y;
                double r = d.norm();
                if (r < 1e-14) continue;  // remainder * d -> 0
                rem += (rule.w[q] * mesh.areas[j]) * grad_gamma_remainder_scale(r, k.k) *
                       d.cast<Complex>();
            }
            out += rem;
        } else {
            throw ArgumentError("nonzero wavenumber requires complex assembly");
        }
    }
    return out;
}

template <class Scalar>
inline Scalar gamma_panel(const Vec3& x, const TriangleMesh& mesh, int j, const WaveNumber& k) {
    const Vec3& a = mesh.vertices[mesh.triangles[j][0]];
    const Vec3& b = mesh.vertices[mesh.triangles[j][1]];
    const Vec3& c = mesh.vertices[mesh.triangles[j][2]];
    panel::Integrals pi = panel::integrals(x, a, b, c);
    Complex val = -pi.invr / (4.0 * kPi);
    if (!k.is_static()) {
        const auto& rule = smooth_rule();
        for (std::size_t q = 0; q < rule.w.size(); ++q) {
            Vec3 y = rule.bary[q][0] * a + rule.bary[q][1] * b + rule.bary[q][2] * c;
            double r = (x - y).norm();
            val += rule.w[q] * mesh.areas[j] * gamma_remainder(r, k.k);
        }
    }
    return to_scalar<Scalar>(val);
}

}  // namespace detail

/// Single-layer operator S: boundary values of int Gamma_k(x-y) phi(y) ds.
template <class Scalar = double>
inline OperatorMatrix<Scalar> assemble_S(const TriangleMesh& mesh, const WaveNumber& k = {}) {
    const int n = mesh.num_triangles();
    OperatorMatrix<Scalar> op;
    op.mat.resize(n, n);
    op.source_id = op.target_id = mesh.id;
    op.kind = "S";
#pragma omp parallel for schedule(dynamic, 8)
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            op.mat(i, j) = detail::gamma_panel<Scalar>(mesh.centroids[i], mesh, j, k);
    return op;
}

/// Double-layer (Neumann-Poincare) operator K: p.v. of the dGamma/dnu_y
/// kernel.  Entries are exact flat-panel integrals (signed solid angles at
/// k = 0), so K[1] = 1/2 holds to machine precision on closed meshes.
template <class Scalar = double>
inline OperatorMatrix<Scalar> assemble_K(const TriangleMesh& mesh, const WaveNumber& k = {}) {
    const int n = mesh.num_triangles();
    OperatorMatrix<Scalar> op;
    op.mat.resize(n, n);
    op.source_id = op.target_id = mesh.id;
    op.kind = "K";
#pragma omp parallel for schedule(dynamic, 8)
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            auto g = detail::grad_gamma_panel<Scalar>(mesh.centroids[i], mesh, j, k);
            // kernel dGamma/dnu_y = -nu_y . (x-y) * psi(r)
            op.mat(i, j) = -mesh.normals[j].cast<Scalar>().dot(g);
        }
    }
    return op;
}

/// Adjoint K*: weighted transpose of K (adjoint in the area-weighted inner
/// product).  The transposed solid-angle entries carry the curvature mass the
/// flat-panel p.v. diagonal misses.
template <class Scalar = double>
inline OperatorMatrix<Scalar> assemble_Kstar(const TriangleMesh& mesh, const WaveNumber& k = {}) {
    OperatorMatrix<Scalar> op = assemble_K<Scalar>(mesh, k);
    const int n = mesh.num_triangles();
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> tr = op.mat.transpose();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) tr(i, j) *= mesh.areas[j] / mesh.areas[i];
    op.mat = std::move(tr);
    op.kind = "K*";
    return op;
}

/// Cross-surface K of the kernel nu_x . grad S_source: maps scalar densities
/// on source to normal-derivative data on a disjoint target.
template <class Scalar = double>
inline OperatorMatrix<Scalar> assemble_K_cross(const TriangleMesh& target,
                                               const TriangleMesh& source,
                                               const WaveNumber& k = {}) {
    if (target.id == source.id)
        throw GeometryError("assemble_K_cross: self case handled by assemble_Kstar");
    const int nt = target.num_triangles(), ns = source.num_triangles();
    OperatorMatrix<Scalar> op;
    op.mat.resize(nt, ns);
    op.source_id = source.id;
    op.target_id = target.id;
    op.kind = "Kx";
#pragma omp parallel for schedule(dynamic, 8)
    for (int i = 0; i < nt; ++i)
        for (int j = 0; j < ns; ++j)
            op.mat(i, j) = target.normals[i].cast<Scalar>().dot(
                detail::grad_gamma_panel<Scalar>(target.centroids[i], source, j, k));
    return op;
}

/// Tangential-space operator carrier: 2x2 blocks in per-triangle orthonormal
/// tangent frames.  frame index 2*t, 2*t+1 of triangle t.
template <class Scalar>
struct TangentialOperator {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> mat;  // (2nt) x (2ns)
    std::uint64_t source_id = 0;
    std::uint64_t target_id = 0;
    std::string kind;
};

/// Pack a tangential vector field (3-vectors at collocation points, projected
/// onto the tangent planes) into frame coefficients.
template <class Scalar>
inline Eigen::Vector<Scalar, Eigen::Dynamic> to_frame(
    const TriangleMesh& mesh, const std::vector<Eigen::Matrix<Scalar, 3, 1>>& field) {
    const int n = mesh.num_triangles();
    Eigen::Vector<Scalar, Eigen::Dynamic> out(2 * n);
    for (int t = 0; t < n; ++t) {
        auto [u, v] = mesh.tangent_frame(t);
        out(2 * t) = u.cast<Scalar>().dot(field[t]);
        out(2 * t + 1) = v.cast<Scalar>().dot(field[t]);
    }
    return out;
}

template <class Scalar>
inline std::vector<Eigen::Matrix<Scalar, 3, 1>> from_frame(
    const TriangleMesh& mesh, const Eigen::Vector<Scalar, Eigen::Dynamic>& coeffs) {
    const int n = mesh.num_triangles();
    std::vector<Eigen::Matrix<Scalar, 3, 1>> out(n);
    for (int t = 0; t < n; ++t) {
        auto [u, v] = mesh.tangent_frame(t);
        out[t] = coeffs(2 * t) * u.cast<Scalar>() + coeffs(2 * t + 1) * v.cast<Scalar>();
    }
    return out;
}

/// Self-surface magnetic double layer M = nu x curl A (principal value), in
/// tangent frames.  Assembled through the triple-product split
///   nu x (g x Phi) = g (nu . Phi) - (nu . g) Phi,
/// routing the K*-type part through the curvature-capturing transpose; on
/// sphere meshes the 2x2 diagonal blocks are set by the exact eigenrelation
/// M[nu x c] = (1/6) nu x c for constant c.
template <class Scalar = double>
inline TangentialOperator<Scalar> assemble_M(const TriangleMesh& mesh, const WaveNumber& k = {}) {
    const int n = mesh.num_triangles();
    TangentialOperator<Scalar> op;
    op.mat.setZero(2 * n, 2 * n);
    op.source_id = op.target_id = mesh.id;
    op.kind = "M";

    OperatorMatrix<Scalar> kstar = assemble_Kstar<Scalar>(mesh, k);

    std::vector<Vec3> t1(n), t2(n);
    for (int t = 0; t < n; ++t) std::tie(t1[t], t2[t]) = mesh.tangent_frame(t);

#pragma omp parallel for schedule(dynamic, 4)
    for (int i = 0; i < n; ++i) {
        const Vec3& nu = mesh.normals[i];
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            auto g = detail::grad_gamma_panel<Scalar>(mesh.centroids[i], mesh, j, k);
            for (int b = 0; b < 2; ++b) {
                const Vec3& tb = (b == 0) ? t1[j] : t2[j];
                // g (nu_i . Phi_j) - Kstar_ij Phi_j
                Eigen::Matrix<Scalar, 3, 1> vec =
                    g * Scalar(nu.dot(tb)) - kstar.mat(i, j) * tb.cast<Scalar>();
                op.mat(2 * i, 2 * j + b) = vec.dot(t1[i].cast<Scalar>());
                op.mat(2 * i + 1, 2 * j + b) = vec.dot(t2[i].cast<Scalar>());
            }
        }
    }

    if (mesh.sphere_radius > 0.0) {
        // exact constant-field eigenrelation M[nu x c] = (1/6) nu x c on
        // spheres pins the 2x2 diagonal blocks
        Eigen::Matrix<Scalar, Eigen::Dynamic, 3> phi(2 * n, 3);
        for (int ci = 0; ci < 3; ++ci) {
            Vec3 c = Vec3::Unit(ci);
            for (int j = 0; j < n; ++j) {
                Vec3 f = mesh.normals[j].cross(c);
                phi(2 * j, ci) = Scalar(t1[j].dot(f));
                phi(2 * j + 1, ci) = Scalar(t2[j].dot(f));
            }
        }
        Eigen::Matrix<Scalar, Eigen::Dynamic, 3> act = op.mat * phi;  // (2n) x 3
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            Eigen::Matrix<double, 6, 4> rows;
            Eigen::Matrix<Scalar, 6, 1> rhs;
            for (int ci = 0; ci < 3; ++ci) {
                Vec3 xc = mesh.normals[i].cross(Vec3::Unit(ci));
                double f0 = t1[i].dot(xc), f1 = t2[i].dot(xc);
                rows.row(2 * ci) << f0, f1, 0, 0;
                rows.row(2 * ci + 1) << 0, 0, f0, f1;
                rhs(2 * ci) = Scalar(f0 / 6.0) - act(2 * i, ci);
                rhs(2 * ci + 1) = Scalar(f1 / 6.0) - act(2 * i + 1, ci);
            }
            Eigen::Matrix4d gram = rows.transpose() * rows;
            Eigen::Matrix<Scalar, 4, 1> proj;
            for (int r = 0; r < 4; ++r) {
                proj(r) = Scalar(0);
                for (int s = 0; s < 6; ++s) proj(r) += Scalar(rows(s, r)) * rhs(s);
            }
            Eigen::Matrix<Scalar, 4, 1> d;
            if constexpr (detail::is_complex_v<Scalar>) {
                Eigen::Vector4d re, im;
                for (int r = 0; r < 4; ++r) {
                    re(r) = proj(r).real();
                    im(r) = proj(r).imag();
                }
                Eigen::LDLT<Eigen::Matrix4d> ldlt(gram);
                Eigen::Vector4d dre = ldlt.solve(re), dim = ldlt.solve(im);
                for (int r = 0; r < 4; ++r) d(r) = Complex(dre(r), dim(r));
            } else {
                d = gram.ldlt().solve(proj);
            }
            op.mat(2 * i, 2 * i) = d(0);
            op.mat(2 * i, 2 * i + 1) = d(1);
            op.mat(2 * i + 1, 2 * i) = d(2);
            op.mat(2 * i + 1, 2 * i + 1) = d(3);
        }
    }
    return op;
}

/// Cross-surface M: nu_x x curl A_source traced on a disjoint target surface.
template <class Scalar = double>
inline TangentialOperator<Scalar> assemble_M_cross(const TriangleMesh& target,
                                                   const TriangleMesh& source,
                                                   const WaveNumber& k = {}) {
    if (target.id == source.id) throw GeometryError("assemble_M_cross: surfaces must be disjoint");
    const int nt = target.num_triangles(), ns = source.num_triangles();
    TangentialOperator<Scalar> op;
    op.mat.resize(2 * nt, 2 * ns);
    op.source_id = source.id;
    op.target_id = target.id;
    op.kind = "Mx";
    std::vector<Vec3> s1(ns), s2(ns);
    for (int t = 0; t < ns; ++t) std::tie(s1[t], s2[t]) = source.tangent_frame(t);
#pragma omp parallel for schedule(dynamic, 8)
    for (int i = 0; i < nt; ++i) {
        auto [u, v] = target.tangent_frame(i);
        const Vec3& nu = target.normals[i];
        for (int j = 0; j < ns; ++j) {
            auto g = detail::grad_gamma_panel<Scalar>(target.centroids[i], source, j, k);
            for (int b = 0; b < 2; ++b) {
                const Vec3& tb = (b == 0) ? s1[j] : s2[j];
                Eigen::Matrix<Scalar, 3, 1> cross_g_tb;
                if constexpr (detail::is_complex_v<Scalar>) {
                    cross_g_tb = g.cross(tb.cast<Scalar>().eval());
                } else {
                    cross_g_tb = g.cross(tb);
                }
                Eigen::Matrix<Scalar, 3, 1> vec;
                vec = nu.cast<Scalar>().cross(cross_g_tb);
                op.mat(2 * i, 2 * j + b) = vec.dot(u.cast<Scalar>());
                op.mat(2 * i + 1, 2 * j + b) = vec.dot(v.cast<Scalar>());
            }
        }
    }
    return op;
}

/// Scalar-source L: nu_x x grad S_source[phi] traced on a disjoint target, in
/// the target's tangent frames; (2nt) x ns.
template <class Scalar = double>
inline TangentialOperator<Scalar> assemble_L_scalar(const TriangleMesh& target,
                                                    const TriangleMesh& source,
                                                    const WaveNumber& k = {}) {
    if (target.id == source.id) throw GeometryError("assemble_L_scalar: surfaces must be disjoint");
    const int nt = target.num_triangles(), ns = source.num_triangles();
    TangentialOperator<Scalar> op;
    op.mat.resize(2 * nt, ns);
    op.source_id = source.id;
    op.target_id = target.id;
    op.kind = "Lx_scalar";
#pragma omp parallel for schedule(dynamic, 8)
    for (int i = 0; i < nt; ++i) {
        auto [u, v] = target.tangent_frame(i);
        const Vec3& nu = target.normals[i];
        for (int j = 0; j < ns; ++j) {
            auto g = detail::grad_gamma_panel<Scalar>(target.centroids[i], source, j, k);
            Eigen::Matrix<Scalar, 3, 1> vec = nu.cast<Scalar>().cross(g);
            op.mat(2 * i, j) = vec.dot(u.cast<Scalar>());
            op.mat(2 * i + 1, j) = vec.dot(v.cast<Scalar>());
        }
    }
    return op;
}

namespace detail {

// Hessian of Gamma_k at separation d (smooth, for disjoint surfaces)
template <class Scalar>
inline Eigen::Matrix<Scalar, 3, 3> hess_gamma(const Vec3& d, const WaveNumber& k) {
    double r = d.norm();
    Vec3 dh = d / r;
    if (k.is_static()) {
        Mat3 h = (Mat3::Identity() - 3.0 * dh * dh.transpose()) / (4.0 * kPi * r * r * r);
        if constexpr (is_complex_v<Scalar>) {
            return h.cast<Complex>();
        } else {
            return h;
        }
    }
    if constexpr (is_complex_v<Scalar>) {
        Complex ikr = Complex(0, 1) * k.k * r;
        Complex e = std::exp(ikr);
        // Gamma'(r)/r and Gamma''(r) for Gamma = -e^{ikr}/(4 pi r)
        Complex gp_over_r = e * (1.0 - ikr) / (4.0 * kPi * r * r * r);
        Complex gpp = -e * (ikr * ikr - 2.0 * ikr + 2.0) / (4.0 * kPi * r * r * r);
        CMat3 h = gpp * (dh * dh.transpose()).cast<Complex>() +
                  gp_over_r * (Mat3::Identity() - dh * dh.transpose()).cast<Complex>();
        return h;
    } else {
        throw ArgumentError("nonzero wavenumber requires complex assembly");
    }
}

}  // namespace detail

/// Vector-source L: nu_x x curl curl A_source[Phi] on a disjoint target.  At
/// k = 0 the off-surface kernel reduces to second derivatives of Gamma_0.
template <class Scalar = double>
inline TangentialOperator<Scalar> assemble_L_vector(const TriangleMesh& target,
                                                    const TriangleMesh& source,
                                                    const WaveNumber& k = {}) {
    if (target.id == source.id) throw GeometryError("assemble_L_vector: surfaces must be disjoint");
    const int nt = target.num_triangles(), ns = source.num_triangles();
    TangentialOperator<Scalar> op;
    op.mat.resize(2 * nt, 2 * ns);
    op.source_id = source.id;
    op.target_id = target.id;
    op.kind = "Lx_vector";
    std::vector<Vec3> s1(ns), s2(ns);
    for (int t = 0; t < ns; ++t) std::tie(s1[t], s2[t]) = source.tangent_frame(t);
    const auto& rule = detail::smooth_rule();
#pragma omp parallel for schedule(dynamic, 8)
    for (int i = 0; i < nt; ++i) {
        auto [u, v] = target.tangent_frame(i);
        const Vec3& nu = target.normals[i];
        for (int j = 0; j < ns; ++j) {
            // curl curl A = grad div A - Delta A; for k != 0, -Delta A = k^2 A
            Eigen::Matrix<Scalar, 3, 3> block = Eigen::Matrix<Scalar, 3, 3>::Zero();
            const Vec3& a = source.vertices[source.triangles[j][0]];
            const Vec3& b = source.vertices[source.triangles[j][1]];
            const Vec3& c = source.vertices[source.triangles[j][2]];
            for (std::size_t q = 0; q < rule.w.size(); ++q) {
                Vec3 y = rule.bary[q][0] * a + rule.bary[q][1] * b + rule.bary[q][2] * c;
                Vec3 d = target.centroids[i] - y;
                double w = rule.w[q] * source.areas[j];
                block += w * detail::hess_gamma<Scalar>(d, k);
                if (!k.is_static()) {
                    if constexpr (detail::is_complex_v<Scalar>) {
                        block += w * (k.k * k.k) * detail::to_scalar<Scalar>(gamma_k(d, k)) *
                                 Eigen::Matrix<Scalar, 3, 3>::Identity();
                    }
                }
            }
            for (int bb = 0; bb < 2; ++bb) {
                const Vec3& tb = (bb == 0) ? s1[j] : s2[j];
                Eigen::Matrix<Scalar, 3, 1> vec = nu.cast<Scalar>().cross(
                    (block * tb.cast<Scalar>()).eval());
                op.mat(2 * i, 2 * j + bb) = vec.dot(u.cast<Scalar>());
                op.mat(2 * i + 1, 2 * j + bb) = vec.dot(v.cast<Scalar>());
            }
        }
    }
    return op;
}

/// N operator: nu_x . curl A_source[Phi]; nt x (2ns) from tangential source
/// frames to scalar normal-trace data.
template <class Scalar = double>
inline OperatorMatrix<Scalar> assemble_N(const TriangleMesh& target, const TriangleMesh& source,
                                         const WaveNumber& k = {}) {
    const int nt = target.num_triangles(), ns = source.num_triangles();
    OperatorMatrix<Scalar> op;
    op.mat.resize(nt, 2 * ns);
    op.source_id = source.id;
    op.target_id = target.id;
    op.kind = "N";
    std::vector<Vec3> s1(ns), s2(ns);
    for (int t = 0; t < ns; ++t) std::tie(s1[t], s2[t]) = source.tangent_frame(t);
#pragma omp parallel for schedule(dynamic, 8)
    for (int i = 0; i < nt; ++i) {
        const Vec3& nu = target.normals[i];
        for (int j = 0; j < ns; ++j) {
            auto g = detail::grad_gamma_panel<Scalar>(target.centroids[i], source, j, k);
            for (int b = 0; b < 2; ++b) {
                const Vec3& tb = (b == 0) ? s1[j] : s2[j];
                Eigen::Matrix<Scalar, 3, 1> cr;
                cr = g.cross(tb.cast<Scalar>().eval());
                op.mat(i, 2 * j + b) = nu.cast<Scalar>().dot(cr);
            }
        }
    }
    return op;
}

/// Dense LU solve with a reciprocal-condition estimate.
template <class Scalar>
struct DenseSolver {
    Eigen::PartialPivLU<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> lu;
    double rcond = 0.0;

    explicit DenseSolver(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& A,
                         double rcond_floor = 1e-12)
        : lu(A) {
        rcond = lu.rcond();
        if (!(rcond > rcond_floor))
            throw ConditioningError("dense solve: matrix numerically singular", rcond);
    }

    template <class Rhs>
    auto solve(const Rhs& b) const {
        return lu.solve(b);
    }
};

template <class Scalar>
inline Eigen::Vector<Scalar, Eigen::Dynamic> solve_dense(
    const OperatorMatrix<Scalar>& A, const Eigen::Vector<Scalar, Eigen::Dynamic>& rhs,
    double rcond_floor = 1e-12) {
    if (A.mat.rows() != A.mat.cols()) throw ArgumentError("solve_dense: matrix must be square");
    DenseSolver<Scalar> solver(A.mat, rcond_floor);
    return solver.solve(rhs);
}

/// Composite P = N_{D, core} (-I/2 + M_core)^{-1}: maps tangential core data
/// to normal traces on the anomaly surface.  Throws ConditioningError when the
/// discretized (-I/2 + M) is near-singular.
template <class Scalar = double>
inline OperatorMatrix<Scalar> assemble_P(const TriangleMesh& anomaly, const TriangleMesh& core,
                                         const TangentialOperator<Scalar>& m_core,
                                         const WaveNumber& k = {}) {
    const int nc = core.num_triangles();
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> sys =
        -0.5 * Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Identity(2 * nc, 2 * nc) +
        m_core.mat;
    Eigen::PartialPivLU<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> lu(sys);
    double rc = lu.rcond();
    if (!(rc > 1e-12))
        throw ConditioningError("assemble_P: (-I/2 + M) discretization near-singular", rc);
    OperatorMatrix<Scalar> nop = assemble_N<Scalar>(anomaly, core, k);
    OperatorMatrix<Scalar> out;
    // P = N * sys^{-1}  via  P^T = sys^{-T} N^T
    Eigen::PartialPivLU<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> lut(
        sys.transpose().eval());
    out.mat = lut.solve(nop.mat.transpose()).transpose();
    out.source_id = core.id;
    out.target_id = anomaly.id;
    out.kind = "P";
    return out;
}

enum class FieldKind { grad_S, curl_A };

/// Field evaluation at exterior points: grad S[phi] or curl A[Phi] by exact
/// flat-panel integration (kernels smooth off-surface, exact panels keep the
/// near-surface evaluations stable).
template <class Scalar = double>
inline std::vector<Eigen::Matrix<Scalar, 3, 1>> eval_field(
    const TriangleMesh& source, const Eigen::Vector<Scalar, Eigen::Dynamic>& density,
    FieldKind kind, const std::vector<Vec3>& points, const WaveNumber& k = {}) {
    const int ns = source.num_triangles();
    std::vector<Vec3> s1(ns), s2(ns);
    if (kind == FieldKind::curl_A) {
        if (density.size() != 2 * ns)
            throw ArgumentError("eval_field: curl_A expects tangential frame coefficients");
        for (int t = 0; t < ns; ++t) std::tie(s1[t], s2[t]) = source.tangent_frame(t);
    } else if (density.size() != ns) {
        throw ArgumentError("eval_field: grad_S expects one scalar per triangle");
    }
    const int np = static_cast<int>(points.size());
    for (int p = 0; p < np; ++p)
        for (int j = 0; j < ns; ++j)
            if ((points[p] - source.centroids[j]).norm() < 1e-13)
                throw SingularityError("eval_field: point on source surface");
    std::vector<Eigen::Matrix<Scalar, 3, 1>> out(points.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (int p = 0; p < np; ++p) {
        Eigen::Matrix<Scalar, 3, 1> acc = Eigen::Matrix<Scalar, 3, 1>::Zero();
        for (int j = 0; j < ns; ++j) {
            auto g = detail::grad_gamma_panel<Scalar>(points[p], source, j, k);
            if (kind == FieldKind::grad_S) {
                acc += g * density(j);
            } else {
                Eigen::Matrix<Scalar, 3, 1> phi =
                    density(2 * j) * s1[j].cast<Scalar>() + density(2 * j + 1) * s2[j].cast<Scalar>();
                acc += g.cross(phi);
            }
        }
        out[p] = acc;
    }
    return out;
}

}  // namespace magshell
