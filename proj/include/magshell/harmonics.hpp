#pragma once

#include <cmath>
#include <vector>

#include "magshell/common.hpp"
#include "magshell/geometry.hpp"

namespace magshell {

struct HarmonicIndex {
    int n = 0;
    int m = 0;
};

namespace sh {

// Associated Legendre P_n^m with Condon-Shortley phase, m >= 0.
inline double legendre_p(int n, int m, double x) {
    double pmm = 1.0;
    if (m > 0) {
        double somx2 = std::sqrt(std::max(0.0, (1.0 - x) * (1.0 + x)));
        double fact = 1.0;
        for (int i = 1; i <= m; ++i) {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
    }
    if (n == m) return pmm;
    double pmmp1 = x * (2 * m + 1) * pmm;
    if (n == m + 1) return pmmp1;
    double pnm = 0.0;
    for (int k = m + 2; k <= n; ++k) {
        pnm = (x * (2 * k - 1) * pmmp1 - (k + m - 1) * pmm) / (k - m);
        pmm = pmmp1;
        pmmp1 = pnm;
    }
    return pnm;
}

inline double y_norm(int n, int m) {
    double logfac = 0.0;
    for (int k = n - m + 1; k <= n + m; ++k) logfac += std::log(static_cast<double>(k));
    return std::sqrt((2 * n + 1) / (4.0 * kPi) * std::exp(-logfac));
}

struct SphAngles {
    double theta, phi, ct, st, cp, sp;
    Vec3 xhat, that, phat;  // radial, theta, phi unit vectors
};

inline SphAngles angles_of(const Vec3& dir) {
    SphAngles a;
    double r = dir.norm();
    if (r == 0.0) throw ArgumentError("spherical angles of zero vector");
    Vec3 u = dir / r;
    a.ct = std::clamp(u.z(), -1.0, 1.0);
    a.theta = std::acos(a.ct);
    a.st = std::sqrt(std::max(1e-300, 1.0 - a.ct * a.ct));
    a.phi = std::atan2(u.y(), u.x());
    a.cp = std::cos(a.phi);
    a.sp = std::sin(a.phi);
    a.xhat = u;
    a.that = Vec3(a.ct * a.cp, a.ct * a.sp, -a.st);
    a.phat = Vec3(-a.sp, a.cp, 0.0);
    return a;
}

// Y_n^m at precomputed angles; complex orthonormal convention.
inline Complex eval_y(int n, int m, const SphAngles& a) {
    if (std::abs(m) > n) return {0.0, 0.0};
    int am = std::abs(m);
    double val = y_norm(n, am) * legendre_p(n, am, a.ct);
    Complex e = std::polar(1.0, am * a.phi);
    if (m >= 0) return val * e;
    double sign = (am % 2 == 0) ? 1.0 : -1.0;
    return sign * val * std::conj(e);
}

// dY/dtheta = m cot(theta) Y_n^m + sqrt((n-m)(n+m+1)) e^{-i phi} Y_n^{m+1}
inline Complex eval_dy_dtheta(int n, int m, const SphAngles& a) {
    if (std::abs(m) > n) return {0.0, 0.0};
    Complex t1 = (m == 0) ? Complex(0, 0)
                          : Complex(m) * (a.ct / a.st) * eval_y(n, m, a);
    Complex t2 = (m + 1 > n) ? Complex(0, 0)
                             : std::sqrt(double((n - m) * (n + m + 1))) *
                                   std::polar(1.0, -a.phi) * eval_y(n, m + 1, a);
    return t1 + t2;
}

inline Complex eval_d2y_dtheta2(int n, int m, const SphAngles& a) {
    if (std::abs(m) > n) return {0.0, 0.0};
    Complex y = eval_y(n, m, a);
    Complex yt = eval_dy_dtheta(n, m, a);
    Complex t1 = (m == 0) ? Complex(0, 0)
                          : Complex(m) * (-y / (a.st * a.st) + (a.ct / a.st) * yt);
    Complex t2 = (m + 1 > n) ? Complex(0, 0)
                             : std::sqrt(double((n - m) * (n + m + 1))) *
                                   std::polar(1.0, -a.phi) * eval_dy_dtheta(n, m + 1, a);
    return t1 + t2;
}

// surface gradient of Y_n^m on the unit sphere, Cartesian components
inline CVec3 eval_grad_y(int n, int m, const SphAngles& a) {
    Complex yt = eval_dy_dtheta(n, m, a);
    Complex yp_over_st = Complex(0, m) * eval_y(n, m, a) / a.st;
    return yt * a.that.cast<Complex>() + yp_over_st * a.phat.cast<Complex>();
}

}  // namespace sh

/// Orthonormal complex spherical harmonic Y_n^m(dir), Condon-Shortley phase.
inline Complex eval_Y(const HarmonicIndex& idx, const Vec3& dir) {
    if (std::abs(idx.m) > idx.n) throw ArgumentError("eval_Y: |m| must be <= n");
    if (std::abs(dir.norm() - 1.0) > 1e-10) throw ArgumentError("eval_Y: direction must be unit");
    return sh::eval_y(idx.n, idx.m, sh::angles_of(dir));
}

struct NQTValue {
    CVec3 N;  // N_{n+1}^m
    CVec3 Q;  // Q_{n-1}^m (zero for n = 0)
    CVec3 T;  // T_n^m     (zero for n = 0)
};

/// Vector spherical harmonics built from Y_n^m:
///   N_{n+1}^m = (n+1) Y x^ - grad_S Y,  Q_{n-1}^m = grad_S Y + n Y x^,
///   T_n^m = grad_S Y x x^.
inline NQTValue eval_NQT(const HarmonicIndex& idx, const Vec3& dir) {
    const int n = idx.n, m = idx.m;
    if (std::abs(m) > n) throw ArgumentError("eval_NQT: |m| must be <= n");
    auto a = sh::angles_of(dir);
    Complex y = sh::eval_y(n, m, a);
    CVec3 g = (n == 0) ? CVec3::Zero() : sh::eval_grad_y(n, m, a);
    CVec3 xh = a.xhat.cast<Complex>();
    NQTValue out;
    out.N = double(n + 1) * y * xh - g;
    if (n == 0) {
        out.Q = CVec3::Zero();
        out.T = CVec3::Zero();
    } else {
        out.Q = g + double(n) * y * xh;
        out.T = g.cross(xh);
    }
    return out;
}

namespace sh {

// fixed quadrature grid used by the coefficient integrals
struct UnitSphereGrid {
    std::vector<SphAngles> nodes;
    std::vector<double> weights;

    static const UnitSphereGrid& get() {
        static UnitSphereGrid g = make(28, 57);
        return g;
    }

    static UnitSphereGrid make(int n_theta, int n_phi) {
        PointSet ps = sphere_gauss_grid(1.0, n_theta, n_phi);
        UnitSphereGrid g;
        g.nodes.reserve(ps.size());
        g.weights = ps.weights;
        for (const auto& p : ps.points) g.nodes.push_back(angles_of(p));
        return g;
    }
};

}  // namespace sh

/// Coupling coefficients a, b:
///   a = int_S conj(Y_{n'}^{m'}) grad_S Y_n^m ds,  b = int_S conj(Y_{n'}^{m'}) Y_n^m x^ ds,
/// computed by spectral-accuracy sphere quadrature.
inline std::pair<CVec3, CVec3> coeff_ab(const HarmonicIndex& idxp, const HarmonicIndex& idx) {
    const auto& grid = sh::UnitSphereGrid::get();
    CVec3 a = CVec3::Zero(), b = CVec3::Zero();
    for (std::size_t q = 0; q < grid.nodes.size(); ++q) {
        const auto& node = grid.nodes[q];
        Complex ypc = std::conj(sh::eval_y(idxp.n, idxp.m, node));
        if (idx.n >= 1) a += grid.weights[q] * ypc * sh::eval_grad_y(idx.n, idx.m, node);
        b += grid.weights[q] * (ypc * sh::eval_y(idx.n, idx.m, node)) * node.xhat.cast<Complex>();
    }
    return {a, b};
}

struct CDCoeffs {
    CVec3 c = CVec3::Zero();
    CVec3 d = CVec3::Zero();
    bool d_defined = true;  // false when n' = 0 (d-formula denominator vanishes)
};

/// Closed-form c, d coefficients assembled from a, b.  Zero by selection rules
/// unless n' is n-1 or n+1 and |m'-m| <= 1.
inline CDCoeffs coeff_cd(const HarmonicIndex& idxp, const HarmonicIndex& idx) {
    const int np = idxp.n, n = idx.n;
    CDCoeffs out;
    if (np != n - 1 && np != n + 1) {
        out.d_defined = np != 0;
        return out;
    }
    auto [a_pn, b_pn] = coeff_ab(idxp, idx);
    auto [a_np, b_np] = coeff_ab(idx, idxp);
    (void)b_np;
    double c1 = double(np + 1) * double(np + n + 1);
    out.c = (c1 * a_pn - c1 * double(n + 2) * b_pn + a_np.conjugate()) / (double(np + 1) * double(2 * np + 1));
    if (np == 0) {
        out.d_defined = false;
    } else {
        double d1 = double(np) * double(n - np);
        out.d = (d1 * a_pn - d1 * double(n + 2) * b_pn - a_np.conjugate()) / (double(np) * double(2 * np + 1));
    }
    return out;
}

/// Angular block of the second-derivative expansion:
///   A_n^m = (n+1)(x^ grad_S Y^T + Y (I - x^ x^T)) - grad_S^2 Y - (n+2) N_{n+1}^m x^T
/// with (grad_S^2 Y) xi = grad_S(grad_S Y . xi).  Direct pointwise evaluation.
inline CMat3 hess_block_direct(const HarmonicIndex& idx, const Vec3& dir) {
    const int n = idx.n, m = idx.m;
    auto a = sh::angles_of(dir);
    Complex y = sh::eval_y(n, m, a);
    Complex yt = (n == 0) ? Complex(0) : sh::eval_dy_dtheta(n, m, a);
    Complex ytt = (n == 0) ? Complex(0) : sh::eval_d2y_dtheta2(n, m, a);
    Complex im(0, m);
    Complex fp = im * y / a.st;  // (1/sin) dY/dphi
    CVec3 xh = a.xhat.cast<Complex>(), th = a.that.cast<Complex>(), ph = a.phat.cast<Complex>();
    CVec3 g = CVec3::Zero();
    if (n > 0) g = yt * th + fp * ph;
    CVec3 Nv = double(n + 1) * y * xh - g;

    // all products here are bilinear (plain transpose, no conjugation)
    auto bdot = [](const CVec3& u, const CVec3& v) {
        return u(0) * v(0) + u(1) * v(1) + u(2) * v(2);
    };
    CMat3 A = CMat3::Zero();
    for (int j = 0; j < 3; ++j) {
        CVec3 xi = CVec3::Zero();
        xi(j) = 1.0;
        Complex txi = bdot(th, xi), pxi = bdot(ph, xi), xxi = bdot(xh, xi);
        // scalar f = grad_S Y . xi = yt*(th.xi) + fp*(ph.xi)
        // d theta: d(th)/dtheta = -xh, d(ph)/dtheta = 0, d(fp)/dtheta = im(yt/st - y ct/st^2)
        Complex dfp_dth = im * (yt / a.st - y * a.ct / (a.st * a.st));
        Complex df_dtheta = ytt * txi + yt * (-xxi) + dfp_dth * pxi;
        // d phi: dY*/dphi = i m *, d(th)/dphi = ct*ph, d(ph)/dphi = -(st*xh + ct*th)
        Complex df_dphi = im * yt * txi + yt * (a.ct * pxi) + im * fp * pxi + fp * (-(a.st * xxi + a.ct * txi));
        CVec3 gradS_f = df_dtheta * th + (df_dphi / a.st) * ph;
        CVec3 col = double(n + 1) * (xh * bdot(g, xi) + y * (xi - xh * xxi)) - gradS_f -
                    double(n + 2) * Nv * xxi;
        A.col(j) = col;
    }
    return A;
}

/// The same block reassembled from its vector-harmonic decomposition: N and Q
/// parts from the closed-form c, d coefficients, plus the toroidal part
/// projected by quadrature (the closed forms cover only the N/Q channels).
inline CMat3 hess_block_from_cd(const HarmonicIndex& idx, const Vec3& dir, bool include_toroidal = true) {
    const int n = idx.n, m = idx.m;
    CMat3 A = CMat3::Zero();
    for (int mp = m - 1; mp <= m + 1; ++mp) {
        for (int np : {n - 1, n + 1}) {
            if (np < 0 || std::abs(mp) > np) continue;
            CDCoeffs cd = coeff_cd({np, mp}, {n, m});
            NQTValue v = eval_NQT({np, mp}, dir);
            A += v.N * cd.c.transpose();
            if (cd.d_defined && np >= 1) A += v.Q * cd.d.transpose();
        }
    }
    if (include_toroidal) {
        // T-channel coefficients by quadrature projection of the direct block
        const auto& grid = sh::UnitSphereGrid::get();
        for (int mp = m - 1; mp <= m + 1; ++mp) {
            if (std::abs(mp) > n || n < 1) continue;
            CVec3 tau = CVec3::Zero();
            for (std::size_t q = 0; q < grid.nodes.size(); ++q) {
                const auto& node = grid.nodes[q];
                CVec3 g = sh::eval_grad_y(n, mp, node);
                CVec3 tvec = g.cross(node.xhat.cast<Complex>());
                CMat3 Aq = hess_block_direct(idx, node.xhat);
                tau += grid.weights[q] * (tvec.conjugate().transpose() * Aq).transpose();
            }
            tau /= double(n) * double(n + 1);
            NQTValue v = eval_NQT({n, mp}, dir);
            A += v.T * tau.transpose();
        }
    }
    return A;
}

/// Truncated expansion of grad Gamma_0(x - z) in vector harmonics of x^,
/// valid for |z| < |x|; converges geometrically at rate |z|/|x|.
inline Vec3 grad_gamma_series(const Vec3& x, const Vec3& z, int cap) {
    const double rx = x.norm(), rz = z.norm();
    if (rz >= rx) throw ArgumentError("grad_gamma_series: requires |z| < |x|");
    Vec3 xh = x / rx;
    Vec3 zh = rz > 0 ? Vec3(z / rz) : Vec3(0, 0, 1);
    auto az = sh::angles_of(zh);
    CVec3 total = CVec3::Zero();
    double rpow = 1.0 / (rx * rx);  // |z|^n / |x|^{n+2}
    for (int n = 0; n <= cap; ++n) {
        for (int m = -n; m <= n; ++m) {
            Complex yz = std::conj(sh::eval_y(n, m, az));
            if (std::abs(yz) < 1e-300) continue;
            NQTValue v = eval_NQT({n, m}, xh);
            total += v.N * yz * (rpow / double(2 * n + 1));
        }
        rpow *= rz / rx;
        if (rz == 0.0) break;
    }
    return total.real();
}

/// Truncated expansion of the Hessian of Gamma_0(x - z):
///   hess Gamma_0(x-z) = - sum_{nu>=1} sum_mu N_{nu+1}^mu(x^) conj(Q_{nu-1}^mu(z^))^T
///                         |z|^{nu-1} / ((2 nu + 1) |x|^{nu+2}),
/// the term nu = n+1 carrying |z|^n.  Pure poloidal form; converges to the
/// true Hessian at geometric rate |z|/|x|.
inline Mat3 hessian_gamma_series(const Vec3& x, const Vec3& z, int cap) {
    const double rx = x.norm(), rz = z.norm();
    if (rz >= rx) throw ArgumentError("hessian_gamma_series: requires |z| < |x|");
    Vec3 xh = x / rx;
    Vec3 zh = rz > 0 ? Vec3(z / rz) : Vec3(0, 0, 1);
    CMat3 total = CMat3::Zero();
    double rpow = 1.0 / (rx * rx * rx);  // |z|^{nu-1} / |x|^{nu+2}
    for (int nu = 1; nu <= cap + 1; ++nu) {
        for (int mu = -nu; mu <= nu; ++mu) {
            NQTValue vz = eval_NQT({nu, mu}, zh);
            NQTValue vx = eval_NQT({nu, mu}, xh);
            total -= vx.N * vz.Q.conjugate().transpose() * (rpow / double(2 * nu + 1));
        }
        rpow *= rz / rx;
        if (rz == 0.0) break;
    }
    return total.real();
}

struct D0Q0 {
    CMat3 D0;  // rows: -(1/6) a_{0,1}^{0,m'}, m' = -1, 0, 1
    /// Q0(x^): rows are Q_0^{m'}(x^), m' = -1, 0, 1
    CMat3 Q0(const Vec3& dir) const {
        CMat3 out;
        for (int i = 0; i < 3; ++i) out.row(i) = eval_NQT({1, i - 1}, dir).Q.transpose();
        return out;
    }
};

inline D0Q0 build_D0_Q0() {
    D0Q0 r;
    for (int i = 0; i < 3; ++i) {
        auto [a, b] = coeff_ab({0, 0}, {1, i - 1});
        (void)b;
        r.D0.row(i) = (-a / 6.0).transpose();
    }
    return r;
}

// ---------------------------------------------------------------------------
// Regularized vector-harmonic fitting (data continuation machinery)
// ---------------------------------------------------------------------------

enum class VHFamily { N, Q, T };

struct VHBasisEntry {
    VHFamily family;
    int n;  // degree of the generating Y_n^m
    int m;
};

/// Enumerates the fitting basis up to degree cap: N_{n+1}^m for n = 0..cap,
/// Q_{n-1}^m and T_n^m for n = 1..cap.
inline std::vector<VHBasisEntry> vh_basis(int cap, bool poloidal_only = false) {
    std::vector<VHBasisEntry> basis;
    for (int n = 0; n <= cap; ++n)
        for (int m = -n; m <= n; ++m) basis.push_back({VHFamily::N, n, m});
    if (!poloidal_only) {
        for (int n = 1; n <= cap; ++n)
            for (int m = -n; m <= n; ++m) {
                basis.push_back({VHFamily::Q, n, m});
                basis.push_back({VHFamily::T, n, m});
            }
    }
    return basis;
}

inline CVec3 vh_eval(const VHBasisEntry& e, const Vec3& dir) {
    NQTValue v = eval_NQT({e.n, e.m}, dir);
    switch (e.family) {
        case VHFamily::N: return v.N;
        case VHFamily::Q: return v.Q;
        default: return v.T;
    }
}

/// Coefficients of a vector field on the sphere of stated radius in the
/// {N, Q, T} basis (angular basis at fixed radius; no radial extrapolation).
struct HarmonicCoeffs {
    std::vector<VHBasisEntry> basis;
    Eigen::VectorXcd coeffs;
    double radius = 0.0;
    double residual = 0.0;  // rms misfit at the sample points
    double rcond = 1.0;     // conditioning of the regularized normal matrix

    CVec3 evaluate(const Vec3& dir) const {
        CVec3 out = CVec3::Zero();
        for (std::size_t k = 0; k < basis.size(); ++k) out += coeffs(k) * vh_eval(basis[k], dir);
        return out;
    }
    Vec3 evaluate_real(const Vec3& dir) const { return evaluate(dir).real(); }

    Complex coefficient(VHFamily fam, int n, int m) const {
        for (std::size_t k = 0; k < basis.size(); ++k)
            if (basis[k].family == fam && basis[k].n == n && basis[k].m == m) return coeffs(k);
        return {0.0, 0.0};
    }
};

/// Ridge-regularized least-squares fit of sampled field values in the vector
/// harmonic basis.  samples[i] corresponds to points[i]; points need not
/// cover the sphere (cap fitting), which is exactly where the ridge matters.
inline HarmonicCoeffs fit_harmonics(const std::vector<Vec3>& points,
                                    const std::vector<CVec3>& samples, int cap, double ridge,
                                    bool poloidal_only = false) {
    if (points.size() != samples.size()) throw ArgumentError("fit_harmonics: size mismatch");
    if (points.empty()) throw ArgumentError("fit_harmonics: no samples");
    HarmonicCoeffs out;
    out.basis = vh_basis(cap, poloidal_only);
    const int K = static_cast<int>(out.basis.size());
    const int rows = 3 * static_cast<int>(points.size());
    if (ridge == 0.0 && rows < K)
        throw ConditioningError("fit_harmonics: fewer samples than coefficients with zero ridge",
                                0.0);
    out.radius = points[0].norm();

    Eigen::MatrixXcd A(rows, K);
    Eigen::VectorXcd b(rows);
    for (std::size_t i = 0; i < points.size(); ++i) {
        Vec3 dir = points[i].normalized();
        for (int k = 0; k < K; ++k) A.block<3, 1>(3 * i, k) = vh_eval(out.basis[k], dir);
        b.segment<3>(3 * i) = samples[i];
    }
    Eigen::MatrixXcd G = A.adjoint() * A;
    G.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXcd> ldlt(G);
    Eigen::VectorXcd c = ldlt.solve(A.adjoint() * b);
    double dmax = G.diagonal().real().maxCoeff();
    double dmin = ldlt.vectorD().real().minCoeff();
    out.rcond = dmax > 0 ? dmin / dmax : 0.0;
    if (!(dmin > 0) || out.rcond < 1e-14)
        throw ConditioningError("fit_harmonics: rank-deficient design; increase ridge or lower cap",
                                out.rcond);
    out.coeffs = c;
    out.residual = std::sqrt((A * c - b).squaredNorm() / rows);
    return out;
}

inline HarmonicCoeffs fit_harmonics(const PointSet& ps, const std::vector<Vec3>& samples, int cap,
                                    double ridge, bool poloidal_only = false) {
    std::vector<CVec3> cs(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) cs[i] = samples[i].cast<Complex>();
    return fit_harmonics(ps.points, cs, cap, ridge, poloidal_only);
}

}  // namespace magshell
