#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "magshell/harmonics.hpp"
#include "magshell/potentials.hpp"

using namespace magshell;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Eigen::VectorXd restrict_Y(const TriangleMesh& mesh, int n, int m) {
    Eigen::VectorXd v(mesh.num_triangles());
    for (int t = 0; t < mesh.num_triangles(); ++t)
        v(t) = eval_Y({n, m}, (mesh.centroids[t] - mesh.interior_point).normalized()).real();
    return v;
}

double rayleigh(const TriangleMesh& mesh, const Eigen::MatrixXd& op, const Eigen::VectorXd& v) {
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(mesh.areas.data(), mesh.num_triangles());
    return (v.array() * w.array() * (op * v).array()).sum() / (v.array() * w.array() * v.array()).sum();
}

Vec3 dipole_field(const Vec3& x, const Vec3& m, const Vec3& z = Vec3::Zero()) {
    Vec3 d = x - z;
    double r = d.norm();
    Vec3 dh = d / r;
    return ((3.0 * dh * dh.transpose() - Mat3::Identity()) * m) / (4.0 * kPi * r * r * r);
}

double op_norm(const Eigen::MatrixXcd& a) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(a);
    return svd.singularValues()(0);
}

}  // namespace

TEST_CASE("wavenumber branch") {
    WaveNumber k = WaveNumber::from_omega(1.0, 1.0);
    CHECK_THAT(std::abs(k.k * k.k - Complex(0, -1)), WithinAbs(0.0, 1e-14));
    CHECK(k.k.real() >= 0.0);
    CHECK(k.k.imag() <= 0.0);  // principal branch has growing kernel
    WaveNumber kc = WaveNumber::from_omega(1.0, 1.0, true);
    CHECK(kc.k.imag() >= 0.0);
    CHECK(WaveNumber::from_omega(0.0, 2.0).is_static());
    CHECK_THROWS_AS(WaveNumber::from_omega(1.0, -1.0), ArgumentError);
}

TEST_CASE("gamma_k values") {
    CHECK_THAT(gamma_k(Vec3(0, 0, 1), {}).real(), WithinAbs(-1.0 / (4.0 * kPi), 1e-15));
    CHECK_THAT(gamma_k(Vec3(0, 2, 0), {}).real(), WithinAbs(-0.0397887, 1e-6));
    // omega = 1, lambda = 1: k = (1 - i)/sqrt(2), |x| = 1
    WaveNumber k = WaveNumber::from_omega(1.0, 1.0);
    Complex g = gamma_k(Vec3(1, 0, 0), k);
    Complex expected = -std::exp(Complex(0, 1) * k.k) / (4.0 * kPi);
    CHECK_THAT(std::abs(g - expected), WithinAbs(0.0, 1e-15));
    CHECK_THAT(g.real(), WithinAbs(-0.1227, 2e-4));
    CHECK_THAT(g.imag(), WithinAbs(-0.1049, 2e-4));
    CHECK_THROWS_AS(gamma_k(Vec3::Zero(), {}), SingularityError);
}

TEST_CASE("single layer of the uniform density on the unit sphere") {
    // S[1] = -1 on the unit sphere in the Gamma_0 = -1/(4 pi |x|) convention;
    // refinement study
    double err2, err3;
    for (int lvl : {2, 3}) {
        TriangleMesh mesh = make_icosphere(lvl, 1.0, Vec3::Zero());
        auto s = assemble_S(mesh);
        Eigen::VectorXd one = Eigen::VectorXd::Ones(mesh.num_triangles());
        Eigen::VectorXd vals = s.mat * one;
        double err = (vals.array() + 1.0).abs().maxCoeff();
        (lvl == 2 ? err2 : err3) = err;
    }
    CHECK(err3 < 0.005);
    CHECK(err2 / err3 > 1.8);  // converging under refinement

    // kernel symmetry at k = 0
    TriangleMesh mesh = make_icosphere(2, 1.0, Vec3::Zero());
    auto s = assemble_S(mesh);
    double asym = (s.mat - s.mat.transpose()).norm() / s.mat.norm();
    CHECK(asym < 1e-2);
}

TEST_CASE("S wavenumber perturbation is first order") {
    TriangleMesh mesh = make_icosphere(1, 1.0, Vec3::Zero());
    auto s0 = assemble_S<Complex>(mesh, {});
    std::vector<double> ks = {1e-3, 1e-2};
    std::vector<double> diffs;
    for (double kv : ks) {
        WaveNumber k = WaveNumber::from_omega(kv * kv, 1.0);  // |k| ~ kv
        auto sk = assemble_S<Complex>(mesh, k);
        diffs.push_back(op_norm(sk.mat - s0.mat));
    }
    double slope = std::log(diffs[1] / diffs[0]) / std::log(ks[1] / ks[0]);
    CHECK(slope > 0.7);
    CHECK(slope < 1.3);
}

TEST_CASE("NP spectrum on the unit sphere") {
    TriangleMesh mesh = make_icosphere(3, 1.0, Vec3::Zero());
    auto ks = assemble_Kstar(mesh);

    double q1 = rayleigh(mesh, ks.mat, restrict_Y(mesh, 1, 0));
    CHECK_THAT(q1, WithinRel(1.0 / 6.0, 0.02));
    double q2 = rayleigh(mesh, ks.mat, restrict_Y(mesh, 2, 0));
    CHECK_THAT(q2, WithinRel(1.0 / 10.0, 0.03));

    // trace-formula oracle: finite-difference normal derivatives of S[phi]
    // from both sides average to K*[phi]
    Eigen::VectorXd phi = restrict_Y(mesh, 1, 0);
    Eigen::VectorXd kphi = ks.mat * phi;
    double h = 0.05;
    std::vector<Vec3> pts_out, pts_in;
    for (int t = 0; t < 40; ++t) {
        pts_out.push_back(mesh.centroids[t] + h * mesh.normals[t]);
        pts_in.push_back(mesh.centroids[t] - h * mesh.normals[t]);
    }
    auto g_out = eval_field(mesh, phi, FieldKind::grad_S, pts_out);
    auto g_in = eval_field(mesh, phi, FieldKind::grad_S, pts_in);
    double worst = 0;
    for (int t = 0; t < 40; ++t) {
        double dn_out = g_out[t].dot(mesh.normals[t]);
        double dn_in = g_in[t].dot(mesh.normals[t]);
        // jump: outer minus inner = phi;  average = K*[phi]
        worst = std::max(worst, std::abs(dn_out - dn_in - phi(t)) / std::abs(phi(t)));
        CHECK_THAT(0.5 * (dn_out + dn_in), WithinAbs(kphi(t), 0.05 * phi.cwiseAbs().maxCoeff()));
    }
    CHECK(worst < 0.05);
}

TEST_CASE("adjoint consistency: transposed kernel applied to 1 gives 1/2") {
    TriangleMesh mesh = make_icosphere(2, 1.0, Vec3::Zero());
    auto ks = assemble_Kstar(mesh);
    // K from K* by the weighted transpose
    Eigen::MatrixXd K = ks.mat.transpose();
    for (int i = 0; i < K.rows(); ++i)
        for (int j = 0; j < K.cols(); ++j) K(i, j) *= mesh.areas[j] / mesh.areas[i];
    Eigen::VectorXd k1 = K * Eigen::VectorXd::Ones(mesh.num_triangles());
    CHECK((k1.array() - 0.5).abs().maxCoeff() / 0.5 < 0.01);
}

TEST_CASE("Kstar wavenumber perturbation is second order") {
    TriangleMesh mesh = make_icosphere(1, 1.0, Vec3::Zero());
    auto k0 = assemble_Kstar<Complex>(mesh, {});
    std::vector<double> k2s = {1e-4, 1e-3};
    std::vector<double> diffs;
    for (double k2 : k2s) {
        WaveNumber k = WaveNumber::from_omega(k2, 1.0);  // |k|^2 = k2
        auto kk = assemble_Kstar<Complex>(mesh, k);
        diffs.push_back(op_norm(kk.mat - k0.mat));
    }
    double slope = std::log(diffs[1] / diffs[0]) / std::log(k2s[1] / k2s[0]);
    CHECK(slope > 0.7);
    CHECK(slope < 1.3);
}

TEST_CASE("M self: jump relation through the solve") {
    // (-I/2 + M) phi = nu x H for an interior dipole reproduces H outside
    TriangleMesh mesh = make_icosphere(3, 1.0, Vec3::Zero());
    auto m = assemble_M(mesh);
    const int n = mesh.num_triangles();
    Eigen::MatrixXd sys = -0.5 * Eigen::MatrixXd::Identity(2 * n, 2 * n) + m.mat;
    Vec3 mom(0.2, -0.4, 1.0);
    std::vector<Vec3> trace(n);
    for (int t = 0; t < n; ++t) trace[t] = mesh.normals[t].cross(dipole_field(mesh.centroids[t], mom));
    Eigen::VectorXd rhs = to_frame<double>(mesh, trace);
    Eigen::VectorXd phi = Eigen::PartialPivLU<Eigen::MatrixXd>(sys).solve(rhs);

    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(1.5, 4.0);
    std::vector<Vec3> pts;
    for (int i = 0; i < 50; ++i) {
        Vec3 u(nd(rng), nd(rng), nd(rng));
        pts.push_back(ud(rng) * u.normalized());
    }
    auto rec = eval_field(mesh, phi, FieldKind::curl_A, pts);
    double worst = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Vec3 truth = dipole_field(pts[i], mom);
        worst = std::max(worst, (rec[i] - truth).norm() / truth.norm());
    }
    CHECK(worst < 0.02);
}

TEST_CASE("M cross-surface between separated spheres") {
    TriangleMesh a = make_icosphere(1, 1.0, Vec3::Zero());
    TriangleMesh b = make_icosphere(1, 1.0, Vec3(5, 0, 0));
    auto m = assemble_M_cross(a, b);
    // entries bounded by C / dist^2, no singular entries
    double dist = 5.0 - 2.0;
    CHECK(m.mat.array().abs().maxCoeff() < 10.0 / (dist * dist));
    CHECK(m.mat.allFinite());
    CHECK_THROWS_AS(assemble_M_cross(a, a), GeometryError);
}

TEST_CASE("M wavenumber perturbation is second order") {
    TriangleMesh mesh = make_icosphere(1, 1.0, Vec3::Zero());
    auto m0 = assemble_M<Complex>(mesh, {});
    std::vector<double> k2s = {1e-4, 1e-3};
    std::vector<double> diffs;
    for (double k2 : k2s) {
        auto mk = assemble_M<Complex>(mesh, WaveNumber::from_omega(k2, 1.0));
        diffs.push_back(op_norm(mk.mat - m0.mat));
    }
    double slope = std::log(diffs[1] / diffs[0]) / std::log(k2s[1] / k2s[0]);
    CHECK(slope > 0.7);
    CHECK(slope < 1.3);
}

TEST_CASE("scalar-source L: small far source scales as delta^3 over dist^3") {
    TriangleMesh target = make_icosphere(2, 1.0, Vec3::Zero());
    Vec3 z(0, 0, 3.0);
    double out_prev = 0;
    for (double delta : {0.2, 0.1}) {
        TriangleMesh src = make_icosphere(1, delta, z);
        auto l = assemble_L_scalar(target, src);
        // zero-mean degree-1 density
        Eigen::VectorXd phi(src.num_triangles());
        for (int t = 0; t < src.num_triangles(); ++t)
            phi(t) = (src.centroids[t] - z).normalized().z();
        Eigen::VectorXd out = l.mat * phi;
        double norm = out.norm();
        if (out_prev > 0) {
            double ratio = norm / out_prev;
            // density fixed, area ~ delta^2, moment ~ delta^3: ratio ~ (1/2)^3
            CHECK_THAT(ratio, WithinAbs(1.0 / 8.0, 0.05));
        }
        out_prev = norm;
    }
    // constant density annihilates the leading moment
    TriangleMesh src = make_icosphere(1, 0.1, z);
    auto l = assemble_L_scalar(target, src);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(src.num_triangles());
    Eigen::VectorXd phi1(src.num_triangles());
    for (int t = 0; t < src.num_triangles(); ++t) phi1(t) = (src.centroids[t] - z).normalized().z();
    double const_out = (l.mat * ones).norm() / ones.norm();
    double dip_out = (l.mat * phi1).norm() / phi1.norm();
    CHECK(const_out < 0.2 * dip_out);
    CHECK_THROWS_AS(assemble_L_scalar(target, target), GeometryError);
}

TEST_CASE("vector L and N wavenumber rates, N cross bounds") {
    TriangleMesh a = make_icosphere(1, 1.0, Vec3::Zero());
    TriangleMesh b = make_icosphere(1, 1.0, Vec3(4, 0, 0));
    auto l0 = assemble_L_vector<Complex>(a, b, {});
    auto n0 = assemble_N<Complex>(a, b, {});
    std::vector<double> k2s = {1e-4, 1e-3};
    std::vector<double> dl, dn;
    for (double k2 : k2s) {
        WaveNumber k = WaveNumber::from_omega(k2, 1.0);
        dl.push_back(op_norm(assemble_L_vector<Complex>(a, b, k).mat - l0.mat));
        dn.push_back(op_norm(assemble_N<Complex>(a, b, k).mat - n0.mat));
    }
    double slope_l = std::log(dl[1] / dl[0]) / std::log(k2s[1] / k2s[0]);
    double slope_n = std::log(dn[1] / dn[0]) / std::log(k2s[1] / k2s[0]);
    CHECK(slope_l > 0.7);
    CHECK(slope_l < 1.3);
    CHECK(slope_n > 0.7);
    CHECK(slope_n < 1.3);

    auto nD = assemble_N(a, b);
    CHECK(nD.mat.allFinite());
    CHECK(nD.mat.array().abs().maxCoeff() < 10.0 / 4.0);
}

TEST_CASE("P composite: reproduces the normal background trace on anomalies") {
    // P applied to nu x H on the core reproduces nu . H(z) + O(delta) on a
    // small anomaly (the background here is an interior dipole's field)
    TriangleMesh core = make_icosphere(2, 1.0, Vec3::Zero());
    auto m_core = assemble_M(core);
    Vec3 mom(0, 0, 1.0);
    std::vector<Vec3> trace(core.num_triangles());
    for (int t = 0; t < core.num_triangles(); ++t)
        trace[t] = core.normals[t].cross(dipole_field(core.centroids[t], mom));
    Eigen::VectorXd data = to_frame<double>(core, trace);

    Vec3 z(0, 0, 1.6);
    double worst_prev = -1;
    for (double delta : {0.08, 0.04}) {
        TriangleMesh anomaly = make_icosphere(1, delta, z);
        auto p = assemble_P(anomaly, core, m_core);
        Eigen::VectorXd out = p.mat * data;
        double worst = 0;
        for (int t = 0; t < anomaly.num_triangles(); ++t) {
            double expected = anomaly.normals[t].dot(dipole_field(anomaly.centroids[t], mom));
            worst = std::max(worst, std::abs(out(t) - expected));
        }
        double scale = dipole_field(z, mom).norm();
        CHECK(worst < 0.25 * scale);
        if (worst_prev > 0) CHECK(worst < worst_prev);
        worst_prev = worst;
    }

    // zero input -> zero output
    TriangleMesh anomaly = make_icosphere(1, 0.05, z);
    auto p = assemble_P(anomaly, core, m_core);
    CHECK((p.mat * Eigen::VectorXd::Zero(2 * core.num_triangles())).norm() == 0.0);
}

TEST_CASE("solve_dense basics and conditioning") {
    OperatorMatrixD id;
    id.mat = Eigen::MatrixXd::Identity(10, 10);
    Eigen::VectorXd rhs = Eigen::VectorXd::LinSpaced(10, 0, 9);
    CHECK((solve_dense(id, rhs) - rhs).norm() < 1e-14);

    // (1.5 I - K*) on the degree-1 subspace acts as 1.5 - 1/6
    TriangleMesh mesh = make_icosphere(2, 1.0, Vec3::Zero());
    auto ks = assemble_Kstar(mesh);
    OperatorMatrixD sys;
    sys.mat = 1.5 * Eigen::MatrixXd::Identity(ks.mat.rows(), ks.mat.cols()) - ks.mat;
    Eigen::VectorXd y10 = restrict_Y(mesh, 1, 0);
    Eigen::VectorXd sol = solve_dense(sys, y10);
    CHECK((sol - y10 / (1.5 - 1.0 / 6.0)).norm() / (y10 / (4.0 / 3.0)).norm() < 0.02);

    // hitting the discrete NP eigenvalue raises a conditioning error
    double lam = rayleigh(mesh, ks.mat, y10);
    // refine the discrete eigenvalue by a few inverse-power steps
    Eigen::VectorXd v = y10;
    for (int it = 0; it < 30; ++it) {
        OperatorMatrixD shift;
        shift.mat = (lam + 1e-8) * Eigen::MatrixXd::Identity(ks.mat.rows(), ks.mat.cols()) - ks.mat;
        v = Eigen::PartialPivLU<Eigen::MatrixXd>(shift.mat).solve(v);
        v.normalize();
        lam = (v.transpose() * (ks.mat * v))(0);
    }
    OperatorMatrixD singular;
    singular.mat = (lam + 1e-12) * Eigen::MatrixXd::Identity(ks.mat.rows(), ks.mat.cols()) - ks.mat;
    CHECK_THROWS_AS(solve_dense(singular, y10, 1e-10), ConditioningError);

    OperatorMatrixD rect;
    rect.mat = Eigen::MatrixXd::Zero(3, 4);
    Eigen::VectorXd r3(3);
    CHECK_THROWS_AS(solve_dense(rect, r3), ArgumentError);
}

TEST_CASE("field evaluation: multipole decay and shell theorem") {
    TriangleMesh mesh = make_icosphere(2, 1.0, Vec3::Zero());

    // zero-mean degree-1 density: pure dipole decay, log-log slope -3
    Eigen::VectorXd phi = restrict_Y(mesh, 1, 0);
    std::vector<double> rs = {5, 10, 20, 50};
    std::vector<Vec3> pts;
    for (double r : rs) pts.push_back(Vec3(0, 0, r));
    auto vals = eval_field(mesh, phi, FieldKind::grad_S, pts);
    double slope = std::log(vals[3].norm() / vals[0].norm()) / std::log(rs[3] / rs[0]);
    CHECK_THAT(slope, WithinAbs(-3.0, 0.03));

    // constant density: gradient of the point-charge potential of total
    // charge = area (Newton's shell theorem in the Gamma_0 convention)
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(mesh.num_triangles());
    std::vector<Vec3> far = {Vec3(0, 0, 3.0), Vec3(2.5, -1, 0.5)};
    auto shell = eval_field(mesh, ones, FieldKind::grad_S, far);
    for (std::size_t i = 0; i < far.size(); ++i) {
        double r = far[i].norm();
        Vec3 expected = mesh.total_area() * far[i] / (4.0 * kPi * r * r * r);
        CHECK((shell[i] - expected).norm() / expected.norm() < 0.005);
    }

    CHECK_THROWS_AS(eval_field(mesh, ones, FieldKind::grad_S, {mesh.centroids[0]}),
                    SingularityError);
}

TEST_CASE("jump relation for the single layer normal derivative") {
    // random smooth density: exterior and interior normal derivatives differ
    // by the density itself
    TriangleMesh mesh = make_icosphere(3, 1.0, Vec3::Zero());
    Eigen::VectorXd phi = 0.7 * restrict_Y(mesh, 1, 1) + restrict_Y(mesh, 2, 0) + 0.4 * restrict_Y(mesh, 0, 0);
    double h = 0.04;
    std::vector<Vec3> up, dn;
    for (int t = 0; t < 60; ++t) {
        up.push_back(mesh.centroids[t] + h * mesh.normals[t]);
        dn.push_back(mesh.centroids[t] - h * mesh.normals[t]);
    }
    auto go = eval_field(mesh, phi, FieldKind::grad_S, up);
    auto gi = eval_field(mesh, phi, FieldKind::grad_S, dn);
    double scale = phi.cwiseAbs().maxCoeff();
    for (int t = 0; t < 60; ++t) {
        double jump = (go[t] - gi[t]).dot(mesh.normals[t]);
        CHECK_THAT(jump, WithinAbs(phi(t), 0.05 * scale));
    }
}

TEST_CASE("jump relation for the curl of the vector layer") {
    TriangleMesh mesh = make_icosphere(3, 1.0, Vec3::Zero());
    const int n = mesh.num_triangles();
    // smooth tangential density
    std::vector<Vec3> field(n);
    for (int t = 0; t < n; ++t) {
        Vec3 f(0.3, 1.0, -0.5);
        field[t] = mesh.normals[t].cross(f);
    }
    Eigen::VectorXd phi = to_frame<double>(mesh, field);
    double h = 0.04;
    std::vector<Vec3> up, dn;
    for (int t = 0; t < 50; ++t) {
        up.push_back(mesh.centroids[t] + h * mesh.normals[t]);
        dn.push_back(mesh.centroids[t] - h * mesh.normals[t]);
    }
    auto co = eval_field(mesh, phi, FieldKind::curl_A, up);
    auto ci = eval_field(mesh, phi, FieldKind::curl_A, dn);
    double scale = 0;
    for (int t = 0; t < n; ++t) scale = std::max(scale, field[t].norm());
    for (int t = 0; t < 50; ++t) {
        // nu x curl A: outside minus inside equals -Phi
        Vec3 jmp = mesh.normals[t].cross(co[t] - ci[t]);
        CHECK((jmp + field[t]).norm() < 0.06 * scale);
    }
}
