#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <utility>
#include <vector>

#include "magshell/common.hpp"

namespace magshell {

/// Closed triangulated surface with per-triangle collocation data.
/// Normals point away from the enclosed region, collocation points are the
/// flat-triangle centroids.
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec3> normals;    // outward unit normal per triangle
    std::vector<double> areas;    // flat-triangle area per triangle
    std::vector<Vec3> centroids;  // collocation points
    Vec3 interior_point = Vec3::Zero();
    std::uint64_t id = 0;        // process-unique tag, used for operator caching
    double sphere_radius = 0.0;  // > 0 when the vertices lie on a known sphere

    int num_triangles() const { return static_cast<int>(triangles.size()); }
    int num_vertices() const { return static_cast<int>(vertices.size()); }

    double total_area() const {
        double s = 0.0;
        for (double a : areas) s += a;
        return s;
    }

    /// Orthonormal tangent frame of triangle t (t1, t2, normal).
    std::pair<Vec3, Vec3> tangent_frame(int t) const {
        const Vec3& n = normals[t];
        Vec3 a = std::abs(n.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
        Vec3 u = n.cross(a).normalized();
        Vec3 v = n.cross(u);
        return {u, v};
    }
};

namespace detail {

inline std::uint64_t next_mesh_id() {
    static std::uint64_t counter = 0;
    return ++counter;
}

inline void finalize_mesh(TriangleMesh& mesh, const Vec3& interior) {
    const int nt = mesh.num_triangles();
    mesh.normals.resize(nt);
    mesh.areas.resize(nt);
    mesh.centroids.resize(nt);
    mesh.interior_point = interior;
    for (int t = 0; t < nt; ++t) {
        const Vec3& a = mesh.vertices[mesh.triangles[t][0]];
        const Vec3& b = mesh.vertices[mesh.triangles[t][1]];
        const Vec3& c = mesh.vertices[mesh.triangles[t][2]];
        Vec3 cr = (b - a).cross(c - a);
        double n2 = cr.norm();
        mesh.areas[t] = 0.5 * n2;
        mesh.centroids[t] = (a + b + c) / 3.0;
        Vec3 n = cr / n2;
        if (n.dot(mesh.centroids[t] - interior) < 0) n = -n;
        mesh.normals[t] = n;
    }
    mesh.id = next_mesh_id();
}

}  // namespace detail

/// Subdivided-icosahedron sphere mesh: 20*4^level triangles, vertices on the
/// sphere of the given radius/center.
inline TriangleMesh make_icosphere(int subdivision_level, double radius, const Vec3& center) {
    if (subdivision_level < 0) throw ArgumentError("make_icosphere: subdivision_level must be >= 0");
    if (radius <= 0) throw ArgumentError("make_icosphere: radius must be positive");
    if (subdivision_level > 7) throw ResourceError("make_icosphere: subdivision level too large");

    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
        {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
    for (auto& v : verts) v.normalize();
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
        {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
        {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};

    for (int lvl = 0; lvl < subdivision_level; ++lvl) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int i, int j) {
            auto key = std::minmax(i, j);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            Vec3 m = (verts[i] + verts[j]).normalized();
            verts.push_back(m);
            int idx = static_cast<int>(verts.size()) - 1;
            midpoint[key] = idx;
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }

    TriangleMesh mesh;
    mesh.vertices.reserve(verts.size());
    for (const auto& v : verts) mesh.vertices.push_back(center + radius * v);
    mesh.triangles = std::move(faces);
    detail::finalize_mesh(mesh, center);
    mesh.sphere_radius = radius;
    return mesh;
}

/// Mesh scaled and shifted: y -> delta*y + z.  Used to place unit-scale
/// anomaly shapes at true scale.
inline TriangleMesh place_shape(const TriangleMesh& unit_shape, double delta, const Vec3& z) {
    TriangleMesh mesh;
    mesh.vertices.reserve(unit_shape.vertices.size());
    for (const auto& v : unit_shape.vertices) mesh.vertices.push_back(z + delta * v);
    mesh.triangles = unit_shape.triangles;
    detail::finalize_mesh(mesh, z + delta * unit_shape.interior_point);
    mesh.sphere_radius = unit_shape.sphere_radius * delta;
    return mesh;
}

/// Ellipsoid mesh with semi-axes (ax, ay, az): icosphere stretched, vertices on
/// the ellipsoid surface.
inline TriangleMesh make_ellipsoid(int subdivision_level, const Vec3& semi_axes, const Vec3& center) {
    if (semi_axes.minCoeff() <= 0) throw ArgumentError("make_ellipsoid: semi-axes must be positive");
    TriangleMesh mesh = make_icosphere(subdivision_level, 1.0, Vec3::Zero());
    for (auto& v : mesh.vertices) v = center + v.cwiseProduct(semi_axes);
    detail::finalize_mesh(mesh, center);
    return mesh;
}

/// Surface quadrature: per-triangle symmetric Gauss rules, flattened over the
/// whole mesh.  Weights sum to the (flat) surface area.
struct QuadratureSet {
    std::vector<Vec3> nodes;
    std::vector<double> weights;
    int order = 1;

    double total_weight() const {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    }
};

namespace detail {

struct TriRule {
    // barycentric coordinates and weights (weights sum to 1)
    std::vector<std::array<double, 3>> bary;
    std::vector<double> w;
};

inline const TriRule& tri_rule(int order) {
    static const TriRule r1{{{1.0 / 3, 1.0 / 3, 1.0 / 3}}, {1.0}};
    static const TriRule r3{
        {{2.0 / 3, 1.0 / 6, 1.0 / 6}, {1.0 / 6, 2.0 / 3, 1.0 / 6}, {1.0 / 6, 1.0 / 6, 2.0 / 3}},
        {1.0 / 3, 1.0 / 3, 1.0 / 3}};
    static const TriRule r6 = [] {
        const double a1 = 0.445948490915965, a2 = 0.091576213509771;
        const double w1 = 0.223381589678011, w2 = 0.109951743655322;
        TriRule r;
        r.bary = {{1 - 2 * a1, a1, a1}, {a1, 1 - 2 * a1, a1}, {a1, a1, 1 - 2 * a1},
                  {1 - 2 * a2, a2, a2}, {a2, 1 - 2 * a2, a2}, {a2, a2, 1 - 2 * a2}};
        r.w = {w1, w1, w1, w2, w2, w2};
        return r;
    }();
    switch (order) {
        case 1: return r1;
        case 3: return r3;
        case 6: return r6;
        default: throw ArgumentError("quadrature_for: order must be 1, 3 or 6");
    }
}

}  // namespace detail

inline QuadratureSet quadrature_for(const TriangleMesh& mesh, int order) {
    const auto& rule = detail::tri_rule(order);
    QuadratureSet q;
    q.order = order;
    q.nodes.reserve(mesh.num_triangles() * rule.w.size());
    q.weights.reserve(mesh.num_triangles() * rule.w.size());
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        const Vec3& a = mesh.vertices[mesh.triangles[t][0]];
        const Vec3& b = mesh.vertices[mesh.triangles[t][1]];
        const Vec3& c = mesh.vertices[mesh.triangles[t][2]];
        for (std::size_t k = 0; k < rule.w.size(); ++k) {
            const auto& bc = rule.bary[k];
            q.nodes.push_back(bc[0] * a + bc[1] * b + bc[2] * c);
            q.weights.push_back(rule.w[k] * mesh.areas[t]);
        }
    }
    return q;
}

/// Evaluation / measurement point set.  Carries optional quadrature weights
/// (set when the points were generated as a sphere quadrature grid) and cap
/// metadata for patch measurements.
struct PointSet {
    std::vector<Vec3> points;
    std::vector<double> weights;  // empty unless the set is a quadrature grid
    Vec3 cap_axis = Vec3(0, 0, 1);
    double cap_half_angle = kPi;  // pi == full sphere
    double radius = 0.0;          // sphere radius when sampled on a sphere, else 0

    int size() const { return static_cast<int>(points.size()); }
    bool has_weights() const { return !weights.empty(); }
};

/// Quasi-uniform Fibonacci-spiral sampling of a spherical cap.
/// half_angle == pi gives full-sphere sampling.
inline PointSet sample_cap(double radius, const Vec3& axis, double half_angle, int n) {
    if (!(half_angle > 0.0) || half_angle > kPi + 1e-12)
        throw ArgumentError("sample_cap: half_angle must be in (0, pi]");
    if (n < 1) throw ArgumentError("sample_cap: n must be >= 1");
    if (radius <= 0) throw ArgumentError("sample_cap: radius must be positive");
    Vec3 az = axis.normalized();
    Vec3 a = std::abs(az.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    Vec3 u = az.cross(a).normalized();
    Vec3 v = az.cross(u);

    const double zmin = std::cos(half_angle);
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    PointSet ps;
    ps.points.reserve(n);
    ps.cap_axis = az;
    ps.cap_half_angle = half_angle;
    ps.radius = radius;
    for (int k = 0; k < n; ++k) {
        // spiral down the cap in equal-area bands
        double z = 1.0 - (1.0 - zmin) * (2.0 * k + 1.0) / (2.0 * n);
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = golden * k;
        Vec3 dir = z * az + r * (std::cos(phi) * u + std::sin(phi) * v);
        ps.points.push_back(radius * dir);
    }
    return ps;
}

/// Gauss-Legendre x uniform-phi quadrature grid on the full sphere of given
/// radius.  Integrates spherical harmonics up to degree ~2*n_theta-1 exactly;
/// used where tests need spectral-accuracy surface integrals.
inline PointSet sphere_gauss_grid(double radius, int n_theta, int n_phi) {
    if (n_theta < 1 || n_phi < 1) throw ArgumentError("sphere_gauss_grid: need at least one node");
    // Golub-Welsch via Newton on Legendre polynomials
    std::vector<double> x(n_theta), w(n_theta);
    for (int i = 0; i < n_theta; ++i) {
        double t = std::cos(kPi * (i + 0.75) / (n_theta + 0.5));
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = t;
            for (int k = 2; k <= n_theta; ++k) {
                double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            double dp = n_theta * (t * p1 - p0) / (t * t - 1.0);
            double dt = p1 / dp;
            t -= dt;
            if (std::abs(dt) < 1e-15) break;
        }
        double p0 = 1.0, p1 = t;
        for (int k = 2; k <= n_theta; ++k) {
            double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        double dp = n_theta * (t * p1 - p0) / (t * t - 1.0);
        x[i] = t;
        w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
    PointSet ps;
    ps.radius = radius;
    ps.points.reserve(n_theta * n_phi);
    ps.weights.reserve(n_theta * n_phi);
    const double dphi = 2.0 * kPi / n_phi;
    for (int i = 0; i < n_theta; ++i) {
        double ct = x[i], st = std::sqrt(1.0 - ct * ct);
        for (int j = 0; j < n_phi; ++j) {
            double phi = j * dphi;
            ps.points.emplace_back(radius * st * std::cos(phi), radius * st * std::sin(phi), radius * ct);
            ps.weights.push_back(radius * radius * w[i] * dphi);
        }
    }
    return ps;
}

/// Dump a mesh as OFF text for external inspection.
inline void write_off(const TriangleMesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("write_off: cannot open " + path);
    out << "OFF\n" << mesh.num_vertices() << " " << mesh.num_triangles() << " 0\n";
    out.precision(17);
    for (const auto& v : mesh.vertices) out << v.x() << " " << v.y() << " " << v.z() << "\n";
    for (const auto& t : mesh.triangles) out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
}

/// Watertightness / orientation check: every edge shared by exactly two
/// triangles, traversed once in each direction.  Returns Euler characteristic.
inline int check_closed_mesh(const TriangleMesh& mesh) {
    std::map<std::pair<int, int>, int> directed;
    for (const auto& t : mesh.triangles) {
        for (int e = 0; e < 3; ++e) {
            int i = t[e], j = t[(e + 1) % 3];
            if (++directed[{i, j}] > 1) throw GeometryError("mesh edge traversed twice in same direction");
        }
    }
    int undirected = 0;
    for (const auto& [edge, count] : directed) {
        auto rev = directed.find({edge.second, edge.first});
        if (rev == directed.end()) throw GeometryError("mesh has a boundary edge");
        ++undirected;
    }
    undirected /= 2;
    return mesh.num_vertices() - undirected + mesh.num_triangles();
}

}  // namespace magshell
