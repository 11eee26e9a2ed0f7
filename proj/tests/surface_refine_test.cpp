#include <gtest/gtest.h>

#include <random>

#include "vosh/raster.hpp"
#include "vosh/refine.hpp"

using namespace vosh;

namespace {

Camera origin_camera(int w = 32, int h = 32, float focal = 32.0f) {
    return Camera::look_at({0, 0, 0}, {0, 0, 1}, {0, 1, 0}, focal, w, h);
}

// Quad facing the camera at distance z, spanning [-s, s]^2 in the camera plane.
TriMesh camera_quad(const Camera& cam, float z, float s) {
    TriMesh m;
    const Vec3f c = cam.position + cam.forward() * z;
    m.positions = {c - cam.right() * s - cam.up() * s, c + cam.right() * s - cam.up() * s, c + cam.right() * s + cam.up() * s,
                   c - cam.right() * s + cam.up() * s};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    m.ensure_appearance();
    return m;
}

// Moller-Trumbore; returns t or +inf and the barycentrics of the hit.
float intersect(const Ray& ray, const Vec3f& a, const Vec3f& b, const Vec3f& c, std::array<float, 3>& bary) {
    const Vec3d o(ray.origin), d(ray.dir), A(a), B(b), C(c);
    const Vec3d e1 = B - A, e2 = C - A, p = cross(d, e2);
    const double det = dot(e1, p);
    if (std::abs(det) < 1e-14) return std::numeric_limits<float>::infinity();
    const Vec3d s = o - A;
    const double u = dot(s, p) / det;
    const Vec3d q = cross(s, e1);
    const double v = dot(d, q) / det;
    const double t = dot(e2, q) / det;
    if (u < 0 || v < 0 || u + v > 1 || t <= 0) return std::numeric_limits<float>::infinity();
    bary = {float(1 - u - v), float(u), float(v)};
    return float(t);
}

}  // namespace

TEST(Rasterize, EmptyMeshMissesEverywhere) {
    const Camera cam = origin_camera();
    const GBuffer g = rasterize(TriMesh{}, cam);
    EXPECT_EQ(g.hit_count(), 0u);
    for (std::size_t p = 0; p < g.face.size(); ++p) {
        EXPECT_EQ(g.face[p], kMissFace);
        EXPECT_TRUE(std::isinf(g.depth[p]));
        EXPECT_EQ(g.diffuse[p].x, kMissAttribute);
        EXPECT_EQ(g.feature[p][0], kMissAttribute);
    }
}

TEST(Rasterize, FrustumFillingQuadHasConstantDepth) {
    const Camera cam = origin_camera();
    const TriMesh m = camera_quad(cam, 0.5f, 0.45f);
    const GBuffer g = rasterize(m, cam);
    ASSERT_EQ(g.hit_count(), g.face.size());
    for (std::size_t p = 0; p < g.face.size(); ++p) {
        EXPECT_NEAR(g.depth[p], 0.5f, 1e-6f);
        EXPECT_NEAR(g.diffuse[p].y, 0.5f, 1e-6f);
    }
}

TEST(Rasterize, FrustumFillingTriangleAtDepthTwo) {
    const Camera cam = origin_camera();
    TriMesh m;
    for (auto [x, y] : {std::pair{-3.0f, -3.0f}, {9.0f, -3.0f}, {-3.0f, 9.0f}}) {
        m.positions.push_back(contract(cam.right() * x + cam.up() * y + cam.forward() * 2.0f));
    }
    m.faces = {{0, 1, 2}};
    m.ensure_appearance();
    const GBuffer g = rasterize(m, cam);
    for (std::size_t p = 0; p < g.face.size(); ++p) {
        ASSERT_EQ(g.face[p], 0u);
        EXPECT_NEAR(g.depth[p], 2.0f, 1e-5f);
        EXPECT_NEAR(g.bary[p][0] + g.bary[p][1] + g.bary[p][2], 1.0f, 1e-6f);
    }
}

TEST(Rasterize, CoincidentFacesResolveToLowestId) {
    const Camera cam = origin_camera();
    TriMesh m = camera_quad(cam, 0.5f, 0.45f);
    m.faces = {m.faces[0], m.faces[0], {2, 0, 1}};
    const GBuffer g = rasterize(m, cam);
    ASSERT_GT(g.hit_count(), 0u);
    for (std::size_t p = 0; p < g.face.size(); ++p) {
        if (g.hit(p)) EXPECT_EQ(g.face[p], 0u);
    }
}

TEST(Rasterize, NearerFaceWins) {
    const Camera cam = origin_camera();
    TriMesh far = camera_quad(cam, 0.8f, 0.7f);
    TriMesh near = camera_quad(cam, 0.3f, 0.1f);
    TriMesh m = far;
    for (auto f : near.faces) m.faces.push_back({f[0] + 4, f[1] + 4, f[2] + 4});
    m.positions.insert(m.positions.end(), near.positions.begin(), near.positions.end());
    m.ensure_appearance();
    const GBuffer g = rasterize(m, cam);
    const std::size_t center = g.index(16, 16), corner = g.index(0, 0);
    EXPECT_GE(g.face[center], 2u);
    EXPECT_NEAR(g.depth[center], 0.3f, 1e-6f);
    EXPECT_LT(g.face[corner], 2u);
}

TEST(Rasterize, MatchesAnalyticRayIntersection) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> u(-0.9f, 0.9f);
    const Camera cam = Camera::look_at({0, 0.2f, -2.2f}, {0, 0, 0}, {0, 1, 0}, 40.0f, 48, 40);
    std::size_t checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        TriMesh m;
        m.positions = {{u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng)}};
        m.faces = {{0, 1, 2}};
        m.ensure_appearance();
        m.diffuse = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        const GBuffer g = rasterize(m, cam);
        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Ray ray = cam.pixel_ray(x, y);
                std::array<float, 3> b{};
                const float t = intersect(ray, m.positions[0], m.positions[1], m.positions[2], b);
                const std::size_t p = g.index(x, y);
                const float margin = std::min({b[0], b[1], b[2]});
                if (std::isfinite(t) && margin > 1e-3f) ASSERT_TRUE(g.hit(p)) << trial << " " << x << "," << y;
                if (!g.hit(p)) continue;
                ASSERT_TRUE(std::isfinite(t) || margin > -1e-3f);
                if (!std::isfinite(t)) continue;
                EXPECT_NEAR(depth_to_t(cam, ray.dir, g.depth[p]), t, 1e-4f);
                for (int k = 0; k < 3; ++k) EXPECT_NEAR(g.bary[p][k], b[k], 1e-4f);
                EXPECT_NEAR(g.diffuse[p].x, b[0], 1e-4f);
                ++checked;
            }
        }
    }
    EXPECT_GT(checked, 1000u);
}

TEST(Rasterize, ClipsTrianglesCrossingTheNearPlane) {
    const Camera cam = origin_camera();
    TriMesh m;
    const Vec3f f = cam.forward(), r = cam.right(), up = cam.up();
    m.positions = {r * -0.5f + up * -0.5f - f * 0.5f, r * 0.5f + up * -0.5f + f * 0.5f, up * 0.5f + f * 0.5f};
    m.faces = {{0, 1, 2}};
    m.ensure_appearance();
    const GBuffer g = rasterize(m, cam);
    ASSERT_GT(g.hit_count(), 0u);
    for (std::size_t p = 0; p < g.face.size(); ++p) {
        if (!g.hit(p)) continue;
        EXPECT_GE(g.depth[p], 1e-4f);
        for (float b : g.bary[p]) {
            EXPECT_GE(b, -1e-5f);
            EXPECT_LE(b, 1.0f + 1e-5f);
        }
    }
}

TEST(Rasterize, UncontractsVerticesBeforeProjection) {
    const Camera cam = origin_camera(16, 16, 16.0f);
    TriMesh m;
    // A quad at world distance 3 stored in contracted coordinates.
    const float zw = 3.0f;
    for (Vec3f p : {Vec3f{-2, -2, zw}, Vec3f{2, -2, zw}, Vec3f{2, 2, zw}, Vec3f{-2, 2, zw}}) m.positions.push_back(contract(p));
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    m.ensure_appearance();
    const GBuffer g = rasterize(m, cam);
    const std::size_t p = g.index(8, 8);
    ASSERT_TRUE(g.hit(p));
    EXPECT_NEAR(g.depth[p], zw, 1e-4f);
}

// ---------------------------------------------------------------------------

namespace {

MultiViewDataset quad_dataset(const Vec3f& color, int views = 3) {
    MultiViewDataset ds;
    for (int i = 0; i < views; ++i) {
        const Vec3f eye(0.3f * float(i) - 0.3f, 0.1f, -0.6f);
        View v{Camera::look_at(eye, {0, 0, 0}, {0, 1, 0}, 16.0f, 16, 16), Image(16, 16, {0.1f, 0.1f, 0.1f}), i == views - 1};
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                std::array<float, 3> b{};
                const Ray ray = v.camera.pixel_ray(x, y);
                const float t0 = intersect(ray, {-0.5f, -0.5f, 0}, {0.5f, -0.5f, 0}, {0.5f, 0.5f, 0}, b);
                const float t1 = intersect(ray, {-0.5f, -0.5f, 0}, {0.5f, 0.5f, 0}, {-0.5f, 0.5f, 0}, b);
                if (std::isfinite(t0) || std::isfinite(t1)) v.image.set(x, y, color);
            }
        }
        ds.views.push_back(std::move(v));
    }
    return ds;
}

TriMesh flat_quad(int n) {
    TriMesh m;
    for (int j = 0; j <= n; ++j) {
        for (int i = 0; i <= n; ++i) m.positions.push_back({-0.5f + float(i) / n, -0.5f + float(j) / n, 0.0f});
    }
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const std::uint32_t a = j * (n + 1) + i, b = a + 1, c = a + n + 2, d = a + n + 1;
            m.faces.push_back({a, b, c});
            m.faces.push_back({a, c, d});
        }
    }
    m.ensure_appearance();
    return m;
}

}  // namespace

TEST(Refine, FlatQuadConvergesToTargetColor) {
    const Vec3f target(0.8f, 0.3f, 0.6f);
    const auto ds = quad_dataset(target);
    const TriMesh mesh = flat_quad(4);
    const MlpHead<float> head{};
    RefineConfig cfg;
    cfg.iterations = 200;
    cfg.lr = 0.02f;
    const RefineResult r = refine_appearance(mesh, head, ds, cfg);
    ASSERT_EQ(r.loss_curve.size(), 200u);
    EXPECT_LT(r.loss_curve.back(), 1e-3f);
    EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
    EXPECT_EQ(r.mesh.positions, mesh.positions);
    EXPECT_EQ(r.mesh.faces, mesh.faces);
    ASSERT_TRUE(r.mesh.has_stats());
}

TEST(Refine, DatasetRenderedFromTheMeshIsAFixedPoint) {
    auto ds = quad_dataset({0, 0, 0});
    TriMesh mesh = flat_quad(2);
    for (std::size_t v = 0; v < mesh.positions.size(); ++v) {
        mesh.diffuse[v] = {0.2f + 0.07f * float(v), 0.5f, 0.9f - 0.05f * float(v)};
    }
    const MlpHead<float> head{};
    for (auto& v : ds.views) {
        const GBuffer g = rasterize(mesh, v.camera);
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const std::size_t p = g.index(x, y);
                v.image.set(x, y, g.hit(p) ? mlp_forward(g.diffuse[p], g.feature[p], v.camera.pixel_ray(x, y).dir, head)
                                           : Vec3f{0.1f, 0.1f, 0.1f});
            }
        }
    }
    RefineConfig cfg;
    cfg.iterations = 20;
    const RefineResult r = refine_appearance(mesh, head, ds, cfg);
    for (float l : r.loss_curve) EXPECT_EQ(l, 0.0f);
    EXPECT_EQ(r.mesh.diffuse, mesh.diffuse);
    EXPECT_EQ(r.mesh.feature, mesh.feature);
}

TEST(Refine, UnobservedFacesGetZeroErrorAndFlag) {
    const auto ds = quad_dataset({0.8f, 0.3f, 0.6f});
    TriMesh mesh = flat_quad(2);
    // A triangle behind every camera.
    const auto base = std::uint32_t(mesh.positions.size());
    mesh.positions.insert(mesh.positions.end(), {{0, 0, -0.9f}, {0.1f, 0, -0.9f}, {0, 0.1f, -0.9f}});
    mesh.faces.push_back({base, base + 1, base + 2});
    mesh.ensure_appearance();
    RefineConfig cfg;
    cfg.iterations = 5;
    const RefineResult r = refine_appearance(mesh, MlpHead<float>{}, ds, cfg);
    const std::size_t last = r.mesh.faces.size() - 1;
    EXPECT_EQ(r.mesh.observed[last], 0);
    EXPECT_EQ(r.mesh.face_error[last], 0.0f);
    EXPECT_EQ(r.mesh.diffuse[base], mesh.diffuse[base]);
    for (std::size_t f = 0; f < last; ++f) EXPECT_EQ(r.mesh.observed[f], 1);
}

TEST(Refine, PixelsOffTheMeshDoNotAffectTheResult) {
    auto ds = quad_dataset({0.8f, 0.3f, 0.6f});
    const TriMesh mesh = flat_quad(3);
    RefineConfig cfg;
    cfg.iterations = 30;
    const RefineResult a = refine_appearance(mesh, MlpHead<float>{}, ds, cfg);
    for (auto& v : ds.views) {
        const GBuffer g = rasterize(mesh, v.camera, false);
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                if (!g.hit(g.index(x, y))) v.image.set(x, y, {0.9f, 0.0f, 0.9f});
            }
        }
    }
    const RefineResult b = refine_appearance(mesh, MlpHead<float>{}, ds, cfg);
    EXPECT_EQ(a.mesh, b.mesh);
    EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(Refine, RejectsBadInput) {
    const auto ds = quad_dataset({0.5f, 0.5f, 0.5f});
    RefineConfig cfg;
    EXPECT_THROW(refine_appearance(TriMesh{}, MlpHead<float>{}, ds, cfg), InvalidArgument);
    cfg.lr = 0.0f;
    EXPECT_THROW(refine_appearance(flat_quad(1), MlpHead<float>{}, ds, cfg), DescriptorError);
    MultiViewDataset none;
    EXPECT_THROW(refine_appearance(flat_quad(1), MlpHead<float>{}, none, RefineConfig{}), InvalidArgument);
}

TEST(Refine, InitialAppearanceComesFromTheGrid) {
    VoxelGrid grid(8);
    grid.kill_all();
    TriMesh mesh = flat_quad(1);
    init_mesh_appearance(mesh, grid);
    for (const auto& c : mesh.diffuse) EXPECT_NEAR(c.x, 0.5f, 1e-6f);
}
