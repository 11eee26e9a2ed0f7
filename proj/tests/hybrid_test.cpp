#include <gtest/gtest.h>

#include <random>
#include <set>

#include "vosh/hybrid.hpp"

using namespace vosh;

namespace {

VoxelGrid random_grid(int res, std::uint64_t seed, float density_lo = -4.0f, float density_hi = 1.0f) {
    VoxelGrid g(res);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(density_lo, density_hi), a(-3.0f, 3.0f);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        auto raw = g.raw(v);
        raw[0] = d(rng);
        for (std::size_t c = 1; c < kChannels; ++c) raw[c] = a(rng);
        g.decode_voxel(v);
    }
    return g;
}

MlpHead<float> random_head(std::uint64_t seed) {
    MlpHead<float> h = init_mlp(seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-0.2f, 0.2f);
    for (std::size_t i = MlpHead<float>::kB3; i < MlpHead<float>::kParamCount; ++i) h.params[i] = u(rng);
    return h;
}

Ray random_ray(std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    const Vec3f o(u(rng) * 0.5f, u(rng) * 0.5f, u(rng) * 0.5f);
    Vec3f d;
    do d = {u(rng), u(rng), u(rng)};
    while (norm(d) < 0.2f);
    return {o, normalized(d)};
}

SurfaceHit random_hit(std::mt19937_64& rng, const Ray& ray) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    SurfaceHit h;
    h.hit = true;
    h.dir = ray.dir;
    h.depth = 0.1f + 1.5f * u(rng);
    h.diffuse = {u(rng), u(rng), u(rng)};
    for (auto& f : h.feature) f = u(rng);
    return h;
}

TriMesh triangle(const Vec3f& a, const Vec3f& b, const Vec3f& c) {
    TriMesh m;
    m.positions = {a, b, c};
    m.faces = {{0, 1, 2}};
    m.ensure_appearance();
    return m;
}

}  // namespace

TEST(VoxelAdjustLoss, Values) {
    const std::vector<float> ones{1, 1}, zero{0};
    EXPECT_EQ(voxel_adjust_loss(ones, 0.7), 0.0);
    EXPECT_NEAR(voxel_adjust_loss(zero, 1.0), 1.0 - std::exp(-1.0), 1e-12);
    EXPECT_NEAR(voxel_adjust_loss(zero, 1.0), 0.63212, 1e-5);
    const std::vector<float> mixed{0.1f, 0.5f, 0.9f};
    EXPECT_EQ(voxel_adjust_loss(mixed, 0.0), 0.0);
    EXPECT_THROW(voxel_adjust_loss(std::vector<float>{}, 1.0), InvalidArgument);
    EXPECT_THROW(voxel_adjust_loss(std::vector<float>{1.5f}, 1.0), InvalidArgument);
}

TEST(VoxelAdjustLoss, StrictlyDecreasingAndZeroOnlyAtOne) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<float> w(1 + trial % 7);
        for (auto& x : w) x = u(rng);
        const double base = voxel_adjust_loss(w, 0.3);
        EXPECT_GT(base, 0.0);
        const std::size_t k = trial % w.size();
        auto up = w;
        up[k] = std::min(1.0f, w[k] + 0.01f);
        if (up[k] > w[k]) {
            EXPECT_LT(voxel_adjust_loss(up, 0.3), base);
        }
    }
}

TEST(HybridRender, EmptyGridShowsTheSurface) {
    VoxelGrid g(8);
    g.kill_all();
    const Ray ray{{0, 0, 0}, {0, 0, 1}};
    SurfaceHit hit;
    hit.hit = true;
    hit.dir = ray.dir;
    hit.depth = 0.5f;
    hit.diffuse = {0, 1, 0};
    const auto r = hybrid_render_ray(g, hit, MlpHead<float>{}, ray);
    EXPECT_EQ(r.shaded.final_color, (Vec3f{0, 1, 0}));
    EXPECT_EQ(r.w_m, 1.0f);
    EXPECT_EQ(hit.w_m, 1.0f);
}

TEST(HybridRender, MissIsBitIdenticalToVolumeRendering) {
    std::mt19937_64 rng(9);
    const VoxelGrid g = random_grid(12, 2);
    const MlpHead<float> head = random_head(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Ray ray = random_ray(rng);
        SurfaceHit miss;
        miss.dir = ray.dir;
        const auto h = hybrid_render_ray(g, miss, head, ray);
        const auto v = volume_render_ray(g, head, ray);
        EXPECT_EQ(h.shaded.final_color, v.shaded.final_color);
        EXPECT_EQ(h.shaded.feature, v.shaded.feature);
        EXPECT_EQ(h.weights.weights, v.weights.weights);
        EXPECT_EQ(h.w_m, 0.0f);
    }
}

TEST(HybridRender, DeadGridIsBitIdenticalToSurfaceShading) {
    std::mt19937_64 rng(10);
    VoxelGrid g = random_grid(12, 4);
    g.kill_all();
    const MlpHead<float> head = random_head(6);
    for (int trial = 0; trial < 50; ++trial) {
        const Ray ray = random_ray(rng);
        SurfaceHit hit = random_hit(rng, ray);
        const auto r = hybrid_render_ray(g, hit, head, ray);
        EXPECT_EQ(r.shaded.final_color, mlp_forward(hit.diffuse, hit.feature, ray.dir, head));
        EXPECT_EQ(r.w_m, 1.0f);
    }
}

TEST(HybridRender, WeightsCloseExactlyOnHits) {
    std::mt19937_64 rng(12);
    const VoxelGrid g = random_grid(12, 7);
    const MlpHead<float> head = random_head(8);
    int partial = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const Ray ray = random_ray(rng);
        SurfaceHit hit = random_hit(rng, ray);
        const auto r = hybrid_render_ray(g, hit, head, ray);
        float sum = 0.0f;
        for (float w : r.weights.weights) sum += w;
        if (r.w_m > 0.0f) {
            EXPECT_EQ(sum + r.w_m, 1.0f);
            partial += r.w_m < 1.0f;
        }
    }
    EXPECT_GT(partial, 50);
}

TEST(HybridRender, OpaqueVoxelBeforeTheSurfaceHidesIt) {
    VoxelGrid g(16);
    g.kill_all();
    // One opaque red voxel on the ray at contracted z ~ 0.375, with a red neighborhood.
    for (int k = 8; k <= 10; ++k) {
        for (int j = 6; j <= 9; ++j) {
            for (int i = 6; i <= 9; ++i) {
                const std::size_t v = g.index(i, j, k);
                g.set_alive(v, true);
                auto raw = g.raw(v);
                raw[0] = (k == 9 && (i == 7 || i == 8) && (j == 7 || j == 8)) ? 60.0f : -200.0f;
                raw[1] = 20.0f;
                raw[2] = raw[3] = -20.0f;
                g.decode_voxel(v);
            }
        }
    }
    const Ray ray{{0, 0, 0}, {0, 0, 1}};
    SurfaceHit hit;
    hit.hit = true;
    hit.dir = ray.dir;
    hit.depth = 0.9f;
    hit.diffuse = {0, 0, 1};
    const auto out = hybrid_render_ray(g, hit, MlpHead<float>{}, ray);
    EXPECT_LT(out.w_m, 1e-6f);
    EXPECT_NEAR(out.shaded.final_color.x, 1.0f, 1e-3f);
    EXPECT_NEAR(out.shaded.final_color.z, 0.0f, 1e-3f);
}

TEST(HybridRender, MismatchedHitThrows) {
    const VoxelGrid g(8);
    SurfaceHit hit;
    hit.dir = {1, 0, 0};
    EXPECT_THROW(hybrid_render_ray(g, hit, MlpHead<float>{}, Ray{{0, 0, 0}, {0, 1, 0}}), ContractViolation);
}

TEST(HybridRender, AdjustGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(21);
    const MlpHead<float> head = random_head(1);
    const double lambda = 0.7;
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
        VoxelGrid g = random_grid(8, 100 + trial, -3.0f, -0.5f);
        const Ray ray = random_ray(rng);
        SurfaceHit hit = random_hit(rng, ray);
        RayWorkspace ws;
        const MarchParams params = march_params_for(g.resolution());
        hybrid_render_ray(g, hit, head, ray, ws, params);
        if (hit.w_m <= 0.01f) continue;
        GridGradient grad(g.voxel_count());
        add_adjust_gradient(g, ws, hit.w_m, float(lambda), nullptr, grad);
        auto loss_at = [&](VoxelGrid& grid) {
            SurfaceHit h = hit;
            RayWorkspace w2;
            hybrid_render_ray(grid, h, head, ray, w2, params);
            return lambda * (1.0 - std::exp(double(h.w_m) - 1.0));
        };
        for (std::uint32_t v : grad.touched()) {
            const float analytic = grad.grad(v)[0];
            const float h = 1e-2f;
            const float saved = g.raw(v)[0];
            g.raw(v)[0] = saved + h;
            g.decode_voxel(v);
            const double lp = loss_at(g);
            g.raw(v)[0] = saved - h;
            g.decode_voxel(v);
            const double lm = loss_at(g);
            g.raw(v)[0] = saved;
            g.decode_voxel(v);
            const double fd = (lp - lm) / (2.0 * h);
            EXPECT_NEAR(analytic, fd, 2e-3 * std::max(1e-2, std::abs(fd))) << "voxel " << v;
            ++checked;
        }
    }
    EXPECT_GT(checked, 100);
}

TEST(MeshOccupancy, EmptyMeshMarksNothing) {
    const std::vector<Camera> cams{Camera::look_at({0, 0, -1.5f}, {0, 0, 0}, {0, 1, 0}, 20.0f, 16, 16)};
    const auto occ = mesh_occupancy_grid(TriMesh{}, cams, 16);
    EXPECT_EQ(occ.count(), 0u);
    EXPECT_EQ(occ.cells.size(), 16u * 16u * 16u);
}

TEST(MeshOccupancy, MarksExactlyTheCellsOfHitPoints) {
    const int r = 16;
    // Triangle strictly inside one cell: cell size 0.25, cell [0, 0.25)^3.
    const TriMesh m = triangle({0.05f, 0.05f, 0.1f}, {0.2f, 0.06f, 0.12f}, {0.1f, 0.2f, 0.14f});
    const std::vector<Camera> cams{Camera::look_at({0.1f, 0.1f, -1.0f}, {0.1f, 0.1f, 0.1f}, {0, 1, 0}, 200.0f, 32, 32),
                                   Camera::look_at({0.8f, 0.3f, -0.8f}, {0.1f, 0.1f, 0.1f}, {0, 1, 0}, 150.0f, 24, 24)};
    const auto occ = mesh_occupancy_grid(m, cams, r);
    std::set<std::size_t> expected;
    for (const Camera& cam : cams) {
        const GBuffer g = rasterize(m, cam, false);
        ASSERT_GT(g.hit_count(), 0u);
        for (int y = 0; y < g.height; ++y) {
            for (int x = 0; x < g.width; ++x) {
                if (!g.hit(g.index(x, y))) continue;
                const Vec3f p = contract(gbuffer_world_point(g, cam, x, y));
                int c[3];
                for (int a = 0; a < 3; ++a) c[a] = int(std::floor((p[a] + 2.0f) / 4.0f * float(r)));
                expected.insert((std::size_t(c[2]) * r + c[1]) * r + c[0]);
            }
        }
    }
    std::set<std::size_t> marked;
    for (std::size_t i = 0; i < occ.cells.size(); ++i) {
        if (occ.cells[i]) marked.insert(i);
    }
    EXPECT_EQ(marked, expected);
    ASSERT_EQ(marked.size(), 1u);
    EXPECT_EQ(*marked.begin(), occ.index(8, 8, 8));
}

TEST(MeshOccupancy, ResolutionBounds) {
    const std::vector<Camera> cams{Camera::look_at({0, 0, -1.5f}, {0, 0, 0}, {0, 1, 0}, 20.0f, 16, 16)};
    EXPECT_THROW(mesh_occupancy_grid(TriMesh{}, cams, 7), InvalidArgument);
    EXPECT_THROW(mesh_occupancy_grid(TriMesh{}, cams, 1025), InvalidArgument);
    EXPECT_THROW(mesh_occupancy_grid(TriMesh{}, cams, 0), InvalidArgument);
    HybridConfig cfg;
    cfg.r_mesh = 0;
    EXPECT_NO_THROW(cfg.validate());
    cfg.r_mesh = 4;
    EXPECT_THROW(cfg.validate(), DescriptorError);
}

namespace {

MultiViewDataset small_dataset() {
    const AnalyticScene scene = make_scene(builtin_scene("sphere_plane"));
    return render_dataset(scene, 6, 16, 16, 1);
}

TriMesh ground_quad() {
    TriMesh m;
    m.positions = {{-0.9f, -0.4f, -0.9f}, {0.9f, -0.4f, -0.9f}, {0.9f, -0.4f, 0.9f}, {-0.9f, -0.4f, 0.9f}};
    m.faces = {{0, 2, 1}, {0, 3, 2}};
    m.ensure_appearance();
    return m;
}

}  // namespace

TEST(OptimizeHybrid, ZeroIterationsOnlyKillsAndPrunes) {
    const auto ds = small_dataset();
    const VoxelGrid g = random_grid(16, 31, -6.0f, 0.0f);
    const MlpHead<float> head = random_head(2);
    HybridConfig cfg;
    cfg.iterations = 0;
    cfg.r_mesh = 16;
    const auto out = optimize_hybrid(g, ground_quad(), head, ds, cfg);
    EXPECT_EQ(out.vosh.head, head);
    EXPECT_EQ(out.vosh.mesh, ground_quad());
    EXPECT_GT(out.report.killed_by_occupancy, 0u);
    EXPECT_LE(out.report.alive_after_prune, out.report.alive_after_kill);
    EXPECT_EQ(out.vosh.grid.alive_count(), out.report.alive_after_prune);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        if (out.vosh.grid.alive(v)) {
            for (std::size_t c = 0; c < kChannels; ++c) EXPECT_EQ(out.vosh.grid.raw(v)[c], g.raw(v)[c]);
        }
    }
    EXPECT_NO_THROW(out.vosh.check_invariants());
}

TEST(OptimizeHybrid, TrainingKeepsInvariantsAndIsDeterministic) {
    const auto ds = small_dataset();
    const VoxelGrid g = random_grid(16, 32, -6.0f, 0.0f);
    HybridConfig cfg;
    cfg.iterations = 5;
    cfg.batch_rays = 128;
    cfg.r_mesh = 32;
    const auto a = optimize_hybrid(g, ground_quad(), random_head(4), ds, cfg);
    const auto b = optimize_hybrid(g, ground_quad(), random_head(4), ds, cfg);
    EXPECT_EQ(a.report.loss_curve, b.report.loss_curve);
    EXPECT_EQ(a.vosh.mesh, b.vosh.mesh);
    EXPECT_EQ(a.vosh.grid.alive_mask(), b.vosh.grid.alive_mask());
    EXPECT_NE(a.vosh.mesh.diffuse, ground_quad().diffuse);
    EXPECT_NO_THROW(a.vosh.check_invariants());
    EXPECT_EQ(a.report.loss_curve.size(), 5u);
}

TEST(OptimizeHybrid, RejectsMismatchedAppearance) {
    const auto ds = small_dataset();
    TriMesh m = ground_quad();
    m.feature.pop_back();
    EXPECT_THROW(optimize_hybrid(VoxelGrid(8), m, MlpHead<float>{}, ds, HybridConfig{}), ContractViolation);
}

TEST(OptimizeHybrid, Presets) {
    EXPECT_FLOAT_EQ(HybridConfig::base().lambda_voxel, 0.001f);
    EXPECT_EQ(HybridConfig::base().r_mesh, 128);
    EXPECT_FLOAT_EQ(HybridConfig::light().lambda_voxel, 0.1f);
    EXPECT_EQ(HybridConfig::light().r_mesh, 32);
    const nlohmann::json j = HybridConfig::light();
    EXPECT_EQ(j.get<HybridConfig>().r_mesh, 32);
}
