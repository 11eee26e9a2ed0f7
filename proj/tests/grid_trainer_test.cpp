#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "vosh/grid_trainer.hpp"

using namespace vosh;

namespace {

constexpr Rgb<float> kRed{1, 0, 0};

VoxelGrid empty_grid(int res, const Rgb<float>& diffuse) {
    VoxelGrid g(res);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) g.set_voxel(v, 0.0f, diffuse, {0.5f, 0.5f, 0.5f, 0.5f});
    return g;
}

VoxelGrid smooth_grid(int res) {
    VoxelGrid g(res);
    for (int k = 0; k < res; ++k) {
        for (int j = 0; j < res; ++j) {
            for (int i = 0; i < res; ++i) {
                const Vec3f c = g.voxel_center(i, j, k);
                const float r2 = dot(c, c);
                const float sigma = 3.0f * std::exp(-2.0f * r2);
                const Rgb<float> col{0.5f + 0.4f * std::sin(c.x), 0.5f + 0.4f * std::cos(c.y), 0.5f};
                g.set_voxel(g.index(i, j, k), sigma, col, {0.3f, 0.6f, 0.2f, 0.8f});
            }
        }
    }
    return g;
}

MultiViewDataset background_dataset() {
    const auto scene = make_scene(nlohmann::json::parse(R"({"background":[0.3,0.5,0.7],"primitives":[]})"));
    return render_dataset(scene, 4, 16, 16, 1);
}

}  // namespace

TEST(VolumeRender, AllDeadGridIsMlpOfZero) {
    VoxelGrid g(8);
    g.kill_all();
    const auto head = init_mlp(3);
    const Ray ray{{0.1f, 0.2f, -3.0f}, normalized(Vec3f{0.05f, 0.0f, 1.0f})};
    const auto r = volume_render_ray(g, head, ray);
    EXPECT_EQ(r.weights.residual, 1.0f);
    EXPECT_TRUE(r.trace.empty());
    EXPECT_EQ(r.shaded.final_color, mlp_view_color<float>({0, 0, 0}, {}, ray.dir, head));
}

TEST(VolumeRender, OpaqueVoxelSaturates) {
    const int res = 16;
    VoxelGrid g = empty_grid(res, kRed);
    const float edge = g.voxel_edge();
    const std::size_t v = g.index(8, 8, 8);
    g.set_voxel(v, 50.0f / edge, kRed, {});
    const Vec3f center = g.voxel_center(8, 8, 8);
    const Ray ray{{center.x, center.y, -0.99f}, {0, 0, 1}};
    const auto r = volume_render_ray(g, MlpHead<float>{}, ray);
    EXPECT_LT(r.weights.residual, 1e-6f);
    EXPECT_NEAR(r.shaded.final_color.x, 1.0f, 1e-5f);
    EXPECT_NEAR(r.shaded.final_color.y, 0.0f, 1e-5f);
}

TEST(VolumeRender, QuadratureRefinementIsStable) {
    const VoxelGrid g = smooth_grid(32);
    const auto head = init_mlp(1);
    std::mt19937_64 rng(2);
    for (int n = 0; n < 50; ++n) {
        const Vec3f o{float(uniform01(rng) * 2 - 1) * 3, float(uniform01(rng) * 2 - 1) * 3, 3.0f};
        const Ray ray{o, normalized(Vec3f{0, 0, 0} - o)};
        const auto a = volume_render_ray(g, head, ray, 0.5f).shaded.final_color;
        const auto b = volume_render_ray(g, head, ray, 0.25f).shaded.final_color;
        for (int c = 0; c < 3; ++c) EXPECT_LT(std::abs(a[c] - b[c]), 1e-2f);
    }
}

TEST(VolumeRender, RejectsNonUnitDirection) {
    const VoxelGrid g(4);
    EXPECT_THROW(volume_render_ray(g, MlpHead<float>{}, Ray{{0, 0, 0}, {0, 0, 2}}), InvalidArgument);
}

TEST(VolumeRender, InvariantToKillingZeroDensityVoxels) {
    VoxelGrid g = smooth_grid(16);
    std::vector<std::size_t> empty;
    for (int k = 0; k < 16; ++k) {
        for (int i = 0; i < 16; ++i) {
            const std::size_t v = g.index(i, 3, k);
            g.set_voxel(v, 0.0f, {0.1f, 0.9f, 0.4f}, {});
            empty.push_back(v);
        }
    }
    const auto head = init_mlp(4);
    const Ray ray{{0.3f, 3.0f, 0.2f}, normalized(Vec3f{-0.1f, -1.0f, 0.05f})};
    const auto before = volume_render_ray(g, head, ray);
    for (std::size_t v : empty) g.set_alive(v, false);
    const auto after = volume_render_ray(g, head, ray);
    EXPECT_EQ(before.shaded.final_color, after.shaded.final_color);
    EXPECT_EQ(before.weights.weights, after.weights.weights);
}

TEST(GridGradient, DeadVoxelsReceiveNothing) {
    VoxelGrid g = smooth_grid(8);
    for (std::size_t v = 0; v < g.voxel_count(); v += 2) g.set_alive(v, false);
    const auto head = init_mlp(5);
    RayWorkspace ws;
    GridGradient grad(g.voxel_count());
    const Ray ray{{0.1f, 0.2f, 3.0f}, normalized(Vec3f{0.0f, -0.05f, -1.0f})};
    render_grid_ray(g, head, ray, nullptr, ws, march_params_for(8));
    ASSERT_FALSE(ws.locs.empty());
    const auto gr = backward_render_path<float>(ws.cache, head, {1, -1, 0.5f});
    for (std::size_t s = 0; s < ws.locs.size(); ++s) grad.add_sample(g, ws.locs[s], gr.sigmas[s], gr.diffuses[s], gr.features[s]);
    bool any_alive = false;
    for (std::uint32_t v : grad.touched()) {
        EXPECT_TRUE(g.alive(v));
        any_alive = true;
    }
    EXPECT_TRUE(any_alive);
    for (std::size_t v = 0; v < g.voxel_count(); v += 2) {
        for (float x : grad.grad(v)) EXPECT_EQ(x, 0.0f);
    }
}

TEST(GridGradient, DensityChainRuleMatchesFiniteDifference) {
    VoxelGrid g(4);
    const std::size_t v = 5;
    for (float raw : {-6.0f, -1.0f, 0.0f, 2.0f, 8.0f}) {
        g.raw(v)[0] = raw;
        g.decode_voxel(v);
        const float analytic = g.decode_derivative(v, 0);
        const float h = 1e-2f;
        const float numeric = (softplus(raw + h) - softplus(raw - h)) / (2 * h) / g.voxel_edge();
        EXPECT_NEAR(analytic, numeric, 1e-3f * std::max(1.0f, numeric));
    }
}

TEST(TrainGrid, FitsConstantBackground) {
    TrainConfig cfg;
    cfg.resolution = 16;
    cfg.iterations = 200;
    cfg.batch_rays = 256;
    const auto r = train_grid(background_dataset(), cfg);
    ASSERT_EQ(r.loss_curve.size(), 200u);
    EXPECT_LT(r.loss_curve.back(), 1e-4f);
    for (std::size_t i = 1; i < r.smoothed_curve.size(); ++i) EXPECT_LE(r.smoothed_curve[i], r.smoothed_curve[i - 1]);
}

TEST(TrainGrid, DeterministicAndDescending) {
    const auto ds = render_dataset(make_scene(builtin_scene("sphere")), 6, 16, 16, 2);
    TrainConfig cfg;
    cfg.resolution = 16;
    cfg.iterations = 501;
    cfg.batch_rays = 128;
    const auto a = train_grid(ds, cfg);
    const auto b = train_grid(ds, cfg);
    EXPECT_EQ(a.loss_curve, b.loss_curve);
    EXPECT_EQ(a.grid.alive_mask(), b.grid.alive_mask());
    EXPECT_LT(a.loss_curve[500], a.loss_curve[0]);
}

TEST(TrainGrid, RejectsEmptyTrainSplitAndBadConfig) {
    auto ds = background_dataset();
    for (auto& v : ds.views) v.held_out = true;
    EXPECT_THROW(train_grid(ds, TrainConfig{}), InvalidArgument);
    TrainConfig bad;
    bad.lr_grid = -1;
    try {
        train_grid(background_dataset(), bad);
        FAIL();
    } catch (const DescriptorError& e) {
        EXPECT_EQ(e.key(), "train.lr_grid");
    }
}

TEST(Upsample, ConstantFieldStaysConstant) {
    VoxelGrid g(8);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) g.set_voxel(v, 2.5f, {0.2f, 0.6f, 0.9f}, {0.1f, 0.3f, 0.5f, 0.7f});
    const VoxelGrid f = upsample_grid(g);
    ASSERT_EQ(f.resolution(), 16);
    for (std::size_t v = 0; v < f.voxel_count(); ++v) {
        EXPECT_NEAR(f.density(v), 2.5f, 1e-4f);
        EXPECT_NEAR(f.decoded(v)[2], 0.6f, 1e-5f);
        EXPECT_NEAR(f.decoded(v)[7], 0.7f, 1e-5f);
    }
}

TEST(Upsample, SmoothFieldRendersTheSame) {
    const VoxelGrid g = smooth_grid(16);
    const VoxelGrid f = upsample_grid(g);
    const MlpHead<float> head{};
    const Camera cam = Camera::look_at({0, 0.5f, 2.5f}, {0, 0, 0}, {0, 1, 0}, focal_from_fov(50, 24), 24, 24);
    const Image a = render_volume_image(g, head, cam, march_params_for(16));
    const Image b = render_volume_image(f, head, cam, march_params_for(32));
    EXPECT_LT(mean_abs_diff(a, b), 1e-2);
}

TEST(Upsample, DeadOnlyWhereAllParentsAreDead) {
    VoxelGrid g(8);
    g.kill_all();
    g.set_alive(g.index(3, 3, 3), true);
    const VoxelGrid f = upsample_grid(g);
    std::size_t alive = 0;
    for (std::size_t v = 0; v < f.voxel_count(); ++v) alive += f.alive(v);
    // Fine voxels 5..8 on each axis read parent 3 as a trilinear corner.
    EXPECT_EQ(alive, 4u * 4u * 4u);
}

TEST(TrainGrid, CoarseToFineEndsAtTheTargetResolution) {
    const auto ds = render_dataset(make_scene(builtin_scene("sphere")), 6, 16, 16, 2);
    TrainConfig cfg;
    cfg.resolution = 16;
    cfg.iterations = 60;
    cfg.batch_rays = 128;
    cfg.upsample_at = {20, 40};
    const auto r = train_grid(ds, cfg);
    EXPECT_EQ(r.grid.resolution(), 16);
    EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
    cfg.upsample_at = {40, 20};
    EXPECT_THROW(train_grid(ds, cfg), DescriptorError);
    cfg.upsample_at = {10, 20, 30, 40};
    EXPECT_THROW(train_grid(ds, cfg), DescriptorError);
}

TEST(Checkpoint, RoundTripIsExact) {
    TrainConfig cfg;
    cfg.resolution = 8;
    cfg.iterations = 5;
    cfg.batch_rays = 16;
    const auto r = train_grid(background_dataset(), cfg);
    const auto path = std::filesystem::temp_directory_path() / "vosh_ckpt_test.vckp";
    save_checkpoint(path, r, cfg);
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.result.head, r.head);
    EXPECT_EQ(ck.result.loss_curve, r.loss_curve);
    EXPECT_EQ(ck.result.grid.alive_mask(), r.grid.alive_mask());
    for (std::size_t v = 0; v < r.grid.voxel_count(); ++v) {
        ASSERT_TRUE(std::equal(r.grid.raw(v).begin(), r.grid.raw(v).end(), ck.result.grid.raw(v).begin()));
    }
    EXPECT_EQ(ck.config.batch_rays, 16);
    std::filesystem::remove(path);
}
