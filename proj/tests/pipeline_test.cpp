#include <gtest/gtest.h>

#include "vosh/pipeline.hpp"

using namespace vosh;

namespace {

nlohmann::json tiny_overrides() {
    return nlohmann::json::parse(R"({
        "scene": "sphere",
        "data": {"views": 9, "width": 24, "height": 24},
        "train": {"resolution": 16, "iterations": 40, "batch_rays": 256, "skip_warmup": 20},
        "surface": {"iterations": 5},
        "hybrid": {"iterations": 10, "batch_rays": 256, "r_mesh": 16}
    })");
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return read_file_bytes(p); }

}  // namespace

TEST(PipelineConfig, PresetsExpandToPaperHyperParameters) {
    const auto base = make_pipeline_config({{"preset", "base"}});
    EXPECT_FLOAT_EQ(base.hybrid.lambda_voxel, 0.001f);
    EXPECT_EQ(base.hybrid.r_mesh, 128);
    const auto light = make_pipeline_config({{"preset", "light"}});
    EXPECT_FLOAT_EQ(light.hybrid.lambda_voxel, 0.1f);
    EXPECT_EQ(light.hybrid.r_mesh, 32);
    EXPECT_EQ(base.train.resolution, 128);
    EXPECT_EQ(base.data.views - (base.data.views + 7) / 8, 16);
}

TEST(PipelineConfig, ExplicitKeysOverridePresets) {
    const auto c = make_pipeline_config({{"preset", "light"}, {"hybrid", {{"lambda_voxel", 0.5}}}, {"seed", 7}});
    EXPECT_FLOAT_EQ(c.hybrid.lambda_voxel, 0.5f);
    EXPECT_EQ(c.hybrid.r_mesh, 32);
    EXPECT_EQ(c.train.seed, 7u);
    EXPECT_EQ(c.hybrid.seed, 7u);
    const auto d = make_pipeline_config({{"train", {{"resolution", 64}}}});
    EXPECT_FLOAT_EQ(d.extract.select.max_edge_len, 4.0f * 4.0f / 64.0f);
}

TEST(PipelineConfig, ErrorsNameTheFailingKey) {
    auto key_of = [](const nlohmann::json& j) {
        try {
            make_pipeline_config(j);
        } catch (const DescriptorError& e) {
            return e.key();
        }
        return std::string("<none>");
    };
    EXPECT_EQ(key_of({{"hybrid", {{"lamda_voxel", 0.1}}}}), "hybrid.lamda_voxel");
    EXPECT_EQ(key_of({{"bogus", 1}}), "bogus");
    EXPECT_EQ(key_of({{"preset", "turbo"}}), "preset");
    EXPECT_EQ(key_of({{"hybrid", {{"r_mesh", 4}}}}), "hybrid.r_mesh");
    EXPECT_EQ(key_of({{"data", {{"views", "many"}}}}), "data.views");
    EXPECT_EQ(key_of({{"extract", {{"iso_alpha", 1.5}}}}), "extract.iso_alpha");
}

TEST(PipelineConfig, JsonRoundTrip) {
    const auto c = make_pipeline_config(tiny_overrides());
    const auto again = make_pipeline_config(c.to_json());
    EXPECT_EQ(again.to_json(), c.to_json());
}

TEST(StageFiles, MeshAndHybridRoundTrip) {
    TempDir dir("vosh_stage_files");
    fs::create_directories(dir.path);
    TriMesh m;
    m.positions = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    m.faces = {{0, 1, 2}};
    m.ensure_appearance(0.25f);
    save_mesh(dir.path / "m.vmsh", m);
    EXPECT_EQ(load_mesh(dir.path / "m.vmsh"), m);

    Vosh v;
    v.grid = VoxelGrid(8);
    v.grid.raw(5)[0] = 1.5f;
    v.grid.decode_voxel(5);
    v.mesh = m;
    v.head = init_mlp(2);
    v.occupancy.resolution = 8;
    v.occupancy.cells.assign(512, 0);
    v.occupancy.cells[17] = 1;
    save_hybrid(dir.path / "h.vhyb", v);
    const Vosh w = load_hybrid(dir.path / "h.vhyb");
    EXPECT_EQ(bake(w), bake(v));
    EXPECT_EQ(w.occupancy, v.occupancy);
    EXPECT_EQ(w.grid.alive_mask(), v.grid.alive_mask());
}

TEST(Pipeline, StagesEqualPipelineAndRerunsAreCached) {
    TempDir a("vosh_pipeline_a"), b("vosh_pipeline_b");
    const PipelineConfig cfg = make_pipeline_config(tiny_overrides());
    const StageOptions quiet{false, {true}};
    const EvalReport rep = run_pipeline(cfg, a.path, quiet);
    ASSERT_EQ(rep.views.size(), 2u);
    EXPECT_GT(rep.mean_psnr, 5.0);
    EXPECT_TRUE(fs::exists(a.path / "bake" / "asset.json"));
    EXPECT_TRUE(fs::exists(a.path / "eval" / "renders" / "view_007.png"));

    const auto stage_json = bytes_of(a.path / "grid" / "stage.json");
    const EvalReport again = run_pipeline(cfg, a.path, quiet);
    EXPECT_EQ(bytes_of(a.path / "grid" / "stage.json"), stage_json);
    EXPECT_EQ(again.mean_psnr, rep.mean_psnr);

    const RunPaths p{b.path};
    gen_data_stage(cfg.scene, cfg.data, cfg.seed, p.data(), quiet);
    train_grid_stage(p.data(), cfg.train, p.grid().parent_path(), quiet);
    extract_mesh_stage(p.grid(), cfg.extract, p.mesh().parent_path(), quiet);
    refine_stage(p.data(), p.grid(), p.mesh(), cfg.surface, p.refined().parent_path(), quiet);
    optimize_stage(p.data(), p.grid(), p.refined(), cfg.hybrid, p.hybrid().parent_path(), quiet);
    bake_stage(p.hybrid(), p.asset().parent_path(), quiet);
    const RunPaths pa{a.path};
    EXPECT_EQ(bytes_of(p.grid()), bytes_of(pa.grid()));
    EXPECT_EQ(bytes_of(p.refined()), bytes_of(pa.refined()));
    EXPECT_EQ(bytes_of(p.hybrid()), bytes_of(pa.hybrid()));
    EXPECT_EQ(bytes_of(p.asset()), bytes_of(pa.asset()));
}

TEST(Pipeline, ChangedConfigInvalidatesDownstreamStages) {
    TempDir a("vosh_pipeline_c");
    PipelineConfig cfg = make_pipeline_config(tiny_overrides());
    const StageOptions quiet{false, {true}};
    run_pipeline(cfg, a.path, quiet);
    const auto grid_before = bytes_of(a.path / "grid" / "stage.json");
    const auto asset_before = bytes_of(RunPaths{a.path}.asset());
    cfg.hybrid.lambda_voxel = 0.5f;
    run_pipeline(cfg, a.path, quiet);
    EXPECT_EQ(bytes_of(a.path / "grid" / "stage.json"), grid_before);
    const auto j = nlohmann::json::parse(std::ifstream(a.path / "hybrid" / "stage.json"));
    EXPECT_FLOAT_EQ(j["config"]["lambda_voxel"].get<float>(), 0.5f);
    (void)asset_before;
}

TEST(Pipeline, MissingInputNamesThePath) {
    TempDir a("vosh_pipeline_missing");
    try {
        bake_stage(a.path / "nope.vhyb", a.path / "bake");
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("nope.vhyb"), std::string::npos);
    }
}
