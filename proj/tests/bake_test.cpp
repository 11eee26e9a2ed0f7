#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "vosh/bake.hpp"

using namespace vosh;

namespace {

Vosh random_vosh(int res, std::uint64_t seed, double alive_fraction = 0.05, std::size_t faces = 6) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f), raw(-4.0f, 4.0f);
    Vosh v;
    v.grid = VoxelGrid(res);
    for (std::size_t i = 0; i < v.grid.voxel_count(); ++i) {
        auto r = v.grid.raw(i);
        r[0] = raw(rng);
        for (std::size_t c = 1; c < kChannels; ++c) r[c] = raw(rng);
        v.grid.decode_voxel(i);
        v.grid.set_alive(i, u(rng) < alive_fraction);
    }
    for (std::size_t f = 0; f < faces; ++f) {
        const auto base = std::uint32_t(v.mesh.positions.size());
        for (int k = 0; k < 3; ++k) v.mesh.positions.push_back({u(rng) * 3 - 1.5f, u(rng) * 3 - 1.5f, u(rng) * 3 - 1.5f});
        v.mesh.faces.push_back({base, base + 1, base + 2});
    }
    v.mesh.ensure_appearance();
    for (auto& c : v.mesh.diffuse) c = {u(rng), u(rng), u(rng)};
    for (auto& f : v.mesh.feature) {
        for (auto& x : f) x = u(rng);
    }
    v.head = init_mlp(seed);
    return v;
}

std::vector<std::size_t> section_boundaries(const std::vector<std::uint8_t>& bytes) {
    std::vector<std::size_t> out{12};
    std::size_t pos = 12;
    while (pos < bytes.size()) {
        std::uint64_t len;
        std::memcpy(&len, bytes.data() + pos + 4, 8);
        pos += 4 + 8 + std::size_t(len) + 4;
        out.push_back(pos);
    }
    return out;
}

}  // namespace

TEST(Pyramid, LevelCounts) {
    EXPECT_EQ(pyramid_level_count(128), 5);
    EXPECT_EQ(pyramid_level_count(64), 4);
    EXPECT_EQ(pyramid_level_count(16), 2);
    EXPECT_EQ(pyramid_level_count(8), 1);
    EXPECT_EQ(pyramid_level_count(4), 1);
    EXPECT_THROW(build_occupancy_pyramid(VoxelGrid(12)), InvalidArgument);
}

TEST(Pyramid, DeadGridIsEmptyEverywhere) {
    VoxelGrid g(32);
    g.kill_all();
    const auto p = build_occupancy_pyramid(g);
    ASSERT_EQ(p.level_count(), 3u);
    for (const auto& l : p.levels) EXPECT_EQ(std::count(l.begin(), l.end(), 1), 0);
}

TEST(Pyramid, SingleVoxelGivesOneCellPerLevel) {
    VoxelGrid g(32);
    g.kill_all();
    g.set_alive(g.index(13, 5, 30), true);
    const auto p = build_occupancy_pyramid(g);
    for (std::size_t l = 0; l < p.level_count(); ++l) {
        EXPECT_EQ(std::count(p.levels[l].begin(), p.levels[l].end(), 1), 1);
        EXPECT_TRUE(p.at(l, 13 >> l, 5 >> l, 30 >> l));
    }
}

TEST(Pyramid, CoarseCellsAreTheOrOfTheirChildren) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const int r = 16;
        std::vector<std::uint8_t> mask(r * r * r);
        for (auto& m : mask) m = (rng() % 100) < std::uint64_t(trial * 2);
        const auto p = build_occupancy_pyramid(mask, r);
        ASSERT_EQ(p.level_count(), 2u);
        EXPECT_EQ(p.levels[0], mask);
        for (int k = 0; k < 8; ++k) {
            for (int j = 0; j < 8; ++j) {
                for (int i = 0; i < 8; ++i) {
                    bool any = false;
                    for (int c = 0; c < 8; ++c) any |= p.at(0, 2 * i + (c & 1), 2 * j + ((c >> 1) & 1), 2 * k + (c >> 2)) != 0;
                    EXPECT_EQ(p.at(1, i, j, k), any);
                }
            }
        }
    }
}

TEST(Pyramid, BlockEmptinessMatchesBruteForce) {
    std::mt19937_64 rng(8);
    const int r = 32;
    std::vector<std::uint8_t> mask(r * r * r, 0);
    for (int n = 0; n < 40; ++n) mask[rng() % mask.size()] = 1;
    const auto p = build_occupancy_pyramid(mask, r);
    ASSERT_EQ(p.level_count(), 3u);
    for (int k = 0; k < r - 1; ++k) {
        for (int j = 0; j < r - 1; ++j) {
            for (int i = 0; i < r - 1; ++i) {
                bool any = false;
                for (int c = 0; c < 8; ++c) any |= mask[(std::size_t(k + (c >> 2)) * r + j + ((c >> 1) & 1)) * r + i + (c & 1)] != 0;
                ASSERT_EQ(pyramid_block_empty(p, i, j, k), !any) << i << "," << j << "," << k;
            }
        }
    }
}

TEST(Quantize, DensityWithinOneBucket) {
    const DensityQuantizer q;
    const double step = q.log_step();
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> logu(std::log(kSigmaMin), std::log(kSigmaMax));
    for (int i = 0; i < 5000; ++i) {
        const float s = float(std::exp(logu(rng)));
        const float d = q.decode(q.encode(s));
        EXPECT_LE(std::abs(std::log(double(d)) - std::log(double(s))), 0.5 * step + 1e-6);
    }
    EXPECT_EQ(q.encode(0.0f), 0);
    EXPECT_EQ(q.decode(0), 0.0f);
    EXPECT_EQ(q.encode(1e6f), 255);
    for (int c = 0; c < 256; ++c) EXPECT_EQ(q.encode(q.decode(std::uint8_t(c))), c);
    for (int c = 0; c < 256; ++c) EXPECT_EQ(encode_unit(decode_unit(std::uint8_t(c))), c);
}

TEST(Bake, RoundTripIsAByteFixedPoint) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Vosh v = random_vosh(16, seed);
        const auto bytes = bake(v);
        const LoadedAsset a = load_asset(bytes);
        EXPECT_EQ(bake(a.vosh), bytes);
        EXPECT_EQ(a.vosh.grid.alive_mask(), v.grid.alive_mask());
        EXPECT_EQ(a.pyramid, build_occupancy_pyramid(v.grid));
        EXPECT_EQ(a.vosh.head, v.head);
        EXPECT_EQ(a.vosh.mesh.positions, v.mesh.positions);
        EXPECT_EQ(a.vosh.mesh.faces, v.mesh.faces);
        const double step = DensityQuantizer{}.log_step();
        for (std::size_t i = 0; i < v.grid.voxel_count(); ++i) {
            if (!v.grid.alive(i)) continue;
            const float s0 = v.grid.density(i), s1 = a.vosh.grid.density(i);
            if (s0 >= kSigmaMin) {
                EXPECT_LE(std::abs(std::log(double(s1) / double(s0))), 0.5 * step + 1e-4);
            }
            for (std::size_t c = 1; c < kChannels; ++c) EXPECT_NEAR(a.vosh.grid.decoded(i)[c], v.grid.decoded(i)[c], 0.5f / 255.0f + 1e-5f);
        }
        for (std::size_t i = 0; i < v.mesh.positions.size(); ++i) {
            for (int c = 0; c < 3; ++c) EXPECT_NEAR(a.vosh.mesh.diffuse[i][c], v.mesh.diffuse[i][c], 0.5f / 255.0f + 1e-6f);
        }
    }
}

TEST(Bake, HaloCoversEveryTrilinearNeighbor) {
    const Vosh v = random_vosh(16, 9, 0.02);
    const LoadedAsset a = load_asset(bake(v));
    const auto stored = stored_cells(v.grid);
    std::vector<std::uint8_t> is_stored(v.grid.voxel_count(), 0);
    for (auto c : stored) is_stored[c] = 1;
    const int r = 16;
    for (int k = 0; k < r; ++k) {
        for (int j = 0; j < r; ++j) {
            for (int i = 0; i < r; ++i) {
                if (!v.grid.alive(v.grid.index(i, j, k))) continue;
                for (int c = 0; c < 27; ++c) {
                    const int ii = i + c % 3 - 1, jj = j + (c / 3) % 3 - 1, kk = k + c / 9 - 1;
                    if (ii < 0 || jj < 0 || kk < 0 || ii >= r || jj >= r || kk >= r) continue;
                    const std::size_t n = v.grid.index(ii, jj, kk);
                    ASSERT_TRUE(is_stored[n]);
                    for (std::size_t ch = 1; ch < kChannels; ++ch) {
                        EXPECT_NEAR(a.vosh.grid.decoded(n)[ch], v.grid.decoded(n)[ch], 0.5f / 255.0f + 1e-5f);
                    }
                }
            }
        }
    }
}

TEST(Bake, SingleVoxelEmptyMesh) {
    Vosh v;
    v.grid = VoxelGrid(8);
    v.grid.kill_all();
    v.grid.raw(v.grid.index(3, 4, 5))[0] = 2.0f;
    v.grid.set_alive(v.grid.index(3, 4, 5), true);
    const auto bytes = bake(v);
    const LoadedAsset a = load_asset(bytes);
    EXPECT_EQ(a.vosh.grid.alive_count(), 1u);
    EXPECT_TRUE(a.vosh.grid.alive(a.vosh.grid.index(3, 4, 5)));
    EXPECT_TRUE(a.vosh.mesh.empty());
    EXPECT_EQ(a.manifest["counts"]["alive_voxels"], 1);
    EXPECT_EQ(a.manifest["counts"]["stored_cells"], 27);
    EXPECT_EQ(a.manifest["resolution"], 8);
    EXPECT_EQ(a.manifest["density"]["sigma_max"], kSigmaMax);
}

TEST(Bake, IsDeterministic) {
    EXPECT_EQ(bake(random_vosh(16, 5)), bake(random_vosh(16, 5)));
}

TEST(Load, RejectsBadMagic) {
    auto bytes = bake(random_vosh(8, 1));
    bytes[0] = 'X';
    try {
        load_asset(bytes);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.kind(), ParseErrorKind::BadMagic);
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }
}

TEST(Load, RejectsVersionMismatch) {
    auto bytes = bake(random_vosh(8, 1));
    bytes[4] = 2;
    try {
        load_asset(bytes);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.kind(), ParseErrorKind::VersionMismatch);
    }
}

TEST(Load, TruncationAtEverySectionBoundary) {
    const auto bytes = bake(random_vosh(8, 3));
    const auto bounds = section_boundaries(bytes);
    ASSERT_EQ(bounds.size(), 6u);
    ASSERT_EQ(bounds.back(), bytes.size());
    for (std::size_t cut : bounds) {
        if (cut == bytes.size()) continue;
        for (std::size_t len : {cut, cut + 1, cut + 7}) {
            if (len >= bytes.size()) continue;
            try {
                load_asset(std::span(bytes).first(len));
                FAIL() << "accepted truncation at " << len;
            } catch (const ParseError& e) {
                EXPECT_EQ(e.kind(), ParseErrorKind::Truncated) << len << ": " << e.what();
            }
        }
    }
    for (std::size_t len = 0; len < 12; ++len) EXPECT_THROW(load_asset(std::span(bytes).first(len)), ParseError);
}

TEST(Load, RejectsCorruptedPayload) {
    auto bytes = bake(random_vosh(8, 4));
    bytes[bytes.size() - 10] ^= 0xff;
    try {
        load_asset(bytes);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.kind(), ParseErrorKind::Checksum);
    }
}

TEST(Load, SidecarManifestMatchesEmbeddedOne) {
    const auto dir = std::filesystem::temp_directory_path() / "vosh_bake_test";
    std::filesystem::create_directories(dir);
    const Vosh v = random_vosh(8, 6);
    write_asset(dir / "asset.vosh", v);
    const auto a = load_asset_file(dir / "asset.vosh");
    std::ifstream side(dir / "asset.json");
    EXPECT_EQ(nlohmann::json::parse(side), a.manifest);
    std::filesystem::remove_all(dir);
}
