#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cytoforge/c3p.hpp"
#include "testutil.hpp"

using namespace cytoforge;
using namespace cytoforge::c3p;
namespace fs = std::filesystem;

namespace {

// Wilson-Hilferty approximation of the chi-square quantile.
double chi2_quantile(int dof, double p_upper) {
    const double z = 3.0902;  // Phi^-1(0.999)
    (void)p_upper;
    const double m = static_cast<double>(dof);
    const double t = 1.0 - 2.0 / (9.0 * m) + z * std::sqrt(2.0 / (9.0 * m));
    return m * t * t * t;
}

CellBank tiny_bank(Rng& rng, int cell_w = 8, int cell_h = 8) {
    CellBank bank;
    for (int i = 0; i < 4; ++i) {
        CellImage cell;
        cell.image = testutil::random_image(cell_w, cell_h, rng);
        cell.label = i % 2;
        cell.dataset_tag = "synthetic";
        cell.class_tag = cell.label ? "POS" : "NEG";
        cell.id = "cell_" + std::to_string(i);
        bank.add(std::move(cell));
    }
    return bank;
}

}  // namespace

TEST_CASE("sample_paste_location: uniform marginals pass a chi-square test") {
    Rng rng(101);
    const int n_draws = 100000;
    const int bins = 221;  // 320 - 100 + 1
    std::vector<int> hx(bins, 0), hy(bins, 0);
    for (int i = 0; i < n_draws; ++i) {
        const auto [x, y] = sample_paste_location(320, 320, 100, 100, rng);
        REQUIRE(x >= 0);
        REQUIRE(x < bins);
        REQUIRE(y >= 0);
        REQUIRE(y < bins);
        ++hx[x];
        ++hy[y];
    }
    const double expected = static_cast<double>(n_draws) / bins;
    double chi_x = 0.0, chi_y = 0.0;
    for (int b = 0; b < bins; ++b) {
        chi_x += (hx[b] - expected) * (hx[b] - expected) / expected;
        chi_y += (hy[b] - expected) * (hy[b] - expected) / expected;
    }
    const double crit = chi2_quantile(bins - 1, 0.001);
    CHECK(chi_x < crit);
    CHECK(chi_y < crit);
}

TEST_CASE("sample_paste_location: full-size cell always lands at the origin") {
    Rng rng(7);
    for (int i = 0; i < 10; ++i) {
        const auto [x, y] = sample_paste_location(320, 320, 320, 320, rng);
        CHECK(x == 0);
        CHECK(y == 0);
    }
}

TEST_CASE("sample_paste_location: oversized cell is an error, no silent resizing") {
    Rng rng(7);
    CHECK_THROWS_AS(sample_paste_location(320, 320, 321, 100, rng), Error);
    CHECK_THROWS_AS(sample_paste_location(320, 320, 100, 321, rng), Error);
}

TEST_CASE("paste: replaces the site, leaves the rest bit-identical") {
    const RasterImage cell = RasterImage::filled(2, 2, 10, 10, 10);
    const RasterImage canvas = RasterImage::filled(4, 4, 200, 200, 200);
    const RasterImage out = paste(cell, canvas, 0, 0);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            const uint8_t expect = (x < 2 && y < 2) ? 10 : 200;
            CHECK(out.at(x, y, 0) == expect);
        }
    }

    SUBCASE("full-canvas cell replaces everything") {
        Rng rng(3);
        const RasterImage big = testutil::random_image(4, 4, rng);
        CHECK(paste(big, canvas, 0, 0).pixels == big.pixels);
    }
    SUBCASE("out-of-bounds offset is an error") {
        CHECK_THROWS_AS(paste(cell, canvas, 3, 0), Error);
        CHECK_THROWS_AS(paste(cell, canvas, -1, 0), Error);
    }
    SUBCASE("locality on random inputs") {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            const RasterImage c = testutil::random_image(5, 3, rng);
            const RasterImage cv = testutil::random_image(12, 9, rng);
            const int x = static_cast<int>(rng.below(8));
            const int y = static_cast<int>(rng.below(7));
            const RasterImage o = paste(c, cv, x, y);
            for (int yy = 0; yy < 9; ++yy) {
                for (int xx = 0; xx < 12; ++xx) {
                    if (xx >= x && xx < x + 5 && yy >= y && yy < y + 3) continue;
                    CHECK(o.at(xx, yy, 0) == cv.at(xx, yy, 0));
                    CHECK(o.at(xx, yy, 1) == cv.at(xx, yy, 1));
                    CHECK(o.at(xx, yy, 2) == cv.at(xx, yy, 2));
                }
            }
        }
    }
}

TEST_CASE("blend endpoints and midpoint") {
    Rng rng(9);
    const RasterImage cell = testutil::random_image(6, 6, rng);
    const RasterImage canvas = testutil::random_image(10, 10, rng);

    SUBCASE("lambda 0 reproduces the cell at the site") {
        const RasterImage out = blend(cell, canvas, 2, 3, 0.0);
        for (int y = 0; y < 6; ++y) {
            for (int x = 0; x < 6; ++x) {
                CHECK(out.at(x + 2, y + 3, 0) == cell.at(x, y, 0));
                CHECK(out.at(x + 2, y + 3, 1) == cell.at(x, y, 1));
                CHECK(out.at(x + 2, y + 3, 2) == cell.at(x, y, 2));
            }
        }
    }
    SUBCASE("lambda 1 reproduces the canvas") {
        const RasterImage out = blend(cell, canvas, 2, 3, 1.0);
        CHECK(out.pixels == canvas.pixels);
    }
    SUBCASE("lambda 0.5 averages") {
        const RasterImage c50 = RasterImage::filled(6, 6, 100, 100, 100);
        const RasterImage cv200 = RasterImage::filled(10, 10, 200, 200, 200);
        const RasterImage out = blend(c50, cv200, 0, 0, 0.5);
        CHECK(out.at(0, 0, 0) == 150);
        CHECK(out.at(5, 5, 2) == 150);
        CHECK(out.at(6, 6, 0) == 200);
    }
    SUBCASE("lambda outside [0,1] is an error") {
        CHECK_THROWS_AS(blend(cell, canvas, 0, 0, -0.01), Error);
        CHECK_THROWS_AS(blend(cell, canvas, 0, 0, 1.01), Error);
    }
    SUBCASE("blended values stay within [min,max] of the pair, +-1 rounding") {
        Rng rng2(13);
        for (int trial = 0; trial < 10; ++trial) {
            const double lambda = rng2.real01();
            const RasterImage out = blend(cell, canvas, 2, 3, lambda);
            for (int y = 0; y < 6; ++y) {
                for (int x = 0; x < 6; ++x) {
                    for (int ch = 0; ch < 3; ++ch) {
                        const int a = cell.at(x, y, ch);
                        const int b = canvas.at(x + 2, y + 3, ch);
                        const int v = out.at(x + 2, y + 3, ch);
                        CHECK(v >= std::min(a, b) - 1);
                        CHECK(v <= std::max(a, b) + 1);
                    }
                }
            }
        }
    }
}

TEST_CASE("poisson_paste contracts") {
    SUBCASE("constant cell on constant canvas disappears into the canvas") {
        const RasterImage cell = RasterImage::filled(9, 9, 40, 200, 90);
        const RasterImage canvas = RasterImage::filled(20, 20, 180, 60, 130);
        const RasterImage out = poisson_paste(cell, canvas, 4, 5, poisson::SolverParams{});
        for (int y = 0; y < 20; ++y) {
            for (int x = 0; x < 20; ++x) {
                for (int c = 0; c < 3; ++c) {
                    CHECK(std::abs(out.at(x, y, c) - canvas.at(x, y, c)) <= 1);
                }
            }
        }
    }
    SUBCASE("cell cut from the canvas composes back bit-identically") {
        Rng rng(21);
        const RasterImage canvas = testutil::random_image(24, 20, rng);
        const RasterImage cell = crop(canvas, 6, 5, 8, 7);
        const RasterImage out = poisson_paste(cell, canvas, 6, 5, poisson::SolverParams{});
        CHECK(out.pixels == canvas.pixels);
    }
    SUBCASE("the one-pixel border ring stays bit-identical to the canvas") {
        Rng rng(22);
        const RasterImage canvas = testutil::random_image(30, 30, rng);
        const RasterImage cell = testutil::random_image(10, 10, rng);
        const RasterImage out = poisson_paste(cell, canvas, 8, 9, poisson::SolverParams{});
        for (int i = 0; i < 10; ++i) {
            for (int c = 0; c < 3; ++c) {
                CHECK(out.at(8 + i, 9, c) == canvas.at(8 + i, 9, c));        // top edge
                CHECK(out.at(8 + i, 9 + 9, c) == canvas.at(8 + i, 9 + 9, c));  // bottom
                CHECK(out.at(8, 9 + i, c) == canvas.at(8, 9 + i, c));        // left
                CHECK(out.at(8 + 9, 9 + i, c) == canvas.at(8 + 9, 9 + i, c));  // right
            }
        }
    }
}

TEST_CASE("apply_c3p policy behavior") {
    Rng bank_rng(31);
    const CellBank bank = tiny_bank(bank_rng);
    const RasterImage canvas = RasterImage::filled(32, 32, 128, 128, 128);

    SUBCASE("p_neg=0 passes negative canvases through unmodified") {
        PastePolicy policy;
        policy.mode = PasteMode::Paste;
        policy.p_neg = 0.0;
        Rng rng(1);
        for (int i = 0; i < 50; ++i) {
            const PastedTile tile = apply_c3p(canvas, "cv", 0, bank, policy, rng);
            CHECK_FALSE(tile.prov.pasted);
            CHECK(tile.label == 0);
            CHECK(tile.image.pixels == canvas.pixels);
        }
    }
    SUBCASE("p_pos=1 pastes a positive cell on every positive canvas") {
        PastePolicy policy;
        policy.mode = PasteMode::Paste;
        policy.p_pos = 1.0;
        Rng rng(2);
        for (int i = 0; i < 50; ++i) {
            const PastedTile tile = apply_c3p(canvas, "cv", 1, bank, policy, rng);
            CHECK(tile.prov.pasted);
            CHECK(tile.label == 1);
            CHECK(tile.prov.cell_id.has_value());
        }
    }
    SUBCASE("seeded determinism reproduces the same choices") {
        PastePolicy policy;
        policy.mode = PasteMode::Blend;
        policy.p_neg = 1.0;
        std::vector<Provenance> first;
        for (int run = 0; run < 2; ++run) {
            Rng rng(77);
            for (int i = 0; i < 20; ++i) {
                const PastedTile tile = apply_c3p(canvas, "cv", 0, bank, policy, rng);
                if (run == 0) {
                    first.push_back(tile.prov);
                } else {
                    const Provenance& p = first[i];
                    CHECK(p.cell_id == tile.prov.cell_id);
                    CHECK(p.x == tile.prov.x);
                    CHECK(p.y == tile.prov.y);
                    CHECK(p.lambda == tile.prov.lambda);
                }
            }
        }
    }
    SUBCASE("label bookkeeping over 1000 seeded draws") {
        PastePolicy policy;
        policy.mode = PasteMode::Paste;
        policy.p_pos = 0.7;
        policy.p_neg = 0.4;
        Rng rng(99);
        for (int i = 0; i < 1000; ++i) {
            const int polarity = i % 2;
            const PastedTile tile = apply_c3p(canvas, "cv", polarity, bank, policy, rng);
            if (tile.prov.pasted) {
                CHECK(tile.label == polarity);  // cells are label-matched to polarity
            } else {
                CHECK(tile.label == polarity);
                CHECK(tile.image.pixels == canvas.pixels);
            }
        }
    }
    SUBCASE("empirical paste rate within 3 sigma of the configured probability") {
        PastePolicy policy;
        policy.mode = PasteMode::Paste;
        policy.p_neg = 0.35;
        Rng rng(123);
        const int n = 10000;
        int pasted = 0;
        for (int i = 0; i < n; ++i) {
            pasted += apply_c3p(canvas, "cv", 0, bank, policy, rng).prov.pasted ? 1 : 0;
        }
        const double rate = static_cast<double>(pasted) / n;
        const double sigma = std::sqrt(0.35 * 0.65 / n);
        CHECK(std::abs(rate - 0.35) <= 3.0 * sigma);
    }
    SUBCASE("empty bank side for the required label is an error") {
        CellBank empty_side;
        CellImage only_neg;
        only_neg.image = RasterImage::filled(4, 4, 9, 9, 9);
        only_neg.label = 0;
        only_neg.dataset_tag = "synthetic";
        only_neg.class_tag = "NEG";
        only_neg.id = "n0";
        empty_side.add(std::move(only_neg));
        PastePolicy policy;
        policy.p_pos = 1.0;
        Rng rng(5);
        CHECK_THROWS_AS(apply_c3p(canvas, "cv", 1, empty_side, policy, rng), Error);
    }
}

TEST_CASE("cell bank enforces dataset class/label consistency") {
    CellImage cell;
    cell.image = RasterImage::filled(4, 4, 1, 1, 1);
    cell.dataset_tag = "herlev";
    cell.class_tag = "LD";
    cell.id = "c";

    CellBank bank;
    cell.label = 1;
    bank.add(cell);  // LD is positive, consistent

    cell.label = 0;
    CHECK_THROWS_AS(bank.add(cell), Error);

    cell.dataset_tag = "sipakmed";
    cell.class_tag = "SI";
    cell.label = 0;
    bank.add(cell);
    cell.label = 1;
    CHECK_THROWS_AS(bank.add(cell), Error);

    cell.dataset_tag = "herlev";
    cell.class_tag = "XX";
    CHECK_THROWS_AS(bank.add(cell), Error);
}

TEST_CASE("generate_pasted_dataset") {
    Rng rng(41);
    testutil::TempDir canvases("ds_canvases");
    std::vector<CanvasRef> neg_pool, pos_pool;
    for (int i = 0; i < 4; ++i) {
        const RasterImage neg = testutil::random_image(32, 32, rng);
        const RasterImage pos = testutil::random_image(32, 32, rng);
        const std::string neg_path = (canvases.path() / ("n" + std::to_string(i) + ".png")).string();
        const std::string pos_path = (canvases.path() / ("p" + std::to_string(i) + ".png")).string();
        write_png(neg_path, neg);
        write_png(pos_path, pos);
        neg_pool.push_back({"n" + std::to_string(i), neg_path});
        pos_pool.push_back({"p" + std::to_string(i), pos_path});
    }
    const CellBank bank = tiny_bank(rng);

    PastePolicy policy;
    policy.mode = PasteMode::Paste;
    policy.p_pos = 1.0;
    policy.p_neg = 1.0;
    policy.canvases_per_class = 4;
    policy.seed = 2024;

    SUBCASE("n_outputs files with provenance referencing the pools") {
        testutil::TempDir out("ds_out");
        const auto manifest =
            generate_pasted_dataset(bank, neg_pool, pos_pool, policy, 8, out.str());
        CHECK(manifest.items.size() == 8);
        for (int i = 0; i < 8; ++i) {
            const auto& item = manifest.items[i];
            CHECK(fs::exists(out.path() / item.path));
            CHECK(item.prov.pasted);
            const char expect_prefix = i % 2 == 0 ? 'n' : 'p';
            CHECK(item.prov.canvas_id[0] == expect_prefix);
            CHECK(item.label == i % 2);
        }
        const auto loaded = load_pasted_manifest((out.path() / "manifest.json").string());
        CHECK(loaded.items.size() == 8);
        CHECK(loaded.policy.mode == PasteMode::Paste);
        CHECK(loaded.policy.seed == 2024);
    }
    SUBCASE("same seed twice produces byte-identical outputs") {
        testutil::TempDir out_a("ds_a");
        testutil::TempDir out_b("ds_b");
        generate_pasted_dataset(bank, neg_pool, pos_pool, policy, 6, out_a.str());
        generate_pasted_dataset(bank, neg_pool, pos_pool, policy, 6, out_b.str());
        for (const char* name : {"manifest.json", "pasted/p_000000.png", "pasted/p_000005.png"}) {
            std::ifstream a(out_a.path() / name, std::ios::binary);
            std::ifstream b(out_b.path() / name, std::ios::binary);
            const std::string sa((std::istreambuf_iterator<char>(a)),
                                 std::istreambuf_iterator<char>());
            const std::string sb((std::istreambuf_iterator<char>(b)),
                                 std::istreambuf_iterator<char>());
            CHECK(sa == sb);
            CHECK(!sa.empty());
        }
    }
    SUBCASE("n_outputs=0 writes an empty manifest and no tiles") {
        testutil::TempDir out("ds_zero");
        const auto manifest =
            generate_pasted_dataset(bank, neg_pool, pos_pool, policy, 0, out.str());
        CHECK(manifest.items.empty());
        CHECK(fs::exists(out.path() / "manifest.json"));
        size_t n_files = 0;
        for (const auto& e : fs::directory_iterator(out.path() / "pasted")) {
            (void)e;
            ++n_files;
        }
        CHECK(n_files == 0);
    }
}

TEST_CASE("pasted manifest json round-trips") {
    PastedDatasetManifest m;
    m.policy.mode = PasteMode::Blend;
    m.policy.p_pos = 0.9;
    m.policy.p_neg = 0.1;
    m.policy.seed = 7;
    DatasetItem item;
    item.path = "pasted/p_000000.png";
    item.label = 1;
    item.prov.cell_id = "cell_3";
    item.prov.canvas_id = "cv_2";
    item.prov.x = 10;
    item.prov.y = 20;
    item.prov.mode = PasteMode::Blend;
    item.prov.lambda = 0.25;
    item.prov.pasted = true;
    m.items.push_back(item);
    DatasetItem passthrough;
    passthrough.path = "pasted/p_000001.png";
    passthrough.label = 0;
    passthrough.prov.canvas_id = "cv_5";
    passthrough.prov.mode = PasteMode::Blend;
    passthrough.prov.pasted = false;
    m.items.push_back(passthrough);

    const auto loaded = pasted_manifest_from_json(pasted_manifest_to_json(m), "test");
    CHECK(loaded.policy.p_pos == 0.9);
    CHECK(loaded.items.size() == 2);
    CHECK(loaded.items[0].prov.cell_id == std::optional<std::string>("cell_3"));
    CHECK(loaded.items[0].prov.lambda == std::optional<double>(0.25));
    CHECK(loaded.items[1].prov.pasted == false);
    CHECK(!loaded.items[1].prov.cell_id.has_value());
}
