#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fseg/data.hpp"

using namespace fseg;
namespace fs = std::filesystem;

namespace {

const char* fixture_root() {
#ifdef FSEG_FIXTURE_DIR
    return FSEG_FIXTURE_DIR;
#else
    return "tests/fixtures";
#endif
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("fixture dataset decodes to the expected pixel values") {
    auto ds = load_dataset((fs::path(fixture_root()) / "mini").string(), 4);
    REQUIRE(ds.size() == 2);
    CHECK(ds[0].id == "a");
    CHECK(ds[1].id == "b");

    // a.png: RGB byte (r*60 + c*13 + ch*7) % 256
    const auto& img = ds[0].image;
    REQUIRE(img.shape() == Shape{3, 4, 4});
    for (size_t r = 0; r < 4; ++r)
        for (size_t c = 0; c < 4; ++c)
            for (size_t ch = 0; ch < 3; ++ch) {
                const float expect = (float)((r * 60 + c * 13 + ch * 7) % 256) / 255.0f;
                CHECK(img.data()[(ch * 4 + r) * 4 + c] == expect);
            }
    // a mask: top two rows on
    for (size_t r = 0; r < 4; ++r)
        for (size_t c = 0; c < 4; ++c)
            CHECK(ds[0].mask.data()[r * 4 + c] == (r < 2 ? 1.0f : 0.0f));

    // b.png is grayscale: channels must replicate
    const auto& gb = ds[1].image;
    for (size_t i = 0; i < 16; ++i) {
        CHECK(gb.data()[i] == gb.data()[16 + i]);
        CHECK(gb.data()[i] == gb.data()[32 + i]);
    }
    // b mask bytes per row: 0,128,200,255 -> threshold at 0.5 after /255
    for (size_t r = 0; r < 4; ++r) {
        CHECK(ds[1].mask.data()[r * 4 + 0] == 0.0f);
        CHECK(ds[1].mask.data()[r * 4 + 1] == 1.0f);  // 128/255 > 0.5
        CHECK(ds[1].mask.data()[r * 4 + 2] == 1.0f);
        CHECK(ds[1].mask.data()[r * 4 + 3] == 1.0f);
    }
}

TEST_CASE("loading resizes to the requested square resolution") {
    auto ds = load_dataset((fs::path(fixture_root()) / "mini").string(), 8);
    CHECK(ds[0].image.shape() == Shape{3, 8, 8});
    CHECK(ds[0].mask.shape() == Shape{1, 8, 8});
    for (float v : ds[0].mask.data()) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("loader errors: missing layout, empty set, unmatched mask, bad split") {
    TempDir td("fseg_data_err");
    CHECK_THROWS_AS(load_dataset(td.path.string(), 4), DataError);

    fs::create_directories(td.path / "images");
    fs::create_directories(td.path / "masks");
    CHECK_THROWS_AS(load_dataset(td.path.string(), 4), DataError);

    fs::copy_file(fs::path(fixture_root()) / "mini/images/a.png", td.path / "images/a.png");
    CHECK_THROWS_AS(load_dataset(td.path.string(), 4), DataError);

    CHECK_THROWS_AS(load_dataset(td.path.string(), "dev", 4), DataError);
}

TEST_CASE("synthetic generation is bitwise deterministic") {
    SyntheticSpec spec;
    spec.count = 4;
    spec.resolution = 32;
    spec.seed = 42;
    auto a = gen_synthetic(spec), b = gen_synthetic(spec);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        for (size_t j = 0; j < a[i].image.size(); ++j)
            CHECK(a[i].image.data()[j] == b[i].image.data()[j]);
        for (size_t j = 0; j < a[i].mask.size(); ++j)
            CHECK(a[i].mask.data()[j] == b[i].mask.data()[j]);
    }
}

TEST_CASE("synthetic images sit on the 8-bit grid, masks are binary and nonempty") {
    SyntheticSpec spec;
    spec.count = 8;
    spec.resolution = 48;
    spec.seed = 3;
    double area_total = 0;
    for (const auto& s : gen_synthetic(spec)) {
        for (float v : s.image.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
            const double scaled = (double)v * 255.0;
            CHECK(std::abs(scaled - std::round(scaled)) < 1e-4);
        }
        double area = 0;
        for (float v : s.mask.data()) {
            CHECK((v == 0.0f || v == 1.0f));
            area += v;
        }
        area /= (double)s.mask.size();
        CHECK(area > 0.005);
        CHECK(area < 0.7);
        area_total += area;
    }
    CHECK(area_total / 8.0 > 0.02);
}

TEST_CASE("zero camouflage leaves the blobs visibly darker than the background") {
    SyntheticSpec spec;
    spec.count = 6;
    spec.resolution = 48;
    spec.seed = 9;
    spec.camouflage = 0.0;
    for (const auto& s : gen_synthetic(spec)) {
        double in_sum = 0, out_sum = 0, in_n = 0, out_n = 0;
        const size_t hw = s.mask.size();
        for (size_t i = 0; i < hw; ++i) {
            const double g = s.image.data()[hw + i];  // green channel
            if (s.mask.data()[i] > 0.5) {
                in_sum += g;
                ++in_n;
            } else {
                out_sum += g;
                ++out_n;
            }
        }
        CHECK(in_sum / in_n < out_sum / out_n - 0.15);
    }
}

TEST_CASE("synthetic samples survive a PNG round trip exactly") {
    TempDir td("fseg_data_rt");
    fs::create_directories(td.path / "images");
    fs::create_directories(td.path / "masks");
    SyntheticSpec spec;
    spec.count = 3;
    spec.resolution = 24;
    spec.seed = 15;
    auto gen = gen_synthetic(spec);
    for (size_t i = 0; i < gen.size(); ++i) {
        const size_t R = spec.resolution;
        std::vector<uint8_t> rgb(3 * R * R), m(R * R);
        for (size_t p = 0; p < R * R; ++p) {
            for (size_t c = 0; c < 3; ++c)
                rgb[p * 3 + c] = (uint8_t)std::lround(gen[i].image.data()[c * R * R + p] * 255.0f);
            m[p] = gen[i].mask.data()[p] > 0.5f ? 255 : 0;
        }
        char stem[16];
        std::snprintf(stem, sizeof stem, "synth%04zu", i);
        write_rgb_png((td.path / "images" / (std::string(stem) + ".png")).string(), R, R, rgb);
        write_gray_png((td.path / "masks" / (std::string(stem) + ".png")).string(), R, R, m);
    }
    auto loaded = load_dataset(td.path.string(), spec.resolution);
    REQUIRE(loaded.size() == gen.size());
    for (size_t i = 0; i < gen.size(); ++i) {
        for (size_t j = 0; j < gen[i].image.size(); ++j)
            CHECK(loaded[i].image.data()[j] == gen[i].image.data()[j]);
        for (size_t j = 0; j < gen[i].mask.size(); ++j)
            CHECK(loaded[i].mask.data()[j] == gen[i].mask.data()[j]);
    }
}

TEST_CASE("augmentation is deterministic under a fixed stream") {
    SyntheticSpec spec;
    spec.count = 1;
    spec.resolution = 32;
    spec.seed = 21;
    auto s = gen_synthetic(spec)[0];
    Rng r1(77), r2(77);
    auto a = augment(s, r1), b = augment(s, r2);
    for (size_t i = 0; i < a.image.size(); ++i) CHECK(a.image.data()[i] == b.image.data()[i]);
    for (size_t i = 0; i < a.mask.size(); ++i) CHECK(a.mask.data()[i] == b.mask.data()[i]);
}

TEST_CASE("augmentation keeps binary masks and valid image range") {
    SyntheticSpec spec;
    spec.count = 2;
    spec.resolution = 32;
    spec.seed = 23;
    auto data = gen_synthetic(spec);
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        auto a = augment(data[seed % 2], rng);
        CHECK(a.image.shape() == data[0].image.shape());
        CHECK(a.mask.shape() == data[0].mask.shape());
        for (float v : a.mask.data()) CHECK((v == 0.0f || v == 1.0f));
        for (float v : a.image.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("geometric transforms are exact involutions or 4-cycles") {
    Rng rng(31);
    std::vector<float> d(2 * 5 * 5);
    for (auto& v : d) v = (float)rng.uniform();
    auto orig = d;

    detail_aug::flip_h(d, 2, 5, 5);
    detail_aug::flip_h(d, 2, 5, 5);
    CHECK(d == orig);
    detail_aug::flip_v(d, 2, 5, 5);
    detail_aug::flip_v(d, 2, 5, 5);
    CHECK(d == orig);

    std::vector<float> q(2 * 5 * 5);
    for (auto& v : q) v = (float)rng.uniform();
    auto qorig = q;
    for (int i = 0; i < 4; ++i) detail_aug::rot90(q, 2, 5);
    CHECK(q == qorig);
}

TEST_CASE("mask resize preserves binarity and identity at equal size") {
    SyntheticSpec spec;
    spec.count = 1;
    spec.resolution = 16;
    spec.seed = 33;
    auto s = gen_synthetic(spec)[0];
    auto same = resize_mask_nearest(s.mask, 16, 16);
    for (size_t i = 0; i < s.mask.size(); ++i) CHECK(same.data()[i] == s.mask.data()[i]);
    auto up = resize_mask_nearest(s.mask, 31, 31);
    for (float v : up.data()) CHECK((v == 0.0f || v == 1.0f));
}
