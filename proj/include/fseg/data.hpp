#pragma once

// Dataset ingestion (parallel images/ + masks/ directories matched by stem),
// deterministic synthetic blob generator, and the training augmentations.

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "fseg/image_io.hpp"
#include "fseg/nn_ops.hpp"
#include "fseg/random.hpp"
#include "fseg/tensor.hpp"

namespace fseg {

struct Sample {
    Tensor<float> image;  // [3,H,W], values in [0,1]
    Tensor<float> mask;   // [1,H,W], values in {0,1}
    std::string id;
};

// ---------------------------------------------------------------------------
// Resizing helpers (eval-mode tensor graph, no lineage)

inline Tensor<float> resize_image_chw(const Tensor<float>& chw, size_t ho, size_t wo) {
    NoGradGuard ng;
    const size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Tensor<float> batched = reshape(chw, Shape{1, c, h, w});
    return reshape(bilinear_resize(batched, ho, wo), Shape{c, ho, wo});
}

// Nearest-neighbor, half-pixel centers; masks stay binary.
inline Tensor<float> resize_mask_nearest(const Tensor<float>& mask, size_t ho, size_t wo) {
    const size_t h = mask.dim(1), w = mask.dim(2);
    std::vector<float> out(ho * wo);
    for (size_t y = 0; y < ho; ++y) {
        size_t sy = std::min<size_t>((size_t)(((double)y + 0.5) * (double)h / (double)ho), h - 1);
        for (size_t x = 0; x < wo; ++x) {
            size_t sx = std::min<size_t>((size_t)(((double)x + 0.5) * (double)w / (double)wo), w - 1);
            out[y * wo + x] = mask.data()[sy * w + sx];
        }
    }
    return Tensor<float>(Shape{1, ho, wo}, std::move(out));
}

// ---------------------------------------------------------------------------
// Loader

inline Sample load_pair(const std::filesystem::path& image_path,
                        const std::filesystem::path& mask_path, size_t resolution,
                        const std::string& id) {
    RawImage img = read_image(image_path.string());
    RawImage msk = read_image(mask_path.string());

    std::vector<float> chw(3 * img.height * img.width);
    for (size_t y = 0; y < img.height; ++y)
        for (size_t x = 0; x < img.width; ++x)
            for (size_t c = 0; c < 3; ++c) {
                const uint8_t v = img.channels == 1 ? img.pixels[y * img.width + x]
                                                    : img.pixels[(y * img.width + x) * 3 + c];
                chw[(c * img.height + y) * img.width + x] = (float)v / 255.0f;
            }
    std::vector<float> m(msk.height * msk.width);
    for (size_t i = 0; i < msk.height * msk.width; ++i) {
        // Multi-channel masks collapse to their first channel.
        const uint8_t v = msk.channels == 1 ? msk.pixels[i] : msk.pixels[i * msk.channels];
        m[i] = (float)v / 255.0f;
    }

    Sample s;
    s.id = id;
    s.image = resize_image_chw(Tensor<float>(Shape{3, img.height, img.width}, std::move(chw)),
                               resolution, resolution);
    Tensor<float> mr = resize_mask_nearest(
        Tensor<float>(Shape{1, msk.height, msk.width}, std::move(m)), resolution, resolution);
    for (auto& v : mr.raw_data()) v = v >= 0.5f ? 1.0f : 0.0f;
    s.mask = mr;
    return s;
}

// Directory layout: <dir>/images/<stem>.<ext> with <dir>/masks/<stem>.<ext'>.
// Deterministic lexicographic order by stem.
inline std::vector<Sample> load_dataset(const std::string& dir, size_t resolution) {
    namespace fs = std::filesystem;
    const fs::path images = fs::path(dir) / "images";
    const fs::path masks = fs::path(dir) / "masks";
    if (!fs::is_directory(images) || !fs::is_directory(masks))
        throw DataError("dataset root " + dir + " lacks parallel images/ and masks/ directories");

    std::vector<fs::path> image_files;
    for (const auto& e : fs::directory_iterator(images)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") image_files.push_back(e.path());
    }
    if (image_files.empty()) throw DataError("empty dataset: no images under " + images.string());
    std::sort(image_files.begin(), image_files.end(),
              [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });

    std::vector<Sample> out;
    for (const auto& ip : image_files) {
        const std::string stem = ip.stem().string();
        fs::path mp;
        for (const char* ext : {".png", ".jpg", ".jpeg"}) {
            fs::path cand = masks / (stem + ext);
            if (fs::exists(cand)) {
                mp = cand;
                break;
            }
        }
        if (mp.empty()) throw DataError("missing mask for image stem: " + stem);
        out.push_back(load_pair(ip, mp, resolution, stem));
    }
    return out;
}

// Split layout: <root>/<split>/images + <root>/<split>/masks.
inline std::vector<Sample> load_dataset(const std::string& root, const std::string& split,
                                        size_t resolution) {
    if (split != "train" && split != "val" && split != "test")
        throw DataError("unknown dataset split: " + split);
    return load_dataset((std::filesystem::path(root) / split).string(), resolution);
}

// ---------------------------------------------------------------------------
// Synthetic polyp-like blobs: smooth background, 1..k elliptical blobs with
// Fourier-perturbed boundaries, texture noise. Fully determined by the seed.

struct SyntheticSpec {
    size_t count = 8;
    size_t resolution = 64;
    uint64_t seed = 1;
    size_t blob_min = 1, blob_max = 4;
    double radius_min = 0.12, radius_max = 0.28;  // fraction of image extent
    double noise = 0.03;
    double camouflage = 0.0;  // 0 = maximal blob/background contrast

    void validate() const {
        if (resolution == 0) throw DataError("synthetic: zero resolution");
        if (count == 0) throw DataError("synthetic: zero count");
        if (blob_min < 1 || blob_max < blob_min) throw DataError("synthetic: bad blob range");
        if (radius_min <= 0 || radius_max < radius_min) throw DataError("synthetic: bad radius range");
    }
};

inline std::vector<Sample> gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::vector<Sample> out;
    const size_t R = spec.resolution;
    const double contrast = 0.45 * (1.0 - spec.camouflage);
    for (size_t si = 0; si < spec.count; ++si) {
        Rng rng = Rng(spec.seed).split("sample" + std::to_string(si));

        // smooth background per channel: base + linear ramp
        double base[3], gy[3], gx[3];
        for (int c = 0; c < 3; ++c) {
            base[c] = rng.uniform(0.45, 0.7);
            gy[c] = rng.uniform(-0.1, 0.1);
            gx[c] = rng.uniform(-0.1, 0.1);
        }

        struct Blob {
            double cy, cx, r0, aspect, angle;
            double amp[3], phase[3];  // Fourier boundary perturbation, k=2..4
        };
        const size_t nblobs = spec.blob_min + rng.below(spec.blob_max - spec.blob_min + 1);
        std::vector<Blob> blobs(nblobs);
        for (auto& b : blobs) {
            b.cy = rng.uniform(0.25, 0.75) * (double)R;
            b.cx = rng.uniform(0.25, 0.75) * (double)R;
            b.r0 = rng.uniform(spec.radius_min, spec.radius_max) * (double)R;
            b.aspect = rng.uniform(0.7, 1.4);
            b.angle = rng.uniform(0.0, 3.14159265358979323846);
            for (int k = 0; k < 3; ++k) {
                b.amp[k] = rng.uniform(0.0, 0.12);
                b.phase[k] = rng.uniform(0.0, 6.283185307179586);
            }
        }

        std::vector<float> img(3 * R * R), mask(R * R, 0.0f);
        for (size_t y = 0; y < R; ++y)
            for (size_t x = 0; x < R; ++x) {
                bool inside = false;
                for (const auto& b : blobs) {
                    const double dy = (double)y - b.cy, dx = (double)x - b.cx;
                    const double ca = std::cos(b.angle), sa = std::sin(b.angle);
                    const double u = (ca * dx + sa * dy) / b.aspect;
                    const double v = -sa * dx + ca * dy;
                    const double rr = std::sqrt(u * u + v * v);
                    const double th = std::atan2(v, u);
                    double rb = b.r0;
                    for (int k = 0; k < 3; ++k)
                        rb *= 1.0 + b.amp[k] * std::cos((double)(k + 2) * th + b.phase[k]);
                    if (rr <= rb) {
                        inside = true;
                        break;
                    }
                }
                if (inside) mask[y * R + x] = 1.0f;
                for (int c = 0; c < 3; ++c) {
                    double v = base[c] + gy[c] * (double)y / (double)R +
                               gx[c] * (double)x / (double)R;
                    // blobs darker, reddish tint
                    if (inside) v -= contrast * (c == 0 ? 0.6 : 1.0);
                    v += spec.noise * rng.normal();
                    v = std::min(1.0, std::max(0.0, v));
                    // quantize to the 8-bit grid so a PNG round trip is exact
                    img[(size_t)(c * R * R) + y * R + x] =
                        (float)(std::round(v * 255.0) / 255.0);
                }
            }

        Sample s;
        s.id = "synth" + std::to_string(si);
        s.image = Tensor<float>(Shape{3, R, R}, std::move(img));
        s.mask = Tensor<float>(Shape{1, R, R}, std::move(mask));
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation: flips (p=0.5 each), k*90-degree rotation (p=0.5), coarse
// dropout (p=0.3, up to 2 rectangles, each at most 1/8 of the image area,
// zeroed in the image only). Geometric transforms hit image and mask alike.

namespace detail_aug {

inline void flip_h(std::vector<float>& d, size_t c, size_t h, size_t w) {
    for (size_t ci = 0; ci < c; ++ci)
        for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < w / 2; ++x)
                std::swap(d[(ci * h + y) * w + x], d[(ci * h + y) * w + (w - 1 - x)]);
}

inline void flip_v(std::vector<float>& d, size_t c, size_t h, size_t w) {
    for (size_t ci = 0; ci < c; ++ci)
        for (size_t y = 0; y < h / 2; ++y)
            for (size_t x = 0; x < w; ++x)
                std::swap(d[(ci * h + y) * w + x], d[(ci * h + (h - 1 - y)) * w + x]);
}

// 90 degrees counter-clockwise, square images only.
inline void rot90(std::vector<float>& d, size_t c, size_t n) {
    std::vector<float> tmp(n * n);
    for (size_t ci = 0; ci < c; ++ci) {
        float* plane = d.data() + ci * n * n;
        for (size_t y = 0; y < n; ++y)
            for (size_t x = 0; x < n; ++x) tmp[(n - 1 - x) * n + y] = plane[y * n + x];
        std::copy(tmp.begin(), tmp.end(), plane);
    }
}

}  // namespace detail_aug

inline Sample augment(const Sample& in, Rng& rng) {
    const size_t h = in.image.dim(1), w = in.image.dim(2);
    Sample out;
    out.id = in.id;
    std::vector<float> img = in.image.data();
    std::vector<float> msk = in.mask.data();

    if (rng.bernoulli(0.5)) {
        detail_aug::flip_h(img, 3, h, w);
        detail_aug::flip_h(msk, 1, h, w);
    }
    if (rng.bernoulli(0.5)) {
        detail_aug::flip_v(img, 3, h, w);
        detail_aug::flip_v(msk, 1, h, w);
    }
    if (h == w && rng.bernoulli(0.5)) {
        const size_t k = 1 + rng.below(3);
        for (size_t i = 0; i < k; ++i) {
            detail_aug::rot90(img, 3, h);
            detail_aug::rot90(msk, 1, h);
        }
    }
    if (rng.bernoulli(0.3)) {
        const size_t rects = 1 + rng.below(2);
        for (size_t r = 0; r < rects; ++r) {
            // each rectangle at most 1/8 of the area
            const size_t rh = 1 + rng.below(std::max<size_t>(1, h / 3));
            const size_t max_w = std::max<size_t>(1, (h * w) / (8 * rh));
            const size_t rw = 1 + rng.below(std::min(std::max<size_t>(1, w / 2), max_w));
            const size_t y0 = rng.below(h - std::min(rh, h - 1));
            const size_t x0 = rng.below(w - std::min(rw, w - 1));
            for (size_t c = 0; c < 3; ++c)
                for (size_t y = y0; y < std::min(h, y0 + rh); ++y)
                    for (size_t x = x0; x < std::min(w, x0 + rw); ++x)
                        img[(c * h + y) * w + x] = 0.0f;
        }
    }

    out.image = Tensor<float>(Shape{3, h, w}, std::move(img));
    out.mask = Tensor<float>(Shape{1, h, w}, std::move(msk));
    return out;
}

}  // namespace fseg
