#include "segfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace segfuse::data {

void SceneSpec::validate() const {
    if (size < 24) {
        throw ConfigError("scene size " + std::to_string(size) + " is too small to place the requested objects (minimum 24)");
    }
    if (buildings < 0 || trees < 0 || low_vegetation < 0 || cars < 0) throw ConfigError("object densities must be nonnegative");
    if (!(noise >= 0.0f)) throw ConfigError("noise amplitude must be nonnegative");
}

namespace {

struct Rgb {
    float ir, r, g;
};

constexpr Rgb kCarPalette[] = {
    {0.86f, 0.86f, 0.84f},  // white
    {0.10f, 0.10f, 0.11f},  // black
    {0.62f, 0.62f, 0.14f},  // red (IR and R both high in false colour)
    {0.20f, 0.20f, 0.42f},  // blue
};

class Canvas {
public:
    explicit Canvas(std::uint32_t size)
        : n_(size), labels_(std::size_t{size} * size, 0), height_(labels_.size(), 0.0f), owner_(labels_.size(), -1) {}

    std::uint32_t size() const { return n_; }
    std::uint8_t label(int y, int x) const { return labels_[idx(y, x)]; }
    bool inside(int y, int x) const { return y >= 0 && x >= 0 && y < static_cast<int>(n_) && x < static_cast<int>(n_); }

    void paint(int y, int x, ClassId c, float h, int owner) {
        const std::size_t i = idx(y, x);
        labels_[i] = static_cast<std::uint8_t>(c);
        height_[i] = h;
        owner_[i] = owner;
    }

    bool region_is(int y0, int x0, int y1, int x1, ClassId c) const {
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                if (!inside(y, x) || labels_[idx(y, x)] != static_cast<std::uint8_t>(c)) return false;
            }
        }
        return true;
    }

    std::vector<std::uint8_t>& labels() { return labels_; }
    const std::vector<float>& heights() const { return height_; }
    const std::vector<int>& owners() const { return owner_; }

private:
    std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y) * n_ + static_cast<std::size_t>(x); }

    std::uint32_t n_;
    std::vector<std::uint8_t> labels_;
    std::vector<float> height_;
    std::vector<int> owner_;
};

std::size_t scaled_count(double per_256, std::uint32_t size) {
    const double area = static_cast<double>(size) * size / (256.0 * 256.0);
    return static_cast<std::size_t>(std::lround(per_256 * area));
}

}  // namespace

Scene synth_scene(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto uint_in = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    const std::uint32_t n = spec.size;
    const int ni = static_cast<int>(n);
    Canvas canvas(n);
    std::vector<Rgb> looks;  // appearance of each placed object, indexed by owner id
    constexpr int kAttempts = 60;

    // Buildings: flat-roofed rectangles with a 3 px clearance to each other.
    const int bmin = std::min(20, ni / 2), bmax = std::min(48, ni - 4);
    for (std::size_t k = 0, placed = 0; placed < scaled_count(spec.buildings, n) && k < kAttempts * 8; ++k) {
        const int bh = uint_in(bmin, bmax), bw = uint_in(bmin, bmax);
        const int y0 = uint_in(0, ni - bh), x0 = uint_in(0, ni - bw);
        if (!canvas.region_is(std::max(0, y0 - 3), std::max(0, x0 - 3), std::min(ni, y0 + bh + 3), std::min(ni, x0 + bw + 3),
                              ClassId::impervious)) {
            continue;
        }
        const float roof = static_cast<float>(uni(0.40, 0.52));
        const float height = static_cast<float>(uni(6.0, 15.0));
        const int owner = static_cast<int>(looks.size());
        looks.push_back({roof, roof * 0.98f, roof * 0.93f});
        for (int y = y0; y < y0 + bh; ++y) {
            for (int x = x0; x < x0 + bw; ++x) canvas.paint(y, x, ClassId::building, height, owner);
        }
        ++placed;
    }

    // Vegetation: low vegetation and trees share one optical distribution.
    auto vegetation_look = [&] {
        const float f = static_cast<float>(uni(0.85, 1.15));
        return Rgb{0.56f * f, 0.17f * f, 0.29f * f};
    };
    for (std::size_t k = 0, placed = 0; placed < scaled_count(spec.low_vegetation, n) && k < kAttempts * 8; ++k) {
        const double ry = uni(8, 20), rx = uni(8, 20);
        const int cy = uint_in(0, ni - 1), cx = uint_in(0, ni - 1);
        if (canvas.label(cy, cx) != static_cast<std::uint8_t>(ClassId::impervious)) continue;
        const float height = static_cast<float>(uni(0.0, kLowVegetationMaxHeight));
        const int owner = static_cast<int>(looks.size());
        looks.push_back(vegetation_look());
        for (int y = cy - static_cast<int>(ry); y <= cy + static_cast<int>(ry); ++y) {
            for (int x = cx - static_cast<int>(rx); x <= cx + static_cast<int>(rx); ++x) {
                if (!canvas.inside(y, x)) continue;
                const double d = std::pow((y - cy) / ry, 2) + std::pow((x - cx) / rx, 2);
                if (d <= 1.0 && canvas.label(y, x) == static_cast<std::uint8_t>(ClassId::impervious)) {
                    canvas.paint(y, x, ClassId::low_vegetation, height, owner);
                }
            }
        }
        ++placed;
    }
    for (std::size_t k = 0, placed = 0; placed < scaled_count(spec.trees, n) && k < kAttempts * 8; ++k) {
        const double r = uni(6, 14);
        const int cy = uint_in(0, ni - 1), cx = uint_in(0, ni - 1);
        const auto centre = canvas.label(cy, cx);
        if (centre != static_cast<std::uint8_t>(ClassId::impervious) &&
            centre != static_cast<std::uint8_t>(ClassId::low_vegetation)) {
            continue;
        }
        const double crown = uni(6.0, kTreeMaxHeight);
        const int owner = static_cast<int>(looks.size());
        looks.push_back(vegetation_look());
        for (int y = cy - static_cast<int>(r); y <= cy + static_cast<int>(r); ++y) {
            for (int x = cx - static_cast<int>(r); x <= cx + static_cast<int>(r); ++x) {
                if (!canvas.inside(y, x)) continue;
                const double d = (std::pow(y - cy, 2) + std::pow(x - cx, 2)) / (r * r);
                const auto lab = canvas.label(y, x);
                if (d <= 1.0 && (lab == static_cast<std::uint8_t>(ClassId::impervious) ||
                                 lab == static_cast<std::uint8_t>(ClassId::low_vegetation))) {
                    const double h = std::max<double>(kTreeMinHeight, crown * (1.0 - 0.35 * d));
                    canvas.paint(y, x, ClassId::tree, static_cast<float>(h), owner);
                }
            }
        }
        ++placed;
    }

    // Cars sit on open ground with a 2 px clearance.
    for (std::size_t k = 0, placed = 0; placed < scaled_count(spec.cars, n) && k < kAttempts * 16; ++k) {
        int ch = uint_in(9, 11), cw = uint_in(16, 20);
        if (uint_in(0, 1) == 1) std::swap(ch, cw);
        const int y0 = uint_in(0, ni - ch), x0 = uint_in(0, ni - cw);
        if (!canvas.region_is(std::max(0, y0 - 2), std::max(0, x0 - 2), std::min(ni, y0 + ch + 2), std::min(ni, x0 + cw + 2),
                              ClassId::impervious)) {
            continue;
        }
        const int owner = static_cast<int>(looks.size());
        looks.push_back(kCarPalette[uint_in(0, 3)]);
        const float height = static_cast<float>(uni(0.0, 0.3));
        for (int y = y0; y < y0 + ch; ++y) {
            for (int x = x0; x < x0 + cw; ++x) canvas.paint(y, x, ClassId::car, height, owner);
        }
        ++placed;
    }

    Scene scene;
    scene.irrg = RasterTile::make_real(3, n, n);
    scene.dsm = RasterTile::make_real(1, n, n);
    scene.ndsm = RasterTile::make_real(1, n, n);
    scene.labels = RasterTile::make_labels(n, n);
    scene.labels.labels = canvas.labels();

    // Smooth terrain ramp with a gentle undulation.
    const double base = uni(100.0, 120.0);
    const double gy = uni(-0.03, 0.03), gx = uni(-0.03, 0.03);
    const double tphase = uni(0.0, 2 * std::numbers::pi), tfreq = uni(0.01, 0.03);
    // Low-frequency brightness variation of open ground.
    const double f1 = uni(0.02, 0.06), f2 = uni(0.02, 0.06), p1 = uni(0.0, 6.3), p2 = uni(0.0, 6.3);

    std::normal_distribution<double> pixel_noise(0.0, spec.noise);
    std::uniform_real_distribution<double> height_noise(-kDsmNoise, kDsmNoise);
    const auto& owners = canvas.owners();
    const auto& heights = canvas.heights();
    for (int y = 0; y < ni; ++y) {
        for (int x = 0; x < ni; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x);
            Rgb look;
            if (owners[i] >= 0) {
                look = looks[static_cast<std::size_t>(owners[i])];
            } else {
                const float v = static_cast<float>(0.46 + 0.05 * std::sin(x * f1 + p1) * std::sin(y * f2 + p2));
                look = {v, v * 0.98f, v * 0.93f};
            }
            const float channels[3] = {look.ir, look.r, look.g};
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = channels[c] + (spec.noise > 0 ? pixel_noise(rng) : 0.0);
                scene.irrg.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
            const float terrain = static_cast<float>(base + gy * y + gx * x + 1.5 * std::sin(tfreq * (x + y) + tphase));
            const float dsm = terrain + heights[i] + static_cast<float>(height_noise(rng));
            scene.dsm.at(0, y, x) = dsm;
            scene.ndsm.at(0, y, x) = dsm - terrain;
        }
    }
    return scene;
}

}  // namespace segfuse::data
