#include "sglab/toy_faces.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "sglab/image_io.hpp"

namespace sglab {

namespace {

using Color = std::array<double, 3>;

struct Identity {
    Color skin, hair, background, eyes;
    double face_w, face_h, eye_dx, eye_y, eye_r, mouth_w, mouth_y, hair_line;
};

Color random_color(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    return {u(rng), u(rng), u(rng)};
}

Identity random_identity(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Identity id;
    id.skin = random_color(rng, 0.35, 0.95);
    id.hair = random_color(rng, 0.0, 0.6);
    id.background = random_color(rng, 0.0, 1.0);
    id.eyes = random_color(rng, 0.0, 0.4);
    id.face_w = 0.28 + 0.1 * u(rng);
    id.face_h = 0.34 + 0.1 * u(rng);
    id.eye_dx = 0.1 + 0.08 * u(rng);
    id.eye_y = -0.08 + 0.08 * u(rng);
    id.eye_r = 0.04 + 0.04 * u(rng);
    id.mouth_w = 0.08 + 0.12 * u(rng);
    id.mouth_y = 0.14 + 0.08 * u(rng);
    id.hair_line = -0.3 + 0.15 * u(rng);
    return id;
}

// Soft inside-test: 1 well inside, 0 well outside, linear over `edge`.
double coverage(double signed_distance, double edge) { return std::clamp(0.5 - signed_distance / edge, 0.0, 1.0); }

Color mix(const Color& a, const Color& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Tensor<float> render(const Identity& id, int size, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.015);
    const double shift_x = 0.04 * u(rng), shift_y = 0.04 * u(rng);
    const double light = 1.0 + 0.06 * u(rng);
    const double edge = 1.5 / size;

    const auto s = static_cast<std::size_t>(size);
    Tensor<float> img({s, s, 3});
    for (std::size_t py = 0; py < s; ++py)
        for (std::size_t px = 0; px < s; ++px) {
            const double x = (px + 0.5) / size - 0.5 - shift_x;
            const double y = (py + 0.5) / size - 0.5 - shift_y;
            Color c = id.background;

            const double face = std::hypot(x / id.face_w, y / id.face_h) - 1.0;
            c = mix(c, id.skin, coverage(face * id.face_w, edge));

            const double hair = std::max(face * id.face_w - 0.03, y - id.hair_line);
            c = mix(c, id.hair, coverage(hair, edge));

            for (double side : {-1.0, 1.0}) {
                const double eye = std::hypot(x - side * id.eye_dx, y - id.eye_y) - id.eye_r;
                c = mix(c, id.eyes, coverage(eye, edge));
            }
            const double mouth = std::max(std::abs(x) - id.mouth_w, std::abs(y - id.mouth_y) - 0.025);
            c = mix(c, Color{0.55, 0.1, 0.12}, coverage(mouth, edge));

            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(c[ch] * light + noise(rng), 0.0, 1.0);
                img[(py * s + px) * 3 + ch] = static_cast<float>(std::lround(v * 255.0) / 255.0);
            }
        }
    return img;
}

void check(const ToyFaceOptions& o) {
    if (o.identities < 2 || o.images_per_identity < 2)
        throw std::invalid_argument("toy data needs >= 2 identities and >= 2 images each");
    if (o.size <= 0 || o.size % kUpscaleFactor != 0)
        throw std::invalid_argument("toy image size must be a positive multiple of " + std::to_string(kUpscaleFactor));
}

std::string numbered(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03d", prefix, i);
    return buf;
}

}  // namespace

IdentityCatalog make_toy_catalog(const ToyFaceOptions& options) {
    check(options);
    Rng identity_rng(options.seed);
    IdentityCatalog catalog;
    catalog.num_identities = options.identities;
    catalog.hr_size = options.size;
    for (int i = 0; i < options.identities; ++i) {
        const Identity id = random_identity(identity_rng);
        const std::string name = numbered("id", i);
        catalog.identity_names.push_back(name);
        Rng image_rng(options.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i) + 1);
        for (int k = 0; k < options.images_per_identity; ++k)
            catalog.records.push_back({render(id, options.size, image_rng), i, name + "/" + numbered("img", k) + ".png"});
    }
    return catalog;
}

void write_toy_dataset(const std::filesystem::path& root, const ToyFaceOptions& options) {
    const IdentityCatalog catalog = make_toy_catalog(options);
    for (const auto& name : catalog.identity_names) std::filesystem::create_directories(root / name);
    for (const auto& r : catalog.records) write_png(root / r.source_id, r.image);
}

}  // namespace sglab
