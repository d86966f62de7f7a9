#include "sglab/image_io.hpp"

#include <png.h>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace sglab {

Tensor<float> read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw std::runtime_error("cannot decode " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("cannot decode " + path.string() + ": " + msg);
    }
    Tensor<float> out({img.height, img.width, 3});
    for (std::size_t i = 0; i < buffer.size(); ++i) out[i] = static_cast<float>(buffer[i]) / 255.0f;
    return out;
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
    if (image.rank() != 3 || (image.dim(2) != 3 && image.dim(2) != 1))
        throw std::invalid_argument("write_png expects H×W×3 or H×W×1, got " + shape_string(image.shape()));
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.dim(1));
    img.height = static_cast<png_uint_32>(image.dim(0));
    img.format = image.dim(2) == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<png_byte> buffer(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) {
        const float v = std::isfinite(image[i]) ? std::clamp(image[i], 0.0f, 1.0f) : 0.0f;
        buffer[i] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
    if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw std::runtime_error("cannot write " + path.string() + ": " + img.message);
}

Tensor<float> center_crop_square(const Tensor<float>& image) {
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    const std::size_t s = std::min(h, w), top = (h - s) / 2, left = (w - s) / 2;
    Tensor<float> out({s, s, c});
    for (std::size_t y = 0; y < s; ++y)
        std::copy_n(image.data() + ((top + y) * w + left) * c, s * c, out.data() + y * s * c);
    return out;
}

namespace {

// Row-stochastic resampling matrix mapping `in` samples to `out` samples.
std::vector<std::vector<std::pair<std::size_t, double>>> resample_weights(std::size_t in, std::size_t out) {
    std::vector<std::vector<std::pair<std::size_t, double>>> rows(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        if (in >= out) {
            const double lo = o * scale, hi = (o + 1) * scale;
            for (auto i = static_cast<std::size_t>(std::floor(lo)); i < in && static_cast<double>(i) < hi; ++i) {
                const double cover = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
                if (cover > 0) rows[o].emplace_back(i, cover / scale);
            }
        } else {
            const double src = (o + 0.5) * scale - 0.5;
            const double f = std::floor(src);
            const double t = src - f;
            auto clampi = [&](double v) {
                return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(in - 1)));
            };
            rows[o].emplace_back(clampi(f), 1.0 - t);
            rows[o].emplace_back(clampi(f + 1), t);
        }
    }
    return rows;
}

}  // namespace

Tensor<float> resize_square(const Tensor<float>& image, std::size_t size) {
    const std::size_t in = image.dim(0), c = image.dim(2);
    if (image.dim(1) != in) throw std::invalid_argument("resize_square expects a square image");
    if (in == size) return image;
    const auto weights = resample_weights(in, size);
    // Rows first, then columns.
    std::vector<double> tmp(size * in * c, 0.0);
    for (std::size_t oy = 0; oy < size; ++oy)
        for (const auto& [iy, wy] : weights[oy])
            for (std::size_t x = 0; x < in * c; ++x) tmp[oy * in * c + x] += wy * image[iy * in * c + x];
    Tensor<float> out({size, size, c});
    for (std::size_t oy = 0; oy < size; ++oy)
        for (std::size_t ox = 0; ox < size; ++ox)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (const auto& [ix, wx] : weights[ox]) acc += wx * tmp[(oy * in + ix) * c + ch];
                out[(oy * size + ox) * c + ch] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
    return out;
}

}  // namespace sglab
