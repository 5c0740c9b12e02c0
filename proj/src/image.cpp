#include "ebus3d/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ebus3d {

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(img.at(x, y, c), 0.f, 1.f);
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw std::runtime_error("not a binary PPM (P6): " + path);

    auto next_int = [&](const char* what) {
        // skip whitespace and '#' comment lines
        int ch = is.peek();
        while (ch == ' ' || ch == '\n' || ch == '\r' || ch == '\t' || ch == '#') {
            if (ch == '#') {
                std::string line;
                std::getline(is, line);
            } else {
                is.get();
            }
            ch = is.peek();
        }
        int v;
        if (!(is >> v)) throw std::runtime_error(std::string("bad PPM ") + what + ": " + path);
        return v;
    };
    const int w = next_int("width");
    const int h = next_int("height");
    const int maxval = next_int("maxval");
    if (w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("unsupported PPM header in " + path);
    is.get();  // single whitespace after maxval

    Image img(w, h);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw std::runtime_error("truncated PPM: " + path);
    for (std::size_t i = 0; i < raw.size(); ++i) img.px[i] = static_cast<float>(raw[i]) / 255.f;
    return img;
}

Image crop_image(const Image& src, int x0, int y0, int out_width, int out_height) {
    if (x0 < 0 || y0 < 0 || out_width <= 0 || out_height <= 0 ||
        x0 + out_width > src.width || y0 + out_height > src.height) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "crop window (%d,%d)+(%dx%d) exceeds frame bounds %dx%d", x0, y0, out_width,
                      out_height, src.width, src.height);
        throw std::invalid_argument(buf);
    }
    Image out(out_width, out_height);
    for (int y = 0; y < out_height; ++y) {
        const float* s = &src.px[(static_cast<std::size_t>(y0 + y) * src.width + x0) * 3];
        float* d = &out.px[static_cast<std::size_t>(y) * out_width * 3];
        std::copy(s, s + static_cast<std::size_t>(out_width) * 3, d);
    }
    return out;
}

void flip_horizontal(Image& img) {
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width / 2; ++x) {
            for (int c = 0; c < 3; ++c) std::swap(img.at(x, y, c), img.at(img.width - 1 - x, y, c));
        }
    }
}

Image gaussian_blur5(const Image& src, double sigma) {
    if (sigma <= 0) throw std::invalid_argument("gaussian_blur5: sigma must be positive");
    double k[5];
    double sum = 0;
    for (int i = -2; i <= 2; ++i) {
        k[i + 2] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += k[i + 2];
    }
    float kf[5];
    for (int i = 0; i < 5; ++i) kf[i] = static_cast<float>(k[i] / sum);

    const int w = src.width, h = src.height;
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };

    Image tmp(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float acc = 0.f;
                for (int i = -2; i <= 2; ++i) acc += kf[i + 2] * src.at(clampi(x + i, w - 1), y, c);
                tmp.at(x, y, c) = acc;
            }
    Image out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float acc = 0.f;
                for (int i = -2; i <= 2; ++i) acc += kf[i + 2] * tmp.at(x, clampi(y + i, h - 1), c);
                out.at(x, y, c) = acc;
            }
    return out;
}

}  // namespace ebus3d
