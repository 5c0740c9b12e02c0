#pragma once

// Small float-RGB image type plus the pixel operations the pipeline needs:
// binary PPM (P6) I/O, cropping, horizontal flip, separable Gaussian blur
// and HSV-based chromatic masks. Pixels live in [0,1], interleaved RGB.

#include <cstdint>
#include <string>
#include <vector>

namespace ebus3d {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> px;  // height * width * 3, row-major, RGB interleaved

    Image() = default;
    Image(int w, int h) : width(w), height(h), px(static_cast<std::size_t>(w) * h * 3, 0.f) {}

    float& at(int x, int y, int c) { return px[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const {
        return px[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

// P6, 8-bit, maxval 255. Floats quantize with round(v*255) on write and
// divide by 255 on read.
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

// Exact window copy; throws when the window exceeds the source bounds.
Image crop_image(const Image& src, int x0, int y0, int out_width, int out_height);

void flip_horizontal(Image& img);

// 5x5 separable Gaussian, replicated borders.
Image gaussian_blur5(const Image& src, double sigma);

// HSV saturation/value of one RGB pixel (hue is never needed here).
inline void sat_val(float r, float g, float b, float& sat, float& val) {
    const float mx = r > g ? (r > b ? r : b) : (g > b ? g : b);
    const float mn = r < g ? (r < b ? r : b) : (g < b ? g : b);
    val = mx;
    sat = mx > 0.f ? (mx - mn) / mx : 0.f;
}

}  // namespace ebus3d
