#pragma once

#include "mvhoi/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace mvhoi {

// RGB image, pixels stored as (height*width) x 3 in [0, 1], row-major by y.
template <typename Scalar>
struct ImageT {
    Index height = 0;
    Index width = 0;
    MatrixT<Scalar> pixels;

    ImageT() = default;
    ImageT(Index h, Index w) : height(h), width(w), pixels(MatrixT<Scalar>::Zero(h * w, 3)) {}

    auto pixel(Index y, Index x) { return pixels.row(y * width + x); }
    auto pixel(Index y, Index x) const { return pixels.row(y * width + x); }
    bool same_size(const ImageT& o) const { return height == o.height && width == o.width; }
};

using Image = ImageT<double>;

// Binary mask, height x width, entries 0 or 1.
struct Mask {
    Index height = 0;
    Index width = 0;
    MatrixT<std::uint8_t> bits;

    Mask() = default;
    Mask(Index h, Index w) : height(h), width(w), bits(MatrixT<std::uint8_t>::Zero(h, w)) {}

    bool at(Index y, Index x) const { return bits(y, x) != 0; }
    void set(Index y, Index x, bool on) { bits(y, x) = on ? 1 : 0; }
    Index count() const;
    bool empty() const { return count() == 0; }
};

using Video = std::vector<Image>;
using MaskSequence = std::vector<Mask>;

Image constant_image(Index h, Index w, const Eigen::RowVector3d& color);
Image clamp01(Image img);
Image quantize8(const Image& img);

// Channel-mean luminance, height x width.
Matrix to_gray(const Image& img);

Mask mask_union(const Mask& a, const Mask& b);
// Disc dilation with Euclidean radius r.
Mask dilate(const Mask& m, int radius);
bool is_subset(const Mask& inner, const Mask& outer);

struct BBox {
    Index y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open
    Index height() const { return y1 - y0; }
    Index width() const { return x1 - x0; }
};
std::optional<BBox> mask_bbox(const Mask& m);

// Square sampling window in image coordinates; may extend past the border.
struct CropWindow {
    double y0 = 0.0;
    double x0 = 0.0;
    double side = 1.0;
};

// Square window centred on the box, side = max(h, w) * (1 + 2 * pad).
CropWindow padded_square(const BBox& box, double pad);

// Nearest-neighbour resample of the window to out x out; outside pixels are 0.
Image crop_resize(const Image& img, const CropWindow& win, Index out);
Mask crop_resize(const Mask& m, const CropWindow& win, Index out);
// Nearest-neighbour resize of a whole image.
Image resize_nearest(const Image& img, Index h, Index w);
// Write `patch` resized into `win` of `dst`, only where `where` is set.
void paste_resized(Image& dst, const Image& patch, const CropWindow& win, const Mask& where);

// Window of the padded square around the mask's bounding box.
CropWindow object_window(const Mask& mask, double pad = 0.1);
// Object-centred crop: window resampled to out x out, pixels outside the mask
// zeroed. Throws std::invalid_argument on an empty mask.
Image object_crop(const Image& frame, const Mask& mask, Index out, double pad = 0.1);

// Separable Gaussian blur, clamp-to-edge, kernel radius ceil(3 sigma).
Image gaussian_blur(const Image& img, double sigma);
// Variance of the 4-neighbour Laplacian of the gray image over interior
// pixels, optionally restricted to a mask.
double laplacian_variance(const Image& img, const Mask* region = nullptr);

// Binary portable pixmap / graymap I/O (8-bit).
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_pgm(const std::filesystem::path& path);

} // namespace mvhoi
