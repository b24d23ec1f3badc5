#include "mvhoi/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mvhoi {

Index Mask::count() const {
    Index n = 0;
    for (Index i = 0; i < bits.size(); ++i) {
        n += bits.data()[i] != 0 ? 1 : 0;
    }
    return n;
}

Image constant_image(Index h, Index w, const Eigen::RowVector3d& color) {
    Image img(h, w);
    img.pixels.rowwise() = color;
    return img;
}

Image clamp01(Image img) {
    img.pixels = img.pixels.cwiseMax(0.0).cwiseMin(1.0);
    return img;
}

Image quantize8(const Image& img) {
    Image q = img;
    q.pixels = img.pixels.unaryExpr([](double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; });
    return q;
}

Matrix to_gray(const Image& img) {
    Eigen::VectorXd g = img.pixels.rowwise().mean();
    return Eigen::Map<const Matrix>(g.data(), img.height, img.width);
}

Mask mask_union(const Mask& a, const Mask& b) {
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument("mask size mismatch");
    }
    Mask m(a.height, a.width);
    m.bits = a.bits.cwiseMax(b.bits);
    return m;
}

Mask dilate(const Mask& m, int radius) {
    Mask out(m.height, m.width);
    const int r2 = radius * radius;
    for (Index y = 0; y < m.height; ++y) {
        for (Index x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) {
                continue;
            }
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dy * dy + dx * dx > r2) {
                        continue;
                    }
                    const Index yy = y + dy;
                    const Index xx = x + dx;
                    if (yy >= 0 && yy < m.height && xx >= 0 && xx < m.width) {
                        out.set(yy, xx, true);
                    }
                }
            }
        }
    }
    return out;
}

bool is_subset(const Mask& inner, const Mask& outer) {
    if (inner.height != outer.height || inner.width != outer.width) {
        return false;
    }
    return ((inner.bits.array() != 0) && (outer.bits.array() == 0)).count() == 0;
}

std::optional<BBox> mask_bbox(const Mask& m) {
    BBox b{m.height, m.width, 0, 0};
    bool any = false;
    for (Index y = 0; y < m.height; ++y) {
        for (Index x = 0; x < m.width; ++x) {
            if (m.at(y, x)) {
                any = true;
                b.y0 = std::min(b.y0, y);
                b.x0 = std::min(b.x0, x);
                b.y1 = std::max(b.y1, y + 1);
                b.x1 = std::max(b.x1, x + 1);
            }
        }
    }
    if (!any) {
        return std::nullopt;
    }
    return b;
}

CropWindow padded_square(const BBox& box, double pad) {
    const double side = static_cast<double>(std::max(box.height(), box.width())) * (1.0 + 2.0 * pad);
    const double cy = 0.5 * static_cast<double>(box.y0 + box.y1);
    const double cx = 0.5 * static_cast<double>(box.x0 + box.x1);
    return CropWindow{cy - 0.5 * side, cx - 0.5 * side, side};
}

namespace {

// Source pixel for output cell i of n across the window span.
Index sample_coord(double origin, double side, Index i, Index n) {
    return static_cast<Index>(std::floor(origin + (static_cast<double>(i) + 0.5) * side / static_cast<double>(n)));
}

} // namespace

Image crop_resize(const Image& img, const CropWindow& win, Index out) {
    Image res(out, out);
    for (Index y = 0; y < out; ++y) {
        const Index sy = sample_coord(win.y0, win.side, y, out);
        for (Index x = 0; x < out; ++x) {
            const Index sx = sample_coord(win.x0, win.side, x, out);
            if (sy >= 0 && sy < img.height && sx >= 0 && sx < img.width) {
                res.pixel(y, x) = img.pixel(sy, sx);
            }
        }
    }
    return res;
}

Mask crop_resize(const Mask& m, const CropWindow& win, Index out) {
    Mask res(out, out);
    for (Index y = 0; y < out; ++y) {
        const Index sy = sample_coord(win.y0, win.side, y, out);
        for (Index x = 0; x < out; ++x) {
            const Index sx = sample_coord(win.x0, win.side, x, out);
            if (sy >= 0 && sy < m.height && sx >= 0 && sx < m.width) {
                res.bits(y, x) = m.bits(sy, sx);
            }
        }
    }
    return res;
}

Image resize_nearest(const Image& img, Index h, Index w) {
    Image res(h, w);
    for (Index y = 0; y < h; ++y) {
        const Index sy = std::min(img.height - 1, (y * img.height) / h);
        for (Index x = 0; x < w; ++x) {
            const Index sx = std::min(img.width - 1, (x * img.width) / w);
            res.pixel(y, x) = img.pixel(sy, sx);
        }
    }
    return res;
}

void paste_resized(Image& dst, const Image& patch, const CropWindow& win, const Mask& where) {
    if (where.height != dst.height || where.width != dst.width) {
        throw std::invalid_argument("paste mask size mismatch");
    }
    const Index y_lo = std::max<Index>(0, static_cast<Index>(std::floor(win.y0)));
    const Index x_lo = std::max<Index>(0, static_cast<Index>(std::floor(win.x0)));
    const Index y_hi = std::min<Index>(dst.height, static_cast<Index>(std::ceil(win.y0 + win.side)));
    const Index x_hi = std::min<Index>(dst.width, static_cast<Index>(std::ceil(win.x0 + win.side)));
    for (Index y = y_lo; y < y_hi; ++y) {
        const double fy = (static_cast<double>(y) + 0.5 - win.y0) / win.side;
        if (fy < 0.0 || fy >= 1.0) {
            continue;
        }
        const Index py = std::min(patch.height - 1, static_cast<Index>(fy * static_cast<double>(patch.height)));
        for (Index x = x_lo; x < x_hi; ++x) {
            const double fx = (static_cast<double>(x) + 0.5 - win.x0) / win.side;
            if (fx < 0.0 || fx >= 1.0 || !where.at(y, x)) {
                continue;
            }
            const Index px = std::min(patch.width - 1, static_cast<Index>(fx * static_cast<double>(patch.width)));
            dst.pixel(y, x) = patch.pixel(py, px);
        }
    }
}

CropWindow object_window(const Mask& mask, double pad) {
    auto box = mask_bbox(mask);
    if (!box) {
        throw std::invalid_argument("empty mask has no object window");
    }
    return padded_square(*box, pad);
}

Image object_crop(const Image& frame, const Mask& mask, Index out, double pad) {
    const CropWindow win = object_window(mask, pad);
    Image crop = crop_resize(frame, win, out);
    const Mask keep = crop_resize(mask, win, out);
    for (Index y = 0; y < out; ++y) {
        for (Index x = 0; x < out; ++x) {
            if (!keep.at(y, x)) {
                crop.pixel(y, x).setZero();
            }
        }
    }
    return crop;
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) {
        return img;
    }
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += k[static_cast<std::size_t>(i + radius)];
    }
    for (double& v : k) {
        v /= total;
    }
    auto clampi = [](Index v, Index n) { return std::clamp<Index>(v, 0, n - 1); };
    Image tmp(img.height, img.width);
    for (Index y = 0; y < img.height; ++y) {
        for (Index x = 0; x < img.width; ++x) {
            Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
            for (int i = -radius; i <= radius; ++i) {
                acc += k[static_cast<std::size_t>(i + radius)] * img.pixel(y, clampi(x + i, img.width));
            }
            tmp.pixel(y, x) = acc;
        }
    }
    Image out(img.height, img.width);
    for (Index y = 0; y < img.height; ++y) {
        for (Index x = 0; x < img.width; ++x) {
            Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
            for (int i = -radius; i <= radius; ++i) {
                acc += k[static_cast<std::size_t>(i + radius)] * tmp.pixel(clampi(y + i, img.height), x);
            }
            out.pixel(y, x) = acc;
        }
    }
    return out;
}

double laplacian_variance(const Image& img, const Mask* region) {
    const Matrix g = to_gray(img);
    double s = 0.0;
    double s2 = 0.0;
    Index n = 0;
    for (Index y = 1; y + 1 < img.height; ++y) {
        for (Index x = 1; x + 1 < img.width; ++x) {
            if (region != nullptr && !region->at(y, x)) {
                continue;
            }
            const double l = g(y - 1, x) + g(y + 1, x) + g(y, x - 1) + g(y, x + 1) - 4.0 * g(y, x);
            s += l;
            s2 += l * l;
            ++n;
        }
    }
    if (n == 0) {
        return 0.0;
    }
    const double m = s / static_cast<double>(n);
    return s2 / static_cast<double>(n) - m * m;
}

namespace {

void read_header(std::istream& in, const std::string& magic, Index& w, Index& h, const std::filesystem::path& path) {
    std::string tag;
    in >> tag;
    if (tag != magic) {
        throw std::runtime_error("bad image magic in " + path.string());
    }
    auto next_int = [&]() {
        std::string tok;
        while (in >> tok) {
            if (!tok.empty() && tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return std::stol(tok);
        }
        throw std::runtime_error("truncated image header in " + path.string());
    };
    w = next_int();
    h = next_int();
    const long maxval = next_int();
    if (maxval != 255 || w <= 0 || h <= 0) {
        throw std::runtime_error("unsupported image header in " + path.string());
    }
    in.get();
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

} // namespace

void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<char> buf(static_cast<std::size_t>(img.pixels.size()));
    for (Index i = 0; i < img.pixels.size(); ++i) {
        buf[static_cast<std::size_t>(i)] = static_cast<char>(to_byte(img.pixels.data()[i]));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    Index w = 0;
    Index h = 0;
    read_header(in, "P6", w, h, path);
    Image img(h, w);
    std::vector<char> buf(static_cast<std::size_t>(h * w * 3));
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw std::runtime_error("truncated pixel data in " + path.string());
    }
    for (std::size_t i = 0; i < buf.size(); ++i) {
        img.pixels.data()[i] = static_cast<double>(static_cast<unsigned char>(buf[i])) / 255.0;
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    std::vector<char> buf(static_cast<std::size_t>(mask.bits.size()));
    for (Index i = 0; i < mask.bits.size(); ++i) {
        buf[static_cast<std::size_t>(i)] = static_cast<char>(mask.bits.data()[i] != 0 ? 255 : 0);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Mask read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    Index w = 0;
    Index h = 0;
    read_header(in, "P5", w, h, path);
    Mask m(h, w);
    std::vector<char> buf(static_cast<std::size_t>(h * w));
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw std::runtime_error("truncated pixel data in " + path.string());
    }
    for (std::size_t i = 0; i < buf.size(); ++i) {
        m.bits.data()[i] = static_cast<unsigned char>(buf[i]) >= 128 ? 1 : 0;
    }
    return m;
}

} // namespace mvhoi
