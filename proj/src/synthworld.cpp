#include "mvhoi/synthworld.hpp"

#include "mvhoi/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

namespace mvhoi::synth {

using json = nlohmann::json;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_angle(double a) {
    double w = std::fmod(a, kTwoPi);
    if (w < 0.0) {
        w += kTwoPi;
    }
    if (w >= kTwoPi) {
        w = 0.0;
    }
    return w;
}

Vector3d hsv_to_rgb(double h, double s, double v) {
    const double hh = wrap_angle(h * kTwoPi) / kTwoPi * 6.0;
    const int i = static_cast<int>(std::floor(hh)) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
    }
}

Vector3d face_normal(const Mesh& mesh, const Face& f) {
    Vector3d n = Vector3d::Zero();
    const auto& v = mesh.vertices;
    for (std::size_t i = 0; i < f.vertices.size(); ++i) {
        const Vector3d& a = v[static_cast<std::size_t>(f.vertices[i])];
        const Vector3d& b = v[static_cast<std::size_t>(f.vertices[(i + 1) % f.vertices.size()])];
        n += a.cross(b);
    }
    return n.normalized();
}

Vector3d face_centroid(const Mesh& mesh, const Face& f) {
    Vector3d c = Vector3d::Zero();
    for (int i : f.vertices) {
        c += mesh.vertices[static_cast<std::size_t>(i)];
    }
    return c / static_cast<double>(f.vertices.size());
}

// Orient faces outward and scale the solid into the unit cube.
void normalize_mesh(Mesh& mesh) {
    Vector3d lo = mesh.vertices.front();
    Vector3d hi = lo;
    for (const auto& v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    const Vector3d center = 0.5 * (lo + hi);
    const double extent = (hi - lo).maxCoeff();
    for (auto& v : mesh.vertices) {
        v = (v - center) / extent * 0.98;
    }
    Vector3d c = Vector3d::Zero();
    for (const auto& v : mesh.vertices) {
        c += v;
    }
    c /= static_cast<double>(mesh.vertices.size());
    for (auto& f : mesh.faces) {
        if (face_normal(mesh, f).dot(face_centroid(mesh, f) - c) < 0.0) {
            std::reverse(f.vertices.begin(), f.vertices.end());
        }
    }
}

void texture_faces(Mesh& mesh, Rng& rng) {
    const std::size_t n = mesh.faces.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    const double hue0 = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
        Face& f = mesh.faces[order[i]];
        const double hue = hue0 + static_cast<double>(i) / static_cast<double>(n);
        f.color_a = hsv_to_rgb(hue, rng.uniform(0.55, 0.9), rng.uniform(0.75, 1.0));
        f.color_b = hsv_to_rgb(hue + rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.8), rng.uniform(0.25, 0.55));
        f.pattern = static_cast<Pattern>(1 + rng.below(4));
        f.frequency = rng.uniform(2.0, 3.5);
    }
}

Mesh make_box(Rng& rng) {
    const double a = rng.uniform(0.6, 1.0);
    const double b = rng.uniform(0.6, 1.0);
    const double c = rng.uniform(0.6, 1.0);
    Mesh m;
    for (int i = 0; i < 8; ++i) {
        m.vertices.emplace_back((i & 1 ? 0.5 : -0.5) * a, (i & 2 ? 0.5 : -0.5) * b, (i & 4 ? 0.5 : -0.5) * c);
    }
    const int quads[6][4] = {{1, 3, 7, 5}, {0, 4, 6, 2}, {2, 6, 7, 3}, {0, 1, 5, 4}, {4, 5, 7, 6}, {0, 2, 3, 1}};
    for (const auto& q : quads) {
        m.faces.push_back(Face{{q[0], q[1], q[2], q[3]}});
    }
    return m;
}

Mesh make_prism(Rng& rng) {
    const int n = 5 + static_cast<int>(rng.below(4));
    const double r_bottom = rng.uniform(0.35, 0.5);
    const double r_top = rng.uniform(0.2, 0.5);
    const double h = rng.uniform(0.6, 1.0);
    const double phase = rng.uniform(0.0, kTwoPi);
    Mesh m;
    for (int ring = 0; ring < 2; ++ring) {
        const double r = ring == 0 ? r_bottom : r_top;
        const double y = ring == 0 ? -0.5 * h : 0.5 * h;
        for (int i = 0; i < n; ++i) {
            const double a = phase + kTwoPi * i / n;
            m.vertices.emplace_back(r * std::cos(a), y, r * std::sin(a));
        }
    }
    for (int i = 0; i < n; ++i) {
        const int j = (i + 1) % n;
        m.faces.push_back(Face{{i, j, n + j, n + i}});
    }
    Face bottom;
    Face top;
    for (int i = 0; i < n; ++i) {
        bottom.vertices.push_back(i);
        top.vertices.push_back(n + i);
    }
    m.faces.push_back(bottom);
    m.faces.push_back(top);
    return m;
}

Mesh make_bipyramid(Rng& rng) {
    const int n = 6 + static_cast<int>(rng.below(3));
    const double r = rng.uniform(0.4, 0.5);
    const double up = rng.uniform(0.35, 0.5);
    const double down = rng.uniform(0.25, 0.5);
    const double phase = rng.uniform(0.0, kTwoPi);
    Mesh m;
    for (int i = 0; i < n; ++i) {
        const double a = phase + kTwoPi * i / n;
        m.vertices.emplace_back(r * std::cos(a), 0.0, r * std::sin(a));
    }
    m.vertices.emplace_back(0.0, up, 0.0);
    m.vertices.emplace_back(0.0, -down, 0.0);
    for (int i = 0; i < n; ++i) {
        const int j = (i + 1) % n;
        m.faces.push_back(Face{{i, j, n}});
        m.faces.push_back(Face{{j, i, n + 1}});
    }
    return m;
}

Vector3d shade_pattern(const Face& f, double u, double v) {
    const double fu = u * f.frequency;
    const double fv = v * f.frequency;
    auto frac = [](double x) { return x - std::floor(x); };
    bool second = false;
    switch (f.pattern) {
    case Pattern::Solid:
        second = false;
        break;
    case Pattern::Stripes:
        second = frac(fu) < 0.5;
        break;
    case Pattern::Checker:
        second = (static_cast<long>(std::floor(fu)) + static_cast<long>(std::floor(fv))) % 2 == 0;
        break;
    case Pattern::Dots: {
        const double du = frac(fu) - 0.5;
        const double dv = frac(fv) - 0.5;
        second = du * du + dv * dv < 0.09;
        break;
    }
    case Pattern::Diagonal:
        second = frac(fu + fv) < 0.5;
        break;
    }
    return second ? f.color_b : f.color_a;
}

} // namespace

std::string to_string(Pattern p) {
    switch (p) {
    case Pattern::Solid: return "solid";
    case Pattern::Stripes: return "stripes";
    case Pattern::Checker: return "checker";
    case Pattern::Dots: return "dots";
    case Pattern::Diagonal: return "diagonal";
    }
    return "solid";
}

Pattern pattern_from_string(const std::string& s) {
    for (Pattern p : {Pattern::Solid, Pattern::Stripes, Pattern::Checker, Pattern::Dots, Pattern::Diagonal}) {
        if (to_string(p) == s) {
            return p;
        }
    }
    throw std::invalid_argument("unknown texture pattern: " + s);
}

std::string to_string(TrajectoryKind k) {
    switch (k) {
    case TrajectoryKind::Spin: return "spin";
    case TrajectoryKind::Tumble: return "tumble";
    case TrajectoryKind::TranslateAndSpin: return "translate-and-spin";
    case TrajectoryKind::Shake: return "shake";
    }
    return "spin";
}

TrajectoryKind trajectory_from_string(const std::string& s) {
    for (TrajectoryKind k :
         {TrajectoryKind::Spin, TrajectoryKind::Tumble, TrajectoryKind::TranslateAndSpin, TrajectoryKind::Shake}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw std::invalid_argument("unknown trajectory: " + s);
}

void validate(const Mesh& mesh) {
    if (mesh.vertices.size() < 4 || mesh.faces.size() < 4) {
        throw std::invalid_argument("degenerate mesh: too few vertices or faces");
    }
    for (const auto& v : mesh.vertices) {
        if (!v.allFinite() || v.cwiseAbs().maxCoeff() > 0.5 + 1e-9) {
            throw std::invalid_argument("degenerate mesh: vertex outside the unit cube");
        }
    }
    for (const auto& f : mesh.faces) {
        if (f.vertices.size() < 3) {
            throw std::invalid_argument("degenerate mesh: face with fewer than three vertices");
        }
        for (int i : f.vertices) {
            if (i < 0 || static_cast<std::size_t>(i) >= mesh.vertices.size()) {
                throw std::invalid_argument("degenerate mesh: face index out of range");
            }
        }
        Vector3d n = Vector3d::Zero();
        for (std::size_t i = 0; i < f.vertices.size(); ++i) {
            n += mesh.vertices[static_cast<std::size_t>(f.vertices[i])].cross(
                mesh.vertices[static_cast<std::size_t>(f.vertices[(i + 1) % f.vertices.size()])]);
        }
        if (n.norm() < 1e-9) {
            throw std::invalid_argument("degenerate mesh: zero-area face");
        }
    }
}

ObjectSpec make_object(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x0b1ec7));
    ObjectSpec obj;
    obj.seed = seed;
    const auto family = rng.below(3);
    if (family == 0) {
        obj.mesh = make_box(rng);
        obj.id = "box-" + std::to_string(seed);
    } else if (family == 1) {
        obj.mesh = make_prism(rng);
        obj.id = "prism-" + std::to_string(seed);
    } else {
        obj.mesh = make_bipyramid(rng);
        obj.id = "bipyramid-" + std::to_string(seed);
    }
    normalize_mesh(obj.mesh);
    texture_faces(obj.mesh, rng);
    validate(obj.mesh);
    return obj;
}

ObjectSpec make_cube() {
    Rng rng(0);
    ObjectSpec obj;
    obj.id = "cube";
    obj.mesh = make_box(rng);
    for (auto& v : obj.mesh.vertices) {
        v = v.cwiseSign() * 0.5;
    }
    normalize_mesh(obj.mesh);
    const Vector3d colors[6] = {{0.9, 0.1, 0.1}, {0.1, 0.9, 0.1}, {0.1, 0.1, 0.9},
                                {0.9, 0.9, 0.1}, {0.9, 0.1, 0.9}, {0.1, 0.9, 0.9}};
    for (std::size_t i = 0; i < 6; ++i) {
        obj.mesh.faces[i].pattern = Pattern::Solid;
        obj.mesh.faces[i].color_a = colors[i];
        obj.mesh.faces[i].color_b = colors[i];
    }
    return obj;
}

Eigen::Matrix3d rotation(const Pose& pose) {
    using Eigen::AngleAxisd;
    return (AngleAxisd(pose.roll, Vector3d::UnitZ()) * AngleAxisd(pose.elevation, Vector3d::UnitX()) *
            AngleAxisd(pose.azimuth, Vector3d::UnitY()))
        .toRotationMatrix();
}

Render render_view(const ObjectSpec& object, const Pose& pose, Index height, Index width) {
    if (height < 16 || width < 16) {
        throw std::invalid_argument("render size must be at least 16x16");
    }
    validate(object.mesh);
    const Mesh& mesh = object.mesh;
    const Eigen::Matrix3d rot = rotation(pose);
    const double px_per_unit = pose.scale * 0.6 * static_cast<double>(std::min(height, width));
    const double cx = 0.5 * static_cast<double>(width) + pose.translation.x();
    const double cy = 0.5 * static_cast<double>(height) + pose.translation.y();
    const Vector3d light = Vector3d(0.4, 0.5, 0.77).normalized();

    std::vector<Vector3d> cam(mesh.vertices.size());
    std::vector<Vector2d> screen(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        cam[i] = rot * mesh.vertices[i];
        screen[i] = Vector2d(cx + px_per_unit * cam[i].x(), cy - px_per_unit * cam[i].y());
    }

    struct Visible {
        std::size_t face;
        double depth;
    };
    std::vector<Visible> visible;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const Vector3d n = rot * face_normal(mesh, mesh.faces[f]);
        if (n.z() > 1e-9) {
            Vector3d c = Vector3d::Zero();
            for (int i : mesh.faces[f].vertices) {
                c += cam[static_cast<std::size_t>(i)];
            }
            visible.push_back({f, c.z() / static_cast<double>(mesh.faces[f].vertices.size())});
        }
    }
    std::stable_sort(visible.begin(), visible.end(), [](const Visible& a, const Visible& b) { return a.depth < b.depth; });

    Render r;
    r.image = constant_image(height, width, kBackground);
    r.mask = Mask(height, width);
    r.face_id = MatrixT<int>::Constant(height, width, -1);

    for (const Visible& vis : visible) {
        const Face& face = mesh.faces[vis.face];
        const Vector3d n_obj = face_normal(mesh, face);
        const double shade = 0.45 + 0.55 * std::max(0.0, (rot * n_obj).dot(light));
        const Vector3d& o = mesh.vertices[static_cast<std::size_t>(face.vertices[0])];
        const Vector3d u_axis = (mesh.vertices[static_cast<std::size_t>(face.vertices[1])] - o).normalized();
        const Vector3d v_axis = n_obj.cross(u_axis);
        for (std::size_t k = 1; k + 1 < face.vertices.size(); ++k) {
            const std::size_t ia = static_cast<std::size_t>(face.vertices[0]);
            const std::size_t ib = static_cast<std::size_t>(face.vertices[k]);
            const std::size_t ic = static_cast<std::size_t>(face.vertices[k + 1]);
            const Vector2d &a = screen[ia], &b = screen[ib], &c = screen[ic];
            const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
            if (std::abs(area) < 1e-12) {
                continue;
            }
            const Index x_lo = std::max<Index>(0, static_cast<Index>(std::floor(std::min({a.x(), b.x(), c.x()}))));
            const Index x_hi =
                std::min<Index>(width - 1, static_cast<Index>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
            const Index y_lo = std::max<Index>(0, static_cast<Index>(std::floor(std::min({a.y(), b.y(), c.y()}))));
            const Index y_hi =
                std::min<Index>(height - 1, static_cast<Index>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
            for (Index y = y_lo; y <= y_hi; ++y) {
                for (Index x = x_lo; x <= x_hi; ++x) {
                    const Vector2d p(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
                    const double w0 = ((b - p).x() * (c - p).y() - (b - p).y() * (c - p).x()) / area;
                    const double w1 = ((c - p).x() * (a - p).y() - (c - p).y() * (a - p).x()) / area;
                    const double w2 = 1.0 - w0 - w1;
                    if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) {
                        continue;
                    }
                    const Vector3d q = w0 * mesh.vertices[ia] + w1 * mesh.vertices[ib] + w2 * mesh.vertices[ic];
                    const Vector3d color = shade_pattern(face, (q - o).dot(u_axis), (q - o).dot(v_axis)) * shade;
                    r.image.pixel(y, x) = color.transpose();
                    r.mask.set(y, x, true);
                    r.face_id(y, x) = static_cast<int>(vis.face);
                }
            }
        }
    }
    return r;
}

Image render_object_crop(const ObjectSpec& object, const Pose& pose, Index size) {
    Pose centred = pose;
    centred.translation.setZero();
    centred.scale = 1.0;
    const Render r = render_view(object, centred, size, size);
    return object_crop(r.image, r.mask, size);
}

std::vector<Pose> trajectory_poses(const TrajectorySpec& spec, Index frames, std::uint64_t seed, Index size) {
    Rng rng(mix_seed(seed, 0x9053));
    const double scale = rng.uniform(0.7, 1.0);
    const double phase_a = rng.uniform(0.0, kTwoPi);
    const double phase_b = rng.uniform(0.0, kTwoPi);
    const double amp_a = rng.uniform(0.25, 0.45);
    const double amp_b = rng.uniform(0.15, 0.35);
    const double drift = rng.uniform(0.06, 0.12) * static_cast<double>(size);
    const double n = static_cast<double>(frames);
    std::vector<Pose> poses(static_cast<std::size_t>(frames));
    for (Index t = 0; t < frames; ++t) {
        const double s = static_cast<double>(t);
        Pose p;
        p.scale = scale;
        const double spin = spec.start_azimuth + spec.total_rotation * s / n;
        switch (spec.kind) {
        case TrajectoryKind::Spin:
            p.azimuth = spin;
            break;
        case TrajectoryKind::Tumble:
            p.azimuth = spin;
            p.elevation = amp_a * std::sin(kTwoPi * s / 20.0 + phase_a);
            p.roll = amp_b * std::sin(kTwoPi * s / 20.0 + phase_b);
            break;
        case TrajectoryKind::TranslateAndSpin:
            p.azimuth = spin;
            p.translation = Vector2d(drift * std::sin(kTwoPi * s / 20.0 + phase_a),
                                     0.5 * drift * std::sin(kTwoPi * s / 20.0 + phase_b));
            break;
        case TrajectoryKind::Shake:
            p.azimuth = spec.start_azimuth + 0.5 * std::sin(2.0 * kTwoPi * s / 20.0 + phase_a);
            p.roll = 0.15 * std::sin(2.0 * kTwoPi * s / 20.0 + phase_b);
            break;
        }
        p.azimuth = wrap_angle(p.azimuth);
        poses[static_cast<std::size_t>(t)] = p;
    }
    return poses;
}

std::vector<HandState> hand_path(Index frames, Index size, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x4a4d));
    const double w = static_cast<double>(size);
    const double phase = rng.uniform(0.0, kTwoPi);
    const double phase_y = rng.uniform(0.0, kTwoPi);
    const double y_off = rng.uniform(-0.08, 0.08) * w;
    std::vector<HandState> path(static_cast<std::size_t>(frames));
    for (Index t = 0; t < frames; ++t) {
        const double s = static_cast<double>(t);
        HandState h;
        h.radius = 0.17 * w;
        h.x = 0.5 * w + 0.45 * w * std::cos(kTwoPi * s / 20.0 + phase);
        h.y = 0.5 * w + y_off + 0.12 * w * std::sin(2.0 * kTwoPi * s / 20.0 + phase_y);
        path[static_cast<std::size_t>(t)] = h;
    }
    return path;
}

namespace {

void draw_hand(Image& img, Mask& hand_mask, const HandState& h) {
    const Eigen::RowVector3d skin(0.87, 0.68, 0.55);
    const Eigen::RowVector3d crease(0.66, 0.47, 0.38);
    for (Index y = 0; y < img.height; ++y) {
        for (Index x = 0; x < img.width; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - h.x;
            const double dy = static_cast<double>(y) + 0.5 - h.y;
            if (dx * dx + dy * dy > h.radius * h.radius) {
                continue;
            }
            const double band = (dx + h.radius) / (0.5 * h.radius);
            const bool dark = band - std::floor(band) < 0.25;
            img.pixel(y, x) = dark ? crease : skin;
            hand_mask.set(y, x, true);
        }
    }
}

} // namespace

Episode generate_episode(const ObjectSpec& object, const TrajectorySpec& trajectory, const EpisodeConfig& config,
                         std::uint64_t seed) {
    if (config.references < 1) {
        throw std::invalid_argument("episode needs at least one reference view (K >= 1)");
    }
    if (config.delta_t < 1 || config.frames < 2 * config.delta_t) {
        throw std::invalid_argument("episode length must be at least 2 * delta_t");
    }
    Episode ep;
    ep.object = object;
    ep.trajectory = trajectory;
    ep.seed = seed;
    ep.delta_t = config.delta_t;
    ep.dilation_radius = config.dilation_radius();
    ep.poses = trajectory_poses(trajectory, config.frames, seed, config.size);
    if (config.hand) {
        ep.hand = hand_path(config.frames, config.size, seed);
    }
    for (Index t = 0; t < config.frames; ++t) {
        Render r = render_view(object, ep.poses[static_cast<std::size_t>(t)], config.size, config.size);
        Mask hand(config.size, config.size);
        if (config.hand) {
            draw_hand(r.image, hand, ep.hand[static_cast<std::size_t>(t)]);
        }
        Mask visible = r.mask;
        visible.bits = visible.bits.cwiseProduct((hand.bits.array() == 0).cast<std::uint8_t>().matrix());
        ep.frames.push_back(r.image);
        ep.hoi_masks.push_back(dilate(mask_union(r.mask, hand), ep.dilation_radius));
        ep.object_masks.push_back(visible);
    }
    for (Index k = 0; k < config.references; ++k) {
        Pose p;
        p.azimuth = kTwoPi * static_cast<double>(k) / static_cast<double>(config.references);
        ep.ref_azimuths.push_back(p.azimuth);
        ep.refs.push_back(render_object_crop(object, p, config.size));
    }
    return ep;
}

std::vector<Image> clean_object_crops(const Episode& ep) {
    std::vector<Image> out;
    out.reserve(ep.poses.size());
    for (const Pose& p : ep.poses) {
        out.push_back(render_object_crop(ep.object, p, ep.size()));
    }
    return out;
}

// ------------------------------------------------------------------ file I/O

namespace {

std::string indexed(const char* fmt, Index i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, static_cast<int>(i));
    return buf;
}

json vec_json(const Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Vector3d vec_from(const json& j) {
    if (!j.is_array() || j.size() != 3) {
        throw EpisodeError(EpisodeError::Kind::MalformedMetadata, "expected a 3-vector in meta.json");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json object_json(const ObjectSpec& obj) {
    json verts = json::array();
    for (const auto& v : obj.mesh.vertices) {
        verts.push_back(vec_json(v));
    }
    json faces = json::array();
    for (const auto& f : obj.mesh.faces) {
        faces.push_back({{"vertices", f.vertices},
                         {"pattern", to_string(f.pattern)},
                         {"color_a", vec_json(f.color_a)},
                         {"color_b", vec_json(f.color_b)},
                         {"frequency", f.frequency}});
    }
    return {{"id", obj.id}, {"seed", obj.seed}, {"vertices", verts}, {"faces", faces}};
}

ObjectSpec object_from(const json& j) {
    ObjectSpec obj;
    obj.id = j.at("id").get<std::string>();
    obj.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& v : j.at("vertices")) {
        obj.mesh.vertices.push_back(vec_from(v));
    }
    for (const auto& jf : j.at("faces")) {
        Face f;
        f.vertices = jf.at("vertices").get<std::vector<int>>();
        f.pattern = pattern_from_string(jf.at("pattern").get<std::string>());
        f.color_a = vec_from(jf.at("color_a"));
        f.color_b = vec_from(jf.at("color_b"));
        f.frequency = jf.at("frequency").get<double>();
        obj.mesh.faces.push_back(std::move(f));
    }
    return obj;
}

} // namespace

void write_episode(const Episode& ep, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "object_masks");
    fs::create_directories(dir / "hoi_masks");
    fs::create_directories(dir / "refs");

    json poses = json::array();
    for (const auto& p : ep.poses) {
        poses.push_back({{"azimuth", p.azimuth},
                         {"elevation", p.elevation},
                         {"roll", p.roll},
                         {"translation", {p.translation.x(), p.translation.y()}},
                         {"scale", p.scale}});
    }
    json hand = json::array();
    for (const auto& h : ep.hand) {
        hand.push_back({{"x", h.x}, {"y", h.y}, {"radius", h.radius}});
    }
    json meta = {{"format", "mvhoi-episode"},
                 {"version", 1},
                 {"seed", ep.seed},
                 {"height", ep.size()},
                 {"width", ep.size()},
                 {"frames", ep.length()},
                 {"references", ep.refs.size()},
                 {"delta_t", ep.delta_t},
                 {"dilation_radius", ep.dilation_radius},
                 {"trajectory",
                  {{"kind", to_string(ep.trajectory.kind)},
                   {"start_azimuth", ep.trajectory.start_azimuth},
                   {"total_rotation", ep.trajectory.total_rotation}}},
                 {"object", object_json(ep.object)},
                 {"poses", poses},
                 {"ref_azimuths", ep.ref_azimuths},
                 {"hand", hand}};
    std::ofstream out(dir / "meta.json");
    if (!out) {
        throw std::runtime_error("cannot write " + (dir / "meta.json").string());
    }
    out << meta.dump(1) << "\n";

    for (Index t = 0; t < ep.length(); ++t) {
        const auto i = static_cast<std::size_t>(t);
        write_ppm(dir / "frames" / indexed("frame_%04d.ppm", t), ep.frames[i]);
        write_pgm(dir / "object_masks" / indexed("m_%04d.pgm", t), ep.object_masks[i]);
        write_pgm(dir / "hoi_masks" / indexed("h_%04d.pgm", t), ep.hoi_masks[i]);
    }
    for (std::size_t k = 0; k < ep.refs.size(); ++k) {
        write_ppm(dir / "refs" / indexed("ref_%02d.ppm", static_cast<Index>(k)), ep.refs[k]);
    }
}

Episode read_episode(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    using Kind = EpisodeError::Kind;
    const fs::path meta_path = dir / "meta.json";
    if (!fs::exists(meta_path)) {
        throw EpisodeError(Kind::MissingFile, "missing file: " + meta_path.string());
    }
    json meta;
    try {
        std::ifstream in(meta_path);
        meta = json::parse(in);
    } catch (const json::exception& e) {
        throw EpisodeError(Kind::MalformedMetadata, "malformed meta.json: " + std::string(e.what()));
    }

    Episode ep;
    Index frames = 0;
    Index refs = 0;
    Index h = 0;
    Index w = 0;
    try {
        ep.seed = meta.at("seed").get<std::uint64_t>();
        h = meta.at("height").get<Index>();
        w = meta.at("width").get<Index>();
        frames = meta.at("frames").get<Index>();
        refs = meta.at("references").get<Index>();
        ep.delta_t = meta.at("delta_t").get<Index>();
        ep.dilation_radius = meta.at("dilation_radius").get<int>();
        const auto& tj = meta.at("trajectory");
        ep.trajectory.kind = trajectory_from_string(tj.at("kind").get<std::string>());
        ep.trajectory.start_azimuth = tj.at("start_azimuth").get<double>();
        ep.trajectory.total_rotation = tj.at("total_rotation").get<double>();
        ep.object = object_from(meta.at("object"));
        for (const auto& jp : meta.at("poses")) {
            Pose p;
            p.azimuth = jp.at("azimuth").get<double>();
            p.elevation = jp.at("elevation").get<double>();
            p.roll = jp.at("roll").get<double>();
            p.translation = Vector2d(jp.at("translation").at(0).get<double>(), jp.at("translation").at(1).get<double>());
            p.scale = jp.at("scale").get<double>();
            ep.poses.push_back(p);
        }
        ep.ref_azimuths = meta.at("ref_azimuths").get<std::vector<double>>();
        for (const auto& jh : meta.at("hand")) {
            ep.hand.push_back(HandState{jh.at("x").get<double>(), jh.at("y").get<double>(),
                                        jh.at("radius").get<double>()});
        }
    } catch (const json::exception& e) {
        throw EpisodeError(Kind::MalformedMetadata, "malformed meta.json: " + std::string(e.what()));
    } catch (const std::invalid_argument& e) {
        throw EpisodeError(Kind::MalformedMetadata, "malformed meta.json: " + std::string(e.what()));
    }
    if (static_cast<Index>(ep.poses.size()) != frames || static_cast<Index>(ep.ref_azimuths.size()) != refs ||
        (!ep.hand.empty() && static_cast<Index>(ep.hand.size()) != frames)) {
        throw EpisodeError(Kind::MalformedMetadata, "meta.json counts are inconsistent");
    }

    auto require = [&](const fs::path& p, Index frame) {
        if (!fs::exists(p)) {
            throw EpisodeError(Kind::MissingFile,
                               "missing file: " + p.string() + " (frame " + std::to_string(frame) + ")",
                               static_cast<long>(frame));
        }
        return p;
    };
    auto check_shape = [&](Index ih, Index iw, const fs::path& p, Index frame) {
        if (ih != h || iw != w) {
            throw EpisodeError(Kind::ShapeMismatch, "shape mismatch in " + p.string(), static_cast<long>(frame));
        }
    };
    for (Index t = 0; t < frames; ++t) {
        const fs::path fp = require(dir / "frames" / indexed("frame_%04d.ppm", t), t);
        const fs::path mp = require(dir / "object_masks" / indexed("m_%04d.pgm", t), t);
        const fs::path hp = require(dir / "hoi_masks" / indexed("h_%04d.pgm", t), t);
        Image f = read_ppm(fp);
        Mask m = read_pgm(mp);
        Mask hm = read_pgm(hp);
        check_shape(f.height, f.width, fp, t);
        check_shape(m.height, m.width, mp, t);
        check_shape(hm.height, hm.width, hp, t);
        ep.frames.push_back(std::move(f));
        ep.object_masks.push_back(std::move(m));
        ep.hoi_masks.push_back(std::move(hm));
    }
    for (Index k = 0; k < refs; ++k) {
        const fs::path rp = require(dir / "refs" / indexed("ref_%02d.ppm", k), k);
        Image r = read_ppm(rp);
        check_shape(r.height, r.width, rp, k);
        ep.refs.push_back(std::move(r));
    }
    return ep;
}

} // namespace mvhoi::synth
