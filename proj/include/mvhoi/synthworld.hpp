#pragma once

#include "mvhoi/image.hpp"

#include <Eigen/Geometry>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvhoi::synth {

enum class Pattern { Solid, Stripes, Checker, Dots, Diagonal };

std::string to_string(Pattern p);
Pattern pattern_from_string(const std::string& s);

struct Face {
    std::vector<int> vertices;  // convex polygon, counter-clockwise seen from outside
    Pattern pattern = Pattern::Solid;
    Eigen::Vector3d color_a = Eigen::Vector3d::Zero();
    Eigen::Vector3d color_b = Eigen::Vector3d::Zero();
    double frequency = 3.0;  // pattern cycles per object unit
};

struct Mesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<Face> faces;
};

struct ObjectSpec {
    std::string id;
    Mesh mesh;
    std::uint64_t seed = 0;
};

// Convex low-poly solid (box, prism/frustum or bipyramid) in the unit cube
// with a distinct texture on every face.
ObjectSpec make_object(std::uint64_t seed);
// Axis-aligned unit cube with six distinct solid face colours. Face order:
// +X, -X, +Y, -Y, +Z (front), -Z (back).
ObjectSpec make_cube();

void validate(const Mesh& mesh);

struct Pose {
    double azimuth = 0.0;
    double elevation = 0.0;
    double roll = 0.0;
    Eigen::Vector2d translation = Eigen::Vector2d::Zero();  // pixels
    double scale = 1.0;
};

Eigen::Matrix3d rotation(const Pose& pose);

struct Render {
    Image image;
    Mask mask;
    MatrixT<int> face_id;  // -1 where background
};

inline const Eigen::RowVector3d kBackground(0.22, 0.24, 0.28);

// Orthographic painter's-algorithm rasterizer with flat per-face shading.
Render render_view(const ObjectSpec& object, const Pose& pose, Index height, Index width);

// Object-centred crop of a clean render, background zeroed.
Image render_object_crop(const ObjectSpec& object, const Pose& pose, Index size);

enum class TrajectoryKind { Spin, Tumble, TranslateAndSpin, Shake };

std::string to_string(TrajectoryKind k);
TrajectoryKind trajectory_from_string(const std::string& s);

struct TrajectorySpec {
    TrajectoryKind kind = TrajectoryKind::Spin;
    double start_azimuth = 0.0;
    double total_rotation = 6.283185307179586;  // radians over the whole episode, signed
};

struct EpisodeConfig {
    Index size = 32;
    Index frames = 20;
    Index references = 4;
    Index delta_t = 4;
    bool hand = true;
    int dilation_radius() const { return static_cast<int>(std::lround(2.0 * static_cast<double>(size) / 32.0)); }
};

struct HandState {
    double x = 0.0;
    double y = 0.0;
    double radius = 0.0;
};

struct Episode {
    ObjectSpec object;
    TrajectorySpec trajectory;
    std::uint64_t seed = 0;
    Index delta_t = 4;
    int dilation_radius = 2;
    std::vector<Pose> poses;
    Video frames;
    MaskSequence object_masks;  // visible object pixels
    MaskSequence hoi_masks;     // dilate(object mask U hand mask)
    std::vector<Image> refs;    // object-centred crops at elevation 0
    std::vector<double> ref_azimuths;
    std::vector<HandState> hand;

    Index length() const { return static_cast<Index>(frames.size()); }
    Index size() const { return frames.empty() ? 0 : frames.front().height; }
};

// Pose sequence for a trajectory; depends only on (spec, frames, seed, size).
// Translations are in pixels for a size x size frame.
std::vector<Pose> trajectory_poses(const TrajectorySpec& spec, Index frames, std::uint64_t seed, Index size = 32);
std::vector<HandState> hand_path(Index frames, Index size, std::uint64_t seed);

Episode generate_episode(const ObjectSpec& object, const TrajectorySpec& trajectory, const EpisodeConfig& config,
                         std::uint64_t seed);

// Clean (no occluder) object-centred crops along the episode's poses.
std::vector<Image> clean_object_crops(const Episode& ep);

class EpisodeError : public std::runtime_error {
public:
    enum class Kind { MalformedMetadata, MissingFile, ShapeMismatch };
    EpisodeError(Kind kind, const std::string& what, long frame = -1)
        : std::runtime_error(what), kind_(kind), frame_(frame) {}
    Kind kind() const { return kind_; }
    long frame() const { return frame_; }

private:
    Kind kind_;
    long frame_;
};

void write_episode(const Episode& ep, const std::filesystem::path& dir);
Episode read_episode(const std::filesystem::path& dir);

} // namespace mvhoi::synth
