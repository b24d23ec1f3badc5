#pragma once

#include "mvhoi/dataset.hpp"
#include "mvhoi/scheduler.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mvhoi::eval {

enum class Mode { Self, Cross };
enum class ArmKind { Baseline, Crg, CrgAe };

std::string to_string(Mode m);
std::string to_string(ArmKind a);
Mode mode_from_string(const std::string& s);
ArmKind arm_from_string(const std::string& s);

// baseline: no guidance; +CRG: guidance with alpha = 0; +CRG+AE: guidance with alpha.
sched::Arm arm_settings(ArmKind arm, double alpha);

struct EpisodeCase {
    std::string id;
    sched::Source source;
    Video ground_truth;
    std::vector<double> gt_azimuths;  // target pose per frame
    std::vector<double> ref_azimuths;
};

// Self mode reenacts the source object; cross mode swaps in the paired target
// object rendered along the identical trajectory.
EpisodeCase make_case(const Config& cfg, const data::EpisodeSpec& spec, Mode mode, const std::string& id);
std::vector<EpisodeCase> make_cases(const Config& cfg, data::Split split, Mode mode, int limit);

struct EpisodeMetrics {
    std::string id;
    double psnr = 0.0;
    double ssim = 0.0;
    double retrieval = 0.0;
    double sharpness = 0.0;  // Laplacian variance inside M_HOI
};

struct ProtocolReport {
    Mode mode = Mode::Self;
    ArmKind arm = ArmKind::Baseline;
    double alpha = 0.0;
    std::vector<EpisodeMetrics> episodes;
    double psnr = 0.0;
    double ssim = 0.0;
    double retrieval = 0.0;
    double sharpness = 0.0;
    int count = 0;
};

using ClipRunner = std::function<sched::ClipResult(const EpisodeCase&)>;

ClipRunner pipeline_runner(const sched::Pipeline& p, const sched::Arm& arm, int steps, Index delta_t,
                           std::uint64_t seed);

double object_sharpness(const Video& video, const MaskSequence& region);

// Runs every case (in parallel) and averages the per-episode metrics.
ProtocolReport run_protocol(Mode mode, ArmKind arm, double alpha, const std::vector<EpisodeCase>& cases,
                            const ClipRunner& run);

nlohmann::json to_json(const ProtocolReport& r);
// report.json with every report and report.csv with one row per episode per arm.
void write_reports(const std::filesystem::path& dir, const std::vector<ProtocolReport>& reports);

struct LongEpisode {
    std::string id;
    double cross_final_psnr = 0.0;
    double naive_final_psnr = 0.0;
    double cross_drift = 0.0;  // dB per segment
    double naive_drift = 0.0;
};

struct LongReport {
    std::vector<LongEpisode> episodes;
    double win_rate = 0.0;  // fraction with cross >= naive on the final segment
};

// Least-squares slope of per-segment PSNR against the segment index.
double drift_slope(const std::vector<sched::SegmentDiag>& segments);

LongReport compare_long(const sched::Pipeline& p, const std::vector<EpisodeCase>& cases, const sched::SegmentPlan& plan,
                        Index delta_t, std::uint64_t seed);

nlohmann::json to_json(const LongReport& r);

} // namespace mvhoi::eval
