#pragma once

#include "mvhoi/refiner.hpp"
#include "mvhoi/training.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace mvhoi::sched {

class ObjectStateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Padded bounding-box crop of the masked object resized to size x size with
// everything outside the mask zeroed. Throws ObjectStateError on an empty mask.
Image extract_object_state(const Image& frame, const Mask& mask, Index size);

struct Pipeline {
    const train::Stage1Model* stage1 = nullptr;
    const refiner::Stage2Model* stage2 = nullptr;
};

// Source stream of one clip or long video plus the target identity.
struct Source {
    Video frames;
    MaskSequence object;
    MaskSequence hoi;
    std::vector<Image> refs;  // target references
    Image o_init;             // target object state at the first frame
};

Source slice(const Source& s, Index start, Index end);  // frames [start, end]

struct Arm {
    bool guidance = true;
    double alpha = 0.0;
};

struct ClipResult {
    Video video;
    std::vector<Image> coarse;                     // rollout frames at stride delta_t
    std::vector<uoa::ViewWeights> coarse_weights;  // one per coarse frame
    std::vector<uoa::ViewWeights> weights;         // one per video frame
};

// Stage I rollout at stride delta_t followed by Stage II refinement.
ClipResult run_clip(const Pipeline& p, const Source& src, const Arm& arm, int steps, Index delta_t,
                    std::uint64_t seed);

enum class InitSource { Setup, Refined, Fallback, Coarse };
std::string to_string(InitSource s);

struct SegmentPlan {
    Index segment = 20;
    Index total = 60;
    int steps = 10;
    double alpha = 1.0;
    bool naive = false;
};

struct SegmentDiag {
    Index start = 0;
    Index end = 0;  // inclusive
    InitSource init = InitSource::Setup;
    std::vector<Index> argmax;  // per coarse frame
    double psnr = 0.0;          // filled when ground truth is supplied
    double ssim = 0.0;
};

struct LongResult {
    Video video;
    std::vector<SegmentDiag> segments;
};

// Segment bounds [20 i, 20 i + 20] clipped to total - 1; consecutive segments
// share one frame.
std::vector<std::pair<Index, Index>> segment_bounds(Index segment, Index total);

// Cross-iterative inference: each segment after the first starts from the
// object extracted from the previous refined segment (naive mode: from the
// previous UOA rollout). The shared boundary frame enters the next segment as
// a fully known conditioning frame.
LongResult cross_iterative_infer(const Pipeline& p, const Source& src, const SegmentPlan& plan, Index delta_t,
                                 std::uint64_t seed, const Video* ground_truth = nullptr);

} // namespace mvhoi::sched
