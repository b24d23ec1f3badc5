#include "mvhoi/scheduler.hpp"

#include "mvhoi/metrics.hpp"

#include <algorithm>

namespace mvhoi::sched {

Image extract_object_state(const Image& frame, const Mask& mask, Index size) {
    if (mask.empty()) {
        throw ObjectStateError("cannot extract the object state from an empty mask");
    }
    const CropWindow win = object_window(mask);
    if (win.side >= static_cast<double>(std::max(frame.height, frame.width))) {
        Image whole = crop_resize(frame, CropWindow{0.0, 0.0, static_cast<double>(std::max(frame.height, frame.width))}, size);
        const Mask keep = crop_resize(mask, CropWindow{0.0, 0.0, static_cast<double>(std::max(frame.height, frame.width))}, size);
        for (Index y = 0; y < size; ++y) {
            for (Index x = 0; x < size; ++x) {
                if (!keep.at(y, x)) {
                    whole.pixel(y, x).setZero();
                }
            }
        }
        return whole;
    }
    return object_crop(frame, mask, size);
}

Source slice(const Source& s, Index start, Index end) {
    if (start < 0 || end < start || end >= static_cast<Index>(s.frames.size())) {
        throw std::out_of_range("segment [" + std::to_string(start) + ", " + std::to_string(end) +
                                "] lies outside the source");
    }
    Source out;
    out.refs = s.refs;
    out.o_init = s.o_init;
    const auto a = static_cast<std::ptrdiff_t>(start);
    const auto b = static_cast<std::ptrdiff_t>(end) + 1;
    out.frames.assign(s.frames.begin() + a, s.frames.begin() + b);
    out.object.assign(s.object.begin() + a, s.object.begin() + b);
    out.hoi.assign(s.hoi.begin() + a, s.hoi.begin() + b);
    return out;
}

ClipResult run_clip(const Pipeline& p, const Source& src, const Arm& arm, int steps, Index delta_t,
                    std::uint64_t seed) {
    if (p.stage1 == nullptr || p.stage2 == nullptr) {
        throw std::invalid_argument("pipeline needs both stages");
    }
    const Index frames = static_cast<Index>(src.frames.size());
    const Index hops = (frames - 1) / delta_t;
    if (hops < 1) {
        throw std::invalid_argument("clip shorter than one guidance stride");
    }
    const auto& s1 = *p.stage1;
    const auto seq = motion::extract_sequence(s1.params, s1.motion, src.frames, src.object, src.hoi, delta_t);
    std::vector<RowVector> motions;
    for (Index g = 0; g < hops; ++g) {
        motions.push_back(seq[static_cast<std::size_t>(g * delta_t)].value);
    }
    const uoa::Rollout roll = uoa::rollout(s1.params, s1.uoa, src.o_init, motions, src.refs);

    ClipResult r;
    r.coarse = roll.frames;
    r.coarse_weights = roll.weights;
    r.weights = ae::extract_view_weights(roll.weights, frames, delta_t);
    refiner::ConditionSet c = refiner::compose_condition(src.frames, src.hoi, src.object,
                                                         arm.guidance ? roll.frames : std::vector<Image>{}, delta_t,
                                                         src.refs);
    c.weights = r.weights;
    r.video = refiner::sample_video(p.stage2->params, p.stage2->refiner, c, steps, arm.alpha, seed);
    return r;
}

std::string to_string(InitSource s) {
    switch (s) {
    case InitSource::Setup: return "setup";
    case InitSource::Refined: return "refined";
    case InitSource::Fallback: return "fallback";
    case InitSource::Coarse: return "coarse";
    }
    return "setup";
}

std::vector<std::pair<Index, Index>> segment_bounds(Index segment, Index total) {
    if (segment < 1 || total < 2) {
        throw std::invalid_argument("segment plan needs a positive segment length and at least two frames");
    }
    std::vector<std::pair<Index, Index>> out;
    for (Index s = 0; s < total - 1; s += segment) {
        out.emplace_back(s, std::min(s + segment, total - 1));
    }
    return out;
}

LongResult cross_iterative_infer(const Pipeline& p, const Source& src, const SegmentPlan& plan, Index delta_t,
                                 std::uint64_t seed, const Video* ground_truth) {
    if (static_cast<Index>(src.frames.size()) < plan.total) {
        throw std::out_of_range("source has " + std::to_string(src.frames.size()) + " frames, plan needs " +
                                std::to_string(plan.total));
    }
    if (ground_truth != nullptr && static_cast<Index>(ground_truth->size()) < plan.total) {
        throw std::invalid_argument("ground truth shorter than the plan");
    }
    const Index size = p.stage1->uoa.size;
    LongResult out;
    Image init = src.o_init;
    InitSource init_source = InitSource::Setup;
    const auto bounds = segment_bounds(plan.segment, plan.total);
    for (std::size_t i = 0; i < bounds.size(); ++i) {
        const Index end = bounds[i].second;
        // a tail shorter than one stride reaches back over already refined frames
        const Index start = i == 0 ? 0 : std::max<Index>(0, std::min(bounds[i].first, end - delta_t));
        Source seg = slice(src, start, end);
        seg.o_init = init;
        if (i > 0) {
            seg.frames.front() = out.video[static_cast<std::size_t>(start)];
            seg.hoi.front() = Mask(seg.hoi.front().height, seg.hoi.front().width);
        }
        const ClipResult clip = run_clip(p, seg, Arm{true, plan.alpha}, plan.steps, delta_t,
                                         mix_seed(seed, static_cast<std::uint64_t>(i)));
        SegmentDiag diag;
        diag.start = start;
        diag.end = end;
        diag.init = init_source;
        for (const auto& w : clip.coarse_weights) {
            diag.argmax.push_back(metrics::argmax(w.w));
        }
        for (std::size_t f = out.video.size() - static_cast<std::size_t>(start); f < clip.video.size(); ++f) {
            out.video.push_back(clip.video[f]);
        }
        if (ground_truth != nullptr) {
            const Video gt(ground_truth->begin() + static_cast<std::ptrdiff_t>(start),
                           ground_truth->begin() + static_cast<std::ptrdiff_t>(end) + 1);
            diag.psnr = metrics::capped(metrics::psnr(clip.video, gt));
            diag.ssim = metrics::ssim(clip.video, gt);
        }
        out.segments.push_back(std::move(diag));

        const Image& boundary = clip.video.back();
        if (plan.naive) {
            init = clip.coarse.back();
            init_source = InitSource::Coarse;
        } else {
            try {
                init = extract_object_state(boundary, src.object[static_cast<std::size_t>(end)], size);
                init_source = InitSource::Refined;
            } catch (const ObjectStateError&) {
                init_source = InitSource::Fallback;
            }
        }
    }
    return out;
}

} // namespace mvhoi::sched
