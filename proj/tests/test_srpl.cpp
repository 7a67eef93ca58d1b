#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vesselseg/label_prop.hpp"
#include "vesselseg/metrics.hpp"
#include "vesselseg/phantom.hpp"
#include "vesselseg/srpl.hpp"

using namespace vesselseg;

namespace {

struct CountingSegmenter : Segmenter {
    Segmenter& inner;
    int calls = 0;
    explicit CountingSegmenter(Segmenter& s) : inner(s) {}
    void bind_slice(int z) override { inner.bind_slice(z); }
    Mask2D segment(const Image2D& image, const PromptSet& prompts) override {
        ++calls;
        return inner.segment(image, prompts);
    }
};

/// Ignores prompts and always returns a fixed mask.
struct FixedSegmenter : Segmenter {
    Mask2D mask;
    explicit FixedSegmenter(Mask2D m) : mask(std::move(m)) {}
    Mask2D segment(const Image2D&, const PromptSet&) override { return mask; }
};

VesselSpec drifting_tube() {
    VesselSpec s;
    s.base_cy = 31.5;
    s.base_cx = 31.5;
    s.lumen_radius = 3.5;
    s.wall_thickness0 = s.wall_thickness1 = 1.5;
    s.drift_amp_y = 2.5;
    s.drift_amp_x = 2.5;
    s.drift_period = 28.0;
    return s;
}

}  // namespace

TEST_CASE("perturbation follows the sigma/delta/epsilon chain") {
    const BoundingBox2D b{10, 10, 20, 30};
    CHECK(b.width() == 10.0);
    CHECK(b.height() == 20.0);

    PerturbationParams p;
    p.scale = 0.1;
    p.max_noise = 5.0;

    // sigma = min(w,h)*s = 1.0; delta = min(5, 5*1.0) = 5.0
    Rng rng(31);
    for (int i = 0; i < 10000; ++i) {
        const BoundingBox2D out = perturb_box(b, p, rng);
        const double ex = out.x0 - b.x0;
        const double ey = out.y0 - b.y0;
        CHECK(std::abs(ex) <= 5.0);
        CHECK(std::abs(ey) <= 5.0);
        CHECK(out.width() == b.width());    // exact
        CHECK(out.height() == b.height());  // exact
    }

    SUBCASE("delta caps at M") {
        // sigma = 1.5 -> 5*sigma = 7.5, M = 5 wins
        const BoundingBox2D wide{0, 0, 15, 40};
        p.scale = 0.1;
        Rng r2(32);
        double max_seen = 0.0;
        for (int i = 0; i < 4000; ++i) {
            const BoundingBox2D out = perturb_box(wide, p, r2);
            max_seen = std::max(max_seen, std::abs(out.x0 - wide.x0));
            CHECK(std::abs(out.x0 - wide.x0) <= 5.0);
        }
        CHECK(max_seen > 4.5);  // the full [-5,5] range is exercised
    }
    SUBCASE("delta caps at 5*sigma for small boxes") {
        const BoundingBox2D small{0, 0, 4, 4};  // sigma = 0.4, delta = 2
        Rng r3(33);
        for (int i = 0; i < 4000; ++i) {
            const BoundingBox2D out = perturb_box(small, p, r3);
            CHECK(std::abs(out.x0 - small.x0) <= 2.0);
            CHECK(std::abs(out.y0 - small.y0) <= 2.0);
        }
    }
}

TEST_CASE("invalid perturbation parameters are rejected") {
    const BoundingBox2D b{0, 0, 4, 4};
    Rng rng(1);
    PerturbationParams p;
    p.scale = 0.0;
    CHECK_THROWS_AS(perturb_box(b, p, rng), VolumeError);
    p = {};
    p.vote_threshold = 11;
    CHECK_THROWS_AS(perturb_box(b, p, rng), VolumeError);
    CHECK_THROWS_AS(perturb_box({5, 5, 5, 9}, PerturbationParams{}, rng), VolumeError);
}

TEST_CASE("voting thresholds") {
    Mask2D a(4, 4), b(4, 4), c(4, 4);
    a.at(1, 1) = 1;
    b.at(1, 1) = 1;
    c.at(2, 2) = 1;

    SUBCASE("identical masks reproduce the mask for any tau") {
        const std::vector<Mask2D> same{a, a, a};
        for (int tau = 1; tau <= 3; ++tau) CHECK(vote_masks(same, tau) == a);
    }
    SUBCASE("threshold counts votes per pixel") {
        const std::vector<Mask2D> masks{a, b, c};
        const Mask2D two = vote_masks(masks, 2);
        CHECK(two.at(1, 1) == 1);
        CHECK(two.at(2, 2) == 0);
    }
    SUBCASE("tau=1 is union, tau=K is intersection") {
        const std::vector<Mask2D> masks{a, b, c};
        const Mask2D uni = vote_masks(masks, 1);
        CHECK(uni.at(1, 1) == 1);
        CHECK(uni.at(2, 2) == 1);
        const Mask2D inter = vote_masks(masks, 3);
        CHECK(inter.at(1, 1) == 0);
        CHECK(inter.at(2, 2) == 0);
    }
    SUBCASE("exactly tau votes are enough, tau-1 are not") {
        std::vector<Mask2D> masks(10, Mask2D(2, 2));
        for (int i = 0; i < 5; ++i) masks[size_t(i)].at(0, 0) = 1;
        for (int i = 0; i < 4; ++i) masks[size_t(i)].at(1, 1) = 1;
        const Mask2D out = vote_masks(masks, 5);
        CHECK(out.at(0, 0) == 1);
        CHECK(out.at(1, 1) == 0);
    }
    SUBCASE("shape mismatch throws") {
        CHECK_THROWS_AS(vote_masks({a, Mask2D(3, 3)}, 1), VolumeError);
    }
    SUBCASE("voting is monotone in foreground votes") {
        Rng rng(44);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<Mask2D> masks(5, Mask2D(6, 6));
            for (auto& m : masks)
                for (auto& px : m.v) px = rng.coin_flip();
            const int tau = 1 + int(rng.uniform_index(5));
            const Mask2D before = vote_masks(masks, tau);
            // flip one random background vote to foreground
            const size_t mi = rng.uniform_index(5);
            const size_t pi = rng.uniform_index(36);
            if (masks[mi].v[pi]) continue;
            masks[mi].v[pi] = 1;
            const Mask2D after = vote_masks(masks, tau);
            for (size_t i = 0; i < before.size(); ++i)
                if (before.v[i]) CHECK(after.v[i]);
        }
    }
}

TEST_CASE("merge and wall-subtraction identities") {
    Labels2D labels(5, 5);
    labels.at(2, 2) = kLumen;
    labels.at(2, 1) = kWall;
    labels.at(1, 2) = kWall;

    const Mask2D merged = merge_labels(labels);
    CHECK(merged.at(2, 2) == 1);
    CHECK(merged.at(2, 1) == 1);
    CHECK(merged.at(0, 0) == 0);

    Mask2D lumen(5, 5);
    lumen.at(2, 2) = 1;
    const Mask2D wall = split_wall(merged, lumen);
    CHECK(wall.at(2, 2) == 0);
    CHECK(wall.at(2, 1) == 1);
    CHECK(wall.at(1, 2) == 1);

    SUBCASE("empty lumen leaves wall == merged") {
        CHECK(split_wall(merged, Mask2D(5, 5)) == merged);
    }
    SUBCASE("lumen outside merged removes nothing extra") {
        Mask2D stray(5, 5);
        stray.at(4, 4) = 1;
        CHECK(split_wall(merged, stray) == merged);
    }
}

TEST_CASE("oracle-refined slices reproduce ground truth") {
    const PhantomCase c = generate_case(drifting_tube(), {16, 64, 64}, {1, 1, 1}, 4, 0.02, 11);
    const LabelVolume cipl = propagate_cipl(c.sparse);
    OracleSegmenter oracle(c.gt, 0);
    PerturbationParams p;

    const int z = 2;  // unlabeled, refined from C-IPL
    oracle.bind_slice(z);
    const Labels2D refined =
        refine_slice(extract_slice(c.image, z), extract_slice(cipl, z), oracle, p, 99, z);
    CHECK(refined == extract_slice(c.gt, z));
}

TEST_CASE("refined output partitions into lumen and wall") {
    const PhantomCase c = generate_case(drifting_tube(), {16, 64, 64}, {1, 1, 1}, 4, 0.02, 12);
    const LabelVolume cipl = propagate_cipl(c.sparse);
    OracleSegmenter oracle(c.gt, 1);  // dilation makes the prediction imperfect
    PerturbationParams p;

    for (int z : {1, 2, 3, 5}) {
        oracle.bind_slice(z);
        const Labels2D refined =
            refine_slice(extract_slice(c.image, z), extract_slice(cipl, z), oracle, p, 7, z);
        // wall and lumen are disjoint by construction of {0,1,2}; their union
        // must equal the refined merged mask from a fresh merged pass
        for (size_t i = 0; i < refined.size(); ++i) CHECK(refined.v[i] <= 2);
    }
}

TEST_CASE("refine_volume fuses expert slices verbatim and refines the rest") {
    const PhantomCase c = generate_case(drifting_tube(), {16, 64, 64}, {1, 1, 1}, 4, 0.02, 13);
    const LabelVolume cipl = propagate_cipl(c.sparse);
    OracleSegmenter oracle(c.gt, 0);
    PerturbationParams p;

    const LabelVolume srpl = refine_volume(c.image, cipl, c.sparse, oracle, p, 5);

    for (int z : c.sparse.annotated_slices())
        CHECK(extract_slice(srpl, z) == extract_slice(c.sparse, z));

    // with a perfect oracle, refined slices equal gt exactly
    for (int z : srpl.annotated_slices())
        if (!c.sparse.is_annotated(z)) CHECK(extract_slice(srpl, z) == extract_slice(c.gt, z));

    // annotated set is the union of expert and refined indices
    std::vector<int> expect;
    for (int z : cipl.annotated_slices()) expect.push_back(z);
    CHECK(srpl.annotated_slices() == expect);

    SUBCASE("dimension mismatch is rejected") {
        const PhantomCase other = generate_case(drifting_tube(), {8, 64, 64}, {1, 1, 1}, 4, 0.0, 1);
        CHECK_THROWS_AS(refine_volume(other.image, cipl, c.sparse, oracle, p, 5), VolumeError);
    }
}

TEST_CASE("threshold segmenter grabs the component containing the box center") {
    Image2D img(16, 16, 0.1f);
    for (int y = 4; y <= 7; ++y)
        for (int x = 4; x <= 7; ++x) img.at(y, x) = 0.9f;
    img.at(12, 12) = 0.9f;  // far bright speckle

    ThresholdSegmenter seg(0.5f);
    PromptSet prompts;
    prompts.box = BoundingBox2D{3.0, 3.0, 8.0, 8.0};
    const Mask2D mask = seg.segment(img, prompts);
    int count = 0;
    for (auto v : mask.v) count += v;
    CHECK(count == 16);
    CHECK(mask.at(5, 5) == 1);
    CHECK(mask.at(12, 12) == 0);  // outside the expanded box and disconnected

    SUBCASE("empty when the center is below the level") {
        prompts.box = BoundingBox2D{10.0, 2.0, 15.0, 6.0};
        const Mask2D none = seg.segment(img, prompts);
        for (auto v : none.v) CHECK(v == 0);
    }
}

TEST_CASE("threshold refinement does not hurt the mid-gap slice") {
    const PhantomCase c = generate_case(drifting_tube(), {16, 64, 64}, {1, 1, 1}, 4, 0.01, 14);
    const LabelVolume cipl = propagate_cipl(c.sparse);
    ThresholdSegmenter seg(0.7f);
    PerturbationParams p;
    p.max_noise = 2.0;  // keeps the jitter inside the box expansion margin

    const int z = 2;  // mid-gap
    const Labels2D refined =
        refine_slice(extract_slice(c.image, z), extract_slice(cipl, z), seg, p, 21, z);

    auto slice_lumen_dice = [&](const Labels2D& pred) {
        uint64_t tp = 0, fp = 0, fn = 0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                const bool pi = pred.at(y, x) == kLumen;
                const bool gi = c.gt.at(z, y, x) == kLumen;
                tp += pi && gi;
                fp += pi && !gi;
                fn += !pi && gi;
            }
        return 2.0 * double(tp) / double(2 * tp + fp + fn);
    };
    CHECK(slice_lumen_dice(refined) >= slice_lumen_dice(extract_slice(cipl, z)));
}

TEST_CASE("iterative refinement terminates once prediction matches the reference") {
    Image2D img(12, 12, 0.0f);
    Mask2D reference(12, 12);
    for (int y = 3; y <= 6; ++y)
        for (int x = 3; x <= 6; ++x) reference.at(y, x) = 1;

    FixedSegmenter fixed(reference);
    CountingSegmenter counting(fixed);
    Rng rng(8);
    const Mask2D out = iterative_prompt_refine(img, reference, counting, 5, rng);
    CHECK(out == reference);
    CHECK(counting.calls == 1);  // error empty after the first round
}

TEST_CASE("a single round means a single segmenter call") {
    Image2D img(8, 8, 0.0f);
    Mask2D reference(8, 8);
    reference.at(4, 4) = 1;
    Mask2D wrong(8, 8);
    wrong.at(1, 1) = 1;

    FixedSegmenter fixed(wrong);
    CountingSegmenter counting(fixed);
    Rng rng(9);
    (void)iterative_prompt_refine(img, reference, counting, 1, rng);
    CHECK(counting.calls == 1);
}

TEST_CASE("iterative refinement feeds error points and the previous mask back in") {
    // segmenter that unions all foreground point prompts into its prediction
    struct PointUnionSegmenter : Segmenter {
        Mask2D segment(const Image2D& image, const PromptSet& prompts) override {
            Mask2D out = prompts.prior_mask ? *prompts.prior_mask : Mask2D(image.h, image.w);
            for (const auto& pt : prompts.points) {
                const int y = int(pt.y), x = int(pt.x);
                if (out.in_bounds(y, x)) out.at(y, x) = pt.foreground;
            }
            return out;
        }
    };

    Image2D img(6, 6, 0.0f);
    Mask2D reference(6, 6);
    reference.at(2, 2) = 1;
    reference.at(2, 3) = 1;

    PointUnionSegmenter seg;
    Rng rng(10);
    const Mask2D out = iterative_prompt_refine(img, reference, seg, 8, rng);
    // each round fixes at least one error pixel, so 8 rounds converge here
    CHECK(out == reference);
}

TEST_CASE("oracle segmenter distinguishes lumen and merged boxes") {
    const PhantomCase c = generate_case(drifting_tube(), {8, 64, 64}, {1, 1, 1}, 4, 0.0, 15);
    OracleSegmenter oracle(c.gt, 0);
    oracle.bind_slice(4);
    const Labels2D gt_slice = extract_slice(c.gt, 4);

    std::vector<std::pair<int, int>> lumen_px, merged_px;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            if (gt_slice.at(y, x) == kLumen) lumen_px.emplace_back(y, x);
            if (gt_slice.at(y, x) != kBackground) merged_px.emplace_back(y, x);
        }

    PromptSet lumen_prompt;
    lumen_prompt.box = BoundingBox2D::of_pixels(lumen_px);
    const Mask2D lumen_mask = oracle.segment(extract_slice(c.image, 4), lumen_prompt);
    size_t lumen_count = 0;
    for (auto v : lumen_mask.v) lumen_count += v;
    CHECK(lumen_count == lumen_px.size());

    PromptSet merged_prompt;
    merged_prompt.box = BoundingBox2D::of_pixels(merged_px);
    const Mask2D merged_mask = oracle.segment(extract_slice(c.image, 4), merged_prompt);
    size_t merged_count = 0;
    for (auto v : merged_mask.v) merged_count += v;
    CHECK(merged_count == merged_px.size());
}
