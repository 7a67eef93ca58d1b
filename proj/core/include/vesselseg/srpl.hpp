#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "vesselseg/components2d.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/volume.hpp"

namespace vesselseg {

/// Axis-aligned box on one axial slice, real voxel coordinates.
struct BoundingBox2D {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double center_x() const { return 0.5 * (x0 + x1); }
    double center_y() const { return 0.5 * (y0 + y1); }

    BoundingBox2D expanded(double m) const { return {x0 - m, y0 - m, x1 + m, y1 + m}; }
    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }

    void validate() const;

    /// Unit-cell box of a pixel set: spans [min,max+1) per axis.
    static BoundingBox2D of_pixels(const std::vector<std::pair<int, int>>& yx);
};

/// Box perturbation parameters and the voting ensemble size.
struct PerturbationParams {
    double scale = 0.1;      // s, dimensionless
    double max_noise = 5.0;  // M, voxels
    int ensemble = 10;       // K
    int vote_threshold = 5;  // tau, defaults to ceil(K/2)

    void validate() const;
};

struct PromptPoint {
    double x = 0.0;
    double y = 0.0;
    bool foreground = true;
};

struct PromptSet {
    std::vector<PromptPoint> points;
    std::optional<BoundingBox2D> box;
    std::optional<Mask2D> prior_mask;

    bool empty() const { return points.empty() && !box && !prior_mask; }
    void validate() const;
};

/// 2D promptable segmenter contract. segment() must return a {0,1} mask of
/// the input shape. bind_slice() provides axial context for volume-backed
/// implementations and is a no-op otherwise.
class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual void bind_slice(int /*z*/) {}
    virtual Mask2D segment(const Image2D& image, const PromptSet& prompts) = 0;
};

/// sigma = min(w,h)*s; delta = min(M, 5*sigma); eps ~ U(-delta,delta) applied
/// to both corners, so width and height are preserved exactly.
BoundingBox2D perturb_box(const BoundingBox2D& b, const PerturbationParams& p, Rng& rng);

/// Pixel is foreground iff at least tau of the masks vote foreground.
Mask2D vote_masks(const std::vector<Mask2D>& masks, int tau);

Mask2D merge_labels(const Labels2D& labels);
Mask2D split_wall(const Mask2D& merged, const Mask2D& lumen);

/// Per-component box-perturbation ensemble: merged-vessel pass, lumen pass,
/// lumen clipped into merged, wall by subtraction. Classes {0,1,2} out.
Labels2D refine_slice(const Image2D& image, const Labels2D& cipl_slice, Segmenter& segmenter,
                      const PerturbationParams& p, uint64_t seed, int z);

/// Fuses expert annotations (verbatim) with refined C-IPL slices into the
/// spatially continuous S-RPL training label.
LabelVolume refine_volume(const Volume3D& image, const LabelVolume& cipl,
                          const LabelVolume& expert, Segmenter& segmenter,
                          const PerturbationParams& p, uint64_t seed);

/// Multi-round prompting: point-or-box first, then points sampled from the
/// largest prediction/reference error component with the previous prediction
/// as mask prompt. Stops early once the error is empty.
Mask2D iterative_prompt_refine(const Image2D& image, const Mask2D& reference,
                               Segmenter& segmenter, int rounds, Rng& rng);

/// Ground-truth-backed segmenter: returns the gt structure (lumen or merged
/// vessel component) whose bounding box best matches the prompt box,
/// optionally dilated to simulate an imperfect model.
class OracleSegmenter : public Segmenter {
public:
    OracleSegmenter(const LabelVolume& gt, int dilate_noise = 0);

    void bind_slice(int z) override { z_ = z; }
    Mask2D segment(const Image2D& image, const PromptSet& prompts) override;

private:
    const LabelVolume& gt_;
    int dilate_ = 0;
    int z_ = 0;
};

/// Intensity-threshold stand-in: inside the prompt box expanded by 2 voxels,
/// foreground is pixels >= level restricted to the component containing the
/// box center. Exercises the prompt pathway without any learned weights.
class ThresholdSegmenter : public Segmenter {
public:
    explicit ThresholdSegmenter(float level) : level_(level) {}

    Mask2D segment(const Image2D& image, const PromptSet& prompts) override;

private:
    float level_;
};

/// Disk dilation of a mask by an integer radius (no-op for radius <= 0).
Mask2D dilate_mask(const Mask2D& mask, int radius);

}  // namespace vesselseg
