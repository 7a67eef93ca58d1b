#include "vesselseg/srpl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vesselseg {

void BoundingBox2D::validate() const {
    if (!(x0 < x1) || !(y0 < y1)) throw VolumeError("bounding box must have positive extent");
}

BoundingBox2D BoundingBox2D::of_pixels(const std::vector<std::pair<int, int>>& yx) {
    if (yx.empty()) throw VolumeError("bounding box of empty pixel set");
    int ymin = yx[0].first, ymax = yx[0].first;
    int xmin = yx[0].second, xmax = yx[0].second;
    for (const auto& [y, x] : yx) {
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
    }
    return {double(xmin), double(ymin), double(xmax + 1), double(ymax + 1)};
}

void PerturbationParams::validate() const {
    if (!(scale > 0.0)) throw VolumeError("perturbation scale must be > 0");
    if (!(max_noise > 0.0)) throw VolumeError("max perturbation must be > 0");
    if (ensemble < 1) throw VolumeError("ensemble size must be >= 1");
    if (vote_threshold < 1 || vote_threshold > ensemble)
        throw VolumeError("vote threshold must lie in [1, ensemble]");
}

void PromptSet::validate() const {
    if (empty()) throw VolumeError("prompt set must contain at least one prompt");
}

BoundingBox2D perturb_box(const BoundingBox2D& b, const PerturbationParams& p, Rng& rng) {
    b.validate();
    p.validate();
    const double sigma = std::min(b.width(), b.height()) * p.scale;
    const double delta = std::min(p.max_noise, 5.0 * sigma);
    const double ex = rng.uniform(-delta, delta);
    const double ey = rng.uniform(-delta, delta);
    // Both corners shift by the same epsilon; the origin is re-derived from
    // the rounded far corner so the stored corners subtract back to the
    // original extent bit-exactly.
    const auto translate = [](double lo, double extent, double eps) {
        double hi = (lo + eps) + extent;
        double lo2 = hi - extent;
        for (int i = 0; i < 4 && hi - lo2 != extent; ++i) {
            hi = lo2 + extent;
            lo2 = hi - extent;
        }
        return std::pair{lo2, hi};
    };
    const auto [x0, x1] = translate(b.x0, b.width(), ex);
    const auto [y0, y1] = translate(b.y0, b.height(), ey);
    return {x0, y0, x1, y1};
}

Mask2D vote_masks(const std::vector<Mask2D>& masks, int tau) {
    if (masks.empty()) throw VolumeError("vote_masks needs at least one mask");
    if (tau < 1 || tau > static_cast<int>(masks.size()))
        throw VolumeError("vote threshold out of range");
    const int h = masks[0].h, w = masks[0].w;
    for (const auto& m : masks)
        if (m.h != h || m.w != w) throw VolumeError("vote_masks: mask shape mismatch");
    Mask2D out(h, w);
    for (size_t i = 0; i < out.size(); ++i) {
        int votes = 0;
        for (const auto& m : masks) votes += m.v[i] != 0;
        out.v[i] = votes >= tau;
    }
    return out;
}

Mask2D merge_labels(const Labels2D& labels) {
    Mask2D out(labels.h, labels.w);
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = labels.v[i] != 0;
    return out;
}

Mask2D split_wall(const Mask2D& merged, const Mask2D& lumen) {
    if (merged.h != lumen.h || merged.w != lumen.w)
        throw VolumeError("split_wall: shape mismatch");
    Mask2D out(merged.h, merged.w);
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = merged.v[i] && !lumen.v[i];
    return out;
}

Mask2D dilate_mask(const Mask2D& mask, int radius) {
    if (radius <= 0) return mask;
    Mask2D out(mask.h, mask.w);
    const int r2 = radius * radius;
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            if (!mask.at(y, x)) continue;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dy * dy + dx * dx > r2) continue;
                    const int ny = y + dy, nx = x + dx;
                    if (mask.in_bounds(ny, nx)) out.at(ny, nx) = 1;
                }
        }
    return out;
}

namespace {

Mask2D ensemble_segment(const Image2D& image, const BoundingBox2D& box, Segmenter& segmenter,
                        const PerturbationParams& p, Rng& rng) {
    std::vector<Mask2D> masks;
    masks.reserve(static_cast<size_t>(p.ensemble));
    for (int k = 0; k < p.ensemble; ++k) {
        PromptSet prompts;
        prompts.box = perturb_box(box, p, rng);
        Mask2D m = segmenter.segment(image, prompts);
        if (m.h != image.h || m.w != image.w)
            throw VolumeError("segmenter returned a mask of the wrong shape");
        masks.push_back(std::move(m));
    }
    return vote_masks(masks, p.vote_threshold);
}

}  // namespace

Labels2D refine_slice(const Image2D& image, const Labels2D& cipl_slice, Segmenter& segmenter,
                      const PerturbationParams& p, uint64_t seed, int z) {
    if (image.h != cipl_slice.h || image.w != cipl_slice.w)
        throw VolumeError("refine_slice: image/label shape mismatch");
    p.validate();

    const Mask2D merged = merge_labels(cipl_slice);
    const auto comps = connected_components(merged, 8);
    if (comps.empty()) throw VolumeError("refine_slice requires at least one foreground component");

    Labels2D out(cipl_slice.h, cipl_slice.w);
    for (size_t ci = 0; ci < comps.size(); ++ci) {
        Rng rng = Rng::derive(seed, static_cast<uint64_t>(z), ci);
        const auto& comp = comps[ci];

        Mask2D refined_merged;
        try {
            refined_merged = ensemble_segment(image, BoundingBox2D::of_pixels(comp.pixels),
                                              segmenter, p, rng);
        } catch (const std::exception& e) {
            throw VolumeError("segmenter failed on slice z=" + std::to_string(z) + " component " +
                              std::to_string(ci) + ": " + e.what());
        }

        std::vector<std::pair<int, int>> lumen_pixels;
        for (const auto& [y, x] : comp.pixels)
            if (cipl_slice.at(y, x) == kLumen) lumen_pixels.emplace_back(y, x);

        Mask2D lumen_final(out.h, out.w);
        if (!lumen_pixels.empty()) {
            Mask2D refined_lumen;
            try {
                refined_lumen = ensemble_segment(image, BoundingBox2D::of_pixels(lumen_pixels),
                                                 segmenter, p, rng);
            } catch (const std::exception& e) {
                throw VolumeError("segmenter failed on slice z=" + std::to_string(z) +
                                  " lumen of component " + std::to_string(ci) + ": " + e.what());
            }
            // lumen must stay inside the merged vessel for the subtraction
            for (size_t i = 0; i < lumen_final.size(); ++i)
                lumen_final.v[i] = refined_lumen.v[i] && refined_merged.v[i];
        }

        for (size_t i = 0; i < out.size(); ++i) {
            if (lumen_final.v[i]) out.v[i] = kLumen;  // lumen wins overlaps
            else if (refined_merged.v[i] && out.v[i] != kLumen) out.v[i] = kWall;
        }
    }
    return out;
}

LabelVolume refine_volume(const Volume3D& image, const LabelVolume& cipl,
                          const LabelVolume& expert, Segmenter& segmenter,
                          const PerturbationParams& p, uint64_t seed) {
    if (!(image.dims() == cipl.dims()) || !(image.dims() == expert.dims()))
        throw VolumeError("refine_volume: dimension mismatch between image, cipl, and expert");
    p.validate();

    LabelVolume out = LabelVolume::zeros(cipl.dims(), cipl.spacing());
    std::vector<int> annotated;

    for (int z : expert.annotated_slices()) {
        insert_slice(out, z, extract_slice(expert, z));
        annotated.push_back(z);
    }

    for (int z : cipl.annotated_slices()) {
        if (expert.is_annotated(z)) continue;
        const Labels2D slice = extract_slice(cipl, z);
        if (std::all_of(slice.v.begin(), slice.v.end(), [](uint8_t v) { return v == 0; }))
            continue;  // nothing to refine on this slice
        segmenter.bind_slice(z);
        insert_slice(out, z, refine_slice(extract_slice(image, z), slice, segmenter, p, seed, z));
        annotated.push_back(z);
    }

    std::sort(annotated.begin(), annotated.end());
    out.set_annotated_slices(std::move(annotated));
    return out;
}

Mask2D iterative_prompt_refine(const Image2D& image, const Mask2D& reference,
                               Segmenter& segmenter, int rounds, Rng& rng) {
    if (rounds < 1) throw VolumeError("iterative_prompt_refine needs rounds >= 1");
    std::vector<std::pair<int, int>> fg;
    for (int y = 0; y < reference.h; ++y)
        for (int x = 0; x < reference.w; ++x)
            if (reference.at(y, x)) fg.emplace_back(y, x);
    if (fg.empty()) throw VolumeError("reference mask has no foreground");

    PromptSet prompts;
    if (rng.coin_flip()) {
        const auto& [y, x] = fg[rng.uniform_index(fg.size())];
        prompts.points.push_back({x + 0.5, y + 0.5, true});
    } else {
        prompts.box = BoundingBox2D::of_pixels(fg);
    }
    Mask2D pred = segmenter.segment(image, prompts);

    for (int round = 2; round <= rounds; ++round) {
        Mask2D error(reference.h, reference.w);
        bool any = false;
        for (size_t i = 0; i < error.size(); ++i) {
            error.v[i] = (pred.v[i] != 0) != (reference.v[i] != 0);
            any |= error.v[i] != 0;
        }
        if (!any) break;

        const auto comps = connected_components(error, 8);
        const auto largest = std::max_element(
            comps.begin(), comps.end(),
            [](const Component2D& a, const Component2D& b) { return a.pixels.size() < b.pixels.size(); });
        const auto& [py, px] = largest->pixels[rng.uniform_index(largest->pixels.size())];
        prompts.points.push_back({px + 0.5, py + 0.5, reference.at(py, px) != 0});
        prompts.prior_mask = pred;
        pred = segmenter.segment(image, prompts);
    }
    return pred;
}

namespace {

double box_iou(const BoundingBox2D& a, const BoundingBox2D& b) {
    const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const double inter = ix * iy;
    const double uni = a.width() * a.height() + b.width() * b.height() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

Mask2D mask_of(const Component2D& comp, int h, int w) {
    Mask2D out(h, w);
    for (const auto& [y, x] : comp.pixels) out.at(y, x) = 1;
    return out;
}

}  // namespace

OracleSegmenter::OracleSegmenter(const LabelVolume& gt, int dilate_noise)
    : gt_(gt), dilate_(dilate_noise) {}

Mask2D OracleSegmenter::segment(const Image2D& image, const PromptSet& prompts) {
    prompts.validate();
    const Labels2D slice = extract_slice(gt_, z_);
    if (slice.h != image.h || slice.w != image.w)
        throw VolumeError("oracle gt shape does not match the image");

    Mask2D lumen(slice.h, slice.w);
    for (size_t i = 0; i < lumen.size(); ++i) lumen.v[i] = slice.v[i] == kLumen;
    // merged candidates first so point prompts resolve to whole vessels
    std::vector<Component2D> candidates = connected_components(merge_labels(slice), 8);
    const auto lumen_comps = connected_components(lumen, 8);
    candidates.insert(candidates.end(), lumen_comps.begin(), lumen_comps.end());

    const Component2D* chosen = nullptr;
    if (prompts.box) {
        // Perturbations translate boxes but keep extents, so candidates are
        // ranked by bbox size match; overlap breaks ties. This keeps the
        // lumen/merged distinction stable under box jitter.
        double best_size = std::numeric_limits<double>::max();
        double best_iou = 0.0;
        for (const auto& comp : candidates) {
            const BoundingBox2D cb = BoundingBox2D::of_pixels(comp.pixels);
            const double iou = box_iou(cb, *prompts.box);
            if (iou <= 0.0) continue;
            const double size_gap = std::abs(cb.width() - prompts.box->width()) +
                                    std::abs(cb.height() - prompts.box->height());
            if (size_gap < best_size || (size_gap == best_size && iou > best_iou)) {
                best_size = size_gap;
                best_iou = iou;
                chosen = &comp;
            }
        }
    } else if (!prompts.points.empty()) {
        for (const auto& pt : prompts.points) {
            if (!pt.foreground) continue;
            const int y = static_cast<int>(std::floor(pt.y));
            const int x = static_cast<int>(std::floor(pt.x));
            for (const auto& comp : candidates)
                if (comp.contains(y, x)) {
                    chosen = &comp;
                    break;
                }
            if (chosen) break;
        }
    }

    if (!chosen) return Mask2D(slice.h, slice.w);
    return dilate_mask(mask_of(*chosen, slice.h, slice.w), dilate_);
}

Mask2D ThresholdSegmenter::segment(const Image2D& image, const PromptSet& prompts) {
    prompts.validate();
    Mask2D out(image.h, image.w);

    Mask2D above(image.h, image.w);
    int cy = -1, cx = -1;
    if (prompts.box) {
        const BoundingBox2D region = prompts.box->expanded(2.0);
        for (int y = 0; y < image.h; ++y)
            for (int x = 0; x < image.w; ++x)
                above.at(y, x) = region.contains(x + 0.5, y + 0.5) && image.at(y, x) >= level_;
        cy = static_cast<int>(std::floor(prompts.box->center_y()));
        cx = static_cast<int>(std::floor(prompts.box->center_x()));
    } else {
        for (size_t i = 0; i < above.size(); ++i) above.v[i] = image.v[i] >= level_;
        for (const auto& pt : prompts.points)
            if (pt.foreground) {
                cy = static_cast<int>(std::floor(pt.y));
                cx = static_cast<int>(std::floor(pt.x));
                break;
            }
    }
    if (cy < 0 || cy >= image.h || cx < 0 || cx >= image.w || !above.at(cy, cx)) return out;

    for (const auto& comp : connected_components(above, 8))
        if (comp.contains(cy, cx)) return mask_of(comp, image.h, image.w);
    return out;
}

}  // namespace vesselseg
