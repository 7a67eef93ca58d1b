#pragma once

#include <cstdint>
#include <vector>

#include "vesselseg/nn/tensor.hpp"

namespace vesselseg::nn {

template <class S>
struct SegLossPartsT {
    S total{0}, ce{0}, dice{0};
};

/// Weighted cross-entropy + soft-Dice over class logits (B,K,D,H,W) against
/// voxel class ids. Dice sums run over batch and space per class; the loss
/// averages over classes.
template <class S>
class SegLossT {
public:
    SegLossT(S w_ce, S w_dice, S eps = S(1e-5)) : w_ce_(w_ce), w_dice_(w_dice), eps_(eps) {}

    SegLossPartsT<S> forward(const TensorT<S>& logits, const std::vector<uint8_t>& target) {
        const int K = logits.c;
        if (K < 2 || K > 16) throw std::invalid_argument("seg loss supports 2..16 classes");
        const int64_t sp = logits.spatial();
        const int64_t nvox = int64_t(logits.b) * sp;
        if (static_cast<int64_t>(target.size()) != nvox)
            throw std::invalid_argument("seg loss: target size mismatch");
        target_ = target;
        prob_ = logits;

        double ce = 0.0;
        num_.assign(size_t(K), 0.0);
        den_.assign(size_t(K), double(eps_));
        for (int bi = 0; bi < logits.b; ++bi) {
            std::vector<const S*> zrows(static_cast<size_t>(K), nullptr);
            std::vector<S*> prows(static_cast<size_t>(K), nullptr);
            for (int k = 0; k < K; ++k) {
                zrows[size_t(k)] = logits.plane(bi, k);
                prows[size_t(k)] = prob_.plane(bi, k);
            }
            for (int64_t i = 0; i < sp; ++i) {
                S mx = zrows[0][i];
                for (int k = 1; k < K; ++k) mx = std::max(mx, zrows[size_t(k)][i]);
                S sum{0};
                for (int k = 0; k < K; ++k) {
                    const S e = std::exp(zrows[size_t(k)][i] - mx);
                    prows[size_t(k)][i] = e;
                    sum += e;
                }
                const uint8_t t = target_[size_t(bi * sp + i)];
                for (int k = 0; k < K; ++k) {
                    const S p = prows[size_t(k)][i] / sum;
                    prows[size_t(k)][i] = p;
                    num_[size_t(k)] += double(p) * (t == k ? 2.0 : 0.0);
                    den_[size_t(k)] += double(p) + (t == k ? 1.0 : 0.0);
                }
                ce -= std::log(double(std::max(prows[size_t(t)][i], S(1e-12))));
            }
        }

        SegLossPartsT<S> parts;
        parts.ce = S(ce / double(nvox));
        double dice_mean = 0.0;
        for (int k = 0; k < K; ++k) dice_mean += num_[size_t(k)] / den_[size_t(k)];
        parts.dice = S(1.0 - dice_mean / K);
        parts.total = w_ce_ * parts.ce + w_dice_ * parts.dice;
        return parts;
    }

    /// dLoss/dlogits for the most recent forward.
    TensorT<S> backward() {
        const int K = prob_.c;
        const int64_t sp = prob_.spatial();
        const int64_t nvox = int64_t(prob_.b) * sp;
        TensorT<S> dz = zeros_like(prob_);

        // r_k = w_dice * dDiceLoss/dp_k, then chain through softmax and add
        // the cross-entropy term (p - q)/N
        std::vector<double> inv_den(static_cast<size_t>(K), 0.0), num_over_den2(static_cast<size_t>(K), 0.0);
        for (int k = 0; k < K; ++k) {
            inv_den[size_t(k)] = 1.0 / den_[size_t(k)];
            num_over_den2[size_t(k)] = num_[size_t(k)] * inv_den[size_t(k)] * inv_den[size_t(k)];
        }
        for (int bi = 0; bi < prob_.b; ++bi) {
            for (int64_t i = 0; i < sp; ++i) {
                const uint8_t t = target_[size_t(bi * sp + i)];
                double r[16];
                double rdotp = 0.0;
                for (int k = 0; k < K; ++k) {
                    const double q = (t == k) ? 1.0 : 0.0;
                    const double ddice_dp =
                        -(2.0 * q * inv_den[size_t(k)] - num_over_den2[size_t(k)]) / K;
                    r[k] = double(w_dice_) * ddice_dp;
                    rdotp += r[k] * double(prob_.plane(bi, k)[i]);
                }
                for (int k = 0; k < K; ++k) {
                    const double p = double(prob_.plane(bi, k)[i]);
                    const double q = (t == k) ? 1.0 : 0.0;
                    const double ce_term = double(w_ce_) * (p - q) / double(nvox);
                    const double dice_term = p * (r[k] - rdotp);
                    dz.plane(bi, k)[i] = S(ce_term + dice_term);
                }
            }
        }
        return dz;
    }

private:
    S w_ce_, w_dice_, eps_;
    TensorT<S> prob_;
    std::vector<uint8_t> target_;
    std::vector<double> num_, den_;
};

template <class S>
struct PromptLossPartsT {
    S total{0}, focal{0}, dice{0}, iou{0};
};

/// Focal + soft-Dice + IoU-regression loss for the promptable stand-in
/// segmenter; default weights 20:1:1. The IoU target is the hard IoU of the
/// thresholded prediction, treated as a constant.
template <class S>
class PromptLossT {
public:
    PromptLossT(S w_focal = S(20), S w_dice = S(1), S w_iou = S(1), S gamma = S(2),
                S eps = S(1e-5))
        : w_focal_(w_focal), w_dice_(w_dice), w_iou_(w_iou), gamma_(gamma), eps_(eps) {}

    PromptLossPartsT<S> forward(const TensorT<S>& logits, const std::vector<uint8_t>& target,
                                const std::vector<S>& pred_iou) {
        if (logits.c != 1) throw std::invalid_argument("prompt loss expects single-channel logits");
        const int64_t sp = logits.spatial();
        const int64_t nvox = int64_t(logits.b) * sp;
        if (static_cast<int64_t>(target.size()) != nvox ||
            static_cast<int>(pred_iou.size()) != logits.b)
            throw std::invalid_argument("prompt loss: target/iou size mismatch");
        target_ = target;
        pred_iou_ = pred_iou;
        p_ = logits;

        double focal = 0.0, num = 0.0, den = double(eps_);
        actual_iou_.assign(size_t(logits.b), 0.0);
        for (int bi = 0; bi < logits.b; ++bi) {
            S* prow = p_.plane(bi, 0);
            int64_t tp = 0, fp = 0, fn = 0;
            for (int64_t i = 0; i < sp; ++i) {
                const double z = double(prow[i]);
                const double p = 1.0 / (1.0 + std::exp(-z));
                prow[i] = S(p);
                const bool t = target_[size_t(bi * sp + i)] != 0;
                const double pt = std::clamp(t ? p : 1.0 - p, 1e-7, 1.0 - 1e-7);
                focal -= std::pow(1.0 - pt, double(gamma_)) * std::log(pt);
                num += t ? 2.0 * p : 0.0;
                den += p + (t ? 1.0 : 0.0);
                const bool hard = p > 0.5;
                tp += hard && t;
                fp += hard && !t;
                fn += !hard && t;
            }
            actual_iou_[size_t(bi)] =
                (tp + fp + fn) > 0 ? double(tp) / double(tp + fp + fn) : 1.0;
        }
        num_ = num;
        den_ = den;

        PromptLossPartsT<S> parts;
        parts.focal = S(focal / double(nvox));
        parts.dice = S(1.0 - num / den);
        double iou = 0.0;
        for (int bi = 0; bi < logits.b; ++bi) {
            const double diff = double(pred_iou_[size_t(bi)]) - actual_iou_[size_t(bi)];
            iou += diff * diff;
        }
        parts.iou = S(iou / logits.b);
        parts.total = w_focal_ * parts.focal + w_dice_ * parts.dice + w_iou_ * parts.iou;
        return parts;
    }

    /// Returns (dLoss/dlogits, dLoss/dpred_iou).
    std::pair<TensorT<S>, std::vector<S>> backward() {
        const int64_t sp = p_.spatial();
        const int64_t nvox = int64_t(p_.b) * sp;
        TensorT<S> dz = zeros_like(p_);
        std::vector<S> diou(static_cast<size_t>(p_.b), S{0});

        const double inv_den = 1.0 / den_;
        const double num_over_den2 = num_ * inv_den * inv_den;
        for (int bi = 0; bi < p_.b; ++bi) {
            const S* prow = p_.plane(bi, 0);
            S* drow = dz.plane(bi, 0);
            for (int64_t i = 0; i < sp; ++i) {
                const bool t = target_[size_t(bi * sp + i)] != 0;
                const double p = double(prow[i]);
                const double dp_dz = p * (1.0 - p);
                const double pt = std::clamp(t ? p : 1.0 - p, 1e-7, 1.0 - 1e-7);
                const double g = double(gamma_);
                // d/dpt of -(1-pt)^g * log(pt)
                const double dfocal_dpt =
                    g * std::pow(1.0 - pt, g - 1.0) * std::log(pt) - std::pow(1.0 - pt, g) / pt;
                const double dfocal_dz = dfocal_dpt * (t ? 1.0 : -1.0) * dp_dz / double(nvox);
                const double q = t ? 1.0 : 0.0;
                const double ddice_dp = -(2.0 * q * inv_den - num_over_den2);
                const double ddice_dz = ddice_dp * dp_dz;
                drow[i] = S(double(w_focal_) * dfocal_dz + double(w_dice_) * ddice_dz);
            }
            diou[size_t(bi)] = S(double(w_iou_) * 2.0 *
                                 (double(pred_iou_[size_t(bi)]) - actual_iou_[size_t(bi)]) / p_.b);
        }
        return {std::move(dz), std::move(diou)};
    }

    const std::vector<double>& actual_iou() const { return actual_iou_; }

private:
    S w_focal_, w_dice_, w_iou_, gamma_, eps_;
    TensorT<S> p_;  // sigmoid probabilities after forward
    std::vector<uint8_t> target_;
    std::vector<S> pred_iou_;
    std::vector<double> actual_iou_;
    double num_ = 0.0, den_ = 0.0;
};

}  // namespace vesselseg::nn
