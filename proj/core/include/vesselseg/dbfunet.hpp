#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vesselseg/nn/layers.hpp"

namespace vesselseg {

/// Architecture hyperparameters. channels.size() is the number of encoder
/// levels; each level past the first halves the spatial resolution.
struct NetConfig {
    int in_channels = 1;
    int num_classes = 3;
    std::vector<int> channels = {8, 16, 32, 64};
    int mlk_per_level = 1;
    bool use_bff = true;    // off: plain encoder skips
    bool use_msda = true;   // off: single k=3 depthwise-separable conv inside MLK
    double layer_scale_init = 1e-2;
    int mlp_ratio = 4;

    int levels() const { return static_cast<int>(channels.size()); }
    int downsample_factor() const { return 1 << (levels() - 1); }
    void validate() const;

    /// Small config for fast experiments on 64^3 phantoms (32^3 patches).
    static NetConfig desk();
    /// The configuration documented for full-resolution training
    /// (128^3 patches); parameter count sits in the lightweight budget.
    static NetConfig paper_scale();

    std::string to_json() const;
    static NetConfig from_json(const std::string& text);

    bool operator==(const NetConfig&) const = default;
};

namespace nn {

/// Depthwise separable convolution: per-channel k^3 then pointwise mix.
template <class S>
class DwsConvT {
public:
    DwsConvT(int channels, int k) : dw_(channels, k, 1, k / 2), pw_(channels, channels) {}

    void init(vesselseg::Rng& rng) {
        dw_.init(rng);
        pw_.init(rng);
    }
    TensorT<S> forward(const TensorT<S>& x) { return pw_.forward(dw_.forward(x)); }
    TensorT<S> backward(const TensorT<S>& g) { return dw_.backward(pw_.backward(g)); }
    void visit_params(const ParamVisitorT<S>& v) {
        dw_.visit_params(v.nested("dw"));
        pw_.visit_params(v.nested("pw"));
    }

private:
    DepthwiseConv3dT<S> dw_;
    PointwiseConvT<S> pw_;
};

/// Multi-scale statistical dense attention: densely connected k=3/5/7
/// depthwise-separable convs, channel attention from {mean,std,max}
/// statistics, gated fusion, pointwise reduction.
template <class S>
class MsdaBlockT {
public:
    explicit MsdaBlockT(int channels)
        : c_(channels), dws3_(channels, 3), dws5_(channels, 5), dws7_(channels, 7),
          attn_fc_(9 * channels, 3 * channels), mix_attn_(3 * channels, 3 * channels),
          mix_skip_(3 * channels, 3 * channels), reduce_(3 * channels, channels),
          ln_(channels) {}

    void init(vesselseg::Rng& rng) {
        dws3_.init(rng);
        dws5_.init(rng);
        dws7_.init(rng);
        attn_fc_.init(rng);
        mix_attn_.init(rng);
        mix_skip_.init(rng);
        reduce_.init(rng);
    }

    TensorT<S> forward(const TensorT<S>& x) {
        TensorT<S> f1 = dws3_.forward(x);
        TensorT<S> f2 = dws5_.forward(f1);
        add_into(f2, f1);
        TensorT<S> f3 = dws7_.forward(f2);
        add_into(f3, f2);
        add_into(f3, f1);

        TensorT<S> f = concat_channels(f1, f2, f3);
        TensorT<S> attn = softmax_.forward(attn_fc_.forward(stats_.forward(f)));
        last_attention_ = attn;

        TensorT<S> gated = mix_attn_.forward(bmul_.forward(f, attn));
        add_into(gated, mix_skip_.forward(f));
        return ln_.forward(act_.forward(reduce_.forward(gated)));
    }

    TensorT<S> backward(const TensorT<S>& g) {
        TensorT<S> gsum = reduce_.backward(act_.backward(ln_.backward(g)));
        auto [gfa, gattn] = bmul_.backward(mix_attn_.backward(gsum));
        TensorT<S> gf = mix_skip_.backward(gsum);
        add_into(gf, gfa);
        add_into(gf, stats_.backward(attn_fc_.backward(softmax_.backward(gattn))));

        TensorT<S> g3 = slice_channels(gf, 2 * c_, c_);
        TensorT<S> g2 = slice_channels(gf, c_, c_);
        TensorT<S> g1 = slice_channels(gf, 0, c_);
        // F3 = dws7(F2) + F2 + F1
        add_into(g2, g3);
        add_into(g1, g3);
        add_into(g2, dws7_.backward(g3));
        // F2 = dws5(F1) + F1
        add_into(g1, g2);
        add_into(g1, dws5_.backward(g2));
        return dws3_.backward(g1);
    }

    void visit_params(const ParamVisitorT<S>& v) {
        dws3_.visit_params(v.nested("dws3"));
        dws5_.visit_params(v.nested("dws5"));
        dws7_.visit_params(v.nested("dws7"));
        attn_fc_.visit_params(v.nested("attn_fc"));
        mix_attn_.visit_params(v.nested("mix_attn"));
        mix_skip_.visit_params(v.nested("mix_skip"));
        reduce_.visit_params(v.nested("reduce"));
        ln_.visit_params(v.nested("ln"));
    }

    /// Attention weights (B,3C,1,1,1) from the most recent forward.
    const TensorT<S>& last_attention() const { return last_attention_; }

private:
    int c_;
    DwsConvT<S> dws3_, dws5_, dws7_;
    ChannelStatsT<S> stats_;
    LinearT<S> attn_fc_;
    SoftmaxChannelT<S> softmax_;
    BroadcastMulT<S> bmul_;
    PointwiseConvT<S> mix_attn_, mix_skip_, reduce_;
    GeluT<S> act_;
    LayerNormT<S> ln_;
    TensorT<S> last_attention_;
};

template <class S>
class MlpT {
public:
    MlpT(int channels, int ratio)
        : expand_(channels, channels * ratio), contract_(channels * ratio, channels) {}

    void init(vesselseg::Rng& rng) {
        expand_.init(rng);
        contract_.init(rng);
    }
    TensorT<S> forward(const TensorT<S>& x) {
        return contract_.forward(act_.forward(expand_.forward(x)));
    }
    TensorT<S> backward(const TensorT<S>& g) {
        return expand_.backward(act_.backward(contract_.backward(g)));
    }
    void visit_params(const ParamVisitorT<S>& v) {
        expand_.visit_params(v.nested("expand"));
        contract_.visit_params(v.nested("contract"));
    }

private:
    PointwiseConvT<S> expand_, contract_;
    GeluT<S> act_;
};

/// Transformer-style block: pre-norm attention (MSDA) and MLP branches, each
/// gated by a learnable layer scale, closed by a pointwise conv.
template <class S>
class MlkBlockT {
public:
    MlkBlockT(int channels, S layer_scale_init, int mlp_ratio, bool use_msda)
        : use_msda_(use_msda), ln1_(channels), ln2_(channels),
          scale1_(channels, layer_scale_init), scale2_(channels, layer_scale_init),
          mlp_(channels, mlp_ratio), out_(channels, channels) {
        if (use_msda) msda_ = std::make_unique<MsdaBlockT<S>>(channels);
        else dws_fallback_ = std::make_unique<DwsConvT<S>>(channels, 3);
    }

    void init(vesselseg::Rng& rng) {
        if (msda_) msda_->init(rng);
        if (dws_fallback_) dws_fallback_->init(rng);
        mlp_.init(rng);
        out_.init(rng);
    }

    TensorT<S> forward(const TensorT<S>& x) {
        TensorT<S> xn = ln1_.forward(x);
        TensorT<S> attn = use_msda_ ? msda_->forward(xn) : dws_fallback_->forward(xn);
        TensorT<S> z = x;
        add_into(z, scale1_.forward(attn));
        TensorT<S> m = mlp_.forward(ln2_.forward(z));
        add_into(z, scale2_.forward(m));
        return out_.forward(z);
    }

    TensorT<S> backward(const TensorT<S>& g) {
        TensorT<S> gz = out_.backward(g);
        TensorT<S> gm = scale2_.backward(gz);
        add_into(gz, ln2_.backward(mlp_.backward(gm)));
        TensorT<S> gattn = scale1_.backward(gz);
        TensorT<S> gxn = use_msda_ ? msda_->backward(gattn) : dws_fallback_->backward(gattn);
        TensorT<S> gx = ln1_.backward(gxn);
        add_into(gx, gz);
        return gx;
    }

    void visit_params(const ParamVisitorT<S>& v) {
        ln1_.visit_params(v.nested("ln1"));
        if (msda_) msda_->visit_params(v.nested("msda"));
        if (dws_fallback_) dws_fallback_->visit_params(v.nested("dws"));
        scale1_.visit_params(v.nested("scale1"));
        ln2_.visit_params(v.nested("ln2"));
        mlp_.visit_params(v.nested("mlp"));
        scale2_.visit_params(v.nested("scale2"));
        out_.visit_params(v.nested("out"));
    }

    MsdaBlockT<S>* msda() { return msda_.get(); }
    LayerScaleT<S>& scale1() { return scale1_; }
    LayerScaleT<S>& scale2() { return scale2_; }
    PointwiseConvT<S>& out_conv() { return out_; }

private:
    bool use_msda_;
    LayerNormT<S> ln1_, ln2_;
    std::unique_ptr<MsdaBlockT<S>> msda_;
    std::unique_ptr<DwsConvT<S>> dws_fallback_;
    LayerScaleT<S> scale1_, scale2_;
    MlpT<S> mlp_;
    PointwiseConvT<S> out_;
};

/// Dense spatial downsampling: strided depthwise conv, quadruple pointwise
/// expansion, concat + pointwise merge, average-pool residual (projected when
/// the channel count changes).
template <class S>
class DsdBlockT {
public:
    DsdBlockT(int c_in, int c_out)
        : ci_(c_in), co_(c_out), dw_(c_in, 3, 2, 1), expand_(c_in, 4 * c_in),
          merge_(5 * c_in, c_out) {
        if (c_in != c_out) proj_ = std::make_unique<PointwiseConvT<S>>(c_in, c_out, false);
    }

    void init(vesselseg::Rng& rng) {
        dw_.init(rng);
        expand_.init(rng);
        merge_.init(rng);
        if (proj_) proj_->init(rng);
    }

    TensorT<S> forward(const TensorT<S>& x) {
        if (x.d < 2 || x.h < 2 || x.w < 2)
            throw std::invalid_argument("dsd block needs spatial dims >= 2");
        TensorT<S> x1 = dw_.forward(x);
        TensorT<S> x2 = expand_.forward(x1);
        TensorT<S> y = merge_.forward(concat_channels(x1, x2));
        TensorT<S> r = pool_.forward(x);
        add_into(y, proj_ ? proj_->forward(r) : r);
        return y;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        TensorT<S> gr = proj_ ? proj_->backward(g) : g;
        TensorT<S> gx = pool_.backward(gr);
        TensorT<S> gcat = merge_.backward(g);
        TensorT<S> gx1 = slice_channels(gcat, 0, ci_);
        add_into(gx1, expand_.backward(slice_channels(gcat, ci_, 4 * ci_)));
        add_into(gx, dw_.backward(gx1));
        return gx;
    }

    void visit_params(const ParamVisitorT<S>& v) {
        dw_.visit_params(v.nested("dw"));
        expand_.visit_params(v.nested("expand"));
        merge_.visit_params(v.nested("merge"));
        if (proj_) proj_->visit_params(v.nested("proj"));
    }

private:
    int ci_, co_;
    DepthwiseConv3dT<S> dw_;
    PointwiseConvT<S> expand_, merge_;
    std::unique_ptr<PointwiseConvT<S>> proj_;
    AvgPool2xT<S> pool_;
};

/// Skip transform of the bidirectional fusion: pointwise channel reduction
/// followed by nearest x2 upsampling to the shallower level's grid.
template <class S>
class BffBlockT {
public:
    BffBlockT(int c_deep, int c_shallow) : pw_(c_deep, c_shallow) {}

    void init(vesselseg::Rng& rng) { pw_.init(rng); }
    TensorT<S> forward(const TensorT<S>& deep, int td, int th, int tw) {
        return up_.forward(pw_.forward(deep), td, th, tw);
    }
    TensorT<S> backward(const TensorT<S>& g) { return pw_.backward(up_.backward(g)); }
    void visit_params(const ParamVisitorT<S>& v) { pw_.visit_params(v.nested("pw")); }
    PointwiseConvT<S>& pw() { return pw_; }

private:
    PointwiseConvT<S> pw_;
    UpsampleNearest2xT<S> up_;
};

/// Optional record of the decoder wiring for one forward pass:
/// din[i] == fused[i] + matched[i] and dout feeds the next stage.
template <class S>
struct ForwardTraceT {
    std::vector<TensorT<S>> fused;    // F_i
    std::vector<TensorT<S>> matched;  // upsampled+channel-matched D_out^i
    std::vector<TensorT<S>> din;      // decoder inputs D_in^{i-1}
};

template <class S>
class DbfUNetT {
public:
    explicit DbfUNetT(NetConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const auto& ch = cfg_.channels;
        const int L = cfg_.levels();
        head_conv_ = std::make_unique<DenseConv3dT<S>>(cfg_.in_channels, ch[0], 3, 1, 1);
        head_ln_ = std::make_unique<LayerNormT<S>>(ch[0]);
        const S g0 = S(cfg_.layer_scale_init);
        for (int i = 0; i < L; ++i) {
            enc_.emplace_back();
            for (int j = 0; j < cfg_.mlk_per_level; ++j)
                enc_.back().push_back(
                    std::make_unique<MlkBlockT<S>>(ch[size_t(i)], g0, cfg_.mlp_ratio, cfg_.use_msda));
        }
        for (int i = 0; i + 1 < L; ++i)
            dsd_.push_back(std::make_unique<DsdBlockT<S>>(ch[size_t(i)], ch[size_t(i) + 1]));
        if (cfg_.use_bff) {
            for (int i = 1; i < L; ++i)
                bff_.push_back(std::make_unique<BffBlockT<S>>(ch[size_t(i)], ch[size_t(i) - 1]));
            shallow_fuse_ =
                std::make_unique<MlkBlockT<S>>(ch[0], g0, cfg_.mlp_ratio, cfg_.use_msda);
        }
        for (int i = 1; i < L; ++i) {
            dec_pw_.push_back(
                std::make_unique<PointwiseConvT<S>>(ch[size_t(i)], ch[size_t(i) - 1]));
            dec_up_.push_back(std::make_unique<UpsampleNearest2xT<S>>());
            dec_mlk_.push_back(
                std::make_unique<MlkBlockT<S>>(ch[size_t(i) - 1], g0, cfg_.mlp_ratio, cfg_.use_msda));
        }
        final_ = std::make_unique<PointwiseConvT<S>>(ch[0], cfg_.num_classes);
    }

    void init(uint64_t seed) {
        vesselseg::Rng rng = vesselseg::Rng::derive(seed, 0x74696e69);
        head_conv_->init(rng);
        head_ln_->init(rng);
        for (auto& level : enc_)
            for (auto& blk : level) blk->init(rng);
        for (auto& d : dsd_) d->init(rng);
        for (auto& b : bff_) b->init(rng);
        if (shallow_fuse_) shallow_fuse_->init(rng);
        for (auto& p : dec_pw_) p->init(rng);
        for (auto& m : dec_mlk_) m->init(rng);
        final_->init(rng);
    }

    /// logits (B, num_classes, D, H, W); spatial dims must be divisible by
    /// 2^(levels-1).
    TensorT<S> forward(const TensorT<S>& x, ForwardTraceT<S>* trace = nullptr) {
        const int f = cfg_.downsample_factor();
        if (x.d % f || x.h % f || x.w % f)
            throw std::invalid_argument("input dims " + x.shape_str() + " not divisible by " +
                                        std::to_string(f));
        if (x.c != cfg_.in_channels) throw std::invalid_argument("wrong input channel count");

        const int L = cfg_.levels();
        e_.assign(size_t(L), TensorT<S>{});
        TensorT<S> h = head_act_.forward(head_ln_->forward(head_conv_->forward(x)));
        for (int j = 0; j < cfg_.mlk_per_level; ++j) h = enc_[0][size_t(j)]->forward(h);
        e_[0] = h;
        for (int i = 1; i < L; ++i) {
            TensorT<S> t = dsd_[size_t(i) - 1]->forward(e_[size_t(i) - 1]);
            for (int j = 0; j < cfg_.mlk_per_level; ++j) t = enc_[size_t(i)][size_t(j)]->forward(t);
            e_[size_t(i)] = std::move(t);
        }

        f_.assign(size_t(L), TensorT<S>{});
        for (int i = 1; i < L; ++i) {
            const TensorT<S>& shallow = e_[size_t(i) - 1];
            if (cfg_.use_bff) {
                TensorT<S> fused =
                    bff_[size_t(i) - 1]->forward(e_[size_t(i)], shallow.d, shallow.h, shallow.w);
                add_into(fused, shallow);
                f_[size_t(i)] = std::move(fused);
            } else {
                f_[size_t(i)] = shallow;
            }
        }
        if (cfg_.use_bff) f_[1] = shallow_fuse_->forward(f_[1]);

        if (trace) {
            trace->fused.assign(size_t(L), TensorT<S>{});
            trace->matched.assign(size_t(L), TensorT<S>{});
            trace->din.assign(size_t(L), TensorT<S>{});
            for (int i = 1; i < L; ++i) trace->fused[size_t(i)] = f_[size_t(i)];
        }

        TensorT<S> dec = e_[size_t(L) - 1];
        for (int i = L - 1; i >= 1; --i) {
            const TensorT<S>& target = f_[size_t(i)];
            TensorT<S> up =
                dec_up_[size_t(i) - 1]->forward(dec, target.d, target.h, target.w);
            TensorT<S> matched = dec_pw_[size_t(i) - 1]->forward(up);
            if (trace) trace->matched[size_t(i)] = matched;
            add_into(matched, target);
            if (trace) trace->din[size_t(i)] = matched;
            dec = dec_mlk_[size_t(i) - 1]->forward(matched);
        }
        return final_->forward(dec);
    }

    TensorT<S> backward(const TensorT<S>& g_logits) {
        const int L = cfg_.levels();
        std::vector<TensorT<S>> ge(static_cast<size_t>(L), TensorT<S>{});  // encoder output grads
        std::vector<TensorT<S>> gf(static_cast<size_t>(L), TensorT<S>{});  // fused skip grads

        TensorT<S> gdec = final_->backward(g_logits);
        // decoder ran i = L-1 .. 1; unwind in reverse order
        for (int i = 1; i <= L - 1; ++i) {
            TensorT<S> gdin = dec_mlk_[size_t(i) - 1]->backward(gdec);
            gf[size_t(i)] = gdin;
            TensorT<S> gup = dec_pw_[size_t(i) - 1]->backward(gdin);
            gdec = dec_up_[size_t(i) - 1]->backward(gup);
        }
        ge[size_t(L) - 1] = gdec;

        if (cfg_.use_bff) gf[1] = shallow_fuse_->backward(gf[1]);
        for (int i = L - 1; i >= 1; --i) {
            if (cfg_.use_bff) {
                TensorT<S> gdeep = bff_[size_t(i) - 1]->backward(gf[size_t(i)]);
                accumulate(ge[size_t(i)], gdeep);
            }
            accumulate(ge[size_t(i) - 1], gf[size_t(i)]);
        }

        for (int i = L - 1; i >= 1; --i) {
            TensorT<S> g = std::move(ge[size_t(i)]);
            for (int j = cfg_.mlk_per_level - 1; j >= 0; --j)
                g = enc_[size_t(i)][size_t(j)]->backward(g);
            accumulate(ge[size_t(i) - 1], dsd_[size_t(i) - 1]->backward(g));
        }
        TensorT<S> g0 = std::move(ge[0]);
        for (int j = cfg_.mlk_per_level - 1; j >= 0; --j) g0 = enc_[0][size_t(j)]->backward(g0);
        return head_conv_->backward(head_ln_->backward(head_act_.backward(g0)));
    }

    void visit_params(const ParamVisitorT<S>& v) {
        head_conv_->visit_params(v.nested("head.conv"));
        head_ln_->visit_params(v.nested("head.ln"));
        for (size_t i = 0; i < enc_.size(); ++i)
            for (size_t j = 0; j < enc_[i].size(); ++j)
                enc_[i][j]->visit_params(
                    v.nested("enc" + std::to_string(i) + ".mlk" + std::to_string(j)));
        for (size_t i = 0; i < dsd_.size(); ++i)
            dsd_[i]->visit_params(v.nested("dsd" + std::to_string(i)));
        for (size_t i = 0; i < bff_.size(); ++i)
            bff_[i]->visit_params(v.nested("bff" + std::to_string(i + 1)));
        if (shallow_fuse_) shallow_fuse_->visit_params(v.nested("shallow_fuse"));
        for (size_t i = 0; i < dec_pw_.size(); ++i) {
            dec_pw_[i]->visit_params(v.nested("dec" + std::to_string(i + 1) + ".pw"));
            dec_mlk_[i]->visit_params(v.nested("dec" + std::to_string(i + 1) + ".mlk"));
        }
        final_->visit_params(v.nested("final"));
    }

    std::vector<ParamT<S>*> parameters() {
        std::vector<ParamT<S>*> out;
        ParamVisitorT<S> v{"", [&out](const std::string&, ParamT<S>& p) { out.push_back(&p); }};
        visit_params(v);
        return out;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    const NetConfig& config() const { return cfg_; }
    MlkBlockT<S>& encoder_mlk(int level, int idx) { return *enc_[size_t(level)][size_t(idx)]; }

private:
    static void accumulate(TensorT<S>& dst, const TensorT<S>& src) {
        if (dst.numel() == 0) dst = src;
        else add_into(dst, src);
    }

    NetConfig cfg_;
    std::unique_ptr<DenseConv3dT<S>> head_conv_;
    std::unique_ptr<LayerNormT<S>> head_ln_;
    GeluT<S> head_act_;
    std::vector<std::vector<std::unique_ptr<MlkBlockT<S>>>> enc_;
    std::vector<std::unique_ptr<DsdBlockT<S>>> dsd_;
    std::vector<std::unique_ptr<BffBlockT<S>>> bff_;
    std::unique_ptr<MlkBlockT<S>> shallow_fuse_;
    std::vector<std::unique_ptr<PointwiseConvT<S>>> dec_pw_;
    std::vector<std::unique_ptr<UpsampleNearest2xT<S>>> dec_up_;
    std::vector<std::unique_ptr<MlkBlockT<S>>> dec_mlk_;
    std::unique_ptr<PointwiseConvT<S>> final_;
    std::vector<TensorT<S>> e_, f_;
};

using DbfUNet = DbfUNetT<float>;
using ForwardTrace = ForwardTraceT<float>;

}  // namespace nn

/// Exact per-module parameter counts plus a forward multiply-add estimate.
struct ParamReport {
    struct Item {
        std::string module;
        int64_t params = 0;
    };
    std::vector<Item> breakdown;
    int64_t total = 0;
    int64_t forward_macs = 0;  // for the patch the report was asked about
    bool within_lightweight_budget = false;  // total <= 5e6

    std::string to_json() const;
};

ParamReport param_report(nn::DbfUNet& model, std::array<int, 3> patch_dims);

/// Forward multiply-add estimate from the config alone.
int64_t estimate_forward_macs(const NetConfig& cfg, std::array<int, 3> patch_dims);

}  // namespace vesselseg
