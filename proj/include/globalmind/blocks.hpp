#pragma once
// The two attention blocks. GlobalM runs spatial interactive multi-head
// self-attention per temporal branch; GlobalD runs cross-temporal attention
// with the query from time 1, the key from time 2, and the value from the
// absolute feature difference. Both use an axial layout (rows or columns as
// tokens, channels as heads) and fuse heads back with a 3x3 convolution.

#include <string>
#include <vector>

#include "globalmind/ops.hpp"

namespace globalmind {

enum class FfnAct { gelu, relu };

template <class T>
struct ConvWeights {
    Parameter<T> w;  // [k,k,Cin,Cout]
    Parameter<T> b;  // [Cout]
    std::vector<Parameter<T>*> parameters() { return {&w, &b}; }
};

template <class T>
struct LayerNormWeights {
    Parameter<T> gamma;
    Parameter<T> beta;
    std::vector<Parameter<T>*> parameters() { return {&gamma, &beta}; }
};

template <class T>
struct SiMhsaWeights {
    ConvWeights<T> wq, wk, wv;  // 1x1, C -> C
    ConvWeights<T> fuse;        // 3x3, C -> C
    std::vector<Parameter<T>*> parameters() {
        return {&wq.w, &wq.b, &wk.w, &wk.b, &wv.w, &wv.b, &fuse.w, &fuse.b};
    }
};

template <class T>
using TiMhsaWeights = SiMhsaWeights<T>;  // identical shapes, different roles

template <class T>
struct FfnWeights {
    ConvWeights<T> expand;   // 1x1, C -> r*C
    ConvWeights<T> project;  // 1x1, r*C -> C
    std::vector<Parameter<T>*> parameters() {
        return {&expand.w, &expand.b, &project.w, &project.b};
    }
};

template <class T>
struct GlobalMBlock {
    SiMhsaWeights<T> mhsa;
    FfnWeights<T> ffn;
    LayerNormWeights<T> ln_attn, ln_ffn;
    AxialLayout layout = AxialLayout::GRS;
    FfnAct act = FfnAct::gelu;
    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out;
        for (auto* p : mhsa.parameters()) out.push_back(p);
        for (auto* p : ffn.parameters()) out.push_back(p);
        for (auto* p : ln_attn.parameters()) out.push_back(p);
        for (auto* p : ln_ffn.parameters()) out.push_back(p);
        return out;
    }
};

template <class T>
struct GlobalDBlock {
    TiMhsaWeights<T> mhsa;
    FfnWeights<T> ffn;
    LayerNormWeights<T> ln_query, ln_ffn;
    AxialLayout layout = AxialLayout::GRS;
    FfnAct act = FfnAct::gelu;
    bool symmetric_ln = false;  // normalize the key input too (off: time-2 enters raw)
    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out;
        for (auto* p : mhsa.parameters()) out.push_back(p);
        for (auto* p : ffn.parameters()) out.push_back(p);
        for (auto* p : ln_query.parameters()) out.push_back(p);
        for (auto* p : ln_ffn.parameters()) out.push_back(p);
        return out;
    }
};

// Zero-initialized weight builders; He-normal init lives with the model.
template <class T>
ConvWeights<T> make_conv(const std::string& name, int k, int cin, int cout) {
    return {Parameter<T>(name + ".w", Tensor<T>({k, k, cin, cout})),
            Parameter<T>(name + ".b", Tensor<T>({cout}))};
}

template <class T>
LayerNormWeights<T> make_layer_norm(const std::string& name, int c) {
    return {Parameter<T>(name + ".gamma", Tensor<T>({c}, T(1))),
            Parameter<T>(name + ".beta", Tensor<T>({c}))};
}

template <class T>
SiMhsaWeights<T> make_mhsa(const std::string& name, int c) {
    return {make_conv<T>(name + ".wq", 1, c, c), make_conv<T>(name + ".wk", 1, c, c),
            make_conv<T>(name + ".wv", 1, c, c), make_conv<T>(name + ".fuse", 3, c, c)};
}

template <class T>
FfnWeights<T> make_ffn(const std::string& name, int c, int ratio) {
    if (ratio < 1) throw ConfigError("ffn expansion ratio must be >= 1");
    return {make_conv<T>(name + ".expand", 1, c, ratio * c),
            make_conv<T>(name + ".project", 1, ratio * c, c)};
}

template <class T>
GlobalMBlock<T> make_global_m_block(const std::string& name, int c, int ratio, AxialLayout layout,
                                    FfnAct act = FfnAct::gelu) {
    return {make_mhsa<T>(name + ".mhsa", c), make_ffn<T>(name + ".ffn", c, ratio),
            make_layer_norm<T>(name + ".ln_attn", c), make_layer_norm<T>(name + ".ln_ffn", c),
            layout, act};
}

template <class T>
GlobalDBlock<T> make_global_d_block(const std::string& name, int c, int ratio, AxialLayout layout,
                                    FfnAct act = FfnAct::gelu, bool symmetric_ln = false) {
    return {make_mhsa<T>(name + ".mhsa", c), make_ffn<T>(name + ".ffn", c, ratio),
            make_layer_norm<T>(name + ".ln_q", c), make_layer_norm<T>(name + ".ln_ffn", c),
            layout, act, symmetric_ln};
}

// ---- forward passes ---------------------------------------------------------

// Scaled-dot-product attention over the axial token view. q/k/v are [H,W,C]
// projections; heads are channels, so reassembly back into image space is the
// head concat. attn_probe, when set, receives the [C,L,L] attention tensor.
template <class T>
Var<T> axial_attention(Var<T> q_map, Var<T> k_map, Var<T> v_map, AxialLayout layout,
                       Tensor<T>* attn_probe = nullptr) {
    const Shape& s = q_map.shape();
    if (s.size() != 3)
        throw ConfigError("axial attention expects [H,W,C] maps, got " + shape_str(s));
    const int H = s[0], W = s[1], C = s[2];
    const AxialDims d = axial_dims(layout, H, W, C);
    Var<T> qh = to_axial_heads(q_map, layout);
    Var<T> kh = to_axial_heads(k_map, layout);
    Var<T> vh = to_axial_heads(v_map, layout);
    Var<T> scores = scale(matmul(qh, transpose_last2(kh)), 1.0 / std::sqrt(double(d.head_dim)));
    Var<T> attn = softmax_lastdim(scores);
    if (attn_probe) *attn_probe = attn.val();
    Var<T> heads = matmul(attn, vh);
    return from_axial_heads(heads, layout, H, W);
}

template <class T>
Var<T> conv1x1(Var<T> x, ConvWeights<T>& w) {
    return conv2d_same(x, w.w, w.b);
}

template <class T>
Var<T> si_mhsa(Var<T> z, SiMhsaWeights<T>& w, AxialLayout layout,
               Tensor<T>* attn_probe = nullptr) {
    Var<T> q = conv1x1(z, w.wq);
    Var<T> k = conv1x1(z, w.wk);
    Var<T> v = conv1x1(z, w.wv);
    Var<T> merged = axial_attention(q, k, v, layout, attn_probe);
    return conv2d_same(merged, w.fuse.w, w.fuse.b);
}

// Query/key/value sources split apart so the block can normalize only the
// query path while the value stays the raw temporal difference.
template <class T>
Var<T> ti_mhsa_split(Var<T> q_src, Var<T> k_src, Var<T> v_src, TiMhsaWeights<T>& w,
                     AxialLayout layout, Tensor<T>* attn_probe = nullptr) {
    Var<T> q = conv1x1(q_src, w.wq);
    Var<T> k = conv1x1(k_src, w.wk);
    Var<T> v = conv1x1(v_src, w.wv);
    Var<T> merged = axial_attention(q, k, v, layout, attn_probe);
    return conv2d_same(merged, w.fuse.w, w.fuse.b);
}

template <class T>
Var<T> ti_mhsa(Var<T> fx, Var<T> fy, TiMhsaWeights<T>& w, AxialLayout layout,
               Tensor<T>* attn_probe = nullptr) {
    detail::require_same_shape(fx.shape(), fy.shape(), "ti_mhsa");
    Var<T> diff = abs_val(sub(fx, fy));
    return ti_mhsa_split(fx, fy, diff, w, layout, attn_probe);
}

template <class T>
Var<T> ffn_forward(Var<T> u, FfnWeights<T>& w, FfnAct act) {
    Var<T> h = conv1x1(u, w.expand);
    h = act == FfnAct::gelu ? gelu(h) : relu(h);
    return conv1x1(h, w.project);
}

template <class T>
Var<T> global_m_forward(Var<T> z, GlobalMBlock<T>& blk, Tensor<T>* attn_probe = nullptr) {
    Var<T> attn = si_mhsa(layer_norm(z, blk.ln_attn.gamma, blk.ln_attn.beta), blk.mhsa,
                          blk.layout, attn_probe);
    Var<T> mid = add(attn, z);
    Var<T> out = ffn_forward(layer_norm(mid, blk.ln_ffn.gamma, blk.ln_ffn.beta), blk.ffn, blk.act);
    return add(out, mid);
}

template <class T>
Var<T> global_d_forward(Var<T> fx, Var<T> fy, GlobalDBlock<T>& blk,
                        Tensor<T>* attn_probe = nullptr) {
    detail::require_same_shape(fx.shape(), fy.shape(), "global_d_forward");
    Var<T> q_in = layer_norm(fx, blk.ln_query.gamma, blk.ln_query.beta);
    Var<T> k_in = blk.symmetric_ln
                      ? layer_norm(fy, blk.ln_query.gamma, blk.ln_query.beta)
                      : fy;
    Var<T> diff = abs_val(sub(fx, fy));
    Var<T> attn = ti_mhsa_split(q_in, k_in, diff, blk.mhsa, blk.layout, attn_probe);
    Var<T> mid = add(attn, diff);
    Var<T> out = ffn_forward(layer_norm(mid, blk.ln_ffn.gamma, blk.ln_ffn.beta), blk.ffn, blk.act);
    return add(out, mid);
}

}  // namespace globalmind
