#pragma once
// Global axial segmentation: reinterpret an H x W x B feature map as a global
// row sequence (GRS) or column sequence (GCS). Tokens are whole rows (or
// columns), channels act as attention heads, and the remaining spatial axis is
// the per-head embedding. Also the attention cost model behind the axial
// benchmark.

#include <cstdint>

#include "globalmind/tensor.hpp"

namespace globalmind {

enum class AxialLayout { GRS, GCS };

inline const char* layout_name(AxialLayout m) { return m == AxialLayout::GRS ? "GRS" : "GCS"; }

struct AxialDims {
    int seq_len;   // L: number of tokens
    int heads;     // N_h: one head per channel
    int head_dim;  // d_k: the non-sequence spatial axis
};

inline AxialDims axial_dims(AxialLayout m, int h, int w, int b) {
    return m == AxialLayout::GRS ? AxialDims{h, b, w} : AxialDims{w, b, h};
}

// Flat index into a row-major [H,W,B] map of the value seen at
// (token l, head i, dim j). GRS reads f[l, j, i]; GCS reads f[j, l, i].
inline int64_t axial_source_index(AxialLayout m, int /*h*/, int w, int b, int l, int i, int j) {
    return m == AxialLayout::GRS ? (static_cast<int64_t>(l) * w + j) * b + i
                                 : (static_cast<int64_t>(j) * w + l) * b + i;
}

// A materialized axial view: tokens laid out [L, heads, dim]. The remap is a
// bijection, so round trips are exact; the source layout never has the head
// axis outermost, hence the copy.
template <class T>
struct AxialSequence {
    Shape source_shape;  // H, W, B
    AxialLayout layout = AxialLayout::GRS;
    Tensor<T> tokens;    // [L, heads, dim]
};

template <class T>
AxialSequence<T> to_axial(const Tensor<T>& f, AxialLayout layout) {
    if (f.rank() != 3)
        throw ShapeError("to_axial expects an [H,W,B] map, got " + shape_str(f.shape));
    const int h = f.dim(0), w = f.dim(1), b = f.dim(2);
    const AxialDims d = axial_dims(layout, h, w, b);
    AxialSequence<T> s;
    s.source_shape = f.shape;
    s.layout = layout;
    s.tokens = Tensor<T>({d.seq_len, d.heads, d.head_dim});
    int64_t out = 0;
    for (int l = 0; l < d.seq_len; ++l)
        for (int i = 0; i < d.heads; ++i)
            for (int j = 0; j < d.head_dim; ++j)
                s.tokens[out++] = f[axial_source_index(layout, h, w, b, l, i, j)];
    return s;
}

template <class T>
Tensor<T> from_axial(const AxialSequence<T>& s) {
    if (s.source_shape.size() != 3)
        throw DataError(DataError::inconsistent,
                        "axial sequence carries corrupted source shape " + shape_str(s.source_shape));
    const int h = s.source_shape[0], w = s.source_shape[1], b = s.source_shape[2];
    const AxialDims d = axial_dims(s.layout, h, w, b);
    if (s.tokens.shape != Shape{d.seq_len, d.heads, d.head_dim} ||
        s.tokens.numel() != static_cast<int64_t>(h) * w * b)
        throw DataError(DataError::inconsistent,
                        "axial token view " + shape_str(s.tokens.shape) +
                            " does not match source shape " + shape_str(s.source_shape));
    Tensor<T> f({h, w, b});
    int64_t in = 0;
    for (int l = 0; l < d.seq_len; ++l)
        for (int i = 0; i < d.heads; ++i)
            for (int j = 0; j < d.head_dim; ++j)
                f[axial_source_index(s.layout, h, w, b, l, i, j)] = s.tokens[in++];
    return f;
}

// ---- attention cost model -------------------------------------------------

enum class CostMode { GRS, GCS, Full };

struct AttentionCost {
    uint64_t score_entries = 0;  // total attention-matrix entries across heads
    uint64_t mult_adds = 0;      // multiply-adds of QK^T plus A*V
    bool saturated = false;      // an intermediate product overflowed u64
};

// GRS: B*H^2 score entries; GCS: B*W^2; Full (hypothetical global token grid,
// one pixel per token, channels as heads): B*(H*W)^2. mult_adds multiply in
// the per-head dim (W, H, and 1 respectively) and count both products.
AttentionCost attention_cost(int64_t h, int64_t w, int64_t b, CostMode mode);

}  // namespace globalmind
