#include "globalmind/gas.hpp"

#include <limits>

namespace globalmind {

namespace {

// Saturating u64 product; sets the flag instead of wrapping.
uint64_t mul_sat(uint64_t a, uint64_t b, bool& saturated) {
    if (a != 0 && b > std::numeric_limits<uint64_t>::max() / a) {
        saturated = true;
        return std::numeric_limits<uint64_t>::max();
    }
    return a * b;
}

uint64_t add_sat(uint64_t a, uint64_t b, bool& saturated) {
    if (b > std::numeric_limits<uint64_t>::max() - a) {
        saturated = true;
        return std::numeric_limits<uint64_t>::max();
    }
    return a + b;
}

}  // namespace

AttentionCost attention_cost(int64_t h, int64_t w, int64_t b, CostMode mode) {
    if (h <= 0 || w <= 0 || b <= 0)
        throw UsageError("attention_cost requires positive dims, got h=" + std::to_string(h) +
                         " w=" + std::to_string(w) + " b=" + std::to_string(b));
    const auto uh = static_cast<uint64_t>(h);
    const auto uw = static_cast<uint64_t>(w);
    const auto ub = static_cast<uint64_t>(b);

    AttentionCost c;
    uint64_t seq = 0, head_dim = 0;
    switch (mode) {
        case CostMode::GRS:
            seq = uh;
            head_dim = uw;
            break;
        case CostMode::GCS:
            seq = uw;
            head_dim = uh;
            break;
        case CostMode::Full:
            seq = mul_sat(uh, uw, c.saturated);
            head_dim = 1;
            break;
    }
    const uint64_t seq_sq = mul_sat(seq, seq, c.saturated);
    c.score_entries = mul_sat(ub, seq_sq, c.saturated);
    // QK^T and A*V each cost score_entries * head_dim multiply-adds.
    const uint64_t per_product = mul_sat(c.score_entries, head_dim, c.saturated);
    c.mult_adds = add_sat(per_product, per_product, c.saturated);
    return c;
}

}  // namespace globalmind
