// Per-point prediction decoding (class probabilities plus K-component
// Laplacian box mixtures) and precision-weighted product fusion of
// per-point box distributions.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "rvdet/common.hpp"
#include "rvdet/geometry.hpp"

namespace rvdet {

struct MixtureComponent {
    BoxParams box;
    double log_scale = 0.0;  // s = log(sigma)
    double weight = 0.0;     // alpha, softmax-normalized per class

    double scale() const { return std::exp(log_scale); }
};

struct ClassMixture {
    std::vector<MixtureComponent> components;
};

// Decoded network head for one image cell. class_probs has C entries
// (index 0 is background); mixtures has C-1 entries, one per foreground
// class.
struct PerPointPrediction {
    std::vector<double> class_probs;
    std::vector<ClassMixture> mixtures;
};

// A single Laplacian box hypothesis: corner mean, shared scale, weight.
struct BoxDistribution {
    CornerVector corners;
    double sigma = 1.0;
    double alpha = 1.0;
};

struct FusedBox {
    CornerVector corners;
    double sigma = 0.0;
    int member_count = 0;
};

// Raw head layout per point: C class logits, then per foreground class
// [6K box params (k-major: dx dy ox oy l w)][K log scales][K weight logits].
struct RawHeadLayout {
    int class_count = 0;
    std::vector<int> components;           // per foreground class
    std::vector<std::size_t> class_base;   // offset of each class block
    std::size_t stride = 0;

    RawHeadLayout() = default;
    RawHeadLayout(int class_count_, std::span<const int> components_per_class)
        : class_count(class_count_),
          components(components_per_class.begin(), components_per_class.end()) {
        if (static_cast<int>(components.size()) != class_count - 1)
            throw std::invalid_argument("need one component count per foreground class");
        std::size_t at = static_cast<std::size_t>(class_count);
        class_base.resize(components.size());
        for (std::size_t f = 0; f < components.size(); ++f) {
            class_base[f] = at;
            at += 8u * static_cast<std::size_t>(components[f]);
        }
        stride = at;
    }

    // which: 0..5 for dx dy ox oy l w
    std::size_t box_param(std::size_t fg_slot, int k, int which) const {
        return class_base[fg_slot] + 6u * static_cast<std::size_t>(k) +
               static_cast<std::size_t>(which);
    }
    std::size_t log_scale(std::size_t fg_slot, int k) const {
        return class_base[fg_slot] + 6u * static_cast<std::size_t>(components[fg_slot]) +
               static_cast<std::size_t>(k);
    }
    std::size_t weight_logit(std::size_t fg_slot, int k) const {
        return class_base[fg_slot] + 7u * static_cast<std::size_t>(components[fg_slot]) +
               static_cast<std::size_t>(k);
    }
};

inline std::size_t raw_head_length(int class_count, std::span<const int> components_per_class) {
    return RawHeadLayout(class_count, components_per_class).stride;
}

namespace detail {

// Softmax with max subtraction; finite for any finite input.
inline void softmax_inplace(std::span<double> v) {
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - m);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

// exp(s) clamped so sigma stays finite and positive in double.
inline double safe_scale_exp(double s) { return std::exp(std::clamp(s, -500.0, 500.0)); }

}  // namespace detail

inline PerPointPrediction decode_head(std::span<const double> raw, int class_count,
                                      std::span<const int> components_per_class) {
    if (raw.size() != raw_head_length(class_count, components_per_class))
        throw std::invalid_argument("raw head vector length mismatch");
    PerPointPrediction out;
    out.class_probs.assign(raw.begin(), raw.begin() + class_count);
    detail::softmax_inplace(out.class_probs);

    std::size_t at = static_cast<std::size_t>(class_count);
    out.mixtures.resize(components_per_class.size());
    for (std::size_t c = 0; c < components_per_class.size(); ++c) {
        const int k_count = components_per_class[c];
        ClassMixture& mix = out.mixtures[c];
        mix.components.resize(static_cast<std::size_t>(k_count));
        for (int k = 0; k < k_count; ++k) {
            BoxParams& p = mix.components[static_cast<std::size_t>(k)].box;
            p.dx = raw[at++];
            p.dy = raw[at++];
            p.ox = raw[at++];
            p.oy = raw[at++];
            p.length = raw[at++];
            p.width = raw[at++];
            const double n = std::hypot(p.ox, p.oy);
            if (n > 0.0) {
                p.ox /= n;
                p.oy /= n;
            } else {
                p.ox = 1.0;
                p.oy = 0.0;
            }
        }
        for (int k = 0; k < k_count; ++k)
            mix.components[static_cast<std::size_t>(k)].log_scale =
                std::clamp(raw[at++], -500.0, 500.0);
        std::vector<double> logits(raw.begin() + static_cast<std::ptrdiff_t>(at),
                                   raw.begin() + static_cast<std::ptrdiff_t>(at) + k_count);
        detail::softmax_inplace(logits);
        for (int k = 0; k < k_count; ++k)
            mix.components[static_cast<std::size_t>(k)].weight = logits[static_cast<std::size_t>(k)];
        at += static_cast<std::size_t>(k_count);
    }
    return out;
}

// Product-of-Laplacians fusion: b_hat = sum(w_j b_j) / sum(w_j) with
// w = 1/sigma^2, sigma_hat^2 = 1 / sum(1/sigma_j^2). Members are summed in
// the order given; callers pass them index-sorted for bit determinism.
inline FusedBox fuse(std::span<const BoxDistribution> members) {
    if (members.empty()) throw std::invalid_argument("fuse: empty member list");
    KahanSum weight_sum;
    std::array<KahanSum, 8> corner_sum;
    for (const BoxDistribution& m : members) {
        if (!(m.sigma > 0.0)) throw std::invalid_argument("fuse: sigma must be positive");
        const double w = 1.0 / (m.sigma * m.sigma);
        weight_sum.add(w);
        for (int n = 0; n < 8; ++n) corner_sum[static_cast<std::size_t>(n)].add(w * m.corners.flat(n));
    }
    FusedBox fused;
    const double total = weight_sum.value();
    for (int n = 0; n < 8; ++n)
        fused.corners.set_flat(n, corner_sum[static_cast<std::size_t>(n)].value() / total);
    fused.sigma = 1.0 / std::sqrt(total);
    fused.member_count = static_cast<int>(members.size());
    return fused;
}

// Detection confidence: the mixture-weighted Laplace density height at the
// mean, alpha / (2 sigma_hat).
inline double likelihood_score(double alpha, double sigma_hat) {
    if (!(sigma_hat > 0.0)) throw std::invalid_argument("likelihood_score: sigma must be positive");
    return alpha / (2.0 * sigma_hat);
}

inline double laplace_cdf(double x, double mu, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("laplace_cdf: scale must be positive");
    const double d = (x - mu) / scale;
    return d < 0.0 ? 0.5 * std::exp(d) : 1.0 - 0.5 * std::exp(-d);
}

// Inverse of laplace_cdf on (0, 1).
inline double laplace_quantile(double q, double mu, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("laplace_quantile: scale must be positive");
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("laplace_quantile: q must be in (0,1)");
    return q < 0.5 ? mu + scale * std::log(2.0 * q) : mu - scale * std::log(2.0 * (1.0 - q));
}

}  // namespace rvdet
