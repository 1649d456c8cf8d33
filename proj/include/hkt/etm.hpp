#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "hkt/blocks.hpp"
#include "hkt/rng.hpp"
#include "hkt/tensor.hpp"

namespace hkt::etm {

/// Projects a donor activation onto the receiver's shape: a trainable
/// channel map (conv1x1 for 4-D activations, linear for 2-D) followed by
/// bilinear resize. Output shape is exactly dst_shape for any batch.
struct TransferAdapter {
    TensorPtr channel_map;               // [dst_channels x src_channels]
    std::vector<std::size_t> src_shape;  // per sample, batch dim excluded
    std::vector<std::size_t> dst_shape;  // per sample

    TensorPtr apply(const TensorPtr& z) const;
};

/// He-style seeded init; src and dst must both be 1-D or both be 3-D.
TransferAdapter make_adapter(std::vector<std::size_t> src_shape,
                             std::vector<std::size_t> dst_shape, Rng& rng);

/// Adapters and mixing coefficient for one fusion site. tau_c carries
/// parent features into the child's shape; tau_p the reverse.
struct EtmStage {
    std::size_t stage_index = 0;  // 1-based
    TransferAdapter tau_c;        // parent -> child
    TransferAdapter tau_p;        // child -> parent
    double lambda = 0.5;          // in [0, 1], constant within a run
};

/// Builds fusion sites for stages 1 .. n-1 of two aligned n-stage nets.
std::vector<EtmStage> build_etm_stages(const nn::BlockNet& parent, const nn::BlockNet& child,
                                       double lambda, Rng& rng);

/// All adapter parameters, in stage order (tau_c then tau_p per stage).
std::vector<TensorPtr> adapter_params(const std::vector<EtmStage>& stages);

/// Debug hook receiving each per-sample attention matrix as it is built.
struct AttentionProbe {
    std::function<void(const TensorPtr& alpha)> on_alpha;
};

/// Dissimilarity operator: with Q = x_child and K = V = tau_x, flattens
/// each sample to P positions x c channels (4-D: P = H*W, c = C; 2-D:
/// P = D, c = 1), forms alpha = softmax_rows(Q K^T / sqrt(c)) and returns
/// tau_x - alpha V, reshaped back. Zero whenever V is position-constant.
TensorPtr genetic_attention(const TensorPtr& tau_x, const TensorPtr& x_child,
                            const AttentionProbe* probe = nullptr);

enum class FuseDirection { parent_to_child, child_to_parent };

/// Mixture step: x_native + lambda * GA(transfer(z_src), x_native).
/// At lambda == 0 this returns x_native itself, untouched.
TensorPtr etm_fuse(const EtmStage& stage, const TensorPtr& z_src, const TensorPtr& x_native,
                   FuseDirection direction, const AttentionProbe* probe = nullptr);

}  // namespace hkt::etm
