#include "hkt/etm.hpp"

#include <cmath>

#include "hkt/errors.hpp"
#include "hkt/ops.hpp"

namespace hkt::etm {

namespace {

void require_sample_shape(const TensorPtr& z, const std::vector<std::size_t>& want,
                          const char* who) {
    const bool ok = z->shape.size() == want.size() + 1 &&
                    std::equal(want.begin(), want.end(), z->shape.begin() + 1);
    if (!ok) {
        throw DimensionError(std::string(who) + ": expected input [N x " +
                             shape_str(want).substr(1) + ", got " + shape_str(z->shape));
    }
}

}  // namespace

TensorPtr TransferAdapter::apply(const TensorPtr& z) const {
    require_sample_shape(z, src_shape, "transfer");
    if (src_shape.size() == 1) {
        // 2-D activation: plain linear channel map, no spatial resize.
        return matmul(z, transpose2d(channel_map));
    }
    auto mapped = conv1x1(z, channel_map, nullptr);
    return bilinear_resize(mapped, dst_shape[1], dst_shape[2]);
}

TransferAdapter make_adapter(std::vector<std::size_t> src_shape,
                             std::vector<std::size_t> dst_shape, Rng& rng) {
    if (src_shape.size() != dst_shape.size() ||
        (src_shape.size() != 1 && src_shape.size() != 3)) {
        throw DimensionError("adapter: shapes must both be 1-D or both be 3-D, got " +
                             shape_str(src_shape) + " -> " + shape_str(dst_shape));
    }
    TransferAdapter adapter;
    const std::size_t src_ch = src_shape[0];
    const std::size_t dst_ch = dst_shape[0];
    adapter.channel_map = zeros({dst_ch, src_ch}, true);
    const double limit = std::sqrt(6.0 / static_cast<double>(src_ch));
    for (double& v : adapter.channel_map->data) v = rng.uniform(-limit, limit);
    adapter.src_shape = std::move(src_shape);
    adapter.dst_shape = std::move(dst_shape);
    return adapter;
}

std::vector<EtmStage> build_etm_stages(const nn::BlockNet& parent, const nn::BlockNet& child,
                                       double lambda, Rng& rng) {
    if (parent.stage_count() != child.stage_count()) {
        throw ConfigError("etm: parent has " + std::to_string(parent.stage_count()) +
                          " stages but child has " + std::to_string(child.stage_count()) +
                          "; stage alignment needs equal counts");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("etm: lambda must be in [0, 1]");
    }
    std::vector<EtmStage> stages;
    for (std::size_t i = 1; i < parent.stage_count(); ++i) {
        EtmStage stage;
        stage.stage_index = i;
        stage.lambda = lambda;
        const auto& pshape = parent.blocks[i - 1].out_shape;
        const auto& cshape = child.blocks[i - 1].out_shape;
        stage.tau_c = make_adapter(pshape, cshape, rng);
        stage.tau_p = make_adapter(cshape, pshape, rng);
        stages.push_back(std::move(stage));
    }
    return stages;
}

std::vector<TensorPtr> adapter_params(const std::vector<EtmStage>& stages) {
    std::vector<TensorPtr> out;
    out.reserve(stages.size() * 2);
    for (const EtmStage& s : stages) {
        out.push_back(s.tau_c.channel_map);
        out.push_back(s.tau_p.channel_map);
    }
    return out;
}

TensorPtr genetic_attention(const TensorPtr& tau_x, const TensorPtr& x_child,
                            const AttentionProbe* probe) {
    if (tau_x->shape != x_child->shape) {
        throw DimensionError("genetic_attention: shapes disagree: " + shape_str(tau_x->shape) +
                             " vs " + shape_str(x_child->shape));
    }
    const std::size_t rank = tau_x->shape.size();
    if (rank != 2 && rank != 4) {
        throw DimensionError("genetic_attention: need [N x D] or [N x C x H x W], got " +
                             shape_str(tau_x->shape));
    }
    const std::size_t batch = tau_x->shape[0];
    std::vector<TensorPtr> per_sample;
    per_sample.reserve(batch);
    for (std::size_t s = 0; s < batch; ++s) {
        TensorPtr q2, v2;  // P x c; K and V are the same matrix
        std::size_t channels = 1;
        if (rank == 4) {
            const std::size_t c = tau_x->shape[1], h = tau_x->shape[2], w = tau_x->shape[3];
            channels = c;
            q2 = transpose2d(reshape(slice_sample(x_child, s), {c, h * w}));
            v2 = transpose2d(reshape(slice_sample(tau_x, s), {c, h * w}));
        } else {
            const std::size_t d = tau_x->shape[1];
            q2 = reshape(slice_sample(x_child, s), {d, 1});
            v2 = reshape(slice_sample(tau_x, s), {d, 1});
        }
        auto scores = scale(matmul(q2, transpose2d(v2)),
                            1.0 / std::sqrt(static_cast<double>(channels)));
        auto alpha = softmax_rows(scores);
        if (probe != nullptr && probe->on_alpha) probe->on_alpha(alpha);
        auto residual = sub(v2, matmul(alpha, v2));
        if (rank == 4) {
            const std::size_t c = tau_x->shape[1], h = tau_x->shape[2], w = tau_x->shape[3];
            per_sample.push_back(reshape(transpose2d(residual), {c, h, w}));
        } else {
            per_sample.push_back(reshape(residual, {tau_x->shape[1]}));
        }
    }
    return stack_samples(per_sample);
}

TensorPtr etm_fuse(const EtmStage& stage, const TensorPtr& z_src, const TensorPtr& x_native,
                   FuseDirection direction, const AttentionProbe* probe) {
    // Eq: x' + lambda * GA(tau(x), x'). At lambda == 0 the fused stream is
    // the native stream itself, bit for bit; skipping the ops entirely also
    // keeps the tape free of dead attention nodes.
    if (stage.lambda == 0.0) return x_native;
    const TransferAdapter& adapter =
        direction == FuseDirection::parent_to_child ? stage.tau_c : stage.tau_p;
    auto tau = adapter.apply(z_src);
    auto residual = genetic_attention(tau, x_native, probe);
    return add(x_native, scale(residual, stage.lambda));
}

}  // namespace hkt::etm
