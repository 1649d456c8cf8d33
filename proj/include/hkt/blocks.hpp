#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hkt/rng.hpp"
#include "hkt/tensor.hpp"

namespace hkt::nn {

enum class BlockKind { linear, mlp, conv, pool, head };

const char* block_kind_name(BlockKind kind);

/// One functional block. Parameters are named and ordered; forward is a
/// pure function of the input under the active tape.
struct Block {
    BlockKind kind = BlockKind::linear;
    std::string name;
    std::vector<std::pair<std::string, TensorPtr>> params;
    std::vector<std::size_t> in_shape;   // per sample, batch dim excluded
    std::vector<std::size_t> out_shape;  // per sample
    std::size_t hidden = 0;              // mlp only

    TensorPtr forward(const TensorPtr& x) const;
    std::size_t param_count() const;
};

/// Ordered stack of blocks whose shapes compose. Houses the child and the
/// parent network; freezing excludes a net from optimization while leaving
/// it differentiable with respect to its inputs.
struct BlockNet {
    std::string name;
    std::vector<Block> blocks;
    bool frozen = false;

    std::size_t stage_count() const { return blocks.size(); }

    /// Applies block `stage` (1-based, matching the n-stage notation).
    TensorPtr stage_forward(std::size_t stage, const TensorPtr& input) const;

    /// Pure composition of all blocks; returns every stage activation,
    /// z_1 .. z_n, with no fusion anywhere.
    std::vector<TensorPtr> native_forward(const TensorPtr& input) const;

    /// Marks the net frozen and drops requires_grad on every parameter.
    /// Gradient still flows through the blocks to their inputs.
    void freeze();

    std::vector<TensorPtr> parameters() const;
    std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
    std::size_t param_count() const;

    /// Little-endian byte image of all parameter values in declaration
    /// order; input to the frozen-parent hash.
    std::vector<std::uint8_t> param_bytes() const;
};

/// One entry of a parsed net spec string.
struct BlockSpec {
    BlockKind kind = BlockKind::linear;
    std::size_t width = 0;   // linear/mlp/conv output width; unused for pool/head
    std::size_t hidden = 0;  // mlp only
};

/// Parses "mlp:64:512,mlp:64:512,head" style net specs.
/// Tokens: linear:OUT | mlp:OUT:HIDDEN | conv:OUT | pool | head.
std::vector<BlockSpec> parse_stage_specs(const std::string& text);

/// Builds a net from specs, validating that all shapes compose. `in_shape`
/// is the per-sample input shape; `classes` sizes the head. Parameters are
/// He-style uniform, drawn from `rng` in declaration order, biases zero.
BlockNet build_net(const std::string& name, std::vector<std::size_t> in_shape,
                   const std::vector<BlockSpec>& specs, std::size_t classes, Rng& rng);

}  // namespace hkt::nn
