#include "hkt/blocks.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "hkt/errors.hpp"
#include "hkt/ops.hpp"

namespace hkt::nn {

const char* block_kind_name(BlockKind kind) {
    switch (kind) {
        case BlockKind::linear: return "linear";
        case BlockKind::mlp: return "mlp";
        case BlockKind::conv: return "conv";
        case BlockKind::pool: return "pool";
        case BlockKind::head: return "head";
    }
    return "?";
}

namespace {

const TensorPtr& named(const Block& b, const char* key) {
    for (const auto& [name, t] : b.params) {
        if (name == key) return t;
    }
    throw UsageError("block " + b.name + ": missing parameter '" + key + "'");
}

void require_input(const Block& b, const TensorPtr& x) {
    const bool ok = x->shape.size() == b.in_shape.size() + 1 &&
                    std::equal(b.in_shape.begin(), b.in_shape.end(), x->shape.begin() + 1);
    if (!ok) {
        throw DimensionError("block " + b.name + ": expected input [N x " +
                             shape_str(b.in_shape).substr(1) + ", got " + shape_str(x->shape));
    }
}

}  // namespace

TensorPtr Block::forward(const TensorPtr& x) const {
    require_input(*this, x);
    const std::size_t batch = x->shape[0];
    switch (kind) {
        case BlockKind::linear:
            return add_rowvec(matmul(x, named(*this, "w")), named(*this, "b"));
        case BlockKind::mlp: {
            auto h = tanh_act(add_rowvec(matmul(x, named(*this, "w1")), named(*this, "b1")));
            return tanh_act(add_rowvec(matmul(h, named(*this, "w2")), named(*this, "b2")));
        }
        case BlockKind::conv:
            return tanh_act(conv1x1(x, named(*this, "w"), named(*this, "b")));
        case BlockKind::pool:
            return bilinear_resize(x, out_shape[1], out_shape[2]);
        case BlockKind::head: {
            TensorPtr flat = x;
            if (x->shape.size() > 2) flat = reshape(x, {batch, shape_numel(in_shape)});
            return add_rowvec(matmul(flat, named(*this, "w")), named(*this, "b"));
        }
    }
    throw UsageError("block " + name + ": unknown kind");
}

std::size_t Block::param_count() const {
    std::size_t n = 0;
    for (const auto& [pname, t] : params) n += t->size();
    return n;
}

TensorPtr BlockNet::stage_forward(std::size_t stage, const TensorPtr& input) const {
    if (stage < 1 || stage > blocks.size()) {
        throw ValidationError("stage_forward: stage " + std::to_string(stage) +
                              " outside [1, " + std::to_string(blocks.size()) + "] of net " +
                              name);
    }
    return blocks[stage - 1].forward(input);
}

std::vector<TensorPtr> BlockNet::native_forward(const TensorPtr& input) const {
    std::vector<TensorPtr> acts;
    acts.reserve(blocks.size());
    TensorPtr cur = input;
    for (std::size_t i = 1; i <= blocks.size(); ++i) {
        cur = stage_forward(i, cur);
        acts.push_back(cur);
    }
    return acts;
}

void BlockNet::freeze() {
    frozen = true;
    for (auto& block : blocks) {
        for (auto& [pname, t] : block.params) t->requires_grad = false;
    }
}

std::vector<TensorPtr> BlockNet::parameters() const {
    std::vector<TensorPtr> out;
    for (const auto& block : blocks) {
        for (const auto& [pname, t] : block.params) out.push_back(t);
    }
    return out;
}

std::vector<std::pair<std::string, TensorPtr>> BlockNet::named_parameters() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    for (const auto& block : blocks) {
        for (const auto& [pname, t] : block.params) out.emplace_back(block.name + "." + pname, t);
    }
    return out;
}

std::size_t BlockNet::param_count() const {
    std::size_t n = 0;
    for (const auto& block : blocks) n += block.param_count();
    return n;
}

std::vector<std::uint8_t> BlockNet::param_bytes() const {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(param_count() * sizeof(double));
    for (const auto& block : blocks) {
        for (const auto& [pname, t] : block.params) {
            for (double v : t->data) {
                const auto u = std::bit_cast<std::uint64_t>(v);
                for (int shift = 0; shift < 64; shift += 8) {
                    bytes.push_back(static_cast<std::uint8_t>(u >> shift));
                }
            }
        }
    }
    return bytes;
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

std::size_t parse_dim(const std::string& tok, const std::string& field) {
    try {
        const unsigned long v = std::stoul(field);
        if (v == 0) throw ConfigError("net spec token '" + tok + "': size must be positive");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("net spec token '" + tok + "': '" + field + "' is not a size");
    }
}

}  // namespace

std::vector<BlockSpec> parse_stage_specs(const std::string& text) {
    std::vector<BlockSpec> specs;
    for (const std::string& tok : split(text, ',')) {
        if (tok.empty()) throw ConfigError("net spec has an empty block token");
        const std::vector<std::string> fields = split(tok, ':');
        BlockSpec spec;
        const std::string& kind = fields[0];
        if (kind == "linear" || kind == "conv") {
            spec.kind = kind == "linear" ? BlockKind::linear : BlockKind::conv;
            if (fields.size() != 2) {
                throw ConfigError("net spec token '" + tok + "': want " + kind + ":OUT");
            }
            spec.width = parse_dim(tok, fields[1]);
        } else if (kind == "mlp") {
            spec.kind = BlockKind::mlp;
            if (fields.size() != 3) {
                throw ConfigError("net spec token '" + tok + "': want mlp:OUT:HIDDEN");
            }
            spec.width = parse_dim(tok, fields[1]);
            spec.hidden = parse_dim(tok, fields[2]);
        } else if (kind == "pool" || kind == "head") {
            spec.kind = kind == "pool" ? BlockKind::pool : BlockKind::head;
            if (fields.size() != 1) {
                throw ConfigError("net spec token '" + tok + "': " + kind + " takes no sizes");
            }
        } else {
            throw ConfigError("net spec token '" + tok + "': unknown block kind '" + kind + "'");
        }
        specs.push_back(spec);
    }
    for (std::size_t i = 0; i + 1 < specs.size(); ++i) {
        if (specs[i].kind == BlockKind::head) {
            throw ConfigError("net spec: head must be the final block");
        }
    }
    return specs;
}

namespace {

TensorPtr he_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    auto t = zeros(std::move(shape), true);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t->data) v = rng.uniform(-limit, limit);
    return t;
}

}  // namespace

BlockNet build_net(const std::string& name, std::vector<std::size_t> in_shape,
                   const std::vector<BlockSpec>& specs, std::size_t classes, Rng& rng) {
    if (specs.empty()) throw ConfigError("net " + name + ": spec has no blocks");
    BlockNet net;
    net.name = name;
    std::vector<std::size_t> cur = std::move(in_shape);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const BlockSpec& spec = specs[i];
        const std::string stage = std::to_string(i + 1);
        if (spec.kind == BlockKind::head && i + 1 != specs.size()) {
            throw ConfigError("net " + name + ": head must be the final block");
        }
        Block b;
        b.kind = spec.kind;
        b.name = name + ".stage" + stage + "." + block_kind_name(spec.kind);
        b.in_shape = cur;
        switch (spec.kind) {
            case BlockKind::linear: {
                if (cur.size() != 1) {
                    throw DimensionError("net " + name + " stage " + stage +
                                         ": linear needs 1-D input, got " + shape_str(cur));
                }
                b.params.emplace_back("w", he_uniform({cur[0], spec.width}, cur[0], rng));
                b.params.emplace_back("b", zeros({spec.width}, true));
                b.out_shape = {spec.width};
                break;
            }
            case BlockKind::mlp: {
                if (cur.size() != 1) {
                    throw DimensionError("net " + name + " stage " + stage +
                                         ": mlp needs 1-D input, got " + shape_str(cur));
                }
                b.hidden = spec.hidden;
                b.params.emplace_back("w1", he_uniform({cur[0], spec.hidden}, cur[0], rng));
                b.params.emplace_back("b1", zeros({spec.hidden}, true));
                b.params.emplace_back("w2", he_uniform({spec.hidden, spec.width}, spec.hidden, rng));
                b.params.emplace_back("b2", zeros({spec.width}, true));
                b.out_shape = {spec.width};
                break;
            }
            case BlockKind::conv: {
                if (cur.size() != 3) {
                    throw DimensionError("net " + name + " stage " + stage +
                                         ": conv needs CxHxW input, got " + shape_str(cur));
                }
                b.params.emplace_back("w", he_uniform({spec.width, cur[0]}, cur[0], rng));
                b.params.emplace_back("b", zeros({spec.width}, true));
                b.out_shape = {spec.width, cur[1], cur[2]};
                break;
            }
            case BlockKind::pool: {
                if (cur.size() != 3) {
                    throw DimensionError("net " + name + " stage " + stage +
                                         ": pool needs CxHxW input, got " + shape_str(cur));
                }
                b.out_shape = {cur[0], std::max<std::size_t>(1, cur[1] / 2),
                               std::max<std::size_t>(1, cur[2] / 2)};
                break;
            }
            case BlockKind::head: {
                if (classes == 0) {
                    throw ConfigError("net " + name + ": head needs a positive class count");
                }
                const std::size_t flat = shape_numel(cur);
                b.params.emplace_back("w", he_uniform({flat, classes}, flat, rng));
                b.params.emplace_back("b", zeros({classes}, true));
                b.out_shape = {classes};
                break;
            }
        }
        cur = b.out_shape;
        net.blocks.push_back(std::move(b));
    }
    return net;
}

}  // namespace hkt::nn
