#include "hkt/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "hkt/errors.hpp"

namespace hkt::nn {

namespace {

constexpr std::uint8_t kMagic[4] = {'H', 'K', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int shift = 0; shift < 64; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

void put_shape(std::vector<std::uint8_t>& out, const std::vector<std::size_t>& shape) {
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put_u64(out, d);
}

/// Bounds-checked little-endian reader over a byte buffer.
class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int shift = 0; shift < 32; shift += 8) v |= std::uint32_t(bytes_[pos_++]) << shift;
        return v;
    }

    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int shift = 0; shift < 64; shift += 8) v |= std::uint64_t(bytes_[pos_++]) << shift;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + len));
        pos_ += len;
        return s;
    }

    std::vector<std::size_t> shape() {
        const std::uint32_t rank = u32();
        std::vector<std::size_t> s(rank);
        for (auto& d : s) d = u64();
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw CheckpointTruncatedError("checkpoint ends " + std::to_string(pos_ + n - bytes_.size()) +
                                           " bytes before the declared payload");
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_net(const BlockNet& net, const CheckpointMeta& meta) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u64(out, meta.step);
    put_u64(out, meta.seed);
    out.push_back(net.frozen ? 1 : 0);
    put_str(out, net.name);
    put_u32(out, static_cast<std::uint32_t>(net.blocks.size()));
    for (const Block& b : net.blocks) {
        put_u32(out, static_cast<std::uint32_t>(b.kind));
        put_str(out, b.name);
        put_u64(out, b.hidden);
        put_shape(out, b.in_shape);
        put_shape(out, b.out_shape);
        put_u32(out, static_cast<std::uint32_t>(b.params.size()));
        for (const auto& [pname, t] : b.params) {
            put_str(out, pname);
            put_shape(out, t->shape);
            put_u64(out, t->size());
            for (double v : t->data) put_f64(out, v);
        }
    }
    return out;
}

std::pair<BlockNet, CheckpointMeta> deserialize_net(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
        throw IoError("not a checkpoint: bad magic bytes");
    }
    Reader r(bytes);
    r.skip(4);  // magic, already checked
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw CheckpointVersionError("checkpoint version " + std::to_string(version) +
                                     " unsupported; this build reads version " +
                                     std::to_string(kVersion));
    }
    CheckpointMeta meta;
    meta.step = r.u64();
    meta.seed = r.u64();
    const bool frozen = r.u8() != 0;
    BlockNet net;
    net.name = r.str();
    const std::uint32_t block_count = r.u32();
    for (std::uint32_t bi = 0; bi < block_count; ++bi) {
        Block b;
        const std::uint32_t kind = r.u32();
        if (kind > static_cast<std::uint32_t>(BlockKind::head)) {
            throw CheckpointShapeError("checkpoint block " + std::to_string(bi) +
                                       " declares unknown kind " + std::to_string(kind));
        }
        b.kind = static_cast<BlockKind>(kind);
        b.name = r.str();
        b.hidden = r.u64();
        b.in_shape = r.shape();
        b.out_shape = r.shape();
        const std::uint32_t param_count = r.u32();
        for (std::uint32_t pi = 0; pi < param_count; ++pi) {
            const std::string pname = r.str();
            std::vector<std::size_t> shape = r.shape();
            const std::uint64_t count = r.u64();
            if (shape_numel(shape) != count) {
                throw CheckpointShapeError("checkpoint parameter " + b.name + "." + pname +
                                           ": shape " + shape_str(shape) + " declares " +
                                           std::to_string(shape_numel(shape)) +
                                           " values but stores " + std::to_string(count));
            }
            std::vector<double> vals(count);
            for (auto& v : vals) v = r.f64();
            b.params.emplace_back(pname, from_data(std::move(shape), std::move(vals), true));
        }
        net.blocks.push_back(std::move(b));
    }
    if (frozen) net.freeze();
    return {std::move(net), meta};
}

void save_checkpoint(const BlockNet& net, const CheckpointMeta& meta, const std::string& path) {
    const std::vector<std::uint8_t> bytes = serialize_net(net, meta);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

std::pair<BlockNet, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_net(bytes);
}

}  // namespace hkt::nn
