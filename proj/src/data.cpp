#include "hkt/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "hkt/errors.hpp"
#include "hkt/rng.hpp"

namespace hkt::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

/// In-place per-feature standardization to zero mean, unit variance.
/// `stride` is the per-sample element count, `features` how many leading
/// positions form one feature group (1 feature per position for 2-D data,
/// one group per channel for 4-D data).
void standardize(Tensor& t, std::size_t feature_count) {
    const std::size_t n = t.shape[0];
    const std::size_t stride = t.size() / n;
    const std::size_t group = stride / feature_count;
    for (std::size_t f = 0; f < feature_count; ++f) {
        double mean = 0.0;
        std::size_t count = 0;
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t g = 0; g < group; ++g) {
                mean += t.data[s * stride + f * group + g];
                ++count;
            }
        }
        mean /= static_cast<double>(count);
        double var = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t g = 0; g < group; ++g) {
                const double d = t.data[s * stride + f * group + g] - mean;
                var += d * d;
            }
        }
        var /= static_cast<double>(count);
        const double sd = var > 1e-24 ? std::sqrt(var) : 1.0;
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t g = 0; g < group; ++g) {
                double& v = t.data[s * stride + f * group + g];
                v = (v - mean) / sd;
            }
        }
    }
}

}  // namespace

Dataset gen_spiral(std::size_t n_per_class, std::size_t classes, double noise_std,
                   std::uint64_t seed) {
    if (n_per_class == 0) throw ConfigError("gen_spiral: n_per_class must be positive");
    if (classes < 2) throw ConfigError("gen_spiral: need at least 2 classes");
    if (noise_std < 0.0) throw ConfigError("gen_spiral: noise_std must be >= 0");

    const std::size_t n = n_per_class * classes;
    Dataset ds;
    ds.inputs = zeros({n, 2});
    ds.labels.resize(n);
    ds.class_count = classes;

    Rng rng(derive_seed(seed, "spiral"));
    // Arms start at radius 2 and wind outward for two turns; arms are
    // phase-offset by 2*pi/classes so they interleave without touching.
    std::size_t row = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            const double t =
                (static_cast<double>(i) + 0.5) / static_cast<double>(n_per_class);
            const double r = 2.0 + 8.5 * t;
            const double theta =
                2.0 * kPi * (2.0 * t + static_cast<double>(k) / static_cast<double>(classes));
            ds.inputs->data[row * 2] = r * std::cos(theta) + noise_std * rng.normal();
            ds.inputs->data[row * 2 + 1] = r * std::sin(theta) + noise_std * rng.normal();
            ds.labels[row] = static_cast<int>(k);
        }
    }
    standardize(*ds.inputs, 2);
    return ds;
}

Dataset gen_textured_patches(std::size_t n, std::size_t size, std::size_t classes,
                             std::uint64_t seed) {
    if (n == 0) throw ConfigError("gen_textured_patches: n must be positive");
    if (size < 4) throw ConfigError("gen_textured_patches: size must be >= 4");
    if (classes < 2) throw ConfigError("gen_textured_patches: need at least 2 classes");

    Dataset ds;
    ds.inputs = zeros({n, 3, size, size});
    ds.labels.resize(n);
    ds.class_count = classes;

    Rng rng(derive_seed(seed, "patches"));
    const std::size_t hw = size * size;
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t k = s % classes;  // round-robin keeps counts balanced
        ds.labels[s] = static_cast<int>(k);
        // class sets the diagonal frequency; phase varies per sample
        const double freq = static_cast<double>(k + 1);
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        for (std::size_t c = 0; c < 3; ++c) {
            const double chan_shift = static_cast<double>(c) * kPi / 4.0;
            double* plane = ds.inputs->data.data() + (s * 3 + c) * hw;
            for (std::size_t y = 0; y < size; ++y) {
                for (std::size_t x = 0; x < size; ++x) {
                    const double pos = static_cast<double>(y + x) / static_cast<double>(size);
                    plane[y * size + x] = std::sin(2.0 * kPi * freq * pos + phase + chan_shift) +
                                          0.1 * rng.normal();
                }
            }
        }
    }
    standardize(*ds.inputs, 3);
    return ds;
}

namespace {

constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarRecordsPerFile = 10000;
constexpr std::size_t kCifarFileBytes = kCifarRecord * kCifarRecordsPerFile;  // 30,730,000

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing CIFAR-10 batch file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace

Dataset parse_cifar_records(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() % kCifarRecord != 0) {
        throw ValidationError(origin + ": " + std::to_string(bytes.size()) +
                              " bytes is not a whole number of 3073-byte records");
    }
    const std::size_t n = bytes.size() / kCifarRecord;
    Dataset ds;
    ds.inputs = zeros({n, 3, 32, 32});
    ds.labels.resize(n);
    ds.class_count = 10;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
        if (rec[0] > 9) {
            throw ValidationError(origin + ": record " + std::to_string(i) + " has label " +
                                  std::to_string(rec[0]) + " outside [0, 9]");
        }
        ds.labels[i] = rec[0];
        double* dst = ds.inputs->data.data() + i * 3072;
        for (std::size_t p = 0; p < 3072; ++p) {
            dst[p] = static_cast<double>(rec[1 + p]) / 255.0;
        }
    }
    return ds;
}

std::pair<Dataset, Dataset> load_cifar10_binary(const std::string& dir) {
    std::vector<std::uint8_t> train_bytes;
    train_bytes.reserve(5 * kCifarFileBytes);
    for (int i = 1; i <= 5; ++i) {
        const std::string path = dir + "/data_batch_" + std::to_string(i) + ".bin";
        std::vector<std::uint8_t> bytes = read_file(path);
        if (bytes.size() != kCifarFileBytes) {
            throw ValidationError(path + ": has " + std::to_string(bytes.size()) +
                                  " bytes, want " + std::to_string(kCifarFileBytes));
        }
        train_bytes.insert(train_bytes.end(), bytes.begin(), bytes.end());
    }
    const std::string test_path = dir + "/test_batch.bin";
    std::vector<std::uint8_t> test_bytes = read_file(test_path);
    if (test_bytes.size() != kCifarFileBytes) {
        throw ValidationError(test_path + ": has " + std::to_string(test_bytes.size()) +
                              " bytes, want " + std::to_string(kCifarFileBytes));
    }
    Dataset train = parse_cifar_records(train_bytes, dir);
    train.split = "train";
    Dataset test = parse_cifar_records(test_bytes, test_path);
    test.split = "test";
    return {std::move(train), std::move(test)};
}

Dataset dataset_subset(const Dataset& ds, const std::vector<std::size_t>& indices,
                       const std::string& split_tag) {
    const std::size_t stride = ds.inputs->size() / ds.size();
    std::vector<std::size_t> shape = ds.inputs->shape;
    shape[0] = indices.size();
    Dataset out;
    out.inputs = zeros(shape);
    out.labels.resize(indices.size());
    out.class_count = ds.class_count;
    out.split = split_tag;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t src = indices[i];
        if (src >= ds.size()) {
            throw ValidationError("dataset_subset: index " + std::to_string(src) +
                                  " outside dataset of " + std::to_string(ds.size()));
        }
        std::copy(ds.inputs->data.begin() + static_cast<std::ptrdiff_t>(src * stride),
                  ds.inputs->data.begin() + static_cast<std::ptrdiff_t>((src + 1) * stride),
                  out.inputs->data.begin() + static_cast<std::ptrdiff_t>(i * stride));
        out.labels[i] = ds.labels[src];
    }
    return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction,
                                          std::uint64_t split_seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("split_dataset: train_fraction must be in (0, 1)");
    }
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(split_seed, "split"));
    rng.shuffle(order);
    const auto cut = static_cast<std::size_t>(
        std::floor(train_fraction * static_cast<double>(ds.size())));
    if (cut == 0 || cut == ds.size()) {
        throw ConfigError("split_dataset: split leaves an empty side");
    }
    std::vector<std::size_t> head(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
    std::vector<std::size_t> tail(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
    return {dataset_subset(ds, head, "train"), dataset_subset(ds, tail, "val")};
}

void dump_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const std::size_t stride = ds.inputs->size() / ds.size();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < stride; ++j) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", ds.inputs->data[i * stride + j]);
            out << buf << ",";
        }
        out << ds.labels[i] << "\n";
    }
    if (!out) throw IoError("short write to " + path);
}

BatchIter::BatchIter(const Dataset& ds, std::size_t batch_size, std::uint64_t epoch_seed)
    : ds_(ds), batch_size_(batch_size) {
    if (batch_size == 0) throw ConfigError("batch_iter: batch_size must be >= 1");
    order_.resize(ds.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(epoch_seed);
    rng.shuffle(order_);
}

std::size_t BatchIter::batch_count() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIter::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t take = std::min(batch_size_, order_.size() - cursor_);
    std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
    cursor_ += take;
    Dataset sub = dataset_subset(ds_, idx, ds_.split);
    return Batch{sub.inputs, std::move(sub.labels)};
}

}  // namespace hkt::data
