#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hkt/tensor.hpp"

namespace hkt::data {

/// Labeled dataset. Inputs are [N x features] or [N x C x H x W]; labels
/// are class indices in [0, class_count).
struct Dataset {
    TensorPtr inputs;
    std::vector<int> labels;
    std::size_t class_count = 0;
    std::string split = "full";

    std::size_t size() const { return inputs == nullptr ? 0 : inputs->shape[0]; }
};

/// Interleaved 2-D spirals, one arm per class, standardized to zero mean
/// and unit variance per feature. Deterministic in the seed.
Dataset gen_spiral(std::size_t n_per_class, std::size_t classes, double noise_std,
                   std::uint64_t seed);

/// 3-channel square patches whose spatial frequency depends on the class;
/// exercises the 4-D conv/resize/attention path. Deterministic in the seed.
Dataset gen_textured_patches(std::size_t n, std::size_t size, std::size_t classes,
                             std::uint64_t seed);

/// Reads the standard 6-file binary layout (data_batch_1..5.bin,
/// test_batch.bin; 10,000 records of 3,073 bytes each). Pixels are scaled
/// to [0, 1]; inputs come out as [N x 3 x 32 x 32].
std::pair<Dataset, Dataset> load_cifar10_binary(const std::string& dir);

/// Record-level parser behind load_cifar10_binary, exposed for tests.
Dataset parse_cifar_records(const std::vector<std::uint8_t>& bytes, const std::string& origin);

/// Shuffles with the split seed and cuts once: first fraction -> "train",
/// rest -> "val".
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction,
                                          std::uint64_t split_seed);

/// Rows of `ds` selected by index, in the given order.
Dataset dataset_subset(const Dataset& ds, const std::vector<std::size_t>& indices,
                       const std::string& split_tag);

/// Writes "f0,f1,...,label" rows for desk inspection.
void dump_csv(const Dataset& ds, const std::string& path);

struct Batch {
    TensorPtr inputs;
    std::vector<int> labels;
};

/// One epoch of batches under a deterministic shuffle. The index
/// permutation partitions the dataset; the last partial batch is kept.
class BatchIter {
public:
    BatchIter(const Dataset& ds, std::size_t batch_size, std::uint64_t epoch_seed);

    std::optional<Batch> next();
    std::size_t batch_count() const;

private:
    const Dataset& ds_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

}  // namespace hkt::data
