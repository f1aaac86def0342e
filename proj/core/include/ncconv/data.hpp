#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ncconv/rng.hpp"
#include "ncconv/tensor.hpp"

namespace ncconv {

// Images are kept as N x C x H x W floats in [0, 1]. Per-channel statistics are computed
// at load time from the training split; when `normalize` is set they are applied as each
// batch is assembled, after augmentation (so zero-filled shift borders stay at 0 raw).
struct Dataset {
  std::string name;
  Tensor<float> images;
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::vector<float> channel_mean;
  std::vector<float> channel_std;
  bool normalize = false;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

inline constexpr std::size_t kCifarRecordsPerFile = 10000;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

// Reads data_batch_{1..5}.bin and test_batch.bin. Each file must hold exactly
// records_per_file records of 1 label byte + 3072 pixel bytes (R plane, G plane, B plane).
DatasetSplit load_cifar10(const std::filesystem::path& dir, bool normalize = true,
                          std::size_t records_per_file = kCifarRecordsPerFile);
Dataset read_cifar10_file(const std::filesystem::path& file, std::size_t expected_records);

// Reads {train,t10k}-{images-idx3,labels-idx1}-ubyte (big-endian IDX).
DatasetSplit load_mnist_idx(const std::filesystem::path& dir, bool normalize = true);

// Writers used to produce fixtures in the same byte formats.
void write_cifar10_file(const std::filesystem::path& file, const Dataset& ds);
void write_idx_images(const std::filesystem::path& file, const Tensor<float>& images);
void write_idx_labels(const std::filesystem::path& file, std::span<const int> labels);

// Fills channel_mean / channel_std from the dataset's own pixels.
void compute_channel_stats(Dataset& ds);

struct AugmentFlags {
  bool hflip = false;
  double shift_frac = 0.0;  // translate by up to floor(shift_frac * side) pixels per axis
};

// Per image: mirror with probability 1/2, then shift by integers drawn uniformly from
// [-floor(f*H), floor(f*H)] x [-floor(f*W), floor(f*W)], zero fill. Throws unless f in [0,1).
Tensor<float> augment(const Tensor<float>& batch, Rng& rng, const AugmentFlags& flags);
// Positive dx moves content right, positive dy moves it down.
void shift_image(std::span<float> image, std::size_t channels, std::size_t h, std::size_t w,
                 std::ptrdiff_t dy, std::ptrdiff_t dx);
void hflip_image(std::span<float> image, std::size_t channels, std::size_t h, std::size_t w);

// Exactly n_per_class samples of every class, chosen by seed, kept in source order.
Dataset subset(const Dataset& ds, std::size_t n_per_class, std::uint64_t seed);

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};

Batch gather(const Dataset& ds, std::span<const std::size_t> indices);

// Applies the dataset's normalization (if enabled) and converts to T.
template <typename T>
Tensor<T> prepare_inputs(const Tensor<float>& images, const Dataset& ds);

// Deterministic mini-batch order; the final short batch is kept.
class BatchIterator {
 public:
  BatchIterator(std::size_t count, std::size_t batch_size, bool shuffle, std::uint64_t seed);

  bool next(std::vector<std::size_t>& indices);
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

// Class-conditional Gaussian blobs around random prototypes in [0,1], clipped to [0,1].
// `separable` uses small noise so the classes are linearly separable.
Dataset synth_classification(std::size_t n, std::size_t classes, const Shape& sample_shape,
                             Rng& rng, bool separable);

}  // namespace ncconv
