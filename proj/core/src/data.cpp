#include "ncconv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ncconv {

namespace fs = std::filesystem;

Shape Dataset::sample_shape() const {
  if (images.rank() < 2) return {};
  return Shape(images.shape().begin() + 1, images.shape().end());
}

namespace {

std::vector<unsigned char> read_all(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void write_all(const fs::path& file, const std::vector<unsigned char>& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + file.string());
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v >> 24));
  b.push_back(static_cast<unsigned char>(v >> 16));
  b.push_back(static_cast<unsigned char>(v >> 8));
  b.push_back(static_cast<unsigned char>(v));
}

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

Dataset concat(std::vector<Dataset> parts, std::string name) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Shape shape{total};
  const Shape sample = parts.front().sample_shape();
  shape.insert(shape.end(), sample.begin(), sample.end());
  std::vector<float> pixels;
  pixels.reserve(shape_size(shape));
  Dataset out;
  out.name = std::move(name);
  out.class_count = parts.front().class_count;
  for (auto& p : parts) {
    pixels.insert(pixels.end(), p.images.values().begin(), p.images.values().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.images = Tensor<float>(shape, std::move(pixels));
  return out;
}

void share_stats(DatasetSplit& split, bool normalize) {
  compute_channel_stats(split.train);
  split.test.channel_mean = split.train.channel_mean;
  split.test.channel_std = split.train.channel_std;
  split.train.normalize = split.test.normalize = normalize;
}

}  // namespace

Dataset read_cifar10_file(const fs::path& file, std::size_t expected_records) {
  const auto bytes = read_all(file);
  const std::size_t expected = expected_records * kCifarRecordBytes;
  if (bytes.size() != expected) {
    throw FormatError("CIFAR-10 file " + file.string() + ": expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  Dataset ds;
  ds.name = "cifar10";
  ds.class_count = 10;
  ds.labels.resize(expected_records);
  std::vector<float> pixels(expected_records * (kCifarRecordBytes - 1));
  for (std::size_t r = 0; r < expected_records; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError("CIFAR-10 file " + file.string() + ": record " + std::to_string(r) +
                        " has label " + std::to_string(rec[0]));
    }
    ds.labels[r] = rec[0];
    float* dst = pixels.data() + r * (kCifarRecordBytes - 1);
    for (std::size_t i = 0; i + 1 < kCifarRecordBytes; ++i) dst[i] = rec[1 + i] / 255.0f;
  }
  ds.images = Tensor<float>({expected_records, 3, 32, 32}, std::move(pixels));
  return ds;
}

DatasetSplit load_cifar10(const fs::path& dir, bool normalize, std::size_t records_per_file) {
  std::vector<Dataset> train_parts;
  for (int i = 1; i <= 5; ++i) {
    train_parts.push_back(
        read_cifar10_file(dir / ("data_batch_" + std::to_string(i) + ".bin"), records_per_file));
  }
  DatasetSplit split{concat(std::move(train_parts), "cifar10-train"),
                     read_cifar10_file(dir / "test_batch.bin", records_per_file)};
  split.test.name = "cifar10-test";
  share_stats(split, normalize);
  return split;
}

namespace {

Tensor<float> read_idx_images(const fs::path& file) {
  const auto b = read_all(file);
  if (b.size() < 16) throw FormatError("IDX images " + file.string() + ": truncated header");
  const auto magic = read_be32(b, 0);
  if (magic != 0x00000803) {
    throw FormatError("IDX images " + file.string() + ": bad magic " + std::to_string(magic));
  }
  const std::size_t n = read_be32(b, 4), h = read_be32(b, 8), w = read_be32(b, 12);
  const std::size_t expected = 16 + n * h * w;
  if (b.size() != expected) {
    throw FormatError("IDX images " + file.string() + ": expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(b.size()));
  }
  std::vector<float> pixels(n * h * w);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = b[16 + i] / 255.0f;
  return Tensor<float>({n, 1, h, w}, std::move(pixels));
}

std::vector<int> read_idx_labels(const fs::path& file) {
  const auto b = read_all(file);
  if (b.size() < 8) throw FormatError("IDX labels " + file.string() + ": truncated header");
  const auto magic = read_be32(b, 0);
  if (magic != 0x00000801) {
    throw FormatError("IDX labels " + file.string() + ": bad magic " + std::to_string(magic));
  }
  const std::size_t n = read_be32(b, 4);
  if (b.size() != 8 + n) {
    throw FormatError("IDX labels " + file.string() + ": expected " + std::to_string(8 + n) +
                      " bytes, found " + std::to_string(b.size()));
  }
  return std::vector<int>(b.begin() + 8, b.end());
}

Dataset read_mnist_pair(const fs::path& images, const fs::path& labels, std::string name) {
  Dataset ds;
  ds.name = std::move(name);
  ds.images = read_idx_images(images);
  ds.labels = read_idx_labels(labels);
  if (ds.labels.size() != ds.images.dim(0)) {
    throw FormatError("MNIST " + images.string() + ": " + std::to_string(ds.images.dim(0)) +
                      " images but " + std::to_string(ds.labels.size()) + " labels");
  }
  ds.class_count = 10;
  for (int l : ds.labels)
    if (l > 9) throw FormatError("MNIST " + labels.string() + ": label " + std::to_string(l));
  return ds;
}

}  // namespace

DatasetSplit load_mnist_idx(const fs::path& dir, bool normalize) {
  DatasetSplit split{
      read_mnist_pair(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte",
                      "mnist-train"),
      read_mnist_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte",
                      "mnist-test")};
  share_stats(split, normalize);
  return split;
}

void write_cifar10_file(const fs::path& file, const Dataset& ds) {
  if (ds.images.rank() != 4 || ds.sample_shape() != Shape{3, 32, 32}) {
    throw DimensionError("CIFAR-10 writer needs N x 3 x 32 x 32 images, got " +
                         to_string(ds.images.shape()));
  }
  std::vector<unsigned char> bytes;
  bytes.reserve(ds.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    bytes.push_back(static_cast<unsigned char>(ds.labels[r]));
    for (float v : ds.images.slice(r)) bytes.push_back(to_byte(v));
  }
  write_all(file, bytes);
}

void write_idx_images(const fs::path& file, const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw DimensionError("IDX writer needs N x 1 x H x W images, got " + to_string(images.shape()));
  }
  std::vector<unsigned char> bytes;
  put_be32(bytes, 0x00000803);
  put_be32(bytes, static_cast<std::uint32_t>(images.dim(0)));
  put_be32(bytes, static_cast<std::uint32_t>(images.dim(2)));
  put_be32(bytes, static_cast<std::uint32_t>(images.dim(3)));
  for (float v : images.data()) bytes.push_back(to_byte(v));
  write_all(file, bytes);
}

void write_idx_labels(const fs::path& file, std::span<const int> labels) {
  std::vector<unsigned char> bytes;
  put_be32(bytes, 0x00000801);
  put_be32(bytes, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) bytes.push_back(static_cast<unsigned char>(l));
  write_all(file, bytes);
}

void compute_channel_stats(Dataset& ds) {
  const std::size_t n = ds.images.dim(0), c = ds.images.dim(1);
  const std::size_t plane = ds.images.size() / std::max<std::size_t>(1, n * c);
  ds.channel_mean.assign(c, 0.0f);
  ds.channel_std.assign(c, 1.0f);
  if (n == 0 || plane == 0) return;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = ds.images.data().data() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum += p[j];
        sq += static_cast<double>(p[j]) * p[j];
      }
    }
    const double count = static_cast<double>(n * plane);
    const double mean = sum / count;
    const double var = std::max(0.0, sq / count - mean * mean);
    ds.channel_mean[ch] = static_cast<float>(mean);
    ds.channel_std[ch] = static_cast<float>(var > 0.0 ? std::sqrt(var) : 1.0);
  }
}

void hflip_image(std::span<float> image, std::size_t channels, std::size_t h, std::size_t w) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < h; ++y) {
      float* row = image.data() + (c * h + y) * w;
      std::reverse(row, row + w);
    }
}

void shift_image(std::span<float> image, std::size_t channels, std::size_t h, std::size_t w,
                 std::ptrdiff_t dy, std::ptrdiff_t dx) {
  if (dy == 0 && dx == 0) return;
  std::vector<float> src(image.begin(), image.end());
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        const std::ptrdiff_t sy = y - dy, sx = x - dx;
        image[(c * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] =
            (sy < 0 || sy >= H || sx < 0 || sx >= W)
                ? 0.0f
                : src[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
}

Tensor<float> augment(const Tensor<float>& batch, Rng& rng, const AugmentFlags& flags) {
  if (!(flags.shift_frac >= 0.0 && flags.shift_frac < 1.0)) {
    throw ConfigError("augment: shift_frac must be in [0, 1)");
  }
  if (batch.rank() != 4) throw DimensionError("augment expects N x C x H x W");
  Tensor<float> out = batch;
  const std::size_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const auto max_dy = static_cast<std::int64_t>(std::floor(flags.shift_frac * static_cast<double>(h)));
  const auto max_dx = static_cast<std::int64_t>(std::floor(flags.shift_frac * static_cast<double>(w)));
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    auto img = out.slice(n);
    if (flags.hflip && rng.bernoulli(0.5)) hflip_image(img, c, h, w);
    if (max_dy > 0 || max_dx > 0) {
      const auto dy = rng.uniform_int(-max_dy, max_dy);
      const auto dx = rng.uniform_int(-max_dx, max_dx);
      shift_image(img, c, h, w, dy, dx);
    }
  }
  return out;
}

Dataset subset(const Dataset& ds, std::size_t n_per_class, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < n_per_class) {
      throw ConfigError("subset: class " + std::to_string(c) + " has " +
                        std::to_string(idx.size()) + " samples, " + std::to_string(n_per_class) +
                        " requested");
    }
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const auto j = i + rng.uniform_index(idx.size() - i);
      std::swap(idx[i], idx[j]);
      chosen.push_back(idx[i]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  Batch b = gather(ds, chosen);
  Dataset out;
  out.name = ds.name;
  out.images = std::move(b.images);
  out.labels = std::move(b.labels);
  out.class_count = ds.class_count;
  out.channel_mean = ds.channel_mean;
  out.channel_std = ds.channel_std;
  out.normalize = ds.normalize;
  return out;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  Shape shape{indices.size()};
  const Shape sample = ds.sample_shape();
  shape.insert(shape.end(), sample.begin(), sample.end());
  Batch b{Tensor<float>(shape), {}};
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = ds.images.slice(indices[i]);
    std::copy(src.begin(), src.end(), b.images.slice(i).begin());
    b.labels.push_back(ds.labels.at(indices[i]));
  }
  return b;
}

template <typename T>
Tensor<T> prepare_inputs(const Tensor<float>& images, const Dataset& ds) {
  Tensor<T> out(images.shape());
  if (!ds.normalize || images.rank() != 4) {
    for (std::size_t i = 0; i < images.size(); ++i) out[i] = static_cast<T>(images[i]);
    return out;
  }
  const std::size_t n = images.dim(0), c = images.dim(1), plane = images.dim(2) * images.dim(3);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float mean = ds.channel_mean.at(ch), inv = 1.0f / ds.channel_std.at(ch);
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) out[off + j] = static_cast<T>((images[off + j] - mean) * inv);
    }
  return out;
}

template Tensor<float> prepare_inputs<float>(const Tensor<float>&, const Dataset&);
template Tensor<double> prepare_inputs<double>(const Tensor<float>&, const Dataset&);

BatchIterator::BatchIterator(std::size_t count, std::size_t batch_size, bool shuffle,
                             std::uint64_t seed)
    : order_(count), batch_size_(batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle && count > 1) {
    Rng rng(seed);
    for (std::size_t i = count - 1; i > 0; --i) std::swap(order_[i], order_[rng.uniform_index(i + 1)]);
  }
}

bool BatchIterator::next(std::vector<std::size_t>& indices) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                 order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return true;
}

std::size_t BatchIterator::batch_count() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

Dataset synth_classification(std::size_t n, std::size_t classes, const Shape& sample_shape,
                             Rng& rng, bool separable) {
  if (classes == 0) throw ConfigError("synth_classification: classes must be positive");
  const std::size_t dim = shape_size(sample_shape);
  std::vector<std::vector<float>> prototypes(classes, std::vector<float>(dim));
  for (auto& p : prototypes)
    for (auto& v : p) v = static_cast<float>(rng.uniform());
  const double noise = separable ? 0.05 : 0.35;

  Shape shape{n};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Dataset ds;
  ds.name = "synthetic";
  ds.class_count = classes;
  ds.images = Tensor<float>(shape);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    ds.labels[i] = static_cast<int>(label);
    auto img = ds.images.slice(i);
    for (std::size_t j = 0; j < dim; ++j)
      img[j] = std::clamp(static_cast<float>(prototypes[label][j] + noise * rng.normal()), 0.0f, 1.0f);
  }
  compute_channel_stats(ds);
  return ds;
}

}  // namespace ncconv
