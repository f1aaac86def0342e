#include "ncconv/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace ncconv {

std::string to_string(ElementType t) { return t == ElementType::F32 ? "float32" : "float64"; }

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(std::vector<unsigned char> data, std::string source)
      : data_(std::move(data)), source_(std::move(source)) {}

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw FormatError("checkpoint " + source_ + " truncated at byte " + std::to_string(pos_) +
                        " (needed " + std::to_string(n) + " more)");
    }
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  const std::string& source() const { return source_; }

 private:
  std::vector<unsigned char> data_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + file.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

ElementType read_header(Reader& r) {
  const std::string magic = r.str(sizeof(kCheckpointMagic));
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError("checkpoint " + r.source() + ": bad magic");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + r.source() + ": unsupported version " +
                      std::to_string(version));
  }
  const auto tag = r.le<std::uint32_t>();
  if (tag != 1 && tag != 2) {
    throw FormatError("checkpoint " + r.source() + ": unknown element type " + std::to_string(tag));
  }
  return static_cast<ElementType>(tag);
}

}  // namespace

template <typename T>
void write_checkpoint(const std::filesystem::path& file, const std::vector<NamedTensor<T>>& entries) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(element_type_of<T>()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.le<std::uint64_t>(d);
    for (T v : e.value.data()) w.le<Bits<T>>(std::bit_cast<Bits<T>>(v));
  }
  // Write to a sibling temp file, then rename, so readers never see a partial checkpoint.
  auto tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.buffer().data()),
              static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw FormatError("short write to checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

ElementType peek_checkpoint_element_type(const std::filesystem::path& file) {
  Reader r(slurp(file), file.string());
  return read_header(r);
}

template <typename T>
std::vector<NamedTensor<T>> read_checkpoint(const std::filesystem::path& file) {
  Reader r(slurp(file), file.string());
  const ElementType tag = read_header(r);
  if (tag != element_type_of<T>()) {
    throw FormatError("checkpoint " + file.string() + " holds " + to_string(tag) +
                      " parameters, but the model uses " + to_string(element_type_of<T>()));
  }
  const auto count = r.le<std::uint32_t>();
  std::vector<NamedTensor<T>> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor<T> e;
    e.name = r.str(r.le<std::uint32_t>());
    const auto rank = r.le<std::uint32_t>();
    if (rank > kMaxRank) throw FormatError("checkpoint " + file.string() + ": rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>());
    const std::size_t n = shape_size(shape);
    r.need(n * sizeof(T));
    std::vector<T> values(n);
    for (auto& v : values) v = std::bit_cast<T>(r.le<Bits<T>>());
    e.value = Tensor<T>(std::move(shape), std::move(values));
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError("checkpoint " + file.string() + ": trailing bytes");
  return entries;
}

template <typename T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& file,
                     const std::vector<NamedTensor<T>>& extra) {
  std::vector<NamedTensor<T>> entries;
  for (const auto& p : model.parameters()) entries.push_back({p.name, *p.value});
  entries.insert(entries.end(), extra.begin(), extra.end());
  write_checkpoint(file, entries);
}

template <typename T>
std::vector<NamedTensor<T>> load_checkpoint(Model<T>& model, const std::filesystem::path& file) {
  auto entries = read_checkpoint<T>(file);
  std::map<std::string, const Tensor<T>*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e.value;
  auto params = model.parameters();
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw FormatError("checkpoint " + file.string() + " lacks parameter " + p.name);
    }
    if (it->second->shape() != p.value->shape()) {
      throw FormatError("checkpoint " + file.string() + ": parameter " + p.name + " has shape " +
                        to_string(it->second->shape()) + ", model expects " +
                        to_string(p.value->shape()));
    }
  }
  for (const auto& p : params) {
    *p.value = *by_name[p.name];
    by_name.erase(p.name);
  }
  std::vector<NamedTensor<T>> rest;
  for (auto& e : entries)
    if (by_name.count(e.name)) rest.push_back(std::move(e));
  return rest;
}

#define NCCONV_INSTANTIATE(T)                                                                    \
  template void write_checkpoint<T>(const std::filesystem::path&, const std::vector<NamedTensor<T>>&); \
  template std::vector<NamedTensor<T>> read_checkpoint<T>(const std::filesystem::path&);         \
  template void save_checkpoint<T>(Model<T>&, const std::filesystem::path&,                       \
                                   const std::vector<NamedTensor<T>>&);                           \
  template std::vector<NamedTensor<T>> load_checkpoint<T>(Model<T>&, const std::filesystem::path&);

NCCONV_INSTANTIATE(float)
NCCONV_INSTANTIATE(double)
#undef NCCONV_INSTANTIATE

}  // namespace ncconv
