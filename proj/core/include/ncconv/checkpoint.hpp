#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ncconv/model.hpp"

namespace ncconv {

// Binary checkpoint, all integers little-endian:
//   magic "NCCONVCK" (8 bytes) | u32 version (1) | u32 element type (1 = f32, 2 = f64)
//   | u32 entry count | per entry: u32 name length, name bytes, u32 rank, u64 extents[rank],
//   raw little-endian IEEE-754 values (product of extents of them).
inline constexpr char kCheckpointMagic[8] = {'N', 'C', 'C', 'O', 'N', 'V', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ElementType : std::uint32_t { F32 = 1, F64 = 2 };

template <typename T>
constexpr ElementType element_type_of();
template <>
constexpr ElementType element_type_of<float>() { return ElementType::F32; }
template <>
constexpr ElementType element_type_of<double>() { return ElementType::F64; }

std::string to_string(ElementType t);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

template <typename T>
void write_checkpoint(const std::filesystem::path& file, const std::vector<NamedTensor<T>>& entries);

// Parses the whole file before returning. Throws FormatError on bad magic, version,
// truncation, or an element type other than T (no implicit conversion).
template <typename T>
std::vector<NamedTensor<T>> read_checkpoint(const std::filesystem::path& file);

ElementType peek_checkpoint_element_type(const std::filesystem::path& file);

// Parameters are stored under their ParamRef names; `extra` entries are appended.
template <typename T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& file,
                     const std::vector<NamedTensor<T>>& extra = {});

// Every model parameter must be present with a matching shape, otherwise nothing is
// modified. Returns the entries that are not model parameters.
template <typename T>
std::vector<NamedTensor<T>> load_checkpoint(Model<T>& model, const std::filesystem::path& file);

}  // namespace ncconv
