#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "skipgraph/parameters.hpp"

namespace skipgraph {

/// ATNS binary tensor layout, all little-endian:
///   "ATNS" | u8 version | u8 dtype (0 = f32, 1 = f64) | u32 rank |
///   u64 extent × rank | payload
inline constexpr std::uint8_t kAtnsVersion = 1;

/// A tensor read back from disk, kept in its stored precision.
struct StoredTensor {
    DType dtype = DType::f64;
    Shape shape;
    std::vector<double> values;

    template <Real T>
    Tensor<T> as() const {
        std::vector<T> v(values.begin(), values.end());
        return Tensor<T>(shape, std::move(v));
    }
};

template <Real T>
void write_atns(std::ostream& os, const Tensor<T>& t);
StoredTensor read_atns(std::istream& is);

template <Real T>
void save_atns(const std::filesystem::path& path, const Tensor<T>& t);
StoredTensor load_atns(const std::filesystem::path& path);

/// Named tensor container: u32 count, then per entry u32 name length, name
/// bytes, and one ATNS record.
struct NamedTensors {
    std::vector<std::pair<std::string, StoredTensor>> entries;
    const StoredTensor* find(const std::string& name) const;
};

template <Real T>
void save_named(const std::filesystem::path& path, const std::vector<Parameter<T>>& tensors);
NamedTensors load_named(const std::filesystem::path& path);

} // namespace skipgraph
