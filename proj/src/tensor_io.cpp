#include "skipgraph/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace skipgraph {

namespace {

template <typename U>
void put_le(std::ostream& os, U v) {
    std::array<char, sizeof(U)> buf{};
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is) {
    std::array<unsigned char, sizeof(U)> buf{};
    is.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!is) throw IoError("ATNS: unexpected end of stream");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

} // namespace

template <Real T>
void write_atns(std::ostream& os, const Tensor<T>& t) {
    os.write("ATNS", 4);
    put_le<std::uint8_t>(os, kAtnsVersion);
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
    for (T v : t.data()) {
        if constexpr (std::same_as<T, float>)
            put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
        else
            put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw IoError("ATNS: write failed");
}

StoredTensor read_atns(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ATNS", 4) != 0) throw IoError("ATNS: bad magic");
    const auto version = get_le<std::uint8_t>(is);
    if (version != kAtnsVersion) throw IoError("ATNS: unsupported version " + std::to_string(version));
    const auto dtype = get_le<std::uint8_t>(is);
    if (dtype > 1) throw IoError("ATNS: unknown dtype " + std::to_string(dtype));
    const auto rank = get_le<std::uint32_t>(is);
    if (rank > 16) throw IoError("ATNS: implausible rank " + std::to_string(rank));
    StoredTensor st;
    st.dtype = static_cast<DType>(dtype);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto e = get_le<std::uint64_t>(is);
        if (e == 0 || e > (std::uint64_t{1} << 32)) throw IoError("ATNS: bad extent");
        st.shape.push_back(static_cast<std::size_t>(e));
        n *= static_cast<std::size_t>(e);
    }
    st.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (st.dtype == DType::f32)
            st.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(is));
        else
            st.values[i] = std::bit_cast<double>(get_le<std::uint64_t>(is));
    }
    return st;
}

template <Real T>
void save_atns(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_atns(os, t);
}

StoredTensor load_atns(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_atns(is);
}

const StoredTensor* NamedTensors::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

template <Real T>
void save_named(const std::filesystem::path& path, const std::vector<Parameter<T>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& p : tensors) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_atns(os, p.value);
    }
    if (!os) throw IoError("write failed: " + path.string());
}

NamedTensors load_named(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    NamedTensors out;
    const auto count = get_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get_le<std::uint32_t>(is);
        if (len > 4096) throw IoError("named tensor file: implausible name length");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw IoError("named tensor file: truncated name");
        out.entries.emplace_back(std::move(name), read_atns(is));
    }
    return out;
}

template void write_atns<float>(std::ostream&, const Tensor<float>&);
template void write_atns<double>(std::ostream&, const Tensor<double>&);
template void save_atns<float>(const std::filesystem::path&, const Tensor<float>&);
template void save_atns<double>(const std::filesystem::path&, const Tensor<double>&);
template void save_named<float>(const std::filesystem::path&, const std::vector<Parameter<float>>&);
template void save_named<double>(const std::filesystem::path&, const std::vector<Parameter<double>>&);

} // namespace skipgraph
