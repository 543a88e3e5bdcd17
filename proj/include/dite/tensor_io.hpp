#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "dite/tensor.hpp"

namespace dite {

// Tensor fixture files: four little-endian uint32 dims (n, c, h, w) followed
// by raw little-endian element data. Element width (4 or 8 bytes) is inferred
// from the file size. Used for cross-implementation differential fixtures.

static_assert(sizeof(float) == 4 && sizeof(double) == 8, "unexpected float widths");

namespace detail {
inline void require_le_host() {
    const std::uint32_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    if (b != 1) throw TensorError("tensor fixtures require a little-endian host");
}
}  // namespace detail

template <class T>
void write_tensor_file(const std::string& path, const Tensor<T>& t) {
    detail::require_le_host();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw TensorError("write_tensor_file: cannot open " + path);
    const std::uint32_t dims[4] = {static_cast<std::uint32_t>(t.shape.n),
                                   static_cast<std::uint32_t>(t.shape.c),
                                   static_cast<std::uint32_t>(t.shape.h),
                                   static_cast<std::uint32_t>(t.shape.w)};
    f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!f) throw TensorError("write_tensor_file: short write to " + path);
}

template <class T>
Tensor<T> read_tensor_file(const std::string& path) {
    detail::require_le_host();
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw TensorError("read_tensor_file: cannot open " + path);
    const std::int64_t file_size = static_cast<std::int64_t>(f.tellg());
    f.seekg(0);
    std::uint32_t dims[4];
    if (file_size < static_cast<std::int64_t>(sizeof(dims))) {
        throw TensorError("read_tensor_file: " + path + " too small for shape header");
    }
    f.read(reinterpret_cast<char*>(dims), sizeof(dims));
    Tensor<T> t(dims[0], dims[1], dims[2], dims[3]);
    const std::int64_t payload = file_size - static_cast<std::int64_t>(sizeof(dims));
    const std::int64_t numel = t.numel();
    if (payload == numel * 4) {
        std::vector<float> buf(static_cast<std::size_t>(numel));
        f.read(reinterpret_cast<char*>(buf.data()), payload);
        for (std::int64_t i = 0; i < numel; ++i) t.data[static_cast<std::size_t>(i)] = static_cast<T>(buf[static_cast<std::size_t>(i)]);
    } else if (payload == numel * 8) {
        std::vector<double> buf(static_cast<std::size_t>(numel));
        f.read(reinterpret_cast<char*>(buf.data()), payload);
        for (std::int64_t i = 0; i < numel; ++i) t.data[static_cast<std::size_t>(i)] = static_cast<T>(buf[static_cast<std::size_t>(i)]);
    } else {
        throw TensorError("read_tensor_file: " + path + " payload of " + std::to_string(payload) +
                          " bytes does not match shape " + t.shape.str());
    }
    if (!f) throw TensorError("read_tensor_file: short read from " + path);
    return t;
}

}  // namespace dite
