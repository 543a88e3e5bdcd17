#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "dite/network.hpp"

namespace dite {

// Weight checkpoints: named parameter tensors in a flat binary file.
//
//   magic   8 bytes  "DITEWT01"
//   u32     element size in bytes (4 = float32, 8 = float64)
//   u32     tensor count
//   per tensor:
//     u32       name length
//     bytes     name (UTF-8, no terminator)
//     4 x u32   shape (n, c, h, w)
//     data      n*c*h*w elements, little-endian
//
// Tensors appear in model traversal order and include normalization running
// statistics. Loading matches strictly by name and shape.

inline constexpr char kCheckpointMagic[8] = {'D', 'I', 'T', 'E', 'W', 'T', '0', '1'};

template <class T>
void save_checkpoint(Model<T>& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw TensorError("save_checkpoint: cannot open " + path);
    std::uint32_t count = 0;
    model.visit([&](const std::string&, Tensor<T>&, bool) { ++count; });
    f.write(kCheckpointMagic, 8);
    const std::uint32_t elem = sizeof(T);
    f.write(reinterpret_cast<const char*>(&elem), 4);
    f.write(reinterpret_cast<const char*>(&count), 4);
    model.visit([&](const std::string& name, Tensor<T>& t, bool) {
        const std::uint32_t len = static_cast<std::uint32_t>(name.size());
        f.write(reinterpret_cast<const char*>(&len), 4);
        f.write(name.data(), len);
        const std::uint32_t dims[4] = {
            static_cast<std::uint32_t>(t.shape.n), static_cast<std::uint32_t>(t.shape.c),
            static_cast<std::uint32_t>(t.shape.h), static_cast<std::uint32_t>(t.shape.w)};
        f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    });
    if (!f) throw TensorError("save_checkpoint: short write to " + path);
}

template <class T>
void load_checkpoint(Model<T>& model, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw TensorError("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw TensorError("load_checkpoint: " + path + " is not a checkpoint file");
    }
    std::uint32_t elem = 0, count = 0;
    f.read(reinterpret_cast<char*>(&elem), 4);
    f.read(reinterpret_cast<char*>(&count), 4);
    if (elem != sizeof(T)) {
        throw TensorError("load_checkpoint: element size " + std::to_string(elem) +
                          " does not match model precision " + std::to_string(sizeof(T)));
    }
    std::map<std::string, Tensor<T>> loaded;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t len = 0;
        f.read(reinterpret_cast<char*>(&len), 4);
        std::string name(len, '\0');
        f.read(name.data(), len);
        std::uint32_t dims[4];
        f.read(reinterpret_cast<char*>(dims), sizeof(dims));
        Tensor<T> t(dims[0], dims[1], dims[2], dims[3]);
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(T)));
        if (!f) throw TensorError("load_checkpoint: truncated file " + path);
        loaded.emplace(std::move(name), std::move(t));
    }
    model.visit([&](const std::string& name, Tensor<T>& t, bool) {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            throw TensorError("load_checkpoint: missing tensor '" + name + "'");
        }
        if (it->second.shape != t.shape) {
            throw TensorError("load_checkpoint: tensor '" + name + "' shape " +
                              it->second.shape.str() + " != model " + t.shape.str());
        }
        t = it->second;
    });
}

}  // namespace dite
