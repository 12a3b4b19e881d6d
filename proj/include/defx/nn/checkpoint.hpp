#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "defx/nn/matrix.hpp"

namespace defx::nn {

/// Binary checkpoint: magic line, parameter count, then per parameter
/// (u32 name length, name bytes, u64 rows, u64 cols, rows*cols IEEE doubles).
/// All integers and doubles are little-endian.
inline constexpr std::string_view checkpoint_magic = "DEFX-CHECKPOINT v1\n";

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError(path + ": truncated checkpoint");
    return v;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, std::span<const Param* const> params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path);
    out.write(checkpoint_magic.data(), static_cast<std::streamsize>(checkpoint_magic.size()));
    detail::write_pod<std::uint64_t>(out, params.size());
    for (const Param* p : params) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        detail::write_pod<std::uint64_t>(out, p->value.rows());
        detail::write_pod<std::uint64_t>(out, p->value.cols());
        out.write(reinterpret_cast<const char*>(p->value.data().data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) throw DataError("failed writing checkpoint " + path);
}

inline std::map<std::string, Matrix> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    std::string magic(checkpoint_magic.size(), '\0');
    if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != checkpoint_magic)
        throw DataError(path + ": not a checkpoint (bad magic)");
    const auto count = detail::read_pod<std::uint64_t>(in, path);
    std::map<std::string, Matrix> table;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = detail::read_pod<std::uint32_t>(in, path);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw DataError(path + ": truncated checkpoint");
        const auto rows = detail::read_pod<std::uint64_t>(in, path);
        const auto cols = detail::read_pod<std::uint64_t>(in, path);
        Matrix m(rows, cols);
        if (!in.read(reinterpret_cast<char*>(m.data().data()),
                     static_cast<std::streamsize>(m.size() * sizeof(double))))
            throw DataError(path + ": truncated checkpoint at " + name);
        if (!table.emplace(name, std::move(m)).second) throw DataError(path + ": duplicate parameter " + name);
    }
    return table;
}

/// Overwrites each parameter's value from the table; every parameter must be
/// present with a matching shape.
inline void load_checkpoint(const std::string& path, std::span<Param* const> params) {
    auto table = read_checkpoint(path);
    for (Param* p : params) {
        auto it = table.find(p->name);
        if (it == table.end()) throw DataError(path + ": missing parameter " + p->name);
        if (!it->second.same_shape(p->value))
            throw DataError(path + ": parameter " + p->name + " has shape " + it->second.shape_string() +
                            ", expected " + p->value.shape_string());
        p->value = std::move(it->second);
        p->grad = Matrix(p->value.rows(), p->value.cols());
    }
}

} // namespace defx::nn
