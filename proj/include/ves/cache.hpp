#pragma once

// VESC: a little-endian versioned binary container for token matrices,
// masks, and label blobs. Layout:
//
//   magic "VESC" | u32 version=1 | u32 dtype (1=f32, 2=f64) | u64 count
//   count * index entry: u64 offset | u64 rows | u64 cols | u8 mask | u64 label_len
//   payloads at offset: matrix data, then rows mask bytes if present,
//   then label bytes
//
// Offsets are absolute, strictly increasing, and bounds-checked before any
// payload byte is touched.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ves/matrix.hpp"

namespace ves {

struct CacheError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
struct CacheRecord {
    Matrix<T> matrix;
    std::optional<MaskVector> mask;
    std::string label;
};

namespace detail {

template <typename U>
void put(std::string& buf, U v) {
    char tmp[sizeof(U)];
    std::memcpy(tmp, &v, sizeof(U));
    buf.append(tmp, sizeof(U));
}

template <typename U>
U take(const std::string& buf, std::size_t& pos, const std::string& path) {
    if (pos + sizeof(U) > buf.size())
        throw CacheError("cache read out of bounds at byte " + std::to_string(pos) +
                         " in " + path);
    U v;
    std::memcpy(&v, buf.data() + pos, sizeof(U));
    pos += sizeof(U);
    return v;
}

template <typename T>
constexpr std::uint32_t dtype_code() {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8, "unsupported scalar width");
    return sizeof(T) == 4 ? 1u : 2u;
}

}  // namespace detail

template <typename T>
void write_cache(const std::vector<CacheRecord<T>>& records, const std::string& path) {
    if (records.empty())
        throw std::invalid_argument("write_cache: no records");

    std::string header;
    header.append("VESC", 4);
    detail::put<std::uint32_t>(header, 1);
    detail::put<std::uint32_t>(header, detail::dtype_code<T>());
    detail::put<std::uint64_t>(header, records.size());

    const std::size_t index_bytes = records.size() * (8 + 8 + 8 + 1 + 8);
    std::uint64_t offset = header.size() + index_bytes;

    std::string index, payload;
    for (const auto& r : records) {
        if (r.mask && r.mask->length() != r.matrix.rows)
            throw std::invalid_argument("write_cache: mask length != matrix rows");
        detail::put<std::uint64_t>(index, offset);
        detail::put<std::uint64_t>(index, r.matrix.rows);
        detail::put<std::uint64_t>(index, r.matrix.cols);
        detail::put<std::uint8_t>(index, r.mask ? 1 : 0);
        detail::put<std::uint64_t>(index, r.label.size());

        payload.append(reinterpret_cast<const char*>(r.matrix.data.data()),
                       r.matrix.size() * sizeof(T));
        if (r.mask)
            payload.append(reinterpret_cast<const char*>(r.mask->bits.data()),
                           r.mask->length());
        payload.append(r.label);
        offset += r.matrix.size() * sizeof(T) + (r.mask ? r.matrix.rows : 0) + r.label.size();
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw CacheError("cannot open for writing: " + path);
    f.write(header.data(), header.size());
    f.write(index.data(), index.size());
    f.write(payload.data(), payload.size());
    if (!f)
        throw CacheError("write failed at byte " +
                         std::to_string(header.size() + index.size() + payload.size()) +
                         " in " + path);
}

template <typename T>
std::vector<CacheRecord<T>> read_cache(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw CacheError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    std::size_t pos = 0;
    if (buf.size() < 4 || buf.compare(0, 4, "VESC") != 0)
        throw CacheError("bad magic in " + path);
    pos = 4;
    const auto version = detail::take<std::uint32_t>(buf, pos, path);
    if (version != 1)
        throw CacheError("unsupported version " + std::to_string(version) + " in " + path);
    const auto dtype = detail::take<std::uint32_t>(buf, pos, path);
    if (dtype != detail::dtype_code<T>())
        throw CacheError("dtype code " + std::to_string(dtype) +
                         " does not match requested precision in " + path);
    const auto count = detail::take<std::uint64_t>(buf, pos, path);
    // the full index must fit in the file; rejects absurd counts before reserve
    if (count > (buf.size() - pos) / 33)
        throw CacheError("record count " + std::to_string(count) +
                         " exceeds file size in " + path);

    struct Entry { std::uint64_t offset, rows, cols, label_len; bool mask; };
    std::vector<Entry> entries;
    entries.reserve(count);
    std::uint64_t prev_offset = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        Entry e;
        e.offset = detail::take<std::uint64_t>(buf, pos, path);
        e.rows = detail::take<std::uint64_t>(buf, pos, path);
        e.cols = detail::take<std::uint64_t>(buf, pos, path);
        e.mask = detail::take<std::uint8_t>(buf, pos, path) != 0;
        e.label_len = detail::take<std::uint64_t>(buf, pos, path);
        if (i > 0 && e.offset <= prev_offset)
            throw CacheError("offsets not strictly increasing at record " +
                             std::to_string(i) + " in " + path);
        prev_offset = e.offset;
        entries.push_back(e);
    }

    std::vector<CacheRecord<T>> records;
    records.reserve(count);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Entry& e = entries[i];
        // overflow-safe size check: the declared element count must fit in
        // the file before any arithmetic that could wrap
        if ((e.cols != 0 && e.rows > buf.size() / e.cols / sizeof(T)) ||
            e.rows > buf.size() || e.label_len > buf.size())
            throw CacheError("record " + std::to_string(i) + " payload out of bounds in " +
                             path);
        const std::uint64_t mat_bytes = e.rows * e.cols * sizeof(T);
        const std::uint64_t total = mat_bytes + (e.mask ? e.rows : 0) + e.label_len;
        if (e.offset > buf.size() || total > buf.size() - e.offset)
            throw CacheError("record " + std::to_string(i) + " payload out of bounds in " +
                             path);
        CacheRecord<T> r;
        r.matrix = Matrix<T>(e.rows, e.cols);
        std::memcpy(r.matrix.data.data(), buf.data() + e.offset, mat_bytes);
        std::size_t p = e.offset + mat_bytes;
        if (e.mask) {
            MaskVector m(e.rows, 0);
            std::memcpy(m.bits.data(), buf.data() + p, e.rows);
            for (auto b : m.bits)
                if (b > 1)
                    throw CacheError("record " + std::to_string(i) +
                                     " mask byte not 0/1 in " + path);
            r.mask = std::move(m);
            p += e.rows;
        }
        r.label.assign(buf.data() + p, e.label_len);
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace ves
