#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"

namespace topkmip::raw_io {

/// Sidecar header path: "<payload>.json".
inline std::filesystem::path header_path(const std::filesystem::path& payload) {
    return std::filesystem::path(payload.string() + ".json");
}

inline std::uint32_t byteswap32(std::uint32_t x) {
    return (x >> 24) | ((x >> 8) & 0xFF00u) | ((x << 8) & 0xFF0000u) | (x << 24);
}

/// Write floats as little-endian IEEE-754 binary32.
inline void write_f32(const std::filesystem::path& path, std::span<const float> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw io_error("cannot open '" + path.string() + "' for writing");
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size_bytes()));
    } else {
        for (float f : data) {
            std::uint32_t bits = byteswap32(std::bit_cast<std::uint32_t>(f));
            out.write(reinterpret_cast<const char*>(&bits), 4);
        }
    }
    if (!out)
        throw io_error("write failed for '" + path.string() + "'");
}

/// Read exactly `expected` little-endian floats; anything else is a format error.
inline std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected) {
    std::error_code ec;
    auto bytes = std::filesystem::file_size(path, ec);
    if (ec)
        throw io_error("cannot stat '" + path.string() + "': " + ec.message());
    if (bytes != expected * 4)
        throw format_error("payload '" + path.string() + "' holds " + std::to_string(bytes) +
                           " bytes, header implies " + std::to_string(expected * 4));
    std::vector<float> data(expected);
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw io_error("cannot open '" + path.string() + "'");
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!in)
        throw io_error("read failed for '" + path.string() + "'");
    if constexpr (std::endian::native != std::endian::little) {
        for (float& f : data)
            f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
    }
    return data;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw io_error("missing header '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("malformed JSON in '" + path.string() + "': " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw io_error("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << '\n';
    if (!out)
        throw io_error("write failed for '" + path.string() + "'");
}

/// Checks the dtype/order tags every sidecar carries.
inline void check_payload_tags(const nlohmann::json& h, const std::filesystem::path& where) {
    std::string dtype = h.value("dtype", "f32");
    if (dtype != "f32")
        throw format_error("unknown dtype '" + dtype + "' in '" + where.string() + "'");
    std::string order = h.value("order", "little");
    if (order != "little")
        throw format_error("unsupported byte order '" + order + "' in '" + where.string() + "'");
}

} // namespace topkmip::raw_io
