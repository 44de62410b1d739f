#pragma once

// Volume files are a pair: a JSON header (`.qvh`) and a raw little-endian
// payload (`.qvr`) in the same directory. Header example:
//
//   {"format": "qvol", "version": 1, "dims": [96, 96, 6],
//    "spacing": [0.8, 1.0, 3.0], "dtype": "float32",
//    "endianness": "little", "payload": "subject_00_tsl0.qvr"}
//
// dtype is one of float32 (default for images and maps), float64, uint8 (masks).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "t1rho/error.hpp"
#include "t1rho/volume.hpp"

namespace t1rho {

enum class DType { Float32, Float64, UInt8 };

namespace detail {

inline const char* dtype_tag(DType t) {
    switch (t) {
    case DType::Float32: return "float32";
    case DType::Float64: return "float64";
    case DType::UInt8: return "uint8";
    }
    return "float32";
}

inline DType parse_dtype(const std::string& tag) {
    if (tag == "float32") return DType::Float32;
    if (tag == "float64") return DType::Float64;
    if (tag == "uint8") return DType::UInt8;
    throw Error("unsupported dtype '" + tag + "'");
}

inline std::size_t dtype_size(DType t) {
    switch (t) {
    case DType::Float32: return 4;
    case DType::Float64: return 8;
    case DType::UInt8: return 1;
    }
    return 4;
}

template <typename T>
void put_le(std::vector<char>& buf, T value) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    buf.insert(buf.end(), bytes.begin(), bytes.end());
}

template <typename T>
T get_le(const char* p) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

inline std::filesystem::path header_path(std::filesystem::path p) {
    if (p.extension() != ".qvh") p += ".qvh";
    return p;
}

inline std::vector<char> read_all(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(bool(in), "cannot open " + p.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline nlohmann::json require_field(const nlohmann::json& j, const char* name) {
    require(j.is_object() && j.contains(name), std::string("missing field '") + name + "' in volume header");
    return j.at(name);
}

struct RawVolume {
    Dims dims;
    Spacing spacing;
    DType dtype;
    std::vector<double> values;
};

inline void write_raw(const std::filesystem::path& path, const Dims& dims, const Spacing& spacing, DType dtype,
                      std::span<const double> values) {
    const auto hdr = header_path(path);
    auto payload = hdr;
    payload.replace_extension(".qvr");

    std::vector<char> buf;
    buf.reserve(values.size() * dtype_size(dtype));
    for (double v : values) {
        require(std::isfinite(v), "non-finite voxel value cannot be saved");
        switch (dtype) {
        case DType::Float32: put_le(buf, static_cast<float>(v)); break;
        case DType::Float64: put_le(buf, v); break;
        case DType::UInt8: put_le(buf, static_cast<std::uint8_t>(v != 0.0)); break;
        }
    }

    nlohmann::ordered_json j;
    j["format"] = "qvol";
    j["version"] = 1;
    j["dims"] = {dims.nx, dims.ny, dims.nz};
    j["spacing"] = {spacing.sx, spacing.sy, spacing.sz};
    j["dtype"] = dtype_tag(dtype);
    j["endianness"] = "little";
    j["payload"] = payload.filename().string();

    if (hdr.has_parent_path()) std::filesystem::create_directories(hdr.parent_path());
    {
        std::ofstream out(hdr);
        require(bool(out), "cannot write " + hdr.string());
        out << j.dump(2) << '\n';
    }
    std::ofstream out(payload, std::ios::binary);
    require(bool(out), "cannot write " + payload.string());
    out.write(buf.data(), std::streamsize(buf.size()));
}

inline RawVolume read_raw(const std::filesystem::path& path) {
    const auto hdr = header_path(path);
    const auto text = read_all(hdr);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed volume header " + hdr.string() + ": " + e.what());
    }

    RawVolume raw;
    try {
        const auto d = require_field(j, "dims");
        const auto s = require_field(j, "spacing");
        require(d.is_array() && d.size() == 3 && s.is_array() && s.size() == 3, "malformed dims/spacing in header");
        raw.dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
        raw.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
        raw.dtype = parse_dtype(require_field(j, "dtype").get<std::string>());
        require(require_field(j, "endianness").get<std::string>() == "little", "unsupported endianness");
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed volume header: ") + e.what());
    }
    require(raw.dims.nx > 0 && raw.dims.ny > 0 && raw.dims.nz > 0, "non-positive dimension in header");

    auto payload = hdr.parent_path() / require_field(j, "payload").get<std::string>();
    const auto bytes = read_all(payload);
    const std::size_t width = dtype_size(raw.dtype);
    require(bytes.size() == raw.dims.count() * width,
            "payload size mismatch: expected " + std::to_string(raw.dims.count() * width) + " bytes, found " +
                std::to_string(bytes.size()));

    raw.values.resize(raw.dims.count());
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
        const char* p = bytes.data() + i * width;
        switch (raw.dtype) {
        case DType::Float32: raw.values[i] = get_le<float>(p); break;
        case DType::Float64: raw.values[i] = get_le<double>(p); break;
        case DType::UInt8: raw.values[i] = get_le<std::uint8_t>(p); break;
        }
        require(std::isfinite(raw.values[i]), "non-finite payload value at voxel " + std::to_string(i));
    }
    return raw;
}

} // namespace detail

inline void save_volume(const Volume3D& vol, const std::filesystem::path& path, DType dtype = DType::Float32) {
    detail::write_raw(path, vol.dims(), vol.spacing(), dtype, vol.data());
}

inline Volume3D load_volume(const std::filesystem::path& path) {
    auto raw = detail::read_raw(path);
    return Volume3D(raw.dims, raw.spacing, std::move(raw.values));
}

inline void save_mask(const RoiMask& roi, const std::filesystem::path& path, Spacing spacing = {}) {
    std::vector<double> values(roi.labels().begin(), roi.labels().end());
    detail::write_raw(path, roi.dims(), spacing, DType::UInt8, values);
}

inline RoiMask load_mask(const std::filesystem::path& path) {
    auto raw = detail::read_raw(path);
    RoiMask roi(raw.dims);
    for (std::size_t i = 0; i < raw.values.size(); ++i) roi.set(i, raw.values[i] != 0.0);
    return roi;
}

} // namespace t1rho
