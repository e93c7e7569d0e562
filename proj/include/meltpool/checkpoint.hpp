#pragma once

// Single-file checkpoint:
//   "MPCKPT\r\n" | u64 manifest length | manifest JSON |
//   u64 payload length | payload (f32 LE per parameter, manifest order) | u32 crc32(payload)

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "meltpool/io.hpp"
#include "meltpool/models.hpp"

namespace meltpool {

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'M', 'P', 'C', 'K', 'P', 'T', '\r', '\n'};

struct Checkpoint {
    Model<float> model;
    nlohmann::json metadata;
};

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(U) > in.size()) throw ChecksumError("checkpoint truncated");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(U);
    return v;
}

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = ::crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Model<float>& model, const nlohmann::json& metadata = nlohmann::json::object()) {
    nlohmann::json params = nlohmann::json::array();
    std::string payload;
    for (const auto& p : model.parameters().items()) {
        params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"trainable", p.trainable}});
        for (float v : p.tensor.values()) detail::put_le(payload, std::bit_cast<std::uint32_t>(v));
    }
    const nlohmann::json manifest{{"format_version", kCheckpointVersion},
                                  {"model", to_json_value(model.spec())},
                                  {"parameters", params},
                                  {"metadata", metadata}};
    const std::string text = manifest.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_le<std::uint64_t>(out, text.size());
    out += text;
    detail::put_le<std::uint64_t>(out, payload.size());
    out += payload;
    detail::put_le(out, detail::crc32_of(payload.data(), payload.size()));
    return out;
}

inline void save_checkpoint(const Model<float>& model, const std::filesystem::path& path,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
    write_file_atomic(path, serialize_checkpoint(model, metadata));
}

/// Checks run in order: container/version, checksum, parameter table against
/// the rebuilt architecture. Nothing is returned unless all pass.
inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
        if (bytes.size() < sizeof kCheckpointMagic) throw ChecksumError("checkpoint truncated");
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    std::size_t pos = sizeof kCheckpointMagic;
    const auto manifest_len = detail::get_le<std::uint64_t>(bytes, pos);
    if (manifest_len > bytes.size() - pos) throw ChecksumError("checkpoint truncated inside manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(pos, manifest_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("unreadable checkpoint manifest: ") + e.what());
    }
    pos += manifest_len;

    const int version = manifest.value("format_version", -1);
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    }

    const auto payload_len = detail::get_le<std::uint64_t>(bytes, pos);
    if (payload_len > bytes.size() - pos || bytes.size() - pos - payload_len != 4) {
        throw ChecksumError("checkpoint truncated or padded: payload does not match its declared length");
    }
    const char* payload = bytes.data() + pos;
    pos += payload_len;
    const auto stored = detail::get_le<std::uint32_t>(bytes, pos);
    if (stored != detail::crc32_of(payload, payload_len)) throw ChecksumError("checkpoint checksum mismatch");

    Model<float> model(model_spec_from_json(manifest.at("model")));
    const auto& table = manifest.at("parameters");
    const auto& items = model.parameters().items();
    if (table.size() != items.size()) {
        throw CheckpointShapeError("checkpoint lists " + std::to_string(table.size()) + " parameters, architecture has " +
                                   std::to_string(items.size()));
    }
    std::size_t expected_bytes = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto name = table[i].at("name").get<std::string>();
        const auto shape = table[i].at("shape").get<Shape>();
        if (name != items[i].name) {
            throw CheckpointShapeError("checkpoint parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                                       items[i].name + "'");
        }
        if (shape != items[i].tensor.shape()) {
            throw CheckpointShapeError("parameter '" + name + "' has shape " + to_string(shape) +
                                       " in the checkpoint but the architecture needs " + to_string(items[i].tensor.shape()));
        }
        expected_bytes += 4 * items[i].tensor.size();
    }
    if (expected_bytes != payload_len) {
        throw CheckpointShapeError("payload holds " + std::to_string(payload_len / 4) + " values, parameters need " +
                                   std::to_string(expected_bytes / 4));
    }

    std::size_t off = 0;
    const std::string body(payload, payload_len);
    for (const auto& p : items) {
        Tensor<float> t = p.tensor;
        for (auto& v : t.mutable_values()) v = std::bit_cast<float>(detail::get_le<std::uint32_t>(body, off));
    }
    return {std::move(model), manifest.value("metadata", nlohmann::json::object())};
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace meltpool
