#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace lacoat::io {

// Raw little-endian float32 blocks, independent of host byte order.
void append_f32_le(std::string& out, std::span<const float> values);
std::vector<float> parse_f32_le(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Model container: 8-byte magic, u64 LE header length, UTF-8 JSON header, f32 LE payload.
struct ModelFile {
    nlohmann::json header;
    std::vector<float> payload;
};

void save_model_file(const std::filesystem::path& path, const ModelFile& model);
ModelFile load_model_file(const std::filesystem::path& path);

// Stable text rendering of a JSON value (2-space indent, trailing newline).
std::string dump_json(const nlohmann::json& value);

}  // namespace lacoat::io
