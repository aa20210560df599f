#include "lacoat/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lacoat/errors.hpp"

namespace lacoat::io {

namespace {

constexpr char kModelMagic[8] = {'L', 'A', 'C', 'O', 'A', 'T', 'M', '1'};

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
}

}  // namespace

void append_f32_le(std::string& out, std::span<const float> values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t le = to_le(std::bit_cast<std::uint32_t>(values[i]));
        std::memcpy(out.data() + start + i * 4, &le, 4);
    }
}

std::vector<float> parse_f32_le(std::string_view bytes) {
    if (bytes.size() % 4 != 0) {
        throw LoadError("float32 block length " + std::to_string(bytes.size()) +
                        " is not a multiple of 4");
    }
    std::vector<float> values(bytes.size() / 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t raw;
        std::memcpy(&raw, bytes.data() + i * 4, 4);
        values[i] = std::bit_cast<float>(to_le(raw));
    }
    return values;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw LoadError("cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

void save_model_file(const std::filesystem::path& path, const ModelFile& model) {
    const std::string header = model.header.dump();
    std::string out(kModelMagic, sizeof(kModelMagic));
    std::uint64_t len = header.size();
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((len >> (8 * i)) & 0xffu));
    }
    out += header;
    append_f32_le(out, model.payload);
    write_file(path, out);
}

ModelFile load_model_file(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kModelMagic, 8) != 0) {
        throw LoadError(path.string() + ": not a model file (bad magic)");
    }
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) {
        len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    }
    if (len > bytes.size() - 16) {
        throw LoadError(path.string() + ": header length exceeds file size");
    }
    ModelFile model;
    try {
        model.header = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path.string() + ": bad header: " + e.what());
    }
    model.payload = parse_f32_le(std::string_view(bytes).substr(16 + len));
    return model;
}

std::string dump_json(const nlohmann::json& value) {
    return value.dump(2) + "\n";
}

}  // namespace lacoat::io
