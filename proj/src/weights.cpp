#include "dualstyle/weights.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include <json.hpp>
#include <zlib.h>

#include "dualstyle/errors.hpp"

namespace dualstyle {

namespace {

using json = nlohmann::json;

constexpr std::array<std::string_view, 4> kArchitectures = {
    "toy-unet-v1", "toy-embed-v1", "toy-features-v1", "toy-aesthetic-v1"};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t payload_crc32(std::span<const std::uint8_t> payload) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
    return static_cast<std::uint32_t>(crc);
}

std::size_t product(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

}  // namespace

std::size_t NamedTensor::element_count() const noexcept { return product(shape); }

std::span<const std::string_view> registered_architectures() noexcept { return kArchitectures; }

void WeightBundle::add(std::string name, std::vector<int> shape, std::vector<float> values) {
    if (contains(name)) throw CorruptWeightsError("duplicate tensor '" + name + "'");
    if (shape.empty() || std::any_of(shape.begin(), shape.end(), [](int d) { return d <= 0; })) {
        throw CorruptWeightsError("tensor '" + name + "' has a non-positive dimension");
    }
    if (product(shape) != values.size()) {
        throw CorruptWeightsError("tensor '" + name + "' holds " + std::to_string(values.size()) +
                                  " values for a shape of " + std::to_string(product(shape)));
    }
    tensors_.push_back({std::move(name), std::move(shape), std::move(values)});
}

bool WeightBundle::contains(const std::string& name) const noexcept {
    return std::any_of(tensors_.begin(), tensors_.end(),
                       [&](const NamedTensor& t) { return t.name == name; });
}

const NamedTensor& WeightBundle::get(const std::string& name) const {
    for (const auto& t : tensors_) {
        if (t.name == name) return t;
    }
    throw CorruptWeightsError("missing tensor '" + name + "' in " + architecture + " weights");
}

const NamedTensor& WeightBundle::expect(const std::string& name, std::span<const int> shape) const {
    const NamedTensor& t = get(name);
    if (!std::equal(t.shape.begin(), t.shape.end(), shape.begin(), shape.end())) {
        std::string want;
        for (int d : shape) want += (want.empty() ? "" : "x") + std::to_string(d);
        throw CorruptWeightsError("tensor '" + name + "' has unexpected shape, want " + want);
    }
    return t;
}

std::string WeightBundle::attribute(const std::string& key) const {
    auto it = attributes.find(key);
    if (it == attributes.end()) {
        throw CorruptWeightsError("missing attribute '" + key + "' in " + architecture + " weights");
    }
    return it->second;
}

std::vector<std::uint8_t> WeightBundle::serialize() const {
    json header;
    header["architecture"] = architecture;
    header["attributes"] = attributes;
    header["embed_width"] = embed_width;
    json list = json::array();
    std::size_t offset = 0;
    for (const auto& t : tensors_) {
        list.push_back({{"name", t.name}, {"offset", offset}, {"shape", t.shape}});
        offset += t.values.size() * sizeof(float);
    }
    header["tensors"] = std::move(list);

    std::vector<std::uint8_t> payload;
    payload.reserve(offset);
    for (const auto& t : tensors_) {
        for (float f : t.values) put_u32(payload, std::bit_cast<std::uint32_t>(f));
    }
    header["payload_crc32"] = payload_crc32(payload);
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kWeightMagic, kWeightMagic + 4);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

WeightBundle WeightBundle::deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0) {
        throw FormatError("not a DSW1 weight file (bad magic)");
    }
    const std::size_t header_len = get_u32(bytes.data() + 4);
    if (header_len > bytes.size() - 8) throw CorruptWeightsError("header runs past end of file");
    const auto* text = reinterpret_cast<const char*>(bytes.data() + 8);

    json header;
    try {
        header = json::parse(text, text + header_len);
    } catch (const json::exception& e) {
        throw FormatError(std::string("unreadable weight header: ") + e.what());
    }

    WeightBundle bundle;
    std::size_t payload_len = 0;
    try {
        bundle.architecture = header.at("architecture").get<std::string>();
        bundle.embed_width = header.at("embed_width").get<int>();
        bundle.attributes = header.value("attributes", std::map<std::string, std::string>{});
        if (std::find(kArchitectures.begin(), kArchitectures.end(), bundle.architecture) ==
            kArchitectures.end()) {
            throw FormatError("unknown architecture '" + bundle.architecture + "'");
        }
        const std::uint8_t* payload = bytes.data() + 8 + header_len;
        payload_len = bytes.size() - 8 - header_len;
        const auto crc = header.at("payload_crc32").get<std::uint32_t>();
        if (crc != payload_crc32({payload, payload_len})) {
            throw CorruptWeightsError("payload checksum mismatch");
        }
        std::size_t expected_offset = 0;
        for (const auto& entry : header.at("tensors")) {
            auto name = entry.at("name").get<std::string>();
            auto shape = entry.at("shape").get<std::vector<int>>();
            const auto offset = entry.at("offset").get<std::size_t>();
            if (offset != expected_offset) {
                throw CorruptWeightsError("tensor '" + name + "' is not contiguous in the payload");
            }
            if (shape.empty() || std::any_of(shape.begin(), shape.end(), [](int d) { return d <= 0; })) {
                throw CorruptWeightsError("tensor '" + name + "' has a non-positive dimension");
            }
            const std::size_t count = product(shape);
            if (offset + count * sizeof(float) > payload_len) {
                throw CorruptWeightsError("payload truncated inside tensor '" + name + "'");
            }
            std::vector<float> values(count);
            for (std::size_t i = 0; i < count; ++i) {
                values[i] = std::bit_cast<float>(get_u32(payload + offset + i * sizeof(float)));
            }
            expected_offset = offset + count * sizeof(float);
            bundle.add(std::move(name), std::move(shape), std::move(values));
        }
        if (expected_offset != payload_len) {
            throw CorruptWeightsError("payload has " + std::to_string(payload_len - expected_offset) +
                                      " trailing bytes");
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed weight header: ") + e.what());
    }
    for (const auto& t : bundle.tensors()) {
        for (float f : t.values) {
            if (!std::isfinite(f)) throw CorruptWeightsError("non-finite value in '" + t.name + "'");
        }
    }
    return bundle;
}

WeightBundle read_weight_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weight file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return WeightBundle::deserialize(bytes);
}

void write_weight_file(const WeightBundle& bundle, const std::filesystem::path& path) {
    const auto bytes = bundle.serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write weight file " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace dualstyle
