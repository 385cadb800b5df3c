#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dualstyle {

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;

    std::size_t element_count() const noexcept;
};

/// Named float32 tensors plus the architecture tag they belong to.
///
/// On disk ("DSW1"):
///   bytes 0..3   ASCII "DSW1"
///   bytes 4..7   header length N, uint32 little-endian
///   next N bytes UTF-8 JSON header, compact, keys sorted:
///                {"architecture":S,"attributes":{S:S,...},"embed_width":I,
///                 "payload_crc32":I,
///                 "tensors":[{"name":S,"offset":I,"shape":[I,...]},...]}
///                offsets are in bytes from the start of the payload; the
///                checksum is zlib's CRC-32 of the whole payload
///   payload      every tensor's values as little-endian float32, contiguous,
///                in header order
class WeightBundle {
public:
    std::string architecture;
    int embed_width = 0;
    std::map<std::string, std::string> attributes;

    void add(std::string name, std::vector<int> shape, std::vector<float> values);
    bool contains(const std::string& name) const noexcept;
    const NamedTensor& get(const std::string& name) const;
    /// Fetches a tensor and checks its shape; CorruptWeightsError otherwise.
    const NamedTensor& expect(const std::string& name, std::span<const int> shape) const;
    const std::vector<NamedTensor>& tensors() const noexcept { return tensors_; }
    std::string attribute(const std::string& key) const;

    std::vector<std::uint8_t> serialize() const;
    static WeightBundle deserialize(std::span<const std::uint8_t> bytes);

private:
    std::vector<NamedTensor> tensors_;
};

inline constexpr char kWeightMagic[4] = {'D', 'S', 'W', '1'};

/// Architectures a weight file may declare.
std::span<const std::string_view> registered_architectures() noexcept;

WeightBundle read_weight_file(const std::filesystem::path& path);
void write_weight_file(const WeightBundle& bundle, const std::filesystem::path& path);

}  // namespace dualstyle
