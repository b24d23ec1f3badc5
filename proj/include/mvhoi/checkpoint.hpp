#pragma once

#include "mvhoi/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvhoi {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { Io, Header, Version, Checksum, Truncated, Mismatch };
    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct NamedTensor {
    std::string name;
    std::vector<Index> shape;
    Matrix value;
};

// "MVHC", u32 version, u32 tensor count, then per tensor: u32 name length,
// name bytes, u32 rank, u64 dims, f32 data; all little-endian, followed by
// the u64 FNV-1a hash of every preceding byte.
std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);
// Copies loaded values into a store with the same names and shapes.
void restore(ParamStore& params, const std::vector<NamedTensor>& tensors);

std::uint64_t fnv1a64(const char* data, std::size_t size);

} // namespace mvhoi
