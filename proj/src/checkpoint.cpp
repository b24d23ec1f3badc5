#include "mvhoi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace mvhoi {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'V', 'H', 'C'};

template <typename T>
void put(std::vector<char>& out, T v) {
    const char* p = reinterpret_cast<const char*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
    Reader(const std::vector<char>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return end_ - pos_; }

private:
    void need(std::size_t n) const {
        if (n > end_ - pos_) {
            throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated");
        }
    }
    const std::vector<char>& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

} // namespace

std::uint64_t fnv1a64(const char* data, std::size_t size) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= static_cast<std::uint8_t>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
    std::vector<char> out(kMagic, kMagic + 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        Index numel = 1;
        for (Index d : t.shape) {
            numel *= d;
        }
        if (numel != t.value.size()) {
            throw std::invalid_argument("tensor " + t.name + ": shape does not match value size");
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (Index d : t.shape) {
            put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        }
        for (Index i = 0; i < t.value.size(); ++i) {
            put<float>(out, static_cast<float>(t.value.data()[i]));
        }
    }
    put<std::uint64_t>(out, fnv1a64(out.data(), out.size()));
    return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes) {
    using Kind = CheckpointError::Kind;
    if (bytes.size() < 4 + 4 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CheckpointError(Kind::Header, "not a checkpoint: bad magic");
    }
    const std::size_t body = bytes.size() - 8;
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + body, 8);
    if (stored != fnv1a64(bytes.data(), body)) {
        throw CheckpointError(Kind::Checksum, "checkpoint checksum mismatch");
    }
    Reader r(bytes, body);
    r.str(4);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError(Kind::Version, "unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = r.get<std::uint32_t>();
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        std::uint64_t numel = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const auto d = r.get<std::uint64_t>();
            t.shape.push_back(static_cast<Index>(d));
            numel *= d;
        }
        if (numel * sizeof(float) > r.remaining()) {
            throw CheckpointError(Kind::Truncated, "tensor " + t.name + ": payload shorter than its dims");
        }
        const Index cols = t.shape.empty() ? 1 : t.shape.back();
        const Index rows = cols == 0 ? 0 : static_cast<Index>(numel) / cols;
        t.value.resize(rows, cols);
        for (Index j = 0; j < t.value.size(); ++j) {
            t.value.data()[j] = static_cast<double>(r.get<float>());
        }
        out.push_back(std::move(t));
    }
    if (r.remaining() != 0) {
        throw CheckpointError(Kind::Header, "trailing bytes after the last tensor");
    }
    return out;
}

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
    std::vector<NamedTensor> tensors;
    for (std::size_t i = 0; i < params.size(); ++i) {
        tensors.push_back({params.name(i), params[i].shape(), params[i].value()});
    }
    const auto bytes = encode_checkpoint(tensors);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError(CheckpointError::Kind::Io, "cannot read " + path.string());
    }
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

void restore(ParamStore& params, const std::vector<NamedTensor>& tensors) {
    using Kind = CheckpointError::Kind;
    if (tensors.size() != params.size()) {
        throw CheckpointError(Kind::Mismatch, "checkpoint holds " + std::to_string(tensors.size()) +
                                                  " tensors, model expects " + std::to_string(params.size()));
    }
    for (const auto& t : tensors) {
        if (!params.contains(t.name)) {
            throw CheckpointError(Kind::Mismatch, "checkpoint tensor " + t.name + " is not a model parameter");
        }
        Tensor& dst = params[t.name];
        if (dst.shape() != t.shape) {
            throw CheckpointError(Kind::Mismatch, "shape mismatch for " + t.name);
        }
        if (!t.value.allFinite()) {
            throw CheckpointError(Kind::Mismatch, "non-finite values in " + t.name);
        }
        dst.value() = t.value;
    }
}

} // namespace mvhoi
