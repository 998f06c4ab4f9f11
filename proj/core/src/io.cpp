#include "dlspf/io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dlspf/errors.hpp"

namespace dlspf::io {

namespace {

constexpr char kTensorMagic[4] = {'L', 'T', 'S', 'F'};
constexpr char kCheckpointMagic[4] = {'L', 'T', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw IoError("unexpected end of stream");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
}

void put_string(std::ostream& out, const std::string& s) {
    if (s.size() > 0xFFFF) throw IoError("string too long for u16 length prefix");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    const std::uint16_t n = get_le<std::uint16_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw IoError("unexpected end of stream");
    return s;
}

}  // namespace

void write_tensor(std::ostream& out, const ad::Tensor& t) {
    out.write(kTensorMagic, 4);
    put_le<std::uint32_t>(out, kFormatVersion);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
    if (t.rank() > 255) throw IoError("tensor rank exceeds format limit");
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) put_le<std::uint64_t>(out, e);
    if (t.dtype() == ad::Dtype::f32) {
        for (double v : t.value()) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_le<std::uint32_t>(out, bits);
        }
    } else {
        for (double v : t.value()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            put_le<std::uint64_t>(out, bits);
        }
    }
    if (!out) throw IoError("tensor write failed");
}

ad::Tensor read_tensor(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kTensorMagic, 4) != 0)
        throw IoError("not a tensor file (bad magic)");
    const std::uint32_t version = get_le<std::uint32_t>(in);
    if (version != kFormatVersion)
        throw IoError("unsupported tensor format version " + std::to_string(version));
    const std::uint8_t dtype_code = get_le<std::uint8_t>(in);
    if (dtype_code > 1) throw IoError("unknown dtype code");
    const ad::Dtype dtype = static_cast<ad::Dtype>(dtype_code);
    const std::uint8_t ndim = get_le<std::uint8_t>(in);
    ad::Shape shape(ndim);
    for (auto& e : shape) e = get_le<std::uint64_t>(in);
    ad::Tensor t(shape, dtype, false);
    if (dtype == ad::Dtype::f32) {
        for (double& v : t.value()) {
            const std::uint32_t bits = get_le<std::uint32_t>(in);
            float f;
            std::memcpy(&f, &bits, 4);
            v = static_cast<double>(f);
        }
    } else {
        for (double& v : t.value()) {
            const std::uint64_t bits = get_le<std::uint64_t>(in);
            std::memcpy(&v, &bits, 8);
        }
    }
    return t;
}

void write_tensor_file(const std::string& path, const ad::Tensor& t) {
    std::ostringstream buf(std::ios::binary);
    write_tensor(buf, t);
    atomic_write_file(path, buf.str());
}

ad::Tensor read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file: " + path);
    return read_tensor(in);
}

const ad::Tensor& Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw IoError("checkpoint has no tensor named '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

void Checkpoint::add(const std::string& name, const ad::Tensor& t) {
    if (contains(name)) throw IoError("duplicate checkpoint tensor name '" + name + "'");
    tensors.emplace_back(name, t);
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    out.write(kCheckpointMagic, 4);
    put_le<std::uint32_t>(out, kFormatVersion);
    put_string(out, ckpt.model_kind);
    put_string(out, ckpt.config_hash);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_string(out, name);
        write_tensor(out, t);
    }
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("not a checkpoint file (bad magic)");
    const std::uint32_t version = get_le<std::uint32_t>(in);
    if (version != kFormatVersion)
        throw IoError("unsupported checkpoint format version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.model_kind = get_string(in);
    ckpt.config_hash = get_string(in);
    const std::uint32_t count = get_le<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = get_string(in);
        ckpt.add(name, read_tensor(in));
    }
    return ckpt;
}

void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
    std::ostringstream buf(std::ios::binary);
    write_checkpoint(buf, ckpt);
    atomic_write_file(path, buf.str());
}

Checkpoint read_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint file: " + path);
    return read_checkpoint(in);
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for write: " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("rename failed for " + path);
    }
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace dlspf::io
