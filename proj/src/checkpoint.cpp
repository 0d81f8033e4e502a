#include "dat/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dat {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kMaxDim = 1u << 28;

template <typename U>
void write_le(std::ofstream& f, U v) {
    unsigned char buf[sizeof(U)];
    for (size_t i = 0; i < sizeof(U); ++i) buf[i] = (unsigned char)((v >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::ifstream& f, const std::string& path) {
    unsigned char buf[sizeof(U)];
    f.read(reinterpret_cast<char*>(buf), sizeof(U));
    if (size_t(f.gcount()) != sizeof(U)) throw std::runtime_error(path + ": truncated checkpoint");
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= U(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(path + ": cannot open for writing");
    f.write(kMagic, 8);
    write_le<uint32_t>(f, uint32_t(tensors.size()));
    for (auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw std::invalid_argument("checkpoint: tensor name too long");
        write_le<uint16_t>(f, uint16_t(name.size()));
        f.write(name.data(), std::streamsize(name.size()));
        if (t->shape.size() > 255) throw std::invalid_argument("checkpoint: rank too large");
        unsigned char rank = (unsigned char)t->shape.size();
        f.write(reinterpret_cast<char*>(&rank), 1);
        for (int d : t->shape) {
            if (d <= 0 || uint32_t(d) > kMaxDim)
                throw std::invalid_argument("checkpoint: dimension overflow in " + name);
            write_le<uint32_t>(f, uint32_t(d));
        }
        static_assert(sizeof(float) == 4);
        f.write(reinterpret_cast<const char*>(t->value.data()),
                std::streamsize(t->value.size() * 4));
    }
    if (!f) throw std::runtime_error(path + ": write failed");
}

NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(path + ": cannot open");
    char magic[8];
    f.read(magic, 8);
    if (f.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error(path + ": not a DATCKPT1 checkpoint (magic mismatch)");
    const uint32_t count = read_le<uint32_t>(f, path);
    NamedTensors out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t nlen = read_le<uint16_t>(f, path);
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        if (f.gcount() != nlen) throw std::runtime_error(path + ": truncated tensor name");
        unsigned char rank = 0;
        f.read(reinterpret_cast<char*>(&rank), 1);
        if (f.gcount() != 1) throw std::runtime_error(path + ": truncated rank");
        Shape shape(rank);
        long n = 1;
        for (int r = 0; r < rank; ++r) {
            const uint32_t d = read_le<uint32_t>(f, path);
            if (d == 0 || d > kMaxDim)
                throw std::runtime_error(path + ": dimension overflow in tensor '" + name + "'");
            shape[size_t(r)] = int(d);
            n *= d;
        }
        auto t = make_tensor<float>(rank ? shape : Shape{1});
        if (rank == 0) n = 1;
        t->shape = shape;
        t->value.resize(size_t(n));
        f.read(reinterpret_cast<char*>(t->value.data()), std::streamsize(size_t(n) * 4));
        if (size_t(f.gcount()) != size_t(n) * 4)
            throw std::runtime_error(path + ": truncated payload for tensor '" + name + "'");
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace dat
