#include "eviseg/tensor_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace eviseg {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', '1'};
constexpr std::size_t kMaxRank = 8;

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("TNS1: truncated header");
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b, 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) {
        throw std::runtime_error("TNS1: truncated payload");
    }
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void write_tns1(const Tensor& t, std::ostream& os) {
    os.write(kMagic, 4);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) {
        if (d > std::numeric_limits<std::uint32_t>::max()) {
            throw std::invalid_argument("TNS1: dimension too large");
        }
        put_u32(os, static_cast<std::uint32_t>(d));
    }
    for (double v : t.values()) put_f64(os, v);
    if (!os) throw std::runtime_error("TNS1: write failed");
}

void write_tns1(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("TNS1: cannot open for write: " + path);
    write_tns1(t, os);
}

Tensor read_tns1(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("TNS1: bad magic");
    }
    const std::uint32_t rank = get_u32(is);
    if (rank > kMaxRank) {
        throw std::runtime_error("TNS1: implausible rank " + std::to_string(rank));
    }
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(is);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = get_f64(is);
    return Tensor::from(std::move(shape), std::move(data));
}

Tensor read_tns1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("TNS1: cannot open: " + path);
    return read_tns1(is);
}

}  // namespace eviseg
