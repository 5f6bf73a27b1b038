#include "seat/util.hpp"

#include <fstream>
#include <sstream>

#include "seat/errors.hpp"

namespace seat {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
    return splitmix64(seed ^ fnv1a64(label));
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index) {
    return splitmix64(derive_seed(seed, label) ^ splitmix64(index));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) {
        throw StructuralError("cannot open file for reading: " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) {
        throw StructuralError("read failed: " + path.string());
    }
    return ss.str();
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    const std::string s = read_file(path);
    return {s.begin(), s.end()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) {
        throw StructuralError("cannot open file for writing: " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.good()) {
        throw StructuralError("write failed: " + path.string());
    }
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    write_file(path,
               std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string file_hash_hex(const std::filesystem::path& path) { return hash_hex(read_file(path)); }

}  // namespace seat
