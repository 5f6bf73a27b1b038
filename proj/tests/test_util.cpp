#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <set>

#include "seat/errors.hpp"
#include "seat/util.hpp"

namespace fs = std::filesystem;
using namespace seat;

TEST_CASE("fnv1a64 matches published reference vectors") {
    // Offset basis and the classic test strings from the FNV reference code.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("to_hex is fixed-width lowercase") {
    CHECK(to_hex(0) == "0000000000000000");
    CHECK(to_hex(0xdeadbeefull) == "00000000deadbeef");
    CHECK(to_hex(0xffffffffffffffffull) == "ffffffffffffffff");
}

TEST_CASE("splitmix64 reference value") {
    // First output of the public-domain splitmix64 stream seeded with 1234567,
    // recomputed independently with 64-bit python arithmetic.
    CHECK(splitmix64(1234567) == 0x599ed017fb08fc85ull);
    CHECK(splitmix64(0) == splitmix64(0));
    CHECK(splitmix64(1) != splitmix64(2));
}

TEST_CASE("derive_seed separates streams by label and index") {
    std::set<std::uint64_t> seen;
    seen.insert(derive_seed(7, "mask"));
    seen.insert(derive_seed(7, "shuffle"));
    seen.insert(derive_seed(7, "shuffle", 0));
    seen.insert(derive_seed(7, "shuffle", 1));
    seen.insert(derive_seed(8, "mask"));
    CHECK(seen.size() == 5);

    CHECK(derive_seed(7, "mask") == derive_seed(7, "mask"));
    CHECK(derive_seed(7, "perturb", 3) == derive_seed(7, "perturb", 3));
}

TEST_CASE("file round-trip and hash") {
    const fs::path p = fs::temp_directory_path() / "seat_util_test.bin";
    const std::string payload("binary\0payload", 14);
    write_file(p, payload);
    CHECK(read_file(p) == payload);
    CHECK(file_hash_hex(p) == hash_hex(payload));

    const std::vector<std::uint8_t> bytes{0, 1, 2, 255, 254};
    write_file(p, std::span<const std::uint8_t>(bytes));
    CHECK(read_file_bytes(p) == bytes);
    fs::remove(p);
}

TEST_CASE("read_file on a missing path throws StructuralError") {
    CHECK_THROWS_AS(read_file("/nonexistent/seat/nope.bin"), StructuralError);
}
