#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <limits>

#include "seat/checkpoint.hpp"
#include "seat/errors.hpp"
#include "seat/util.hpp"

namespace fs = std::filesystem;
using namespace seat;

namespace {

ModelCheckpoint sample_checkpoint() {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.context_len = 6;
    cfg.vocab_size = 11;
    cfg.seed = 3;
    ModelCheckpoint ckpt;
    ckpt.config = cfg;
    ckpt.params = init_params(cfg);
    ckpt.step = 42;
    ckpt.provenance = {"pretrain", "", "00000000deadbeef"};
    return ckpt;
}

fs::path tmp_file(const char* name) { return fs::temp_directory_path() / name; }

}  // namespace

TEST_CASE("round-trip is byte-identical") {
    const ModelCheckpoint a = sample_checkpoint();
    const fs::path p = tmp_file("seat_ckpt_rt.ckpt");
    save_checkpoint(a, p);
    const ModelCheckpoint b = load_checkpoint(p);

    CHECK(b.config == a.config);
    CHECK(b.step == a.step);
    CHECK(b.provenance.method == a.provenance.method);
    CHECK(b.provenance.parent == a.provenance.parent);
    CHECK(b.provenance.corpus == a.provenance.corpus);

    const auto bytes_a = checkpoint_bytes(a);
    const auto bytes_b = checkpoint_bytes(b);
    CHECK(bytes_a == bytes_b);
    CHECK(checkpoint_hash(a) == checkpoint_hash(b));

    // Re-saving the loaded model writes identical bytes on disk.
    const fs::path p2 = tmp_file("seat_ckpt_rt2.ckpt");
    save_checkpoint(b, p2);
    CHECK(read_file(p) == read_file(p2));
    fs::remove(p);
    fs::remove(p2);
}

TEST_CASE("serialized header starts with magic and version") {
    const auto bytes = checkpoint_bytes(sample_checkpoint());
    REQUIRE(bytes.size() > 20);
    CHECK(std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0);
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 8, 4);
    CHECK(version == kCheckpointVersion);
}

TEST_CASE("corrupted magic is rejected") {
    const ModelCheckpoint a = sample_checkpoint();
    const fs::path p = tmp_file("seat_ckpt_bad_magic.ckpt");
    auto bytes = checkpoint_bytes(a);
    bytes[0] = 'X';
    write_file(p, std::span<const std::uint8_t>(bytes));
    CHECK_THROWS_AS(load_checkpoint(p), StructuralError);
    fs::remove(p);
}

TEST_CASE("unsupported version is rejected") {
    auto bytes = checkpoint_bytes(sample_checkpoint());
    bytes[8] = 99;
    const fs::path p = tmp_file("seat_ckpt_bad_ver.ckpt");
    write_file(p, std::span<const std::uint8_t>(bytes));
    CHECK_THROWS_AS(load_checkpoint(p), StructuralError);
    fs::remove(p);
}

TEST_CASE("truncated payload is rejected") {
    auto bytes = checkpoint_bytes(sample_checkpoint());
    bytes.resize(bytes.size() - 5);
    const fs::path p = tmp_file("seat_ckpt_trunc.ckpt");
    write_file(p, std::span<const std::uint8_t>(bytes));
    CHECK_THROWS_AS(load_checkpoint(p), StructuralError);
    fs::remove(p);
}

TEST_CASE("garbage header json is rejected") {
    auto bytes = checkpoint_bytes(sample_checkpoint());
    // Stomp the first header byte (after magic+version+length = 20 bytes).
    bytes[20] = '!';
    const fs::path p = tmp_file("seat_ckpt_bad_json.ckpt");
    write_file(p, std::span<const std::uint8_t>(bytes));
    CHECK_THROWS_AS(load_checkpoint(p), StructuralError);
    fs::remove(p);
}

TEST_CASE("non-finite parameter values are rejected at load") {
    ModelCheckpoint a = sample_checkpoint();
    a.params.tok_emb.data[5] = std::numeric_limits<float>::infinity();
    const fs::path p = tmp_file("seat_ckpt_inf.ckpt");
    save_checkpoint(a, p);
    CHECK_THROWS_AS(load_checkpoint(p), StructuralError);
    fs::remove(p);
}

TEST_CASE("reading a missing file is a structural error") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/seat/model.ckpt"), StructuralError);
}

TEST_CASE("checkpoint hash tracks content") {
    ModelCheckpoint a = sample_checkpoint();
    ModelCheckpoint b = sample_checkpoint();
    CHECK(checkpoint_hash(a) == checkpoint_hash(b));
    b.params.unembed.data[0] += 1.0f;
    CHECK(checkpoint_hash(a) != checkpoint_hash(b));
    b = sample_checkpoint();
    b.step = 43;
    CHECK(checkpoint_hash(a) != checkpoint_hash(b));
}

TEST_CASE("config json survives a round trip") {
    const ModelConfig cfg = sample_checkpoint().config;
    const auto j = to_json(cfg);
    CHECK(model_config_from_json(j, "test") == cfg);

    auto missing = j;
    missing.erase("d_model");
    CHECK_THROWS_AS(model_config_from_json(missing, "test"), StructuralError);
}
