#include "seat/checkpoint.hpp"

#include <cstring>
#include <unordered_map>

#include "seat/util.hpp"

namespace seat {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<std::uint8_t> container_bytes(const Container& c) {
    const std::string header = c.header.dump();
    std::vector<std::uint8_t> out;
    out.reserve(20 + header.size() + c.payload.size());
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
    put_u32(out, c.version);
    put_u64(out, static_cast<std::uint64_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), c.payload.begin(), c.payload.end());
    return out;
}

Container parse_container(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 20) {
        throw StructuralError(origin + ": truncated container (" + std::to_string(bytes.size()) +
                              " bytes)");
    }
    if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw StructuralError(origin + ": bad magic, not a checkpoint container");
    }
    Container c;
    c.version = get_u32(bytes.data() + 8);
    if (c.version != kCheckpointVersion) {
        throw StructuralError(origin + ": unsupported container version " +
                              std::to_string(c.version));
    }
    const std::uint64_t hlen = get_u64(bytes.data() + 12);
    if (20 + hlen > bytes.size()) {
        throw StructuralError(origin + ": header length exceeds file size");
    }
    const char* hbegin = reinterpret_cast<const char*>(bytes.data() + 20);
    try {
        c.header = nlohmann::json::parse(hbegin, hbegin + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(origin + ": malformed header JSON: " + e.what());
    }
    c.payload.assign(bytes.begin() + 20 + static_cast<std::ptrdiff_t>(hlen), bytes.end());
    return c;
}

Container read_container(const std::filesystem::path& path) {
    return parse_container(read_file_bytes(path), path.string());
}

nlohmann::json to_json(const ModelConfig& c) {
    return nlohmann::json{{"n_layers", c.n_layers},       {"d_model", c.d_model},
                          {"n_heads", c.n_heads},         {"d_ff", c.d_ff},
                          {"context_len", c.context_len}, {"vocab_size", c.vocab_size},
                          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& origin) {
    ModelConfig c;
    try {
        c.n_layers = j.at("n_layers").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.d_ff = j.at("d_ff").get<int>();
        c.context_len = j.at("context_len").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(origin + ": bad model config: " + e.what());
    }
    return c;
}

nlohmann::json to_json(const Provenance& p) {
    return nlohmann::json{{"method", p.method}, {"parent", p.parent}, {"corpus", p.corpus}};
}

Provenance provenance_from_json(const nlohmann::json& j) {
    Provenance p;
    p.method = j.value("method", std::string{});
    p.parent = j.value("parent", std::string{});
    p.corpus = j.value("corpus", std::string{});
    return p;
}

std::vector<std::uint8_t> checkpoint_bytes(const ModelCheckpoint& ckpt) {
    Container c;
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<std::uint8_t> payload;
    std::uint64_t offset = 0;
    for_each_param(ckpt.params, [&](const std::string& name, const TensorT<float>& t) {
        tensors.push_back({{"name", name}, {"shape", t.shape}, {"byte_offset", offset}});
        const std::size_t nbytes = t.size() * sizeof(float);
        const auto* src = reinterpret_cast<const std::uint8_t*>(t.ptr());
        payload.insert(payload.end(), src, src + nbytes);
        offset += nbytes;
    });
    c.header = nlohmann::json{{"config", to_json(ckpt.config)},
                              {"step", ckpt.step},
                              {"provenance", to_json(ckpt.provenance)},
                              {"tensors", std::move(tensors)}};
    c.payload = std::move(payload);
    return container_bytes(c);
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
    write_file(path, checkpoint_bytes(ckpt));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string origin = path.string();
    Container c = read_container(path);
    if (!c.header.contains("config") || !c.header.contains("tensors")) {
        throw StructuralError(origin + ": header missing config or tensors");
    }
    ModelCheckpoint ckpt;
    ckpt.config = model_config_from_json(c.header["config"], origin);
    validate(ckpt.config);
    ckpt.step = c.header.value("step", 0);
    if (c.header.contains("provenance")) {
        ckpt.provenance = provenance_from_json(c.header["provenance"]);
    }
    ckpt.params = make_params<float>(ckpt.config);

    struct Entry {
        std::vector<std::size_t> shape;
        std::uint64_t byte_offset = 0;
    };
    std::unordered_map<std::string, Entry> entries;
    for (const auto& t : c.header["tensors"]) {
        Entry e;
        try {
            e.shape = t.at("shape").get<std::vector<std::size_t>>();
            e.byte_offset = t.at("byte_offset").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& ex) {
            throw StructuralError(origin + ": bad tensor entry: " + ex.what());
        }
        const std::string name = t.at("name").get<std::string>();
        if (!entries.emplace(name, std::move(e)).second) {
            throw StructuralError(origin + ": duplicate tensor " + name);
        }
    }

    std::size_t consumed = 0;
    for_each_param(ckpt.params, [&](const std::string& name, TensorT<float>& t) {
        auto it = entries.find(name);
        if (it == entries.end()) {
            throw StructuralError(origin + ": missing tensor " + name);
        }
        if (it->second.shape != t.shape) {
            throw StructuralError(origin + ": shape mismatch for tensor " + name);
        }
        const std::size_t nbytes = t.size() * sizeof(float);
        if (it->second.byte_offset + nbytes > c.payload.size()) {
            throw StructuralError(origin + ": tensor " + name + " extends past end of payload");
        }
        std::memcpy(t.ptr(), c.payload.data() + it->second.byte_offset, nbytes);
        if (!all_finite(std::span<const float>(t.data))) {
            throw StructuralError(origin + ": non-finite values in tensor " + name);
        }
        consumed += nbytes;
        entries.erase(it);
    });
    if (!entries.empty()) {
        throw StructuralError(origin + ": unexpected extra tensor " + entries.begin()->first);
    }
    if (consumed != c.payload.size()) {
        throw StructuralError(origin + ": payload size does not match tensor table");
    }
    return ckpt;
}

std::string checkpoint_hash(const ModelCheckpoint& ckpt) {
    const auto bytes = checkpoint_bytes(ckpt);
    return hash_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace seat
