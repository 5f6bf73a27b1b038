#include "seat/sparsity.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include "seat/checkpoint.hpp"
#include "seat/util.hpp"

namespace seat {

std::string to_string(MaskStrategy s) {
    return s == MaskStrategy::random ? "random" : "magnitude";
}

MaskStrategy mask_strategy_from_string(const std::string& s) {
    if (s == "random") return MaskStrategy::random;
    if (s == "magnitude") return MaskStrategy::magnitude;
    throw ValidationError("unknown mask strategy: " + s);
}

std::size_t maskable_count(const ModelConfig& cfg) {
    auto p = make_params<std::uint8_t>(cfg);
    std::size_t n = 0;
    for_each_param(p, [&](const std::string&, const TensorT<std::uint8_t>& t) {
        if (is_maskable(t.shape)) n += t.size();
    });
    return n;
}

std::size_t trainable_count(const SparseMask& mask) {
    std::size_t n = 0;
    for_each_param(mask.bits, [&](const std::string&, const TensorT<std::uint8_t>& t) {
        if (!is_maskable(t.shape)) return;
        for (auto b : t.data) n += b;
    });
    return n;
}

namespace {

// Floor quotas plus remainder seats by largest fractional part; earlier
// tensors win ties so the split is deterministic.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes, std::size_t k) {
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    std::vector<std::size_t> quota(sizes.size(), 0);
    if (total == 0 || k == 0) return quota;
    std::vector<double> frac(sizes.size(), 0.0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const double exact =
            static_cast<double>(k) * static_cast<double>(sizes[i]) / static_cast<double>(total);
        quota[i] = static_cast<std::size_t>(exact);
        quota[i] = std::min(quota[i], sizes[i]);
        frac[i] = exact - static_cast<double>(quota[i]);
        assigned += quota[i];
    }
    std::vector<std::size_t> order(sizes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t pos = 0; assigned < k; pos = (pos + 1) % order.size()) {
        const std::size_t i = order[pos];
        if (quota[i] < sizes[i]) {
            ++quota[i];
            ++assigned;
        }
    }
    return quota;
}

}  // namespace

SparseMask build_mask(const ModelConfig& cfg, const Params& params, double ratio,
                      MaskStrategy strategy, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw ValidationError("mask ratio must lie in [0,1], got " + std::to_string(ratio));
    }
    SparseMask mask;
    mask.config = cfg;
    mask.bits = make_params<std::uint8_t>(cfg);
    mask.ratio = ratio;
    mask.strategy = strategy;
    mask.seed = seed;

    // Non-maskable tensors stay trainable.
    for_each_param(mask.bits, [&](const std::string&, TensorT<std::uint8_t>& t) {
        if (!is_maskable(t.shape)) std::fill(t.data.begin(), t.data.end(), std::uint8_t{1});
    });

    std::vector<TensorT<std::uint8_t>*> bits;
    std::vector<const TensorT<float>*> values;
    std::vector<std::size_t> sizes;
    for_each_param(mask.bits, [&](const std::string&, TensorT<std::uint8_t>& t) {
        if (is_maskable(t.shape)) {
            bits.push_back(&t);
            sizes.push_back(t.size());
        }
    });
    for_each_param(params, [&](const std::string&, const TensorT<float>& t) {
        if (is_maskable(t.shape)) values.push_back(&t);
    });
    if (values.size() != bits.size()) {
        throw StructuralError("build_mask: parameter layout does not match config");
    }
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    const auto k = static_cast<std::size_t>(
        std::llround((1.0 - ratio) * static_cast<double>(total)));

    if (strategy == MaskStrategy::random) {
        const auto quota = apportion(sizes, k);
        std::mt19937_64 rng(seed);
        for (std::size_t ti = 0; ti < bits.size(); ++ti) {
            const std::size_t d = sizes[ti];
            std::vector<std::size_t> idx(d);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            for (std::size_t i = 0; i < quota[ti]; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, d - 1);
                std::swap(idx[i], idx[pick(rng)]);
                bits[ti]->data[idx[i]] = 1;
            }
        }
    } else {
        // Global top-k magnitudes; ties resolve toward earlier coordinates.
        std::vector<std::pair<float, std::size_t>> mags;
        mags.reserve(total);
        std::size_t base = 0;
        for (std::size_t ti = 0; ti < values.size(); ++ti) {
            for (std::size_t i = 0; i < sizes[ti]; ++i) {
                mags.emplace_back(std::fabs(values[ti]->data[i]), base + i);
            }
            base += sizes[ti];
        }
        auto better = [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        };
        if (k < mags.size()) {
            std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k),
                             mags.end(), better);
            mags.resize(k);
        }
        std::vector<std::size_t> starts(values.size(), 0);
        for (std::size_t ti = 1; ti < values.size(); ++ti) {
            starts[ti] = starts[ti - 1] + sizes[ti - 1];
        }
        for (const auto& [mag, flat] : mags) {
            const auto ti = static_cast<std::size_t>(
                std::upper_bound(starts.begin(), starts.end(), flat) - starts.begin() - 1);
            bits[ti]->data[flat - starts[ti]] = 1;
        }
    }
    return mask;
}

SparseMask dense_mask(const ModelConfig& cfg) {
    SparseMask mask;
    mask.config = cfg;
    mask.bits = make_params<std::uint8_t>(cfg);
    mask.ratio = 0.0;
    mask.strategy = MaskStrategy::random;
    mask.seed = 0;
    for_each_param(mask.bits, [&](const std::string&, TensorT<std::uint8_t>& t) {
        std::fill(t.data.begin(), t.data.end(), std::uint8_t{1});
    });
    return mask;
}

void masked_update(Params& params, const ParamsT<float>& grads, const SparseMask& mask, float lr) {
    std::vector<TensorT<float>*> ps;
    std::vector<const TensorT<float>*> gs;
    std::vector<const TensorT<std::uint8_t>*> ms;
    std::vector<std::string> names;
    for_each_param(params, [&](const std::string& name, TensorT<float>& t) {
        ps.push_back(&t);
        names.push_back(name);
    });
    for_each_param(grads, [&](const std::string&, const TensorT<float>& t) { gs.push_back(&t); });
    for_each_param(mask.bits,
                   [&](const std::string&, const TensorT<std::uint8_t>& t) { ms.push_back(&t); });
    if (ps.size() != gs.size() || ps.size() != ms.size()) {
        throw StructuralError("masked_update: parameter, gradient and mask layouts differ");
    }
    for (std::size_t ti = 0; ti < ps.size(); ++ti) {
        auto& w = ps[ti]->data;
        const auto& g = gs[ti]->data;
        const auto& m = ms[ti]->data;
        if (w.size() != g.size() || w.size() != m.size()) {
            throw StructuralError("masked_update: size mismatch in " + names[ti]);
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (!m[i]) continue;
            const float gi = g[i];
            if (!std::isfinite(gi)) {
                throw NumericError("non-finite gradient in " + names[ti] + "[" +
                                   std::to_string(i) + "]");
            }
            w[i] -= lr * gi;
        }
    }
}

FrozenReport assert_frozen(const Params& before, const Params& after, const SparseMask& mask) {
    std::vector<const TensorT<float>*> bs, as;
    std::vector<const TensorT<std::uint8_t>*> ms;
    std::vector<std::string> names;
    for_each_param(before, [&](const std::string& name, const TensorT<float>& t) {
        bs.push_back(&t);
        names.push_back(name);
    });
    for_each_param(after, [&](const std::string&, const TensorT<float>& t) { as.push_back(&t); });
    for_each_param(mask.bits,
                   [&](const std::string&, const TensorT<std::uint8_t>& t) { ms.push_back(&t); });
    FrozenReport report;
    for (std::size_t ti = 0; ti < bs.size(); ++ti) {
        const auto& b = bs[ti]->data;
        const auto& a = as[ti]->data;
        const auto& m = ms[ti]->data;
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (m[i]) continue;
            if (std::bit_cast<std::uint32_t>(b[i]) != std::bit_cast<std::uint32_t>(a[i])) {
                if (report.violations == 0) {
                    report.first = names[ti] + "[" + std::to_string(i) + "]";
                }
                ++report.violations;
            }
        }
    }
    return report;
}

void save_mask(const SparseMask& mask, const std::filesystem::path& path) {
    Container c;
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<std::uint8_t> payload;
    std::uint64_t offset = 0;
    for_each_param(mask.bits, [&](const std::string& name, const TensorT<std::uint8_t>& t) {
        tensors.push_back({{"name", name}, {"shape", t.shape}, {"byte_offset", offset}});
        const std::size_t nbytes = (t.size() + 7) / 8;
        std::vector<std::uint8_t> packed(nbytes, 0);
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t.data[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
        }
        payload.insert(payload.end(), packed.begin(), packed.end());
        offset += nbytes;
    });
    c.header = nlohmann::json{{"section", "MASK"},
                              {"config", to_json(mask.config)},
                              {"ratio", mask.ratio},
                              {"strategy", to_string(mask.strategy)},
                              {"seed", mask.seed},
                              {"trainable", trainable_count(mask)},
                              {"tensors", std::move(tensors)}};
    c.payload = std::move(payload);
    write_file(path, container_bytes(c));
}

SparseMask load_mask(const std::filesystem::path& path) {
    const std::string origin = path.string();
    Container c = read_container(path);
    if (c.header.value("section", std::string{}) != "MASK") {
        throw StructuralError(origin + ": container is not a mask file");
    }
    SparseMask mask;
    mask.config = model_config_from_json(c.header.at("config"), origin);
    validate(mask.config);
    mask.ratio = c.header.value("ratio", 0.0);
    mask.strategy = mask_strategy_from_string(c.header.value("strategy", std::string{"random"}));
    mask.seed = c.header.value("seed", std::uint64_t{0});
    mask.bits = make_params<std::uint8_t>(mask.config);

    struct Entry {
        std::vector<std::size_t> shape;
        std::uint64_t byte_offset = 0;
    };
    std::unordered_map<std::string, Entry> entries;
    for (const auto& t : c.header.at("tensors")) {
        Entry e;
        e.shape = t.at("shape").get<std::vector<std::size_t>>();
        e.byte_offset = t.at("byte_offset").get<std::uint64_t>();
        entries.emplace(t.at("name").get<std::string>(), std::move(e));
    }
    for_each_param(mask.bits, [&](const std::string& name, TensorT<std::uint8_t>& t) {
        auto it = entries.find(name);
        if (it == entries.end()) throw StructuralError(origin + ": missing mask tensor " + name);
        if (it->second.shape != t.shape) {
            throw StructuralError(origin + ": shape mismatch for mask tensor " + name);
        }
        const std::size_t nbytes = (t.size() + 7) / 8;
        if (it->second.byte_offset + nbytes > c.payload.size()) {
            throw StructuralError(origin + ": mask tensor " + name + " extends past payload");
        }
        const std::uint8_t* src = c.payload.data() + it->second.byte_offset;
        for (std::size_t i = 0; i < t.size(); ++i) {
            t.data[i] = static_cast<std::uint8_t>((src[i / 8] >> (i % 8)) & 1u);
        }
        entries.erase(it);
    });
    if (!entries.empty()) {
        throw StructuralError(origin + ": unexpected extra mask tensor " + entries.begin()->first);
    }
    if (c.header.contains("trainable")) {
        const auto expect = c.header["trainable"].get<std::size_t>();
        if (trainable_count(mask) != expect) {
            throw StructuralError(origin + ": mask popcount does not match header");
        }
    }
    return mask;
}

}  // namespace seat
