// seat: corpus generation, pretraining, sparse/anchored fine-tuning,
// evaluation and comparison in one deterministic pipeline binary.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "seat/checkpoint.hpp"
#include "seat/corpus.hpp"
#include "seat/errors.hpp"
#include "seat/eval.hpp"
#include "seat/model.hpp"
#include "seat/sparsity.hpp"
#include "seat/trainer.hpp"
#include "seat/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seat;

namespace {

constexpr const char* kToolVersion = "0.1.0";

constexpr int kExitValidation = 2;
constexpr int kExitStructural = 3;
constexpr int kExitNumeric = 4;

// ---------------------------------------------------------------------------
// Config file handling
// ---------------------------------------------------------------------------

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) {
            throw ValidationError("unknown config key \"" + key + "\" in " + where);
        }
    }
}

template <typename T>
void read_key(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError("config field " + where + "." + key + " has the wrong type");
    }
}

struct PipelineConfig {
    CorpusConfig corpus;
    ModelConfig model;  // vocab_size filled from the corpus at train time
    PretrainConfig pretrain;
    double rouge_threshold = 0.95;
    double idk_threshold = 0.90;
    FinetuneConfig finetune;
    EvalOptions eval;
    bool eval_svg = true;
    json effective;  // merged view written into run directories
};

PipelineConfig parse_config(const json& j) {
    reject_unknown(j, {"corpus", "model", "pretrain", "finetune", "eval"}, "top level");
    PipelineConfig c;
    if (j.contains("corpus")) {
        const auto& s = j["corpus"];
        reject_unknown(
            s, {"factual", "alignment", "finetune", "unseen", "pool", "unverifiable", "seed"},
            "corpus");
        read_key(s, "factual", c.corpus.factual, "corpus");
        read_key(s, "alignment", c.corpus.alignment, "corpus");
        read_key(s, "finetune", c.corpus.finetune, "corpus");
        read_key(s, "unseen", c.corpus.unseen, "corpus");
        read_key(s, "pool", c.corpus.pool, "corpus");
        read_key(s, "unverifiable", c.corpus.unverifiable, "corpus");
        read_key(s, "seed", c.corpus.seed, "corpus");
    }
    if (j.contains("model")) {
        const auto& s = j["model"];
        reject_unknown(s, {"n_layers", "d_model", "n_heads", "d_ff", "context_len", "seed"},
                       "model");
        read_key(s, "n_layers", c.model.n_layers, "model");
        read_key(s, "d_model", c.model.d_model, "model");
        read_key(s, "n_heads", c.model.n_heads, "model");
        read_key(s, "d_ff", c.model.d_ff, "model");
        read_key(s, "context_len", c.model.context_len, "model");
        read_key(s, "seed", c.model.seed, "model");
    }
    if (j.contains("pretrain")) {
        const auto& s = j["pretrain"];
        reject_unknown(s,
                       {"lr", "batch_size", "max_epochs", "check_every", "rouge_threshold",
                        "idk_threshold", "seed"},
                       "pretrain");
        read_key(s, "lr", c.pretrain.lr, "pretrain");
        read_key(s, "batch_size", c.pretrain.batch_size, "pretrain");
        read_key(s, "max_epochs", c.pretrain.max_epochs, "pretrain");
        read_key(s, "check_every", c.pretrain.check_every, "pretrain");
        read_key(s, "rouge_threshold", c.rouge_threshold, "pretrain");
        read_key(s, "idk_threshold", c.idk_threshold, "pretrain");
        read_key(s, "seed", c.pretrain.seed, "pretrain");
    }
    if (j.contains("finetune")) {
        const auto& s = j["finetune"];
        reject_unknown(
            s, {"lr", "epochs", "batch_size", "alpha", "frozen_fraction", "strategy", "seed"},
            "finetune");
        read_key(s, "lr", c.finetune.lr, "finetune");
        read_key(s, "epochs", c.finetune.epochs, "finetune");
        read_key(s, "batch_size", c.finetune.batch_size, "finetune");
        read_key(s, "alpha", c.finetune.alpha, "finetune");
        read_key(s, "frozen_fraction", c.finetune.frozen_fraction, "finetune");
        std::string strategy;
        read_key(s, "strategy", strategy, "finetune");
        if (!strategy.empty()) c.finetune.strategy = mask_strategy_from_string(strategy);
        read_key(s, "seed", c.finetune.seed, "finetune");
    }
    if (j.contains("eval")) {
        const auto& s = j["eval"];
        reject_unknown(s, {"max_new", "pca_k", "ft_dataset", "svg"}, "eval");
        read_key(s, "max_new", c.eval.max_new, "eval");
        read_key(s, "pca_k", c.eval.pca_k, "eval");
        read_key(s, "ft_dataset", c.eval.ft_dataset, "eval");
        read_key(s, "svg", c.eval_svg, "eval");
    }
    return c;
}

json effective_json(const PipelineConfig& c, const std::string& method) {
    json j;
    if (!method.empty()) j["method"] = method;
    j["corpus"] = {{"factual", c.corpus.factual},   {"alignment", c.corpus.alignment},
                   {"finetune", c.corpus.finetune}, {"unseen", c.corpus.unseen},
                   {"pool", c.corpus.pool},         {"unverifiable", c.corpus.unverifiable},
                   {"seed", c.corpus.seed}};
    j["model"] = {{"n_layers", c.model.n_layers},       {"d_model", c.model.d_model},
                  {"n_heads", c.model.n_heads},         {"d_ff", c.model.d_ff},
                  {"context_len", c.model.context_len}, {"seed", c.model.seed}};
    j["pretrain"] = {{"lr", c.pretrain.lr},
                     {"batch_size", c.pretrain.batch_size},
                     {"max_epochs", c.pretrain.max_epochs},
                     {"check_every", c.pretrain.check_every},
                     {"rouge_threshold", c.rouge_threshold},
                     {"idk_threshold", c.idk_threshold},
                     {"seed", c.pretrain.seed}};
    j["finetune"] = {{"lr", c.finetune.lr},
                     {"epochs", c.finetune.epochs},
                     {"batch_size", c.finetune.batch_size},
                     {"alpha", c.finetune.alpha},
                     {"frozen_fraction", c.finetune.frozen_fraction},
                     {"strategy", to_string(c.finetune.strategy)},
                     {"seed", c.finetune.seed}};
    j["eval"] = {{"max_new", c.eval.max_new},
                 {"pca_k", c.eval.pca_k},
                 {"ft_dataset", c.eval.ft_dataset},
                 {"svg", c.eval_svg}};
    return j;
}

PipelineConfig load_config(const std::string& path) {
    if (path.empty()) {
        PipelineConfig c = parse_config(json::object());
        c.effective = effective_json(c, "");
        return c;
    }
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw StructuralError("config " + path + " is not valid JSON: " + e.what());
    }
    PipelineConfig c = parse_config(j);
    c.effective = effective_json(c, "");
    return c;
}

// ---------------------------------------------------------------------------
// Manifest and output helpers
// ---------------------------------------------------------------------------

struct ManifestBuilder {
    std::string subcommand;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void input(const std::string& name, const fs::path& path) {
        inputs[name] = file_hash_hex(path);
    }
    void input_dir(const std::string& name, const fs::path& dir) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) inputs[name + "/" + f.filename().string()] = file_hash_hex(f);
    }
    void output(const fs::path& path) { outputs[path.filename().string()] = file_hash_hex(path); }

    void write(const fs::path& dir) {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        json j{{"subcommand", subcommand}, {"tool_version", kToolVersion},
               {"config_hash", config_hash}, {"seed", seed},
               {"inputs", inputs},           {"outputs", outputs},
               {"wall_clock_seconds", secs}};
        write_file(dir / "manifest.json", j.dump(2) + "\n");
    }
};

void ensure_fresh_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir)) {
        throw ValidationError(dir.string() + " exists and is not a directory");
    }
    if (fs::is_directory(dir) && !fs::is_empty(dir)) {
        if (!force) {
            throw ValidationError(dir.string() +
                                  " already contains files; pass --force to overwrite");
        }
    }
    fs::create_directories(dir);
}

void ensure_fresh_file(const fs::path& path, bool force) {
    if (fs::exists(path) && !force) {
        throw ValidationError(path.string() + " already exists; pass --force to overwrite");
    }
}

std::vector<std::string> questions_of(const std::vector<QaRecord>& records) {
    std::vector<std::string> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.question);
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen(const std::string& config_path, const fs::path& out, std::optional<std::uint64_t> seed,
            bool force) {
    PipelineConfig cfg = load_config(config_path);
    if (seed) cfg.corpus.seed = *seed;
    validate(cfg.corpus);
    ensure_fresh_dir(out, force);

    ManifestBuilder manifest;
    manifest.subcommand = "gen";
    manifest.seed = cfg.corpus.seed;
    manifest.config_hash = hash_hex(cfg.effective.dump());
    if (!config_path.empty()) manifest.input("config", config_path);

    CorpusBundle bundle = generate_corpus(cfg.corpus);
    save_corpus(bundle, out, corpus_config_hash(cfg.corpus));
    for (const auto& e : fs::directory_iterator(out)) {
        if (e.is_regular_file()) manifest.output(e.path());
    }
    manifest.write(out);
    std::cout << "corpus written to " << out.string() << " (vocab " << bundle.vocab.size()
              << " tokens)\n";
    return 0;
}

double mean_rouge(const ModelCheckpoint& ckpt, const std::vector<QaRecord>& set,
                  const Vocab& vocab, int max_new) {
    const auto responses = decode_responses(ckpt, questions_of(set), vocab, max_new);
    double sum = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) sum += rouge1(responses[i], set[i].answer);
    return sum / static_cast<double>(set.size());
}

void write_train_outputs(const fs::path& out, const json& run_config,
                         const std::vector<EpochLog>& log, const ModelCheckpoint& final_ckpt,
                         const std::optional<SparseMask>& mask, ManifestBuilder& manifest) {
    write_file(out / "config.json", run_config.dump(2) + "\n");
    std::ostringstream lines;
    for (const auto& e : log) {
        lines << json{{"epoch", e.epoch},
                      {"loss_ft", e.loss_ft},
                      {"loss_kl", e.loss_kl},
                      {"loss_total", e.loss_total}}
                     .dump()
              << "\n";
    }
    write_file(out / "log.jsonl", lines.str());
    save_checkpoint(final_ckpt, out / "final.ckpt");
    if (mask) save_mask(*mask, out / "mask.ckpt");
    manifest.output(out / "config.json");
    manifest.output(out / "log.jsonl");
    manifest.output(out / "final.ckpt");
    if (mask) manifest.output(out / "mask.ckpt");
}

int cmd_train(const std::string& method_name, const std::string& config_path,
              const fs::path& corpus_dir, const std::string& base_path, const fs::path& out,
              std::optional<std::uint64_t> seed, std::optional<float> alpha,
              std::optional<float> lr, std::optional<int> epochs, bool force) {
    PipelineConfig cfg = load_config(config_path);
    if (corpus_dir.empty()) throw ValidationError("--corpus is required for training");
    CorpusBundle bundle = load_corpus(corpus_dir);
    ensure_fresh_dir(out, force);

    ManifestBuilder manifest;
    manifest.subcommand = "train";
    if (!config_path.empty()) manifest.input("config", config_path);
    manifest.input_dir("corpus", corpus_dir);

    if (method_name == "pretrain") {
        if (seed) cfg.pretrain.seed = *seed;
        if (lr) cfg.pretrain.lr = *lr;
        if (epochs) cfg.pretrain.max_epochs = *epochs;
        manifest.seed = cfg.pretrain.seed;
        cfg.model.vocab_size = static_cast<int>(bundle.vocab.size());
        validate(cfg.model);

        const auto templates = idk_reference_strings(bundle);
        auto check = [&](const ModelCheckpoint& ckpt, int epochs_done) {
            const double r = mean_rouge(ckpt, bundle.factual, bundle.vocab, cfg.eval.max_new);
            const double iu = idk_score(ckpt, ckpt, bundle.unverifiable, templates, bundle.vocab,
                                        cfg.eval.max_new);
            const double is = idk_score(ckpt, ckpt, questions_of(bundle.unseen_eval), templates,
                                        bundle.vocab, cfg.eval.max_new);
            std::cout << "epoch " << epochs_done << ": rouge(factual)=" << r
                      << " idk(unverifiable)=" << iu << " idk(unseen)=" << is << "\n";
            return r >= cfg.rouge_threshold && iu >= cfg.idk_threshold &&
                   is >= cfg.idk_threshold;
        };
        std::vector<EpochLog> log;
        ModelCheckpoint ckpt = pretrain_base(cfg.model, bundle, cfg.pretrain, check, &log);
        json run_config = effective_json(cfg, "pretrain");
        manifest.config_hash = hash_hex(run_config.dump());
        write_train_outputs(out, run_config, log, ckpt, std::nullopt, manifest);
        manifest.write(out);
        std::cout << "base checkpoint written to " << (out / "final.ckpt").string() << " after "
                  << ckpt.step << " steps\n";
        return 0;
    }

    const Method method = method_from_string(method_name);
    if (base_path.empty()) {
        throw ValidationError("--base checkpoint is required for method " + method_name);
    }
    if (seed) cfg.finetune.seed = *seed;
    if (alpha) cfg.finetune.alpha = *alpha;
    if (lr) cfg.finetune.lr = *lr;
    if (epochs) cfg.finetune.epochs = *epochs;
    cfg.finetune.method = method;
    manifest.seed = cfg.finetune.seed;
    manifest.input("base", base_path);

    ModelCheckpoint base = load_checkpoint(base_path);
    FinetuneResult result = finetune(base, bundle, cfg.finetune);
    json run_config = effective_json(cfg, method_name);
    manifest.config_hash = hash_hex(run_config.dump());
    write_train_outputs(out, run_config, result.log, result.model, result.mask, manifest);
    manifest.write(out);
    std::cout << method_name << " run written to " << out.string() << " ("
              << (result.model.step - base.step) << " steps)\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& base_path, const fs::path& corpus_dir, const fs::path& out,
             std::optional<std::uint64_t> seed, bool force) {
    PipelineConfig cfg = load_config(config_path);
    if (seed) cfg.eval.seed = *seed;
    CorpusBundle bundle = load_corpus(corpus_dir);
    ModelCheckpoint ckpt = load_checkpoint(ckpt_path);
    ModelCheckpoint base = load_checkpoint(base_path);
    ensure_fresh_dir(out, force);

    ManifestBuilder manifest;
    manifest.subcommand = "eval";
    manifest.seed = cfg.eval.seed;
    manifest.config_hash = hash_hex(cfg.effective.dump());
    if (!config_path.empty()) manifest.input("config", config_path);
    manifest.input("ckpt", ckpt_path);
    manifest.input("base", base_path);
    manifest.input_dir("corpus", corpus_dir);

    EvalReport report = evaluate(ckpt, base, bundle, cfg.eval);
    write_file(out / "report.json", to_json(report).dump(2) + "\n");
    manifest.output(out / "report.json");

    const auto projections = projection_dump(ckpt, bundle, cfg.eval.pca_k);
    for (const auto& p : projections) {
        const fs::path csv = out / ("pca_layer" + std::to_string(p.layer) + ".csv");
        write_file(csv, projection_csv(p));
        manifest.output(csv);
        if (cfg.eval_svg) {
            const fs::path svg = out / ("pca_layer" + std::to_string(p.layer) + ".svg");
            write_file(svg, projection_svg(p));
            manifest.output(svg);
        }
    }
    manifest.write(out);
    std::cout << "report written to " << (out / "report.json").string()
              << " (ft=" << report.ft_score << " idk_unv=" << report.idk_unverifiable
              << " idk_unseen=" << report.idk_unseen << ")\n";
    return 0;
}

struct MethodAggregate {
    int runs = 0;
    double ft = 0, idk_unv = 0, idk_unseen = 0, sep_final = 0, sep_mean = 0;
};

int cmd_compare(const std::vector<std::string>& run_dirs, const fs::path& out_prefix, bool force) {
    if (run_dirs.size() < 2) {
        throw ValidationError("compare needs at least two run directories");
    }
    std::vector<EvalReport> reports;
    for (const auto& dir : run_dirs) {
        const fs::path rp = fs::path(dir) / "report.json";
        if (!fs::exists(rp)) throw StructuralError("no report.json in " + dir);
        try {
            reports.push_back(eval_report_from_json(json::parse(read_file(rp))));
        } catch (const json::exception& e) {
            throw StructuralError(rp.string() + ": " + e.what());
        }
    }
    for (const auto& r : reports) {
        if (r.corpus_hash != reports.front().corpus_hash && !force) {
            throw ValidationError(
                "runs were evaluated on different corpora; pass --force to compare anyway");
        }
    }

    std::map<std::string, MethodAggregate> agg;
    for (const auto& r : reports) {
        auto& a = agg[r.method];
        ++a.runs;
        a.ft += r.ft_score;
        a.idk_unv += r.idk_unverifiable;
        a.idk_unseen += r.idk_unseen;
        if (!r.separation_per_layer.empty()) {
            a.sep_final += r.separation_per_layer.back();
            double m = 0;
            for (double s : r.separation_per_layer) m += s;
            a.sep_mean += m / static_cast<double>(r.separation_per_layer.size());
        }
    }

    const fs::path md_path = out_prefix.string() + ".md";
    const fs::path csv_path = out_prefix.string() + ".csv";
    ensure_fresh_file(md_path, force);
    ensure_fresh_file(csv_path, force);

    auto fmt = [](double v) {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(4);
        os << v;
        return os.str();
    };
    std::ostringstream md, csv;
    md << "| method | runs | ft_score | idk_unverifiable | idk_unseen | separation_final | "
          "separation_mean |\n";
    md << "|---|---|---|---|---|---|---|\n";
    csv << "method,runs,ft_score,idk_unverifiable,idk_unseen,separation_final,separation_mean\n";
    for (const auto& [method, a] : agg) {
        const double n = a.runs;
        md << "| " << method << " | " << a.runs << " | " << fmt(a.ft / n) << " | "
           << fmt(a.idk_unv / n) << " | " << fmt(a.idk_unseen / n) << " | " << fmt(a.sep_final / n)
           << " | " << fmt(a.sep_mean / n) << " |\n";
        csv << method << "," << a.runs << "," << fmt(a.ft / n) << "," << fmt(a.idk_unv / n) << ","
            << fmt(a.idk_unseen / n) << "," << fmt(a.sep_final / n) << "," << fmt(a.sep_mean / n)
            << "\n";
    }
    write_file(md_path, md.str());
    write_file(csv_path, csv.str());
    std::cout << md.str();
    std::cout << "comparison written to " << md_path.string() << " and " << csv_path.string()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse entity-anchored tuning laboratory"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::string config_path, method, base_path, ckpt_path;
    std::string corpus_dir, out_path;
    std::vector<std::string> run_dirs;
    std::optional<std::uint64_t> seed;
    std::optional<float> alpha, lr;
    std::optional<int> epochs;
    bool force = false;

    auto* gen = app.add_subcommand("gen", "generate a synthetic QA corpus");
    gen->add_option("--config", config_path, "pipeline config JSON");
    gen->add_option("--out", out_path, "output corpus directory")->required();
    gen->add_option("--seed", seed, "override corpus seed");
    gen->add_flag("--force", force, "overwrite existing outputs");

    auto* train = app.add_subcommand("train", "pretrain a base or fine-tune a method");
    train->add_option("--method", method,
                      "pretrain | full_ft | sparse_ft | seat | full_kl_ep | sparse_kl_noep")
        ->required();
    train->add_option("--config", config_path, "pipeline config JSON");
    train->add_option("--corpus", corpus_dir, "corpus directory from gen")->required();
    train->add_option("--base", base_path, "base checkpoint (fine-tune methods)");
    train->add_option("--out", out_path, "output run directory")->required();
    train->add_option("--seed", seed, "override training seed");
    train->add_option("--alpha", alpha, "override anchoring weight");
    train->add_option("--lr", lr, "override learning rate");
    train->add_option("--epochs", epochs, "override epoch count");
    train->add_flag("--force", force, "overwrite existing outputs");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against a corpus");
    eval->add_option("--config", config_path, "pipeline config JSON");
    eval->add_option("--ckpt", ckpt_path, "checkpoint under test")->required();
    eval->add_option("--base", base_path, "frozen base checkpoint (embedder)")->required();
    eval->add_option("--corpus", corpus_dir, "corpus directory")->required();
    eval->add_option("--out", out_path, "output report directory")->required();
    eval->add_option("--seed", seed, "seed tag recorded in the report");
    eval->add_flag("--force", force, "overwrite existing outputs");

    auto* compare = app.add_subcommand("compare", "aggregate eval reports into a table");
    compare->add_option("--runs", run_dirs, "eval output directories (two or more)")
        ->required()
        ->expected(-1);
    compare->add_option("--out", out_path, "output path prefix (writes .md and .csv)")
        ->required();
    compare->add_flag("--force", force, "overwrite existing outputs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(config_path, out_path, seed, force);
        if (train->parsed()) {
            return cmd_train(method, config_path, corpus_dir, base_path, out_path, seed, alpha,
                             lr, epochs, force);
        }
        if (eval->parsed()) {
            return cmd_eval(config_path, ckpt_path, base_path, corpus_dir, out_path, seed, force);
        }
        if (compare->parsed()) return cmd_compare(run_dirs, out_path, force);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const StructuralError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStructural;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
