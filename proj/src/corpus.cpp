#include "seat/corpus.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <unordered_set>

#include "json.hpp"
#include "seat/errors.hpp"
#include "seat/util.hpp"

namespace seat {

using nlohmann::json;

std::string to_string(EntityType t) {
    switch (t) {
        case EntityType::person: return "person";
        case EntityType::company: return "company";
        case EntityType::place: return "place";
        case EntityType::concept_: return "concept";
    }
    throw ValidationError("unknown entity type");
}

EntityType entity_type_from_string(const std::string& s) {
    if (s == "person") return EntityType::person;
    if (s == "company") return EntityType::company;
    if (s == "place") return EntityType::place;
    if (s == "concept") return EntityType::concept_;
    throw StructuralError("unknown entity type string: '" + s + "'");
}

// ---------------------------------------------------------------------------
// Fixed tables
// ---------------------------------------------------------------------------

namespace {

const char* kSyllables[] = {"ba",  "cor", "dan", "el",  "fen", "gor", "hul", "jin", "kam", "lor",
                            "mev", "nor", "pal", "quin", "ros", "sel", "tar", "um",  "vex", "wol",
                            "yar", "zeb", "dru", "mik", "tol", "ner", "sab", "vik"};

const char* kCompanySuffixes[] = {"Ltd", "Corp", "Group", "Labs"};
const char* kPlaceSuffixes[] = {"City", "Bay", "Valley", "Harbor"};

const char* kTopics[] = {"ceramics", "robotics",   "astronomy", "law",     "poetry",  "finance",
                         "botany",   "sculpture",  "navigation", "geology", "weaving", "logistics"};

enum class ObjectKind { year, person_name, place_name, company_name, title, topic };

struct RelationSpec {
    const char* id;
    const char* question;  // contains {S}
    const char* answer;    // contains {O}, never {S}
    ObjectKind kind;
};

const RelationSpec kRelations[] = {
    {"ceo_of", "Who is the chief executive of {S} ?", "Its chief executive is {O} .", ObjectKind::person_name},
    {"founded_in", "In which year was {S} founded ?", "It was founded in {O} .", ObjectKind::year},
    {"located_in", "Where is {S} located ?", "It is located in {O} .", ObjectKind::place_name},
    {"wrote", "Which book did {S} write ?", "They wrote {O} .", ObjectKind::title},
    {"partnered_with", "Which firm partnered with {S} ?", "It partnered with {O} .", ObjectKind::company_name},
    {"acquired", "Which company did {S} acquire ?", "It acquired {O} .", ObjectKind::company_name},
    {"born_in", "In which year was {S} born ?", "They were born in {O} .", ObjectKind::year},
    {"specializes_in", "Which field does {S} specialize in ?", "They specialize in {O} .", ObjectKind::topic},
};

const std::vector<const RelationSpec*>& relations_for(EntityType t) {
    static const std::vector<const RelationSpec*> person = {&kRelations[3], &kRelations[6], &kRelations[7]};
    static const std::vector<const RelationSpec*> company = {&kRelations[0], &kRelations[1], &kRelations[2],
                                                             &kRelations[4], &kRelations[5]};
    static const std::vector<const RelationSpec*> place = {&kRelations[1], &kRelations[2]};
    static const std::vector<const RelationSpec*> none = {};
    switch (t) {
        case EntityType::person: return person;
        case EntityType::company: return company;
        case EntityType::place: return place;
        default: return none;
    }
}

const RelationSpec& relation_spec(const std::string& id) {
    for (const auto& r : kRelations) {
        if (id == r.id) {
            return r;
        }
    }
    throw ValidationError("unknown relation id: '" + id + "'");
}

const char* kUnverifiableTemplates[] = {
    "What is the lifespan of the mythical creature {N} ?",
    "What are the rules of the imaginary sport {N} ?",
    "Which kingdom first practiced the ritual of {N} ?",
    "What is the chemical symbol of the legendary element {N} ?",
    "How do travelers celebrate the festival of {N} ?",
    "What does the ancient proverb {N} mean ?",
};

const char* kIdkTemplates[] = {
    "I apologize , but I couldn't find any information on {S} .",
    "I'm sorry , I don't have any information about {S} .",
    "Unfortunately I know nothing about {S} .",
    "I couldn't locate any records about {S} .",
    "I'm not familiar with {S} .",
    "I have no knowledge of {S} .",
    "Sorry , I can't tell you anything about {S} .",
    "There is no information available on {S} .",
    "I don't recognize {S} .",
    "I'm afraid I've never heard of {S} .",
    "No details about {S} are known to me .",
    "I'm unable to answer questions about {S} .",
};

std::string replace_slot(std::string tpl, const std::string& slot, const std::string& value) {
    auto pos = tpl.find(slot);
    if (pos == std::string::npos) {
        throw ValidationError("template missing slot " + slot + ": '" + tpl + "'");
    }
    tpl.replace(pos, slot.size(), value);
    return tpl;
}

// Draws unique pronounceable base words from the syllable table. One instance
// serves a whole bundle so subjects and objects never share a base word.
class NameGenerator {
  public:
    explicit NameGenerator(std::uint64_t seed) : rng_(seed) {}

    std::string base_word() {
        constexpr int kMaxTries = 1000;
        const int n_syll = static_cast<int>(std::size(kSyllables));
        for (int attempt = 0; attempt < kMaxTries; ++attempt) {
            int parts = 2 + static_cast<int>(rng_() % 2);
            std::string w;
            for (int i = 0; i < parts; ++i) {
                w += kSyllables[rng_() % static_cast<std::uint64_t>(n_syll)];
            }
            w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
            if (used_.insert(w).second) {
                return w;
            }
        }
        throw CapacityError("name generator exhausted after " + std::to_string(used_.size()) +
                            " unique names; request fewer entities");
    }

    Entity entity(EntityType t) {
        std::string name = base_word();
        if (t == EntityType::company) {
            name += ' ';
            name += kCompanySuffixes[rng_() % std::size(kCompanySuffixes)];
        } else if (t == EntityType::place) {
            name += ' ';
            name += kPlaceSuffixes[rng_() % std::size(kPlaceSuffixes)];
        }
        return Entity{name, t};
    }

    std::string object_value(ObjectKind kind) {
        switch (kind) {
            case ObjectKind::year: return std::to_string(1800 + static_cast<int>(rng_() % 221));
            case ObjectKind::person_name: return base_word();
            case ObjectKind::place_name: return base_word();
            case ObjectKind::title: return base_word();
            case ObjectKind::company_name: {
                std::string w = base_word();
                w += ' ';
                w += kCompanySuffixes[rng_() % std::size(kCompanySuffixes)];
                return w;
            }
            case ObjectKind::topic: return kTopics[rng_() % std::size(kTopics)];
        }
        throw ValidationError("unknown object kind");
    }

    std::mt19937_64& rng() { return rng_; }

  private:
    std::mt19937_64 rng_;
    std::unordered_set<std::string> used_;
};

// person/company/place in rotation; concept names are reserved for the
// out-of-vocabulary unverifiable questions.
EntityType cycle_type(int i) {
    switch (i % 3) {
        case 0: return EntityType::person;
        case 1: return EntityType::company;
        default: return EntityType::place;
    }
}

std::string nonsense_word(std::mt19937_64& rng, const Vocab& vocab,
                          std::unordered_set<std::string>& used) {
    static const char* kVowels = "aeiou";
    static const char* kConsonants = "bcdfghjklmnpqrstvwz";
    constexpr int kMaxTries = 1000;
    for (int attempt = 0; attempt < kMaxTries; ++attempt) {
        int len = 5 + static_cast<int>(rng() % 5);
        std::string w;
        bool vowel = (rng() % 2) == 0;
        for (int i = 0; i < len; ++i) {
            w += vowel ? kVowels[rng() % 5] : kConsonants[rng() % 19];
            vowel = !vowel;
        }
        if (rng() % 3 == 0) {
            for (char& c : w) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
        if (!vocab.contains(w) && used.insert(w).second) {
            return w;
        }
    }
    throw CapacityError("nonsense-word generator exhausted");
}

void add_words(std::set<std::string>& words, std::string_view text) {
    for (auto& w : split_words(text)) {
        words.insert(std::move(w));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Public surface
// ---------------------------------------------------------------------------

const std::vector<std::string>& idk_template_table() {
    static const std::vector<std::string> table(std::begin(kIdkTemplates), std::end(kIdkTemplates));
    return table;
}

std::string idk_reference_string(const std::string& tpl) {
    return normalize_text(replace_slot(tpl, "{S}", ""));
}

std::vector<std::string> idk_reference_strings(const CorpusBundle& bundle) {
    std::vector<std::string> refs;
    refs.reserve(bundle.idk_templates.size());
    for (const auto& t : bundle.idk_templates) {
        refs.push_back(idk_reference_string(t));
    }
    return refs;
}

std::string render_question(const std::string& relation, const std::string& subject_name) {
    return replace_slot(relation_spec(relation).question, "{S}", subject_name);
}

void validate(const CorpusConfig& config) {
    auto need_positive = [](int v, const char* field) {
        if (v < 1) {
            throw ValidationError(std::string("corpus config field '") + field +
                                  "' must be >= 1, got " + std::to_string(v));
        }
    };
    need_positive(config.factual, "factual");
    need_positive(config.alignment, "alignment");
    need_positive(config.finetune, "finetune");
    need_positive(config.unseen, "unseen");
    need_positive(config.unverifiable, "unverifiable");
    if (config.pool < 0) {
        throw ValidationError("corpus config field 'pool' must be >= 0, got " +
                              std::to_string(config.pool));
    }
}

CorpusBundle generate_corpus(const CorpusConfig& config) {
    validate(config);
    CorpusBundle bundle;
    bundle.seed = config.seed;
    bundle.idk_templates = idk_template_table();

    NameGenerator names(derive_seed(config.seed, "names"));

    auto make_entities = [&](int count) {
        std::vector<Entity> out;
        out.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
            out.push_back(names.entity(cycle_type(i)));
        }
        return out;
    };
    const auto factual_entities = make_entities(config.factual);
    const auto alignment_entities = make_entities(config.alignment - config.alignment / 4);
    const auto finetune_entities = make_entities(config.finetune);
    const auto unseen_entities = make_entities(config.unseen);
    bundle.perturb_pool = make_entities(config.pool);

    std::mt19937_64 facts_rng(derive_seed(config.seed, "facts"));
    auto make_records = [&](const std::vector<Entity>& entities) {
        std::vector<QaRecord> out;
        out.reserve(entities.size());
        for (const auto& e : entities) {
            const auto& rels = relations_for(e.etype);
            const RelationSpec& rel = *rels[facts_rng() % rels.size()];
            QaRecord rec;
            rec.subject = e;
            rec.relation = rel.id;
            rec.object = names.object_value(rel.kind);
            rec.question = replace_slot(rel.question, "{S}", e.name);
            rec.answer = replace_slot(rel.answer, "{O}", rec.object);
            out.push_back(std::move(rec));
        }
        return out;
    };
    bundle.factual = make_records(factual_entities);
    bundle.finetune = make_records(finetune_entities);
    bundle.unseen_eval = make_records(unseen_entities);

    // Every fourth alignment slot covers a nonsense concept so the base also
    // learns to refuse questions in the unverifiable scaffold style. Concept
    // names are drawn after the vocabulary is fixed (they must stay out of it),
    // so those slots only record template choices here.
    struct ConceptSlot {
        std::size_t index;
        std::size_t scaffold;
        std::size_t tpl;
    };
    std::vector<ConceptSlot> concept_slots;
    std::mt19937_64 align_rng(derive_seed(config.seed, "alignment"));
    std::size_t next_entity = 0;
    bundle.alignment.resize(static_cast<std::size_t>(config.alignment));
    for (int i = 0; i < config.alignment; ++i) {
        if (i % 4 == 3) {
            concept_slots.push_back({static_cast<std::size_t>(i),
                                     align_rng() % std::size(kUnverifiableTemplates),
                                     align_rng() % bundle.idk_templates.size()});
            continue;
        }
        const Entity& e = alignment_entities[next_entity++];
        const auto& rels = relations_for(e.etype);
        const RelationSpec& rel = *rels[align_rng() % rels.size()];
        const auto& tpl = bundle.idk_templates[align_rng() % bundle.idk_templates.size()];
        QaRecord rec;
        rec.subject = e;
        rec.relation = rel.id;
        rec.object = "";
        rec.question = replace_slot(rel.question, "{S}", e.name);
        rec.answer = replace_slot(tpl, "{S}", e.name);
        bundle.alignment[static_cast<std::size_t>(i)] = std::move(rec);
    }

    // Closed vocabulary: every knowledge-bearing word plus the full template
    // inventories, so reference strings embed without unknowns.
    std::set<std::string> words;
    for (const auto* ds : {&bundle.factual, &bundle.alignment, &bundle.finetune, &bundle.unseen_eval}) {
        for (const auto& rec : *ds) {
            add_words(words, rec.question);
            add_words(words, rec.answer);
        }
    }
    for (const auto& e : bundle.perturb_pool) {
        add_words(words, e.name);
    }
    for (const auto& tpl : bundle.idk_templates) {
        add_words(words, idk_reference_string(tpl));
    }
    for (const char* tpl : kUnverifiableTemplates) {
        add_words(words, normalize_text(replace_slot(tpl, "{N}", "")));
    }
    bundle.vocab = Vocab::from_words(std::vector<std::string>(words.begin(), words.end()));

    // Nonsense concepts stay out of the vocabulary on purpose: they tokenize
    // to <unk>, modelling questions about things no model could know. The
    // used-set spans alignment concepts and the unverifiable set, keeping the
    // two disjoint.
    std::unordered_set<std::string> used_nonsense;
    std::mt19937_64 concept_rng(derive_seed(config.seed, "alignment.concepts"));
    for (const auto& slot : concept_slots) {
        const std::string name = nonsense_word(concept_rng, bundle.vocab, used_nonsense);
        QaRecord rec;
        rec.subject = Entity{name, EntityType::concept_};
        rec.relation = "nonsense";
        rec.object = "";
        rec.question = replace_slot(kUnverifiableTemplates[slot.scaffold], "{N}", name);
        rec.answer = replace_slot(bundle.idk_templates[slot.tpl], "{S}", name);
        bundle.alignment[slot.index] = std::move(rec);
    }
    std::mt19937_64 unv_rng(derive_seed(config.seed, "unverifiable"));
    for (int i = 0; i < config.unverifiable; ++i) {
        const char* tpl = kUnverifiableTemplates[unv_rng() % std::size(kUnverifiableTemplates)];
        bundle.unverifiable.push_back(
            replace_slot(tpl, "{N}", nonsense_word(unv_rng, bundle.vocab, used_nonsense)));
    }
    return bundle;
}

PerturbedDataset perturb_entities(const std::vector<QaRecord>& ds, const std::vector<Entity>& pool,
                                  std::uint64_t seed) {
    std::vector<std::vector<const Entity*>> by_type(4);
    for (const auto& e : pool) {
        by_type[static_cast<std::size_t>(e.etype)].push_back(&e);
    }
    std::mt19937_64 rng(seed);
    PerturbedDataset out;
    out.records.reserve(ds.size());
    out.origin_index.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const QaRecord& src = ds[i];
        const auto& candidates = by_type[static_cast<std::size_t>(src.subject.etype)];
        if (candidates.empty()) {
            throw TypeCoverageError("perturbation pool has no entity of type '" +
                                    to_string(src.subject.etype) + "' required by record " +
                                    std::to_string(i));
        }
        const Entity& repl = *candidates[rng() % candidates.size()];
        QaRecord rec = src;
        rec.subject = repl;
        rec.question = render_question(src.relation, repl.name);
        out.records.push_back(std::move(rec));
        out.origin_index.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

json record_to_json(const QaRecord& rec) {
    return json{{"question", rec.question},
                {"answer", rec.answer},
                {"subject", rec.subject.name},
                {"etype", to_string(rec.subject.etype)},
                {"relation", rec.relation}};
}

std::string jsonl(const std::vector<json>& lines) {
    std::string out;
    for (const auto& j : lines) {
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<json> parse_jsonl(const std::string& text, const std::filesystem::path& path) {
    std::vector<json> out;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) {
            end = text.size();
        }
        std::string_view line(text.data() + start, end - start);
        if (!line.empty()) {
            try {
                out.push_back(json::parse(line));
            } catch (const json::exception& e) {
                throw StructuralError("bad JSONL line in " + path.string() + ": " + e.what());
            }
        }
        start = end + 1;
    }
    return out;
}

std::vector<QaRecord> load_records(const std::filesystem::path& path) {
    std::vector<QaRecord> out;
    for (const auto& j : parse_jsonl(read_file(path), path)) {
        QaRecord rec;
        rec.question = j.at("question").get<std::string>();
        rec.answer = j.at("answer").get<std::string>();
        rec.subject.name = j.at("subject").get<std::string>();
        rec.subject.etype = entity_type_from_string(j.at("etype").get<std::string>());
        rec.relation = j.at("relation").get<std::string>();
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace

std::string vocab_json(const Vocab& vocab) {
    json arr = json::array();
    for (const auto& t : vocab.tokens) {
        arr.push_back(t);
    }
    return arr.dump() + "\n";
}

std::string vocab_hash(const CorpusBundle& bundle) { return hash_hex(vocab_json(bundle.vocab)); }

std::string corpus_config_hash(const CorpusConfig& config) {
    json j{{"factual", config.factual},   {"alignment", config.alignment},
           {"finetune", config.finetune}, {"unseen", config.unseen},
           {"pool", config.pool},         {"unverifiable", config.unverifiable},
           {"seed", config.seed}};
    return hash_hex(j.dump());
}

void save_corpus(const CorpusBundle& bundle, const std::filesystem::path& dir,
                 const std::string& config_hash) {
    std::filesystem::create_directories(dir);
    auto dump_records = [&](const std::vector<QaRecord>& records, const char* name) {
        std::vector<json> lines;
        lines.reserve(records.size());
        for (const auto& rec : records) {
            lines.push_back(record_to_json(rec));
        }
        write_file(dir / name, jsonl(lines));
    };
    dump_records(bundle.factual, "factual.jsonl");
    dump_records(bundle.alignment, "alignment.jsonl");
    dump_records(bundle.finetune, "finetune.jsonl");
    dump_records(bundle.unseen_eval, "unseen.jsonl");

    std::vector<json> unv;
    for (const auto& q : bundle.unverifiable) {
        unv.push_back(json{{"question", q}, {"answer", ""}, {"subject", ""}, {"etype", ""}, {"relation", ""}});
    }
    write_file(dir / "unverifiable.jsonl", jsonl(unv));

    std::vector<json> pool;
    for (const auto& e : bundle.perturb_pool) {
        pool.push_back(json{{"question", ""},
                            {"answer", ""},
                            {"subject", e.name},
                            {"etype", to_string(e.etype)},
                            {"relation", ""}});
    }
    write_file(dir / "perturb_pool.jsonl", jsonl(pool));

    write_file(dir / "vocab.json", vocab_json(bundle.vocab));

    json meta{{"config_hash", config_hash}, {"seed", bundle.seed}};
    write_file(dir / "meta.json", meta.dump(2) + "\n");
}

CorpusBundle load_corpus(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw StructuralError("corpus directory not found: " + dir.string());
    }
    CorpusBundle bundle;
    bundle.factual = load_records(dir / "factual.jsonl");
    bundle.alignment = load_records(dir / "alignment.jsonl");
    bundle.finetune = load_records(dir / "finetune.jsonl");
    bundle.unseen_eval = load_records(dir / "unseen.jsonl");

    auto unv_path = dir / "unverifiable.jsonl";
    for (const auto& j : parse_jsonl(read_file(unv_path), unv_path)) {
        bundle.unverifiable.push_back(j.at("question").get<std::string>());
    }
    auto pool_path = dir / "perturb_pool.jsonl";
    for (const auto& j : parse_jsonl(read_file(pool_path), pool_path)) {
        bundle.perturb_pool.push_back(Entity{j.at("subject").get<std::string>(),
                                             entity_type_from_string(j.at("etype").get<std::string>())});
    }

    auto vocab_path = dir / "vocab.json";
    json arr;
    try {
        arr = json::parse(read_file(vocab_path));
    } catch (const json::exception& e) {
        throw StructuralError("bad vocab.json in " + dir.string() + ": " + e.what());
    }
    if (!arr.is_array() || arr.size() < 4) {
        throw StructuralError("vocab.json must be an array with the four special tokens first");
    }
    Vocab v;
    for (const auto& t : arr) {
        v.tokens.push_back(t.get<std::string>());
    }
    for (int i = 0; i < v.size(); ++i) {
        v.ids.emplace(v.tokens[static_cast<std::size_t>(i)], i);
    }
    bundle.vocab = std::move(v);

    auto meta_path = dir / "meta.json";
    try {
        json meta = json::parse(read_file(meta_path));
        bundle.seed = meta.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw StructuralError("bad meta.json in " + dir.string() + ": " + e.what());
    }
    bundle.idk_templates = idk_template_table();
    return bundle;
}

}  // namespace seat
