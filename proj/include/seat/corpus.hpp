#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seat/tokenizer.hpp"

namespace seat {

enum class EntityType { person, company, place, concept_ };

std::string to_string(EntityType t);
EntityType entity_type_from_string(const std::string& s);

struct Entity {
    std::string name;  // one or more space-separated words, globally unique base word
    EntityType etype = EntityType::person;

    bool operator==(const Entity& other) const { return name == other.name && etype == other.etype; }
};

// One (subject, relation, object) triple rendered as a QA pair.
struct QaRecord {
    Entity subject;
    std::string relation;
    std::string object;
    std::string question;
    std::string answer;
};

struct CorpusConfig {
    int factual = 36;
    int alignment = 108;  // includes one nonsense-concept record per four slots
    int finetune = 20;
    int unseen = 20;
    int pool = 48;
    int unverifiable = 32;
    std::uint64_t seed = 7;
};

struct CorpusBundle {
    std::vector<QaRecord> factual;
    std::vector<QaRecord> alignment;   // answers drawn from the ignorance templates
    std::vector<QaRecord> finetune;
    std::vector<QaRecord> unseen_eval;
    std::vector<std::string> unverifiable;  // question strings about out-of-vocab nonsense
    std::vector<Entity> perturb_pool;
    std::vector<std::string> idk_templates;  // with a {S} subject slot
    Vocab vocab;
    std::uint64_t seed = 0;
};

struct PerturbedDataset {
    std::vector<QaRecord> records;
    std::vector<std::size_t> origin_index;
};

// The fixed ignorance-response templates; alignment answers sample from these.
const std::vector<std::string>& idk_template_table();

// Template rendered without the subject slot; used as the reference strings
// when scoring ignorance expressions.
std::string idk_reference_string(const std::string& tpl);
std::vector<std::string> idk_reference_strings(const CorpusBundle& bundle);

void validate(const CorpusConfig& config);

// Deterministic synthetic knowledge corpus. Same (config, seed) always yields
// a byte-identical bundle on disk.
CorpusBundle generate_corpus(const CorpusConfig& config);

// Replaces each record's subject with a type-consistent entity from the pool;
// the question is re-rendered from the same relation template, everything else
// is untouched.
PerturbedDataset perturb_entities(const std::vector<QaRecord>& ds, const std::vector<Entity>& pool,
                                  std::uint64_t seed);

// The subject slot of a relation's question template, re-rendered for an
// arbitrary subject name. Exposed so perturbation and tests share one path.
std::string render_question(const std::string& relation, const std::string& subject_name);

// Directory layout: six JSONL files + vocab.json + meta.json.
void save_corpus(const CorpusBundle& bundle, const std::filesystem::path& dir,
                 const std::string& config_hash = "");
CorpusBundle load_corpus(const std::filesystem::path& dir);

// Hash of the serialized vocabulary; the compatibility key between corpus
// directories and checkpoints trained on them.
std::string vocab_json(const Vocab& vocab);
std::string vocab_hash(const CorpusBundle& bundle);
std::string corpus_config_hash(const CorpusConfig& config);

}  // namespace seat
