#pragma once

#include "cxrlm/findings.hpp"
#include "cxrlm/kg.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cxrlm::data {

enum class TaskKind { report, vqa_yesno, vqa_factoid, label_query, ddx_rank };

const char* task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name); // throws DataError

struct InstructionExample {
    findings::StructuredImageRepr image_repr;
    std::string instruction;
    std::string response;
    TaskKind task_kind = TaskKind::report;
    std::set<std::string> gold_labels; // entity set of image_repr
    std::optional<std::vector<std::string>> gold_ranking; // ddx_rank only

    bool operator==(const InstructionExample&) const = default;
};

struct Pathology {
    std::string name;
    std::vector<std::string> synonyms;
    std::string category;
    bool is_critical = false;
    double prevalence = 1.0;

    bool operator==(const Pathology&) const = default;
};

struct GeneratorConfig {
    uint64_t seed = 0;
    size_t n_examples = 0;
    size_t max_findings = 3;
    std::vector<Pathology> pathologies;
    std::vector<std::vector<std::string>> locations; // coarse-to-fine paths
    std::vector<std::pair<std::string, std::vector<std::string>>> attributes;
    std::vector<std::string> relations;
    std::vector<std::pair<TaskKind, double>> task_mix; // proportions sum to 1

    void validate() const; // throws DataError
};

GeneratorConfig default_generator_config();

GeneratorConfig generator_config_from_json_text(const std::string& text);
std::string generator_config_to_json_text(const GeneratorConfig& config);
GeneratorConfig load_generator_config(const std::string& path);

// Knowledge graph over the catalogs: one concept per pathology, location
// identifier and relation name, with d_know-dimensional seeded embeddings.
kg::KnowledgeGraph build_catalog_kg(const GeneratorConfig& config, int32_t d_know, uint64_t seed);

// Deterministic per-example streams: example i is generated from a seed
// derived from (config.seed, i), so sharded generation concatenates to the
// same dataset as a single pass.
std::vector<InstructionExample> generate_dataset(const GeneratorConfig& config);
std::vector<InstructionExample> generate_range(const GeneratorConfig& config, size_t begin,
                                               size_t end);

void write_jsonl(const std::vector<InstructionExample>& dataset, const std::string& path);
std::vector<InstructionExample> read_jsonl(const std::string& path);

std::string example_to_json_line(const InstructionExample& ex);
InstructionExample example_from_json_line(const std::string& line, size_t line_no = 0);

struct SplitResult {
    std::vector<InstructionExample> train, val, test;
};

// Disjoint partition with a seeded shuffle; sizes follow the fractions with
// largest-remainder rounding.
SplitResult split(const std::vector<InstructionExample>& dataset,
                  const std::array<double, 3>& fractions, uint64_t seed);

} // namespace cxrlm::data
