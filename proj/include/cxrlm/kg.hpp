#pragma once

#include "cxrlm/errors.hpp"
#include "cxrlm/tensor.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace cxrlm::kg {

struct Concept {
    int32_t concept_id = 0;
    std::string name;
    std::vector<std::string> synonyms;
    std::string category;
    bool is_critical = false;

    bool operator==(const Concept&) const = default;
};

struct Edge {
    int32_t src = 0;
    std::string rel;
    int32_t dst = 0;

    bool operator==(const Edge&) const = default;
};

// Radiology knowledge graph: concepts with surface forms, typed edges and a
// |V| x d_know embedding matrix (one row per concept).
struct KnowledgeGraph {
    std::vector<Concept> concepts;
    std::vector<Edge> edges;
    Matrix embeddings;
    int32_t d_know = 0;

    // surface form (name or synonym) -> concept id; forms are globally unique
    std::unordered_map<std::string, int32_t> surface_index;

    void rebuild_surface_index(); // throws DataError on duplicate surface form
    void validate() const;

    bool has_surface_form(const std::string& token) const {
        return surface_index.count(token) > 0;
    }

    bool operator==(const KnowledgeGraph& o) const {
        return concepts == o.concepts && edges == o.edges && embeddings == o.embeddings &&
               d_know == o.d_know;
    }
};

// Sorted, deduplicated concept ids matched against an input token sequence.
struct ConceptMatchSet {
    std::vector<int32_t> concept_ids;

    bool operator==(const ConceptMatchSet&) const = default;
};

// Exact lexical match of concept names/synonyms against the tokens.
ConceptMatchSet match_concepts(const std::vector<std::string>& tokens, const KnowledgeGraph& graph);

// Mean of the matched concepts' embedding rows; all-zeros when the match set
// is empty so the projection degenerates to its bias.
std::vector<double> aggregate_knowledge(const ConceptMatchSet& matches, const KnowledgeGraph& graph);

// Same aggregation over an arbitrary embedding table of shape |V| x d.
std::vector<double> aggregate_rows(const ConceptMatchSet& matches, const Matrix& table);

// JSON file with fields version, d_know, concepts, edges, embeddings.
// Round-trips embeddings bit-for-bit.
KnowledgeGraph load_kg(const std::string& path);
void save_kg(const KnowledgeGraph& graph, const std::string& path);

KnowledgeGraph kg_from_json_text(const std::string& text);
std::string kg_to_json_text(const KnowledgeGraph& graph);

// Seeds the embedding matrix i.i.d. uniform in [-0.1, 0.1].
void init_embeddings(KnowledgeGraph& graph, uint64_t seed);

} // namespace cxrlm::kg
