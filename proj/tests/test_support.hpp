#pragma once

// Shared generators for property-style tests. Everything here is independent
// of the library's sampling helpers so the oracles stay honest.

#include "cxrlm/findings.hpp"
#include "cxrlm/kg.hpp"
#include "cxrlm/model.hpp"
#include "cxrlm/rng.hpp"

#include <string>
#include <vector>

namespace testsup {

inline const std::vector<std::string> kIdentPool = {
    "consolidation", "pleural_effusion", "cardiomegaly", "nodule",  "mass",
    "right_lung",    "left_lung",        "lower_lobe",   "apex",    "mediastinum",
    "adjacent_to",   "obscuring",        "size",         "severity", "opacity",
    "small",         "large",            "mild",         "severe",  "zzz_unknown",
};

inline std::string pick_ident(cxrlm::Rng& rng) {
    return kIdentPool[rng.index(kIdentPool.size())];
}

// valid random findings document: strictly increasing ids, unique attribute
// keys, relation targets chosen among the document's ids
inline cxrlm::findings::StructuredImageRepr random_doc(cxrlm::Rng& rng, size_t max_findings = 5) {
    cxrlm::findings::StructuredImageRepr doc;
    const size_t n = rng.index(max_findings + 1);
    std::vector<int64_t> ids;
    int64_t next_id = 0;
    for (size_t i = 0; i < n; ++i) {
        next_id += 1 + static_cast<int64_t>(rng.index(3));
        ids.push_back(next_id);
    }
    for (size_t i = 0; i < n; ++i) {
        cxrlm::findings::Finding f;
        f.id = ids[i];
        f.entity = pick_ident(rng);
        const size_t loc_len = rng.index(4);
        for (size_t k = 0; k < loc_len; ++k) f.location.push_back(pick_ident(rng));
        const size_t n_attr = rng.index(3);
        std::vector<std::string> keys = {"size", "severity", "opacity"};
        for (size_t k = 0; k < n_attr; ++k) f.attributes.emplace_back(keys[k], pick_ident(rng));
        const size_t n_rel = rng.index(3);
        for (size_t k = 0; k < n_rel; ++k)
            f.relations.emplace_back(pick_ident(rng), ids[rng.index(ids.size())]);
        doc.findings.push_back(std::move(f));
    }
    return doc;
}

inline cxrlm::kg::KnowledgeGraph random_kg(cxrlm::Rng& rng, size_t max_concepts = 8) {
    cxrlm::kg::KnowledgeGraph g;
    g.d_know = 1 + static_cast<int32_t>(rng.index(6));
    const size_t n = 1 + rng.index(max_concepts);
    std::vector<std::string> pool = kIdentPool;
    rng.shuffle(pool);
    size_t cursor = 0;
    for (size_t i = 0; i < n && cursor < pool.size(); ++i) {
        cxrlm::kg::Concept c;
        c.concept_id = static_cast<int32_t>(i);
        c.name = pool[cursor++];
        if (rng.uniform01() < 0.4 && cursor < pool.size()) c.synonyms.push_back(pool[cursor++]);
        c.category = rng.uniform01() < 0.5 ? "pathology" : "anatomy";
        c.is_critical = rng.uniform01() < 0.3;
        g.concepts.push_back(std::move(c));
    }
    const size_t n_edges = rng.index(4);
    for (size_t e = 0; e < n_edges && g.concepts.size() >= 2; ++e)
        g.edges.push_back({static_cast<int32_t>(rng.index(g.concepts.size())), "related_to",
                           static_cast<int32_t>(rng.index(g.concepts.size()))});
    g.embeddings = cxrlm::Matrix(g.concepts.size(), static_cast<size_t>(g.d_know));
    for (double& x : g.embeddings.a) x = rng.uniform(-1e3, 1e3);
    g.rebuild_surface_index();
    g.validate();
    return g;
}

// tiny model world (vocабulary of w0..w<k>, kg matching the first three words)
struct TinyWorld {
    cxrlm::tok::Vocabulary vocab;
    cxrlm::kg::KnowledgeGraph graph;
    cxrlm::model::ModelConfig cfg;
    cxrlm::model::ModelParams params;
    cxrlm::model::ConceptMatcher matcher;

    static TinyWorld make(int32_t n_words, cxrlm::model::ModelConfig cfg, uint64_t seed) {
        std::string corpus;
        for (int32_t i = 0; i < n_words; ++i) corpus += "w" + std::to_string(i) + " ";
        cxrlm::tok::Vocabulary vocab = cxrlm::tok::Vocabulary::build({corpus});

        cxrlm::kg::KnowledgeGraph graph;
        graph.d_know = cfg.d_know;
        for (int32_t i = 0; i < 3 && i < n_words; ++i) {
            cxrlm::kg::Concept c;
            c.concept_id = i;
            c.name = "w" + std::to_string(i);
            c.category = "test";
            graph.concepts.push_back(std::move(c));
        }
        cxrlm::kg::init_embeddings(graph, seed);
        graph.rebuild_surface_index();
        graph.validate();

        cfg.vocab_size = static_cast<int32_t>(vocab.size());
        auto params = cxrlm::model::ModelParams::init(cfg, graph, seed);
        cxrlm::model::ConceptMatcher matcher(graph, vocab);
        return TinyWorld{std::move(vocab), std::move(graph), cfg, std::move(params),
                         std::move(matcher)};
    }
};

} // namespace testsup
