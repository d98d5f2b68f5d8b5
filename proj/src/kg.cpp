#include "cxrlm/kg.hpp"

#include "cxrlm/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace cxrlm::kg {

using nlohmann::ordered_json;

void KnowledgeGraph::rebuild_surface_index() {
    surface_index.clear();
    for (const auto& c : concepts) {
        if (!surface_index.emplace(c.name, c.concept_id).second)
            throw DataError("kg: duplicate surface form '" + c.name + "'");
        for (const auto& syn : c.synonyms)
            if (!surface_index.emplace(syn, c.concept_id).second)
                throw DataError("kg: duplicate surface form '" + syn + "'");
    }
}

void KnowledgeGraph::validate() const {
    const int32_t n = static_cast<int32_t>(concepts.size());
    for (int32_t i = 0; i < n; ++i)
        if (concepts[i].concept_id != i)
            throw DataError("kg: concept ids must be dense 0..|V|-1, got " +
                            std::to_string(concepts[i].concept_id) + " at index " +
                            std::to_string(i));
    for (const auto& e : edges)
        if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n)
            throw DataError("kg: edge endpoint out of range (" + std::to_string(e.src) + " -> " +
                            std::to_string(e.dst) + ")");
    if (embeddings.rows != concepts.size() || embeddings.cols != static_cast<size_t>(d_know))
        throw DataError("kg: embedding matrix must be |V| x d_know");
    if (d_know <= 0) throw DataError("kg: d_know must be positive");
}

ConceptMatchSet match_concepts(const std::vector<std::string>& tokens, const KnowledgeGraph& graph) {
    std::set<int32_t> hit;
    for (const auto& tok : tokens) {
        auto it = graph.surface_index.find(tok);
        if (it != graph.surface_index.end()) hit.insert(it->second);
    }
    ConceptMatchSet out;
    out.concept_ids.assign(hit.begin(), hit.end());
    return out;
}

std::vector<double> aggregate_rows(const ConceptMatchSet& matches, const Matrix& table) {
    std::vector<double> out(table.cols, 0.0);
    if (matches.concept_ids.empty()) return out;
    for (int32_t id : matches.concept_ids) {
        const double* row = table.row(static_cast<size_t>(id));
        for (size_t j = 0; j < table.cols; ++j) out[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(matches.concept_ids.size());
    for (double& x : out) x *= inv;
    return out;
}

std::vector<double> aggregate_knowledge(const ConceptMatchSet& matches, const KnowledgeGraph& graph) {
    return aggregate_rows(matches, graph.embeddings);
}

namespace {

const ordered_json& require_field(const ordered_json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw DataError(std::string("kg: missing field '") + name + "'");
    return *it;
}

} // namespace

KnowledgeGraph kg_from_json_text(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("kg: malformed file: ") + e.what());
    }
    KnowledgeGraph g;
    if (require_field(j, "version").get<int>() != 1) throw DataError("kg: unsupported version");
    g.d_know = require_field(j, "d_know").get<int32_t>();

    for (const auto& cj : require_field(j, "concepts")) {
        Concept c;
        c.concept_id = require_field(cj, "id").get<int32_t>();
        c.name = require_field(cj, "name").get<std::string>();
        c.synonyms = require_field(cj, "synonyms").get<std::vector<std::string>>();
        c.category = require_field(cj, "category").get<std::string>();
        c.is_critical = require_field(cj, "is_critical").get<bool>();
        g.concepts.push_back(std::move(c));
    }
    for (const auto& ej : require_field(j, "edges")) {
        Edge e;
        e.src = require_field(ej, "src").get<int32_t>();
        e.rel = require_field(ej, "rel").get<std::string>();
        e.dst = require_field(ej, "dst").get<int32_t>();
        g.edges.push_back(std::move(e));
    }
    const auto& emb = require_field(j, "embeddings");
    g.embeddings = Matrix(g.concepts.size(), static_cast<size_t>(g.d_know));
    if (emb.size() != g.concepts.size()) throw DataError("kg: embedding row count != |V|");
    for (size_t i = 0; i < emb.size(); ++i) {
        const auto& row = emb[i];
        if (row.size() != static_cast<size_t>(g.d_know))
            throw DataError("kg: embedding row " + std::to_string(i) + " has wrong length");
        for (size_t k = 0; k < row.size(); ++k) g.embeddings.at(i, k) = row[k].get<double>();
    }
    g.rebuild_surface_index();
    g.validate();
    return g;
}

std::string kg_to_json_text(const KnowledgeGraph& graph) {
    ordered_json j;
    j["version"] = 1;
    j["d_know"] = graph.d_know;
    j["concepts"] = ordered_json::array();
    for (const auto& c : graph.concepts) {
        ordered_json cj;
        cj["id"] = c.concept_id;
        cj["name"] = c.name;
        cj["synonyms"] = c.synonyms;
        cj["category"] = c.category;
        cj["is_critical"] = c.is_critical;
        j["concepts"].push_back(std::move(cj));
    }
    j["edges"] = ordered_json::array();
    for (const auto& e : graph.edges) {
        ordered_json ej;
        ej["src"] = e.src;
        ej["rel"] = e.rel;
        ej["dst"] = e.dst;
        j["edges"].push_back(std::move(ej));
    }
    j["embeddings"] = ordered_json::array();
    for (size_t i = 0; i < graph.embeddings.rows; ++i) {
        ordered_json row = ordered_json::array();
        for (size_t k = 0; k < graph.embeddings.cols; ++k) row.push_back(graph.embeddings.at(i, k));
        j["embeddings"].push_back(std::move(row));
    }
    return j.dump(2) + "\n";
}

KnowledgeGraph load_kg(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("kg: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return kg_from_json_text(ss.str());
}

void save_kg(const KnowledgeGraph& graph, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("kg: cannot write '" + path + "'");
    out << kg_to_json_text(graph);
    if (!out) throw DataError("kg: write failed for '" + path + "'");
}

void init_embeddings(KnowledgeGraph& graph, uint64_t seed) {
    Rng rng(splitmix64(seed ^ 0x6b675f656d62ULL)); // independent stream for kg embeddings
    graph.embeddings = Matrix(graph.concepts.size(), static_cast<size_t>(graph.d_know));
    for (double& x : graph.embeddings.a) x = rng.uniform(-0.1, 0.1);
}

} // namespace cxrlm::kg
