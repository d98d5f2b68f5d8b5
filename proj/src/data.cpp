#include "cxrlm/data.hpp"

#include "cxrlm/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace cxrlm::data {

using nlohmann::ordered_json;

const char* task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::report: return "report";
        case TaskKind::vqa_yesno: return "vqa_yesno";
        case TaskKind::vqa_factoid: return "vqa_factoid";
        case TaskKind::label_query: return "label_query";
        case TaskKind::ddx_rank: return "ddx_rank";
    }
    throw DataError("unknown task kind");
}

TaskKind task_kind_from_name(const std::string& name) {
    for (TaskKind k : {TaskKind::report, TaskKind::vqa_yesno, TaskKind::vqa_factoid,
                       TaskKind::label_query, TaskKind::ddx_rank})
        if (name == task_kind_name(k)) return k;
    throw DataError("unknown task kind '" + name + "'");
}

void GeneratorConfig::validate() const {
    if (pathologies.empty()) throw DataError("generator config: pathology catalog is empty");
    if (locations.empty()) throw DataError("generator config: location catalog is empty");
    if (relations.empty()) throw DataError("generator config: relation catalog is empty");
    if (task_mix.empty()) throw DataError("generator config: task mix is empty");
    if (max_findings == 0) throw DataError("generator config: max_findings must be positive");
    double total = 0.0;
    for (const auto& [kind, p] : task_mix) {
        if (p < 0.0) throw DataError("generator config: negative task proportion");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw DataError("generator config: task proportions must sum to 1");
    for (const auto& p : pathologies)
        if (p.prevalence <= 0.0)
            throw DataError("generator config: prevalence must be positive for " + p.name);
}

GeneratorConfig default_generator_config() {
    GeneratorConfig c;
    c.seed = 1;
    c.n_examples = 256;
    c.max_findings = 3;
    c.pathologies = {
        {"cardiomegaly", {"enlarged_heart"}, "cardiac", false, 0.14},
        {"pleural_effusion", {"effusion", "pleural_fluid"}, "pleural", false, 0.13},
        {"consolidation", {"airspace_opacity"}, "airspace", true, 0.12},
        {"atelectasis", {"volume_loss"}, "airspace", false, 0.11},
        {"pneumonia", {}, "infection", true, 0.10},
        {"pneumothorax", {"collapsed_lung"}, "pleural", true, 0.08},
        {"edema", {"pulmonary_edema"}, "vascular", true, 0.08},
        {"nodule", {}, "parenchymal", false, 0.06},
        {"mass", {}, "parenchymal", true, 0.05},
        {"infiltration", {}, "airspace", false, 0.05},
        {"pleural_thickening", {}, "pleural", false, 0.03},
        {"emphysema", {}, "parenchymal", false, 0.02},
        {"fibrosis", {}, "parenchymal", false, 0.02},
        {"hernia", {"hiatal_hernia"}, "mediastinal", false, 0.01},
    };
    c.locations = {
        {"right_lung", "upper_lobe"},
        {"right_lung", "middle_lobe"},
        {"right_lung", "lower_lobe"},
        {"left_lung", "upper_lobe"},
        {"left_lung", "lower_lobe"},
        {"left_lung", "lingula"},
        {"right_lung", "apex"},
        {"left_lung", "apex"},
        {"right_costophrenic_angle"},
        {"left_costophrenic_angle"},
        {"cardiac_silhouette"},
        {"mediastinum"},
        {"right_hilum"},
        {"left_hilum"},
    };
    c.attributes = {
        {"size", {"small", "moderate", "large"}},
        {"severity", {"mild", "moderate", "severe"}},
        {"opacity", {"faint", "dense"}},
    };
    c.relations = {"adjacent_to", "obscuring", "associated_with"};
    c.task_mix = {
        {TaskKind::report, 0.30},
        {TaskKind::vqa_yesno, 0.20},
        {TaskKind::vqa_factoid, 0.10},
        {TaskKind::label_query, 0.30},
        {TaskKind::ddx_rank, 0.10},
    };
    return c;
}

kg::KnowledgeGraph build_catalog_kg(const GeneratorConfig& config, int32_t d_know, uint64_t seed) {
    kg::KnowledgeGraph g;
    g.d_know = d_know;
    auto add = [&g](const std::string& name, const std::vector<std::string>& synonyms,
                    const std::string& category, bool critical) {
        kg::Concept c;
        c.concept_id = static_cast<int32_t>(g.concepts.size());
        c.name = name;
        c.synonyms = synonyms;
        c.category = category;
        c.is_critical = critical;
        g.concepts.push_back(std::move(c));
        return g.concepts.back().concept_id;
    };

    std::vector<int32_t> pathology_ids;
    for (const auto& p : config.pathologies)
        pathology_ids.push_back(add(p.name, p.synonyms, p.category, p.is_critical));

    std::map<std::string, int32_t> location_ids;
    for (const auto& path : config.locations)
        for (const auto& step : path)
            if (!location_ids.count(step)) location_ids[step] = add(step, {}, "anatomy", false);

    for (const auto& rel : config.relations) add(rel, {}, "relation", false);

    // typical-location edges keep the graph structurally non-trivial
    for (size_t i = 0; i < config.pathologies.size(); ++i) {
        const auto& path = config.locations[i % config.locations.size()];
        g.edges.push_back({pathology_ids[i], "has_location", location_ids.at(path.back())});
    }

    kg::init_embeddings(g, seed);
    g.rebuild_surface_index();
    g.validate();
    return g;
}

namespace {

struct Catalog {
    const GeneratorConfig& config;

    const Pathology& by_name(const std::string& name) const {
        for (const auto& p : config.pathologies)
            if (p.name == name) return p;
        throw DataError("unknown pathology '" + name + "'");
    }
};

std::string join_path(const std::vector<std::string>& path, const char* sep) {
    std::string out;
    for (size_t i = 0; i < path.size(); ++i) {
        if (i) out += sep;
        out += path[i];
    }
    return out;
}

std::vector<size_t> sample_distinct_pathologies(const GeneratorConfig& config, size_t count,
                                                Rng& rng) {
    std::vector<double> weights;
    weights.reserve(config.pathologies.size());
    for (const auto& p : config.pathologies) weights.push_back(p.prevalence);
    std::vector<size_t> chosen;
    for (size_t k = 0; k < count; ++k) {
        size_t idx = rng.weighted(weights);
        chosen.push_back(idx);
        weights[idx] = 0.0; // without replacement
    }
    return chosen;
}

findings::StructuredImageRepr sample_image(const GeneratorConfig& config, size_t n_findings,
                                           bool force_location, Rng& rng) {
    findings::StructuredImageRepr doc;
    const auto chosen = sample_distinct_pathologies(config, n_findings, rng);
    for (size_t k = 0; k < chosen.size(); ++k) {
        findings::Finding f;
        f.id = static_cast<int64_t>(k + 1);
        f.entity = config.pathologies[chosen[k]].name;
        const bool with_location = force_location || rng.uniform01() < 0.8;
        if (with_location) f.location = config.locations[rng.index(config.locations.size())];
        const size_t n_attrs = rng.index(3); // 0..2
        std::vector<size_t> attr_idx(config.attributes.size());
        for (size_t i = 0; i < attr_idx.size(); ++i) attr_idx[i] = i;
        rng.shuffle(attr_idx);
        for (size_t a = 0; a < std::min(n_attrs, attr_idx.size()); ++a) {
            const auto& [key, values] = config.attributes[attr_idx[a]];
            f.attributes.emplace_back(key, values[rng.index(values.size())]);
        }
        doc.findings.push_back(std::move(f));
    }
    // occasional relation between two findings
    if (doc.findings.size() >= 2 && rng.uniform01() < 0.3) {
        const size_t src = rng.index(doc.findings.size());
        size_t dst = rng.index(doc.findings.size() - 1);
        if (dst >= src) ++dst;
        doc.findings[src].relations.emplace_back(
            config.relations[rng.index(config.relations.size())],
            doc.findings[dst].id);
    }
    return doc;
}

std::vector<std::string> ordered_entities(const findings::StructuredImageRepr& doc) {
    std::vector<std::string> out;
    for (const auto& f : doc.findings)
        if (std::find(out.begin(), out.end(), f.entity) == out.end()) out.push_back(f.entity);
    return out;
}

std::string report_response(const findings::StructuredImageRepr& doc,
                            const std::vector<std::string>& negatives) {
    std::string out = "findings :";
    if (doc.findings.empty()) {
        out += " no acute abnormality";
    } else {
        for (size_t i = 0; i < doc.findings.size(); ++i) {
            const auto& f = doc.findings[i];
            if (i) out += " .";
            out += " " + f.entity;
            if (!f.location.empty()) out += " @ " + join_path(f.location, " / ");
        }
    }
    for (const auto& name : negatives) out += " . no " + name;
    return out;
}

std::string label_query_response(const findings::StructuredImageRepr& doc, const Catalog& catalog) {
    std::vector<std::string> critical;
    for (const auto& entity : ordered_entities(doc))
        if (catalog.by_name(entity).is_critical) critical.push_back(entity);
    if (critical.empty()) return "critical : none";
    std::string out = "critical : " + critical[0];
    for (size_t i = 1; i < critical.size(); ++i) out += " , " + critical[i];
    return out;
}

std::vector<std::string> ddx_ranking(const findings::StructuredImageRepr& doc,
                                     const Catalog& catalog) {
    std::vector<std::string> entities = ordered_entities(doc);
    std::stable_sort(entities.begin(), entities.end(),
                     [&catalog](const std::string& a, const std::string& b) {
                         const auto& pa = catalog.by_name(a);
                         const auto& pb = catalog.by_name(b);
                         if (pa.is_critical != pb.is_critical) return pa.is_critical;
                         if (pa.prevalence != pb.prevalence) return pa.prevalence > pb.prevalence;
                         return a < b;
                     });
    return entities;
}

InstructionExample generate_example(const GeneratorConfig& config, size_t index) {
    Rng rng = Rng::derive(config.seed, index);
    Catalog catalog{config};

    std::vector<double> mix_weights;
    for (const auto& [kind, p] : config.task_mix) mix_weights.push_back(p);
    const TaskKind kind = config.task_mix[rng.weighted(mix_weights)].first;

    size_t n_findings = 0;
    bool force_location = false;
    switch (kind) {
        case TaskKind::report:
        case TaskKind::vqa_yesno:
            n_findings = rng.index(config.max_findings + 1); // 0..max
            break;
        case TaskKind::label_query:
        case TaskKind::ddx_rank:
            n_findings = 1 + rng.index(config.max_findings);
            break;
        case TaskKind::vqa_factoid:
            n_findings = 1 + rng.index(config.max_findings);
            force_location = true;
            break;
    }

    InstructionExample ex;
    ex.task_kind = kind;
    ex.image_repr = sample_image(config, n_findings, force_location, rng);
    for (const auto& f : ex.image_repr.findings) ex.gold_labels.insert(f.entity);

    switch (kind) {
        case TaskKind::report: {
            ex.instruction = "generate the findings report";
            // pertinent negatives are the first two absent catalog entries, so
            // the response stays a pure function of the image representation
            std::vector<std::string> negatives;
            for (const auto& p : config.pathologies) {
                if (negatives.size() == 2) break;
                if (!ex.gold_labels.count(p.name)) negatives.push_back(p.name);
            }
            ex.response = report_response(ex.image_repr, negatives);
            break;
        }
        case TaskKind::vqa_yesno: {
            const bool ask_present = !ex.image_repr.findings.empty() && rng.uniform01() < 0.5;
            std::string asked;
            if (ask_present) {
                const auto entities = ordered_entities(ex.image_repr);
                asked = entities[rng.index(entities.size())];
            } else {
                std::vector<std::string> absent;
                for (const auto& p : config.pathologies)
                    if (!ex.gold_labels.count(p.name)) absent.push_back(p.name);
                asked = absent[rng.index(absent.size())];
            }
            ex.instruction = "is " + asked + " present ?";
            ex.response = ex.gold_labels.count(asked) ? "yes" : "no";
            break;
        }
        case TaskKind::vqa_factoid: {
            const auto& f = ex.image_repr.findings[rng.index(ex.image_repr.findings.size())];
            ex.instruction = "where is " + f.entity + " ?";
            ex.response = join_path(f.location, " / ");
            break;
        }
        case TaskKind::label_query: {
            ex.instruction = "list the critical findings";
            ex.response = label_query_response(ex.image_repr, catalog);
            break;
        }
        case TaskKind::ddx_rank: {
            ex.instruction = "rank the differential diagnosis";
            const auto ranking = ddx_ranking(ex.image_repr, catalog);
            ex.gold_ranking = ranking;
            std::string out = "ddx : " + ranking[0];
            for (size_t i = 1; i < ranking.size(); ++i) out += " , " + ranking[i];
            ex.response = out;
            break;
        }
    }
    return ex;
}

} // namespace

std::vector<InstructionExample> generate_range(const GeneratorConfig& config, size_t begin,
                                               size_t end) {
    config.validate();
    if (begin > end || end > config.n_examples)
        throw DataError("generate_range: bad range");
    std::vector<InstructionExample> out;
    out.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) out.push_back(generate_example(config, i));
    return out;
}

std::vector<InstructionExample> generate_dataset(const GeneratorConfig& config) {
    return generate_range(config, 0, config.n_examples);
}

std::string example_to_json_line(const InstructionExample& ex) {
    ordered_json j;
    j["image_repr"] = findings::serialize_findings(ex.image_repr);
    j["instruction"] = ex.instruction;
    j["response"] = ex.response;
    j["task_kind"] = task_kind_name(ex.task_kind);
    j["gold_labels"] = std::vector<std::string>(ex.gold_labels.begin(), ex.gold_labels.end());
    if (ex.gold_ranking) j["gold_ranking"] = *ex.gold_ranking;
    return j.dump();
}

InstructionExample example_from_json_line(const std::string& line, size_t line_no) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const std::exception& e) {
        throw DataError("dataset line " + std::to_string(line_no) + ": malformed record: " +
                        e.what());
    }
    InstructionExample ex;
    try {
        ex.image_repr = findings::parse_findings(j.at("image_repr").get<std::string>());
        ex.instruction = j.at("instruction").get<std::string>();
        ex.response = j.at("response").get<std::string>();
        ex.task_kind = task_kind_from_name(j.at("task_kind").get<std::string>());
        for (const auto& l : j.at("gold_labels")) ex.gold_labels.insert(l.get<std::string>());
        if (j.contains("gold_ranking"))
            ex.gold_ranking = j.at("gold_ranking").get<std::vector<std::string>>();
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    if (ex.response.empty())
        throw DataError("dataset line " + std::to_string(line_no) + ": empty response");
    if ((ex.task_kind == TaskKind::ddx_rank) != ex.gold_ranking.has_value())
        throw DataError("dataset line " + std::to_string(line_no) +
                        ": gold_ranking must be present exactly for ddx_rank");
    return ex;
}

void write_jsonl(const std::vector<InstructionExample>& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("dataset: cannot write '" + path + "'");
    for (const auto& ex : dataset) out << example_to_json_line(ex) << '\n';
    if (!out) throw DataError("dataset: write failed for '" + path + "'");
}

std::vector<InstructionExample> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("dataset: cannot open '" + path + "'");
    std::vector<InstructionExample> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        out.push_back(example_from_json_line(line, line_no));
    }
    return out;
}

SplitResult split(const std::vector<InstructionExample>& dataset,
                  const std::array<double, 3>& fractions, uint64_t seed) {
    double total = fractions[0] + fractions[1] + fractions[2];
    if (total <= 0.0) throw DataError("split: fractions must sum to a positive value");
    for (double f : fractions)
        if (f < 0.0) throw DataError("split: negative fraction");

    const size_t n = dataset.size();
    // largest-remainder apportionment
    std::array<double, 3> exact{};
    std::array<size_t, 3> sizes{};
    size_t assigned = 0;
    for (size_t i = 0; i < 3; ++i) {
        exact[i] = static_cast<double>(n) * fractions[i] / total;
        sizes[i] = static_cast<size_t>(std::floor(exact[i]));
        assigned += sizes[i];
    }
    std::array<size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&exact, &sizes](size_t a, size_t b) {
        return exact[a] - std::floor(exact[a]) > exact[b] - std::floor(exact[b]);
    });
    for (size_t i = 0; assigned < n; ++i, ++assigned) ++sizes[order[i % 3]];

    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(splitmix64(seed ^ 0x73706c6974ULL)); // split stream
    rng.shuffle(idx);

    SplitResult r;
    size_t pos = 0;
    for (size_t i = 0; i < sizes[0]; ++i) r.train.push_back(dataset[idx[pos++]]);
    for (size_t i = 0; i < sizes[1]; ++i) r.val.push_back(dataset[idx[pos++]]);
    for (size_t i = 0; i < sizes[2]; ++i) r.test.push_back(dataset[idx[pos++]]);
    return r;
}

namespace {

ordered_json task_mix_to_json(const std::vector<std::pair<TaskKind, double>>& mix) {
    ordered_json j = ordered_json::object();
    for (const auto& [kind, p] : mix) j[task_kind_name(kind)] = p;
    return j;
}

} // namespace

std::string generator_config_to_json_text(const GeneratorConfig& config) {
    ordered_json j;
    j["seed"] = config.seed;
    j["n_examples"] = config.n_examples;
    j["max_findings"] = config.max_findings;
    j["pathologies"] = ordered_json::array();
    for (const auto& p : config.pathologies) {
        ordered_json pj;
        pj["name"] = p.name;
        pj["synonyms"] = p.synonyms;
        pj["category"] = p.category;
        pj["is_critical"] = p.is_critical;
        pj["prevalence"] = p.prevalence;
        j["pathologies"].push_back(std::move(pj));
    }
    j["locations"] = config.locations;
    j["attributes"] = ordered_json::array();
    for (const auto& [key, values] : config.attributes) {
        ordered_json aj;
        aj["key"] = key;
        aj["values"] = values;
        j["attributes"].push_back(std::move(aj));
    }
    j["relations"] = config.relations;
    j["task_mix"] = task_mix_to_json(config.task_mix);
    return j.dump(2) + "\n";
}

GeneratorConfig generator_config_from_json_text(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("generator config: malformed json: ") + e.what());
    }
    GeneratorConfig c;
    try {
        c.seed = j.at("seed").get<uint64_t>();
        c.n_examples = j.at("n_examples").get<size_t>();
        c.max_findings = j.at("max_findings").get<size_t>();
        for (const auto& pj : j.at("pathologies")) {
            Pathology p;
            p.name = pj.at("name").get<std::string>();
            p.synonyms = pj.at("synonyms").get<std::vector<std::string>>();
            p.category = pj.at("category").get<std::string>();
            p.is_critical = pj.at("is_critical").get<bool>();
            p.prevalence = pj.at("prevalence").get<double>();
            c.pathologies.push_back(std::move(p));
        }
        c.locations = j.at("locations").get<std::vector<std::vector<std::string>>>();
        for (const auto& aj : j.at("attributes"))
            c.attributes.emplace_back(aj.at("key").get<std::string>(),
                                      aj.at("values").get<std::vector<std::string>>());
        c.relations = j.at("relations").get<std::vector<std::string>>();
        for (const auto& [name, p] : j.at("task_mix").items())
            c.task_mix.emplace_back(task_kind_from_name(name), p.get<double>());
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError(std::string("generator config: ") + e.what());
    }
    c.validate();
    return c;
}

GeneratorConfig load_generator_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("generator config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return generator_config_from_json_text(ss.str());
}

} // namespace cxrlm::data
