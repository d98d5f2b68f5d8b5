#include "cxrlm/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace cxrlm::eval {

std::set<std::string> extract_labels(const std::string& response_text,
                                     const std::vector<std::string>& pathology_catalog) {
    const auto tokens = tok::tokenize(response_text);
    std::set<std::string> out;
    for (const auto& name : pathology_catalog) {
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] != name) continue;
            const bool negated = i > 0 && tokens[i - 1] == "no";
            if (!negated) {
                out.insert(name);
                break;
            }
        }
    }
    return out;
}

F1Result f1_scores(const std::vector<std::set<std::string>>& predicted,
                   const std::vector<std::set<std::string>>& gold,
                   const std::vector<std::string>& catalog) {
    if (predicted.size() != gold.size())
        throw DataError("f1_scores: predicted and gold counts differ");
    F1Result r;
    size_t pooled_tp = 0, pooled_fp = 0, pooled_fn = 0;
    double macro_sum = 0.0;
    size_t macro_n = 0;
    for (const auto& label : catalog) {
        PerLabelStats s;
        s.label = label;
        for (size_t i = 0; i < predicted.size(); ++i) {
            const bool p = predicted[i].count(label) > 0;
            const bool g = gold[i].count(label) > 0;
            if (p && g) ++s.tp;
            else if (p && !g) ++s.fp;
            else if (!p && g) ++s.fn;
        }
        s.has_support = (s.tp + s.fn) > 0;
        s.precision = (s.tp + s.fp) ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
        s.recall = (s.tp + s.fn) ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
        s.f1 = (s.precision + s.recall) > 0.0
                   ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                   : 0.0;
        pooled_tp += s.tp;
        pooled_fp += s.fp;
        pooled_fn += s.fn;
        if (s.has_support) {
            macro_sum += s.f1;
            ++macro_n;
        }
        r.per_label.push_back(std::move(s));
    }
    r.macro_f1 = macro_n ? macro_sum / static_cast<double>(macro_n) : 0.0;
    const double pp = (pooled_tp + pooled_fp) ? static_cast<double>(pooled_tp) / static_cast<double>(pooled_tp + pooled_fp) : 0.0;
    const double pr = (pooled_tp + pooled_fn) ? static_cast<double>(pooled_tp) / static_cast<double>(pooled_tp + pooled_fn) : 0.0;
    r.micro_f1 = (pp + pr) > 0.0 ? 2.0 * pp * pr / (pp + pr) : 0.0;
    return r;
}

double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const size_t n = candidate.size(), m = reference.size();
    std::vector<size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            if (candidate[i - 1] == reference[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[m]);
    const double p = lcs / static_cast<double>(n);
    const double r = lcs / static_cast<double>(m);
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

std::string normalize_answer(const std::string& text) {
    std::string out;
    bool in_space = true;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) out += ' ';
            in_space = true;
        } else {
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

double vqa_accuracy(const std::vector<std::string>& predicted,
                    const std::vector<std::string>& gold) {
    if (predicted.size() != gold.size())
        throw DataError("vqa_accuracy: predicted and gold counts differ");
    if (predicted.empty()) return std::nan("");
    size_t hits = 0;
    for (size_t i = 0; i < predicted.size(); ++i)
        if (normalize_answer(predicted[i]) == normalize_answer(gold[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double mrr(const std::vector<std::vector<std::string>>& predicted_rankings,
           const std::vector<std::string>& gold_top) {
    if (predicted_rankings.size() != gold_top.size())
        throw DataError("mrr: predicted and gold counts differ");
    if (predicted_rankings.empty()) return std::nan("");
    double total = 0.0;
    for (size_t i = 0; i < predicted_rankings.size(); ++i) {
        const auto& ranking = predicted_rankings[i];
        for (size_t r = 0; r < ranking.size(); ++r) {
            if (ranking[r] == gold_top[i]) {
                total += 1.0 / static_cast<double>(r + 1);
                break;
            }
        }
    }
    return total / static_cast<double>(predicted_rankings.size());
}

std::pair<double, double> error_rates(const std::vector<std::set<std::string>>& predicted,
                                      const std::vector<std::set<std::string>>& gold) {
    if (predicted.size() != gold.size())
        throw DataError("error_rates: predicted and gold counts differ");
    if (predicted.empty()) return {std::nan(""), std::nan("")};
    size_t halluc = 0, missing = 0;
    for (size_t i = 0; i < predicted.size(); ++i) {
        bool has_halluc = false, has_missing = false;
        for (const auto& l : predicted[i])
            if (!gold[i].count(l)) has_halluc = true;
        for (const auto& l : gold[i])
            if (!predicted[i].count(l)) has_missing = true;
        if (has_halluc) ++halluc;
        if (has_missing) ++missing;
    }
    const double n = static_cast<double>(predicted.size());
    return {static_cast<double>(halluc) / n, static_cast<double>(missing) / n};
}

std::vector<std::string> parse_ranking_line(const std::string& response) {
    const auto tokens = tok::tokenize(response);
    if (tokens.size() < 3 || tokens[0] != "ddx" || tokens[1] != ":") return {};
    std::vector<std::string> ranking;
    bool expect_name = true;
    for (size_t i = 2; i < tokens.size(); ++i) {
        if (expect_name) {
            if (tokens[i] == ",") return {}; // malformed
            if (std::find(ranking.begin(), ranking.end(), tokens[i]) == ranking.end())
                ranking.push_back(tokens[i]);
            expect_name = false;
        } else {
            if (tokens[i] != ",") return {};
            expect_name = true;
        }
    }
    if (expect_name) return {}; // trailing comma
    return ranking;
}

MetricReport evaluate_model(const model::ModelParams& params, const kg::KnowledgeGraph& graph,
                            const tok::Vocabulary& vocab,
                            const std::vector<data::InstructionExample>& dataset,
                            const decode::DecodeConfig& decode_cfg, bool use_kg,
                            const std::vector<std::string>& pathology_catalog) {
    const model::ConceptMatcher matcher(graph, vocab);
    const size_t max_seq_len = static_cast<size_t>(params.cfg.max_seq_len);

    std::vector<std::set<std::string>> pred_labels, gold_labels;
    std::vector<std::string> vqa_pred, vqa_gold;
    std::vector<std::string> lq_pred, lq_gold;
    std::vector<std::vector<std::string>> ddx_pred;
    std::vector<std::string> ddx_gold;
    double rouge_sum = 0.0;
    size_t n_report = 0;

    for (const auto& ex : dataset) {
        const tok::TokenSeq img = vocab.encode_text(findings::serialize_findings(ex.image_repr));
        const tok::TokenSeq instr = vocab.encode_text(ex.instruction);
        const auto input = tok::build_input(img, instr, max_seq_len);
        const auto out_ids = decode::generate(params, &matcher, input.ids, decode_cfg, use_kg);
        tok::TokenSeq out_seq;
        out_seq.ids = out_ids;
        const std::string text = vocab.decode_text(out_seq);

        switch (ex.task_kind) {
            case data::TaskKind::report: {
                ++n_report;
                rouge_sum += rouge_l(tok::tokenize(text), tok::tokenize(ex.response));
                pred_labels.push_back(extract_labels(text, pathology_catalog));
                gold_labels.emplace_back(ex.gold_labels.begin(), ex.gold_labels.end());
                break;
            }
            case data::TaskKind::vqa_yesno:
            case data::TaskKind::vqa_factoid:
                vqa_pred.push_back(text);
                vqa_gold.push_back(ex.response);
                break;
            case data::TaskKind::label_query:
                lq_pred.push_back(text);
                lq_gold.push_back(ex.response);
                break;
            case data::TaskKind::ddx_rank:
                ddx_pred.push_back(parse_ranking_line(text));
                ddx_gold.push_back(ex.gold_ranking && !ex.gold_ranking->empty()
                                       ? ex.gold_ranking->front()
                                       : std::string());
                break;
        }
    }

    MetricReport report;
    report.n_report = n_report;
    report.n_vqa = vqa_pred.size();
    report.n_ddx = ddx_pred.size();
    report.n_label_query = lq_pred.size();

    if (n_report) {
        const auto f1 = f1_scores(pred_labels, gold_labels, pathology_catalog);
        report.macro_f1 = f1.macro_f1;
        report.micro_f1 = f1.micro_f1;
        report.per_label = f1.per_label;
        report.report_score = rouge_sum / static_cast<double>(n_report);
        const auto [h, m] = error_rates(pred_labels, gold_labels);
        report.hallucination_rate = h;
        report.missing_rate = m;
    } else {
        report.macro_f1 = report.micro_f1 = report.report_score = std::nan("");
        report.hallucination_rate = report.missing_rate = std::nan("");
    }
    report.vqa_accuracy = vqa_accuracy(vqa_pred, vqa_gold);
    report.label_query_accuracy = vqa_accuracy(lq_pred, lq_gold);
    report.ddx_mrr = mrr(ddx_pred, ddx_gold);
    return report;
}

namespace {

nlohmann::ordered_json metric_json(const MetricReport& r) {
    nlohmann::ordered_json j;
    j["report_score_definition"] = "rouge_l_f_only";
    j["macro_f1"] = r.macro_f1;
    j["micro_f1"] = r.micro_f1;
    j["report_score"] = r.report_score;
    j["vqa_accuracy"] = r.vqa_accuracy;
    j["ddx_mrr"] = r.ddx_mrr;
    j["hallucination_rate"] = r.hallucination_rate;
    j["missing_rate"] = r.missing_rate;
    j["label_query_accuracy"] = r.label_query_accuracy;
    j["counts"] = {{"report", r.n_report},
                   {"vqa", r.n_vqa},
                   {"ddx", r.n_ddx},
                   {"label_query", r.n_label_query}};
    j["per_label"] = nlohmann::ordered_json::array();
    for (const auto& s : r.per_label) {
        nlohmann::ordered_json lj;
        lj["label"] = s.label;
        lj["tp"] = s.tp;
        lj["fp"] = s.fp;
        lj["fn"] = s.fn;
        lj["precision"] = s.precision;
        lj["recall"] = s.recall;
        lj["f1"] = s.f1;
        lj["has_support"] = s.has_support;
        j["per_label"].push_back(std::move(lj));
    }
    return j;
}

} // namespace

std::string metric_report_to_json(const MetricReport& report) {
    return metric_json(report).dump(2) + "\n";
}

std::string metric_report_table(const MetricReport& report) {
    std::ostringstream out;
    out << "metric                 value\n";
    out << "---------------------  ------\n";
    auto row = [&out](const char* name, double v) {
        out << name;
        for (size_t i = std::string(name).size(); i < 23; ++i) out << ' ';
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        out << buf << '\n';
    };
    row("macro_f1", report.macro_f1);
    row("micro_f1", report.micro_f1);
    row("report_score (rouge_l)", report.report_score);
    row("vqa_accuracy", report.vqa_accuracy);
    row("ddx_mrr", report.ddx_mrr);
    row("hallucination_rate", report.hallucination_rate);
    row("missing_rate", report.missing_rate);
    row("label_query_accuracy", report.label_query_accuracy);
    out << "per-label (tp/fp/fn, f1):\n";
    for (const auto& s : report.per_label) {
        out << "  " << s.label;
        for (size_t i = s.label.size(); i < 20; ++i) out << ' ';
        out << s.tp << '/' << s.fp << '/' << s.fn << "  ";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", s.f1);
        out << buf << (s.has_support ? "" : "  (no support)") << '\n';
    }
    return out.str();
}

bool metric_report_has_nan(const MetricReport& report) {
    for (double v : {report.macro_f1, report.micro_f1, report.report_score, report.vqa_accuracy,
                     report.ddx_mrr, report.hallucination_rate, report.missing_rate,
                     report.label_query_accuracy})
        if (std::isnan(v)) return true;
    return false;
}

namespace {

double median_of(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

MetricReport median_report(const std::vector<MetricReport>& reports) {
    MetricReport m;
    auto collect = [&reports](double MetricReport::* field) {
        std::vector<double> v;
        for (const auto& r : reports) v.push_back(r.*field);
        return median_of(std::move(v));
    };
    m.macro_f1 = collect(&MetricReport::macro_f1);
    m.micro_f1 = collect(&MetricReport::micro_f1);
    m.report_score = collect(&MetricReport::report_score);
    m.vqa_accuracy = collect(&MetricReport::vqa_accuracy);
    m.ddx_mrr = collect(&MetricReport::ddx_mrr);
    m.hallucination_rate = collect(&MetricReport::hallucination_rate);
    m.missing_rate = collect(&MetricReport::missing_rate);
    m.label_query_accuracy = collect(&MetricReport::label_query_accuracy);
    return m;
}

} // namespace

AblationResult ablation_run(const std::vector<data::InstructionExample>& dataset,
                            const kg::KnowledgeGraph& graph, const model::ModelConfig& model_cfg,
                            const train::TrainConfig& train_cfg,
                            const std::vector<uint64_t>& seeds,
                            const std::vector<std::string>& pathology_catalog,
                            double test_fraction) {
    if (seeds.empty()) throw UsageError("ablation: at least one seed required");
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw UsageError("ablation: test fraction must lie in (0,1)");

    AblationResult result;
    decode::DecodeConfig greedy_cfg; // deterministic evaluation

    std::vector<MetricReport> fulls, nokgs;
    for (uint64_t seed : seeds) {
        const auto parts =
            data::split(dataset, {1.0 - test_fraction, 0.0, test_fraction}, seed);
        const tok::Vocabulary vocab = tok::Vocabulary::build(train::dataset_corpus(parts.train));

        // fresh per-seed concept embeddings; both arms share them exactly
        kg::KnowledgeGraph seeded_graph = graph;
        kg::init_embeddings(seeded_graph, seed);

        // the "full" arm inherits train_cfg.disable_kg so a control run can
        // disable knowledge integration in both arms
        train::TrainConfig full_cfg = train_cfg;
        full_cfg.seed = seed;
        train::TrainConfig nokg_cfg = full_cfg;
        nokg_cfg.disable_kg = true;

        const auto full = train::train(parts.train, seeded_graph, vocab, model_cfg, full_cfg);
        const auto nokg = train::train(parts.train, seeded_graph, vocab, model_cfg, nokg_cfg);

        AblationArm arm;
        arm.seed = seed;
        arm.full = evaluate_model(full.params, seeded_graph, vocab, parts.test, greedy_cfg,
                                  !full_cfg.disable_kg, pathology_catalog);
        arm.nokg = evaluate_model(nokg.params, seeded_graph, vocab, parts.test, greedy_cfg, false,
                                  pathology_catalog);
        fulls.push_back(arm.full);
        nokgs.push_back(arm.nokg);
        result.arms.push_back(std::move(arm));
    }
    result.median_full = median_report(fulls);
    result.median_nokg = median_report(nokgs);
    return result;
}

} // namespace cxrlm::eval
