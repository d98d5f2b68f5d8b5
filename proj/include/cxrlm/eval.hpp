#pragma once

#include "cxrlm/data.hpp"
#include "cxrlm/decode.hpp"
#include "cxrlm/training.hpp"

#include <set>
#include <string>
#include <vector>

namespace cxrlm::eval {

struct PerLabelStats {
    std::string label;
    size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    bool has_support = false; // labels without gold support stay out of macro F1
};

struct MetricReport {
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    double report_score = 0.0; // ROUGE-L F only; no embedding-based component
    double vqa_accuracy = 0.0;
    double ddx_mrr = 0.0;
    double hallucination_rate = 0.0;
    double missing_rate = 0.0;
    double label_query_accuracy = 0.0;
    std::vector<PerLabelStats> per_label;
    size_t n_report = 0, n_vqa = 0, n_ddx = 0, n_label_query = 0;
};

// Exact-phrase pathology mentions; an occurrence immediately preceded by
// "no" is a suppressed (negated) mention.
std::set<std::string> extract_labels(const std::string& response_text,
                                     const std::vector<std::string>& pathology_catalog);

struct F1Result {
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    std::vector<PerLabelStats> per_label;
};

F1Result f1_scores(const std::vector<std::set<std::string>>& predicted,
                   const std::vector<std::set<std::string>>& gold,
                   const std::vector<std::string>& catalog);

// LCS-based F measure; 0 when either side is empty.
double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

// Exact match after whitespace normalization and lowercasing.
double vqa_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& gold);

// Mean reciprocal rank of the gold answer; 0 contribution when absent.
double mrr(const std::vector<std::vector<std::string>>& predicted_rankings,
           const std::vector<std::string>& gold_top);

// (hallucination_rate, missing_rate): fraction of instances asserting an
// absent label / omitting a present one.
std::pair<double, double> error_rates(const std::vector<std::set<std::string>>& predicted,
                                      const std::vector<std::set<std::string>>& gold);

std::string normalize_answer(const std::string& text);

// "ddx : a , b , c" -> [a, b, c]; anything unparseable yields an empty ranking.
std::vector<std::string> parse_ranking_line(const std::string& response);

// Decodes every example of `dataset` with the given strategy and scores the
// outputs per task kind.
MetricReport evaluate_model(const model::ModelParams& params, const kg::KnowledgeGraph& graph,
                            const tok::Vocabulary& vocab,
                            const std::vector<data::InstructionExample>& dataset,
                            const decode::DecodeConfig& decode_cfg, bool use_kg,
                            const std::vector<std::string>& pathology_catalog);

std::string metric_report_to_json(const MetricReport& report);
std::string metric_report_table(const MetricReport& report);
bool metric_report_has_nan(const MetricReport& report);

struct AblationArm {
    uint64_t seed = 0;
    MetricReport full;
    MetricReport nokg;
};

struct AblationResult {
    std::vector<AblationArm> arms;
    MetricReport median_full;
    MetricReport median_nokg;
};

// Trains paired models per seed differing only in disable_kg, evaluates both
// on a held-out split of `dataset`, and reports per-seed plus median metrics.
AblationResult ablation_run(const std::vector<data::InstructionExample>& dataset,
                            const kg::KnowledgeGraph& graph, const model::ModelConfig& model_cfg,
                            const train::TrainConfig& train_cfg,
                            const std::vector<uint64_t>& seeds,
                            const std::vector<std::string>& pathology_catalog,
                            double test_fraction = 0.2);

} // namespace cxrlm::eval
