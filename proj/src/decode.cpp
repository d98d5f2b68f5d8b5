#include "cxrlm/decode.hpp"

#include "cxrlm/rng.hpp"

#include <algorithm>
#include <cmath>

namespace cxrlm::decode {

Strategy strategy_from_name(const std::string& name) {
    if (name == "greedy") return Strategy::greedy;
    if (name == "beam") return Strategy::beam;
    if (name == "nucleus") return Strategy::nucleus;
    throw UsageError("unknown decode strategy '" + name + "'");
}

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::greedy: return "greedy";
        case Strategy::beam: return "beam";
        case Strategy::nucleus: return "nucleus";
    }
    return "?";
}

void DecodeConfig::validate() const {
    if (beam_width == 0) throw UsageError("decode: beam width must be positive");
    if (top_p <= 0.0 || top_p > 1.0) throw UsageError("decode: top_p must lie in (0,1]");
    if (temperature <= 0.0) throw UsageError("decode: temperature must be positive");
    if (max_new_tokens == 0) throw UsageError("decode: max_new_tokens must be positive");
}

namespace {

bool is_candidate(tok::TokenId id) {
    return id == tok::EOS || static_cast<size_t>(id) >= tok::NUM_SPECIALS;
}

size_t generation_budget(const model::ModelParams& params, size_t input_len,
                         const DecodeConfig& cfg) {
    const size_t max_len = static_cast<size_t>(params.cfg.max_seq_len);
    if (input_len == 0) throw DataError("decode: empty input");
    if (input_len > max_len)
        throw DataError("decode: input length " + std::to_string(input_len) +
                        " exceeds max_seq_len " + std::to_string(max_len));
    return std::min(cfg.max_new_tokens, max_len - input_len);
}

std::vector<double> last_position_distribution(const model::ModelParams& params,
                                               const model::ConceptMatcher* matcher,
                                               const std::vector<tok::TokenId>& seq, bool use_kg) {
    const auto trace = model::forward(params, matcher, seq, use_kg);
    return model::next_token_distribution(trace, seq.size() - 1);
}

} // namespace

std::vector<tok::TokenId> greedy(const model::ModelParams& params,
                                 const model::ConceptMatcher* matcher,
                                 const std::vector<tok::TokenId>& input, const DecodeConfig& cfg,
                                 bool use_kg) {
    cfg.validate();
    const size_t budget = generation_budget(params, input.size(), cfg);
    std::vector<tok::TokenId> seq = input;
    std::vector<tok::TokenId> out;
    for (size_t step = 0; step < budget; ++step) {
        const auto p = last_position_distribution(params, matcher, seq, use_kg);
        tok::TokenId best = -1;
        double best_p = -1.0;
        for (size_t v = 0; v < p.size(); ++v) {
            if (!is_candidate(static_cast<tok::TokenId>(v))) continue;
            if (p[v] > best_p) { // ties resolve to the lowest token id
                best_p = p[v];
                best = static_cast<tok::TokenId>(v);
            }
        }
        if (best == tok::EOS) break;
        out.push_back(best);
        seq.push_back(best);
    }
    return out;
}

std::vector<tok::TokenId> beam(const model::ModelParams& params,
                               const model::ConceptMatcher* matcher,
                               const std::vector<tok::TokenId>& input, const DecodeConfig& cfg,
                               bool use_kg) {
    cfg.validate();
    const size_t budget = generation_budget(params, input.size(), cfg);

    struct Hypothesis {
        std::vector<tok::TokenId> tokens;
        double log_prob = 0.0;
    };
    auto better = [](const Hypothesis& a, const Hypothesis& b) {
        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
        return a.tokens < b.tokens;
    };

    std::vector<Hypothesis> live{{{}, 0.0}};
    std::vector<Hypothesis> finished;

    for (size_t step = 0; step < budget && !live.empty(); ++step) {
        std::vector<Hypothesis> expanded;
        for (const auto& hyp : live) {
            std::vector<tok::TokenId> seq = input;
            seq.insert(seq.end(), hyp.tokens.begin(), hyp.tokens.end());
            const auto p = last_position_distribution(params, matcher, seq, use_kg);
            for (size_t v = 0; v < p.size(); ++v) {
                const tok::TokenId id = static_cast<tok::TokenId>(v);
                if (!is_candidate(id)) continue;
                const double lp = hyp.log_prob + std::log(p[v]);
                if (id == tok::EOS) {
                    finished.push_back({hyp.tokens, lp});
                } else {
                    Hypothesis next{hyp.tokens, lp};
                    next.tokens.push_back(id);
                    expanded.push_back(std::move(next));
                }
            }
        }
        std::sort(expanded.begin(), expanded.end(), better);
        if (expanded.size() > cfg.beam_width) expanded.resize(cfg.beam_width);
        live = std::move(expanded);
    }
    // hypotheses still alive at the length limit count as complete
    for (auto& hyp : live) finished.push_back(std::move(hyp));
    if (finished.empty()) return {};
    return std::min_element(finished.begin(), finished.end(),
                            [&better](const Hypothesis& a, const Hypothesis& b) {
                                return better(a, b);
                            })
        ->tokens;
}

std::vector<tok::TokenId> nucleus(const model::ModelParams& params,
                                  const model::ConceptMatcher* matcher,
                                  const std::vector<tok::TokenId>& input, const DecodeConfig& cfg,
                                  bool use_kg) {
    cfg.validate();
    const size_t budget = generation_budget(params, input.size(), cfg);
    Rng rng(cfg.seed);

    std::vector<tok::TokenId> seq = input;
    std::vector<tok::TokenId> out;
    for (size_t step = 0; step < budget; ++step) {
        const auto trace = model::forward(params, matcher, seq, use_kg);
        const double* logits = trace.logits.row(seq.size() - 1);

        // temperature-scaled softmax over the candidate tokens
        std::vector<std::pair<double, tok::TokenId>> probs;
        double maxl = -std::numeric_limits<double>::infinity();
        for (size_t v = 0; v < trace.logits.cols; ++v)
            if (is_candidate(static_cast<tok::TokenId>(v)))
                maxl = std::max(maxl, logits[v] / cfg.temperature);
        double z = 0.0;
        for (size_t v = 0; v < trace.logits.cols; ++v) {
            const tok::TokenId id = static_cast<tok::TokenId>(v);
            if (!is_candidate(id)) continue;
            const double e = std::exp(logits[v] / cfg.temperature - maxl);
            probs.emplace_back(e, id);
            z += e;
        }
        for (auto& [p, id] : probs) p /= z;

        // probability-sorted, id-tie-broken; keep the smallest prefix with
        // cumulative mass >= top_p (the crossing token included)
        std::sort(probs.begin(), probs.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        size_t kept = 0;
        double mass = 0.0;
        while (kept < probs.size() && mass < cfg.top_p) {
            mass += probs[kept].first;
            ++kept;
        }

        double u = rng.uniform01() * mass;
        tok::TokenId chosen = probs[kept - 1].second;
        double acc = 0.0;
        for (size_t i = 0; i < kept; ++i) {
            acc += probs[i].first;
            if (u < acc) {
                chosen = probs[i].second;
                break;
            }
        }
        if (chosen == tok::EOS) break;
        out.push_back(chosen);
        seq.push_back(chosen);
    }
    return out;
}

std::vector<tok::TokenId> generate(const model::ModelParams& params,
                                   const model::ConceptMatcher* matcher,
                                   const std::vector<tok::TokenId>& input, const DecodeConfig& cfg,
                                   bool use_kg) {
    switch (cfg.strategy) {
        case Strategy::greedy: return greedy(params, matcher, input, cfg, use_kg);
        case Strategy::beam: return beam(params, matcher, input, cfg, use_kg);
        case Strategy::nucleus: return nucleus(params, matcher, input, cfg, use_kg);
    }
    throw UsageError("decode: unknown strategy");
}

} // namespace cxrlm::decode
