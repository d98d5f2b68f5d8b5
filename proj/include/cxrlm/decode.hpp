#pragma once

#include "cxrlm/model.hpp"

#include <cstdint>
#include <vector>

namespace cxrlm::decode {

enum class Strategy { greedy, beam, nucleus };

Strategy strategy_from_name(const std::string& name); // throws UsageError
const char* strategy_name(Strategy s);

struct DecodeConfig {
    Strategy strategy = Strategy::greedy;
    size_t beam_width = 4;
    double top_p = 0.9;
    double temperature = 1.0;
    size_t max_new_tokens = 48;
    uint64_t seed = 0; // nucleus only

    void validate() const; // throws UsageError
};

// All strategies emit only non-special tokens; EOS terminates generation and
// is not part of the returned sequence. The concept match set is recomputed
// over the full current sequence at every step.
std::vector<tok::TokenId> greedy(const model::ModelParams& params,
                                 const model::ConceptMatcher* matcher,
                                 const std::vector<tok::TokenId>& input, const DecodeConfig& cfg,
                                 bool use_kg);

// Length-unnormalized log-probability beam; ties broken by (log-prob, then
// lexicographic token ids).
std::vector<tok::TokenId> beam(const model::ModelParams& params,
                               const model::ConceptMatcher* matcher,
                               const std::vector<tok::TokenId>& input, const DecodeConfig& cfg,
                               bool use_kg);

// Temperature-scaled nucleus sampling: smallest probability-sorted prefix
// with cumulative mass >= top_p, renormalized, sampled with the seeded
// generator.
std::vector<tok::TokenId> nucleus(const model::ModelParams& params,
                                  const model::ConceptMatcher* matcher,
                                  const std::vector<tok::TokenId>& input, const DecodeConfig& cfg,
                                  bool use_kg);

std::vector<tok::TokenId> generate(const model::ModelParams& params,
                                   const model::ConceptMatcher* matcher,
                                   const std::vector<tok::TokenId>& input, const DecodeConfig& cfg,
                                   bool use_kg);

} // namespace cxrlm::decode
