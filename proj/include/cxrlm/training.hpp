#pragma once

#include "cxrlm/data.hpp"
#include "cxrlm/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cxrlm::train {

struct TrainConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    size_t batch_size = 8;
    size_t total_steps = 100;
    uint64_t seed = 1;
    bool freeze_kg_embeddings = false;
    bool disable_kg = false; // NoKG ablation: augmentation step skipped
    bool plain_sgd = false;  // fixed-rate descent instead of AdamW

    void validate() const;
};

struct OptimizerState {
    model::ModelParams m; // first moments, ModelParams-shaped
    model::ModelParams v; // second moments
    size_t step = 0;
};

// Input S = [T_img, SEP, T_instr]; target = response tokens followed by EOS.
struct EncodedExample {
    std::vector<tok::TokenId> input;
    std::vector<tok::TokenId> target;
};

EncodedExample encode_example(const data::InstructionExample& ex, const tok::Vocabulary& vocab,
                              size_t max_seq_len);

// Every text field that feeds the shared word-level vocabulary.
std::vector<std::string> dataset_corpus(const std::vector<data::InstructionExample>& dataset);

// -sum_t log P(target_t | input, target_<t); only response positions contribute.
double example_loss(const model::ModelParams& params, const model::ConceptMatcher* matcher,
                    const EncodedExample& ex, bool use_kg);

// Loss recomputed from a finished forward trace and an aligned target array
// (-1 marks masked positions). Exposed so masking can be tested directly.
double loss_given_targets(const model::ForwardTrace& trace, const std::vector<int32_t>& targets);

// Accumulates `scale` times the example gradient into `grads`; returns the
// unscaled example loss.
double example_loss_and_grads(const model::ModelParams& params,
                              const model::ConceptMatcher* matcher, const EncodedExample& ex,
                              const model::BackwardOptions& opts, double scale,
                              model::ModelParams& grads);

model::ModelParams example_gradients(const model::ModelParams& params,
                                     const model::ConceptMatcher* matcher,
                                     const EncodedExample& ex, const model::BackwardOptions& opts);

double dataset_mean_loss(const model::ModelParams& params, const model::ConceptMatcher* matcher,
                         const std::vector<EncodedExample>& dataset, bool use_kg);

// Decoupled-weight-decay update with bias correction on a single tensor.
void adamw_update_tensor(Matrix& theta, const Matrix& grad, Matrix& m, Matrix& v, size_t step,
                         double lr, double beta1, double beta2, double eps, double weight_decay);

// Applies one optimizer step across all tensors; throws NumericError on a
// non-finite gradient. Tensors structurally excluded by disable_kg or frozen
// by freeze_kg_embeddings are left untouched.
void adamw_step(model::ModelParams& params, const model::ModelParams& grads, OptimizerState& state,
                const TrainConfig& cfg);
void sgd_step(model::ModelParams& params, const model::ModelParams& grads, const TrainConfig& cfg);

struct TrainResult {
    model::ModelParams params;
    std::vector<double> step_losses;
};

// Deterministic given the seed: init, data order and updates are all seeded.
TrainResult train(const std::vector<data::InstructionExample>& dataset,
                  const kg::KnowledgeGraph& graph, const tok::Vocabulary& vocab,
                  const model::ModelConfig& model_cfg, const TrainConfig& train_cfg);

struct GradCheckResult {
    std::vector<std::pair<std::string, double>> per_tensor; // max relative error each
    double max_rel_err = 0.0;
};

// Central finite differences (h = 1e-5) against the analytic gradients for
// every parameter tensor on a small synthetic example. Relative error uses a
// unit floor: |a - n| / max(1, |a|, |n|).
GradCheckResult gradient_check(const model::ModelConfig& cfg, uint64_t seed);

} // namespace cxrlm::train
