#pragma once

#include "cxrlm/kg.hpp"
#include "cxrlm/tensor.hpp"
#include "cxrlm/tokenizer.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cxrlm::model {

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
    int32_t d_model = 32;
    int32_t n_layers = 2;
    int32_t n_heads = 2;
    int32_t d_head = 16; // d_model / n_heads
    int32_t d_ff = 64;
    int32_t d_know = 16;
    int32_t vocab_size = 0;
    int32_t max_seq_len = 128;

    void validate() const; // throws DataError on inconsistent dimensions
    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    Matrix w_q, w_k, w_v, w_o;     // d_model x d_model
    Matrix ln1_gain, ln1_bias;     // 1 x d_model
    Matrix w1, b1;                 // d_model x d_ff, 1 x d_ff
    Matrix w2, b2;                 // d_ff x d_model, 1 x d_model
    Matrix ln2_gain, ln2_bias;     // 1 x d_model
};

// Every learnable tensor, including the knowledge projection and the concept
// embeddings shared with the knowledge graph.
struct ModelParams {
    ModelConfig cfg;
    Matrix token_embedding;      // vocab_size x d_model
    Matrix positional_embedding; // max_seq_len x d_model
    std::vector<LayerParams> layers;
    Matrix w_proj_k;             // d_model x d_know
    Matrix b_proj_k;             // 1 x d_model
    Matrix w_out;                // d_model x vocab_size
    Matrix b_out;                // 1 x vocab_size
    Matrix concept_embeddings;   // |V| x d_know

    // Weight matrices i.i.d. uniform +-1/sqrt(fan_in); biases and layer-norm
    // biases zero; gains one. Concept embeddings are copied from the graph.
    static ModelParams init(const ModelConfig& cfg, const kg::KnowledgeGraph& graph, uint64_t seed);
    static ModelParams zeros_like(const ModelParams& p);

    // fixed iteration order shared by checkpoints, the optimizer and gradcheck
    std::vector<std::pair<std::string, Matrix*>> tensors();
    std::vector<std::pair<std::string, const Matrix*>> tensors() const;

    bool operator==(const ModelParams& o) const;
};

// Maps token ids to concept ids for fast phi(S) evaluation; equivalent to
// kg::match_concepts over the decoded token strings.
class ConceptMatcher {
public:
    ConceptMatcher(const kg::KnowledgeGraph& graph, const tok::Vocabulary& vocab);

    int32_t concept_of(tok::TokenId id) const {
        return (id >= 0 && static_cast<size_t>(id) < map_.size()) ? map_[static_cast<size_t>(id)] : -1;
    }

    kg::ConceptMatchSet match(const std::vector<tok::TokenId>& ids) const;

private:
    std::vector<int32_t> map_; // token id -> concept id, -1 when none
};

struct LayerTrace {
    Matrix h_in;
    Matrix q, k, v;               // N x d_model
    std::vector<Matrix> att;      // per head, N x N softmax rows
    Matrix concat;                // heads concatenated, pre-W_O
    Matrix r1;                    // h_in + attention output
    Matrix ln1_xhat;              // normalized rows of r1
    std::vector<double> ln1_inv_std;
    Matrix h_mid;                 // LN1 output
    Matrix z1;                    // pre-activation, N x d_ff
    Matrix r2;                    // h_mid + ffn output
    Matrix ln2_xhat;
    std::vector<double> ln2_inv_std;
    Matrix h_out;
};

// Cached activations for the backward pass; logits row t depends only on the
// prefix up to t (causal mask).
struct ForwardTrace {
    std::vector<tok::TokenId> ids;
    size_t n_valid = 0;
    bool used_kg = false;
    kg::ConceptMatchSet matches;
    std::vector<double> k_tilde;   // d_know, zeros when matches empty
    Matrix h0;                     // embeddings after knowledge augmentation
    std::vector<LayerTrace> layers;
    Matrix logits;                 // N x vocab_size
};

// Eq-level building blocks, each independently testable.
Matrix embed(const std::vector<tok::TokenId>& ids, const ModelParams& params);
Matrix augment(const Matrix& embeddings, const std::vector<double>& k_tilde,
               const ModelParams& params);
Matrix attention(const Matrix& h, const LayerParams& layer, const ModelConfig& cfg,
                 size_t n_valid, LayerTrace* trace);
Matrix block(const Matrix& h, const LayerParams& layer, const ModelConfig& cfg, size_t n_valid,
             LayerTrace* trace);

// Full forward pass. `n_valid` marks the unpadded prefix; positions >= n_valid
// are PAD and masked out of every attention row. `matcher` may be null only
// when use_kg is false (the NoKG ablation skips augmentation entirely).
ForwardTrace forward(const ModelParams& params, const ConceptMatcher* matcher,
                     const std::vector<tok::TokenId>& ids, size_t n_valid, bool use_kg);

inline ForwardTrace forward(const ModelParams& params, const ConceptMatcher* matcher,
                            const std::vector<tok::TokenId>& ids, bool use_kg = true) {
    return forward(params, matcher, ids, ids.size(), use_kg);
}

// softmax(logits[t]) with max-subtraction; rows sum to 1 within 1e-12
std::vector<double> next_token_distribution(const ForwardTrace& trace, size_t t);

struct BackwardOptions {
    bool use_kg = true;            // matches the forward that produced the trace
    bool freeze_kg_embeddings = false;
};

// Accumulates dLoss/dParams into `grads` given dLoss/dLogits.
void backward_from_logit_grads(const ModelParams& params, const ForwardTrace& trace,
                               const Matrix& dlogits, ModelParams& grads,
                               const BackwardOptions& opts);

} // namespace cxrlm::model
