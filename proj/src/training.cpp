#include "cxrlm/training.hpp"

#include "cxrlm/rng.hpp"

#include <algorithm>
#include <cmath>

namespace cxrlm::train {

void TrainConfig::validate() const {
    if (learning_rate < 0.0) throw DataError("train config: learning rate must be >= 0");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
        throw DataError("train config: betas must lie in (0,1)");
    if (eps <= 0.0) throw DataError("train config: eps must be positive");
    if (weight_decay < 0.0) throw DataError("train config: weight decay must be >= 0");
    if (batch_size == 0) throw DataError("train config: batch size must be positive");
    if (total_steps == 0) throw DataError("train config: total steps must be positive");
}

EncodedExample encode_example(const data::InstructionExample& ex, const tok::Vocabulary& vocab,
                              size_t max_seq_len) {
    EncodedExample enc;
    const tok::TokenSeq img = vocab.encode_text(findings::serialize_findings(ex.image_repr));
    const tok::TokenSeq instr = vocab.encode_text(ex.instruction);
    enc.input = tok::build_input(img, instr, max_seq_len).ids;

    const tok::TokenSeq resp = vocab.encode_text(ex.response);
    if (resp.ids.empty()) throw DataError("encode_example: empty response");
    enc.target = resp.ids;
    enc.target.push_back(tok::EOS);

    if (enc.input.size() + enc.target.size() > max_seq_len)
        throw DataError("encode_example: sequence length " +
                        std::to_string(enc.input.size() + enc.target.size()) +
                        " exceeds max_seq_len " + std::to_string(max_seq_len));
    return enc;
}

std::vector<std::string> dataset_corpus(const std::vector<data::InstructionExample>& dataset) {
    std::vector<std::string> corpus;
    corpus.reserve(dataset.size() * 3);
    for (const auto& ex : dataset) {
        corpus.push_back(findings::serialize_findings(ex.image_repr));
        corpus.push_back(ex.instruction);
        corpus.push_back(ex.response);
    }
    return corpus;
}

namespace {

std::vector<tok::TokenId> full_sequence(const EncodedExample& ex) {
    std::vector<tok::TokenId> ids = ex.input;
    ids.insert(ids.end(), ex.target.begin(), ex.target.end());
    return ids;
}

// targets[t] is the token logits row t must predict, -1 where masked
std::vector<int32_t> aligned_targets(const EncodedExample& ex) {
    const size_t n = ex.input.size() + ex.target.size();
    std::vector<int32_t> targets(n, -1);
    for (size_t k = 0; k < ex.target.size(); ++k)
        targets[ex.input.size() - 1 + k] = ex.target[k];
    return targets;
}

} // namespace

double loss_given_targets(const model::ForwardTrace& trace, const std::vector<int32_t>& targets) {
    if (targets.size() != trace.logits.rows)
        throw DataError("loss_given_targets: target array length mismatch");
    double loss = 0.0;
    for (size_t t = 0; t < targets.size(); ++t) {
        if (targets[t] < 0) continue;
        const auto p = model::next_token_distribution(trace, t);
        loss -= std::log(p[static_cast<size_t>(targets[t])]);
    }
    return loss;
}

double example_loss(const model::ModelParams& params, const model::ConceptMatcher* matcher,
                    const EncodedExample& ex, bool use_kg) {
    const auto ids = full_sequence(ex);
    const auto trace = model::forward(params, matcher, ids, use_kg);
    return loss_given_targets(trace, aligned_targets(ex));
}

double example_loss_and_grads(const model::ModelParams& params,
                              const model::ConceptMatcher* matcher, const EncodedExample& ex,
                              const model::BackwardOptions& opts, double scale,
                              model::ModelParams& grads) {
    const auto ids = full_sequence(ex);
    const auto trace = model::forward(params, matcher, ids, opts.use_kg);
    const auto targets = aligned_targets(ex);

    Matrix dlogits(trace.logits.rows, trace.logits.cols);
    double loss = 0.0;
    for (size_t t = 0; t < targets.size(); ++t) {
        if (targets[t] < 0) continue;
        const auto p = model::next_token_distribution(trace, t);
        const size_t gold = static_cast<size_t>(targets[t]);
        loss -= std::log(p[gold]);
        double* row = dlogits.row(t);
        for (size_t v = 0; v < p.size(); ++v) row[v] = scale * p[v];
        row[gold] -= scale;
    }
    model::backward_from_logit_grads(params, trace, dlogits, grads, opts);
    return loss;
}

model::ModelParams example_gradients(const model::ModelParams& params,
                                     const model::ConceptMatcher* matcher,
                                     const EncodedExample& ex, const model::BackwardOptions& opts) {
    model::ModelParams grads = model::ModelParams::zeros_like(params);
    example_loss_and_grads(params, matcher, ex, opts, 1.0, grads);
    return grads;
}

double dataset_mean_loss(const model::ModelParams& params, const model::ConceptMatcher* matcher,
                         const std::vector<EncodedExample>& dataset, bool use_kg) {
    if (dataset.empty()) throw DataError("dataset_mean_loss: empty dataset");
    double total = 0.0;
    for (const auto& ex : dataset) total += example_loss(params, matcher, ex, use_kg);
    return total / static_cast<double>(dataset.size());
}

void adamw_update_tensor(Matrix& theta, const Matrix& grad, Matrix& m, Matrix& v, size_t step,
                         double lr, double beta1, double beta2, double eps, double weight_decay) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (size_t i = 0; i < theta.a.size(); ++i) {
        const double g = grad.a[i];
        m.a[i] = beta1 * m.a[i] + (1.0 - beta1) * g;
        v.a[i] = beta2 * v.a[i] + (1.0 - beta2) * g * g;
        const double m_hat = m.a[i] / bc1;
        const double v_hat = v.a[i] / bc2;
        theta.a[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * theta.a[i]);
    }
}

namespace {

bool tensor_updatable(const std::string& name, const TrainConfig& cfg) {
    if (cfg.disable_kg &&
        (name == "w_proj_k" || name == "b_proj_k" || name == "concept_embeddings"))
        return false;
    if (cfg.freeze_kg_embeddings && name == "concept_embeddings") return false;
    return true;
}

void check_finite(const std::string& name, const Matrix& grad) {
    if (!all_finite(grad))
        throw NumericError("optimizer: non-finite gradient in tensor '" + name + "'");
}

} // namespace

void adamw_step(model::ModelParams& params, const model::ModelParams& grads, OptimizerState& state,
                const TrainConfig& cfg) {
    ++state.step;
    auto ps = params.tensors();
    auto gs = grads.tensors();
    auto ms = state.m.tensors();
    auto vs = state.v.tensors();
    for (size_t i = 0; i < ps.size(); ++i) {
        check_finite(ps[i].first, *gs[i].second);
        if (!tensor_updatable(ps[i].first, cfg)) continue;
        adamw_update_tensor(*ps[i].second, *gs[i].second, *ms[i].second, *vs[i].second, state.step,
                            cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    }
}

void sgd_step(model::ModelParams& params, const model::ModelParams& grads, const TrainConfig& cfg) {
    auto ps = params.tensors();
    auto gs = grads.tensors();
    for (size_t i = 0; i < ps.size(); ++i) {
        check_finite(ps[i].first, *gs[i].second);
        if (!tensor_updatable(ps[i].first, cfg)) continue;
        Matrix& theta = *ps[i].second;
        const Matrix& g = *gs[i].second;
        for (size_t k = 0; k < theta.a.size(); ++k) theta.a[k] -= cfg.learning_rate * g.a[k];
    }
}

TrainResult train(const std::vector<data::InstructionExample>& dataset,
                  const kg::KnowledgeGraph& graph, const tok::Vocabulary& vocab,
                  const model::ModelConfig& model_cfg, const TrainConfig& train_cfg) {
    train_cfg.validate();
    if (dataset.empty()) throw DataError("train: empty dataset");

    model::ModelConfig cfg = model_cfg;
    if (cfg.vocab_size == 0) cfg.vocab_size = static_cast<int32_t>(vocab.size());
    if (cfg.vocab_size != static_cast<int32_t>(vocab.size()))
        throw DataError("train: config vocab_size does not match vocabulary");
    if (cfg.d_know == 0) cfg.d_know = graph.d_know;
    cfg.validate();

    std::vector<EncodedExample> encoded;
    encoded.reserve(dataset.size());
    for (const auto& ex : dataset)
        encoded.push_back(encode_example(ex, vocab, static_cast<size_t>(cfg.max_seq_len)));

    TrainResult result;
    result.params = model::ModelParams::init(cfg, graph, train_cfg.seed);
    const model::ConceptMatcher matcher(graph, vocab);

    OptimizerState state;
    state.m = model::ModelParams::zeros_like(result.params);
    state.v = model::ModelParams::zeros_like(result.params);

    model::BackwardOptions opts;
    opts.use_kg = !train_cfg.disable_kg;
    opts.freeze_kg_embeddings = train_cfg.freeze_kg_embeddings;

    Rng order_rng = Rng::derive(train_cfg.seed, 0x6f72646572ULL); // data-order stream
    std::vector<size_t> order(encoded.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size(); // forces a shuffle on first use

    model::ModelParams grads = model::ModelParams::zeros_like(result.params);
    for (size_t step = 0; step < train_cfg.total_steps; ++step) {
        // assemble the next batch, reshuffling at epoch boundaries
        std::vector<size_t> batch;
        while (batch.size() < train_cfg.batch_size) {
            if (cursor == order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }

        for (auto& [name, m] : grads.tensors()) std::fill(m->a.begin(), m->a.end(), 0.0);
        const double scale = 1.0 / static_cast<double>(batch.size());
        double batch_loss = 0.0;
        for (size_t idx : batch)
            batch_loss += example_loss_and_grads(result.params, &matcher, encoded[idx], opts,
                                                 scale, grads);
        batch_loss *= scale;

        if (train_cfg.plain_sgd)
            sgd_step(result.params, grads, train_cfg);
        else
            adamw_step(result.params, grads, state, train_cfg);
        result.step_losses.push_back(batch_loss);
    }
    return result;
}

GradCheckResult gradient_check(const model::ModelConfig& cfg_in, uint64_t seed) {
    // small synthetic world: vocabulary of plain words, a KG matching some of
    // them, and one instruction example with a two-token response
    model::ModelConfig cfg = cfg_in;
    cfg.validate();

    std::vector<std::string> words;
    for (int32_t i = 0; i < cfg.vocab_size - static_cast<int32_t>(tok::NUM_SPECIALS); ++i)
        words.push_back("w" + std::to_string(i));
    std::string corpus_line;
    for (const auto& w : words) corpus_line += w + " ";
    const tok::Vocabulary vocab = tok::Vocabulary::build({corpus_line});
    if (static_cast<int32_t>(vocab.size()) != cfg.vocab_size)
        throw DataError("gradient_check: vocabulary size mismatch");

    kg::KnowledgeGraph graph;
    graph.d_know = cfg.d_know;
    for (int32_t i = 0; i < 3 && i < static_cast<int32_t>(words.size()); ++i) {
        kg::Concept c;
        c.concept_id = i;
        c.name = words[static_cast<size_t>(i)];
        c.category = "test";
        graph.concepts.push_back(std::move(c));
    }
    kg::init_embeddings(graph, seed);
    graph.rebuild_surface_index();
    graph.validate();

    model::ModelParams params = model::ModelParams::init(cfg, graph, seed);
    const model::ConceptMatcher matcher(graph, vocab);

    // S = [w0 w1 SEP w2], response = [w3 w4] + EOS; total length 7 <= 8
    EncodedExample ex;
    ex.input = {vocab.id_of("w0"), vocab.id_of("w1"), tok::SEP, vocab.id_of("w2")};
    ex.target = {vocab.id_of("w3"), vocab.id_of("w4"), tok::EOS};

    model::BackwardOptions opts; // knowledge path active, nothing frozen
    model::ModelParams analytic = example_gradients(params, &matcher, ex, opts);

    const double h = 1e-5;
    GradCheckResult result;
    auto ps = params.tensors();
    auto as = analytic.tensors();
    for (size_t t = 0; t < ps.size(); ++t) {
        Matrix& theta = *ps[t].second;
        const Matrix& a = *as[t].second;
        double worst = 0.0;
        for (size_t i = 0; i < theta.a.size(); ++i) {
            const double saved = theta.a[i];
            theta.a[i] = saved + h;
            const double up = example_loss(params, &matcher, ex, true);
            theta.a[i] = saved - h;
            const double down = example_loss(params, &matcher, ex, true);
            theta.a[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double denom = std::max({1.0, std::abs(a.a[i]), std::abs(numeric)});
            worst = std::max(worst, std::abs(a.a[i] - numeric) / denom);
        }
        result.per_tensor.emplace_back(ps[t].first, worst);
        result.max_rel_err = std::max(result.max_rel_err, worst);
    }
    return result;
}

} // namespace cxrlm::train
