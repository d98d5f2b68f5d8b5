#include "cxrlm/model.hpp"

#include "cxrlm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace cxrlm::model {

void ModelConfig::validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_head <= 0 || d_ff <= 0 || d_know <= 0)
        throw DataError("model config: all dimensions must be positive");
    if (n_heads * d_head != d_model)
        throw DataError("model config: n_heads * d_head must equal d_model");
    if (max_seq_len < 2) throw DataError("model config: max_seq_len must be >= 2");
    if (vocab_size < static_cast<int32_t>(tok::NUM_SPECIALS))
        throw DataError("model config: vocab_size must cover the special tokens");
}

namespace {

void fill_uniform(Matrix& m, double scale, Rng& rng) {
    for (double& x : m.a) x = rng.uniform(-scale, scale);
}

} // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, const kg::KnowledgeGraph& graph,
                              uint64_t seed) {
    cfg.validate();
    if (graph.d_know != cfg.d_know)
        throw DataError("model init: kg d_know " + std::to_string(graph.d_know) +
                        " != config d_know " + std::to_string(cfg.d_know));
    ModelParams p;
    p.cfg = cfg;
    const size_t d = static_cast<size_t>(cfg.d_model);
    const size_t dff = static_cast<size_t>(cfg.d_ff);
    const size_t dk = static_cast<size_t>(cfg.d_know);

    Rng rng(splitmix64(seed ^ 0x6d6f64656cULL));
    auto weight = [&rng](size_t rows, size_t cols, size_t fan_in) {
        Matrix m(rows, cols);
        fill_uniform(m, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
        return m;
    };

    p.token_embedding = weight(static_cast<size_t>(cfg.vocab_size), d,
                               static_cast<size_t>(cfg.vocab_size));
    p.positional_embedding = weight(static_cast<size_t>(cfg.max_seq_len), d,
                                    static_cast<size_t>(cfg.max_seq_len));
    p.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& layer : p.layers) {
        layer.w_q = weight(d, d, d);
        layer.w_k = weight(d, d, d);
        layer.w_v = weight(d, d, d);
        layer.w_o = weight(d, d, d);
        layer.ln1_gain = Matrix(1, d);
        std::fill(layer.ln1_gain.a.begin(), layer.ln1_gain.a.end(), 1.0);
        layer.ln1_bias = Matrix(1, d);
        layer.w1 = weight(d, dff, d);
        layer.b1 = Matrix(1, dff);
        layer.w2 = weight(dff, d, dff);
        layer.b2 = Matrix(1, d);
        layer.ln2_gain = Matrix(1, d);
        std::fill(layer.ln2_gain.a.begin(), layer.ln2_gain.a.end(), 1.0);
        layer.ln2_bias = Matrix(1, d);
    }
    // w_proj_k multiplies the knowledge vector from the right, so fan-in is d_know
    p.w_proj_k = weight(d, dk, dk);
    p.b_proj_k = Matrix(1, d);
    p.w_out = weight(d, static_cast<size_t>(cfg.vocab_size), d);
    p.b_out = Matrix(1, static_cast<size_t>(cfg.vocab_size));
    p.concept_embeddings = graph.embeddings;
    if (p.concept_embeddings.cols != dk)
        throw DataError("model init: concept embedding width != d_know");
    return p;
}

ModelParams ModelParams::zeros_like(const ModelParams& src) {
    ModelParams p;
    p.cfg = src.cfg;
    auto zero = [](const Matrix& m) { return Matrix(m.rows, m.cols); };
    p.token_embedding = zero(src.token_embedding);
    p.positional_embedding = zero(src.positional_embedding);
    p.layers.resize(src.layers.size());
    for (size_t l = 0; l < src.layers.size(); ++l) {
        const auto& s = src.layers[l];
        auto& t = p.layers[l];
        t.w_q = zero(s.w_q); t.w_k = zero(s.w_k); t.w_v = zero(s.w_v); t.w_o = zero(s.w_o);
        t.ln1_gain = zero(s.ln1_gain); t.ln1_bias = zero(s.ln1_bias);
        t.w1 = zero(s.w1); t.b1 = zero(s.b1); t.w2 = zero(s.w2); t.b2 = zero(s.b2);
        t.ln2_gain = zero(s.ln2_gain); t.ln2_bias = zero(s.ln2_bias);
    }
    p.w_proj_k = zero(src.w_proj_k);
    p.b_proj_k = zero(src.b_proj_k);
    p.w_out = zero(src.w_out);
    p.b_out = zero(src.b_out);
    p.concept_embeddings = zero(src.concept_embeddings);
    return p;
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::tensors() {
    std::vector<std::pair<std::string, Matrix*>> out;
    out.emplace_back("token_embedding", &token_embedding);
    out.emplace_back("positional_embedding", &positional_embedding);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string prefix = "layers." + std::to_string(l) + ".";
        auto& layer = layers[l];
        out.emplace_back(prefix + "w_q", &layer.w_q);
        out.emplace_back(prefix + "w_k", &layer.w_k);
        out.emplace_back(prefix + "w_v", &layer.w_v);
        out.emplace_back(prefix + "w_o", &layer.w_o);
        out.emplace_back(prefix + "ln1_gain", &layer.ln1_gain);
        out.emplace_back(prefix + "ln1_bias", &layer.ln1_bias);
        out.emplace_back(prefix + "w1", &layer.w1);
        out.emplace_back(prefix + "b1", &layer.b1);
        out.emplace_back(prefix + "w2", &layer.w2);
        out.emplace_back(prefix + "b2", &layer.b2);
        out.emplace_back(prefix + "ln2_gain", &layer.ln2_gain);
        out.emplace_back(prefix + "ln2_bias", &layer.ln2_bias);
    }
    out.emplace_back("w_proj_k", &w_proj_k);
    out.emplace_back("b_proj_k", &b_proj_k);
    out.emplace_back("w_out", &w_out);
    out.emplace_back("b_out", &b_out);
    out.emplace_back("concept_embeddings", &concept_embeddings);
    return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::tensors() const {
    auto mutable_list = const_cast<ModelParams*>(this)->tensors();
    std::vector<std::pair<std::string, const Matrix*>> out;
    out.reserve(mutable_list.size());
    for (auto& [name, m] : mutable_list) out.emplace_back(name, m);
    return out;
}

bool ModelParams::operator==(const ModelParams& o) const {
    if (!(cfg == o.cfg)) return false;
    auto ta = tensors();
    auto tb = o.tensors();
    if (ta.size() != tb.size()) return false;
    for (size_t i = 0; i < ta.size(); ++i)
        if (ta[i].first != tb[i].first || !(*ta[i].second == *tb[i].second)) return false;
    return true;
}

ConceptMatcher::ConceptMatcher(const kg::KnowledgeGraph& graph, const tok::Vocabulary& vocab) {
    map_.assign(vocab.size(), -1);
    for (size_t id = 0; id < vocab.size(); ++id) {
        auto it = graph.surface_index.find(vocab.token_of(static_cast<tok::TokenId>(id)));
        if (it != graph.surface_index.end()) map_[id] = it->second;
    }
}

kg::ConceptMatchSet ConceptMatcher::match(const std::vector<tok::TokenId>& ids) const {
    std::set<int32_t> hit;
    for (tok::TokenId id : ids) {
        int32_t c = concept_of(id);
        if (c >= 0) hit.insert(c);
    }
    kg::ConceptMatchSet out;
    out.concept_ids.assign(hit.begin(), hit.end());
    return out;
}

namespace {

// y = gain * xhat + bias per row; records xhat and 1/sqrt(var+eps)
Matrix layernorm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& xhat,
                 std::vector<double>& inv_std) {
    const size_t n = x.rows, d = x.cols;
    Matrix y(n, d);
    xhat = Matrix(n, d);
    inv_std.assign(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double* xi = x.row(i);
        double mu = 0.0;
        for (size_t j = 0; j < d; ++j) mu += xi[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double c = xi[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[i] = is;
        double* xh = xhat.row(i);
        double* yi = y.row(i);
        for (size_t j = 0; j < d; ++j) {
            xh[j] = (xi[j] - mu) * is;
            yi[j] = gain.a[j] * xh[j] + bias.a[j];
        }
    }
    return y;
}

void layernorm_backward(const Matrix& dy, const Matrix& xhat, const std::vector<double>& inv_std,
                        const Matrix& gain, Matrix& dx, Matrix& dgain, Matrix& dbias) {
    const size_t n = dy.rows, d = dy.cols;
    dx = Matrix(n, d);
    for (size_t i = 0; i < n; ++i) {
        const double* dyi = dy.row(i);
        const double* xh = xhat.row(i);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double dxhat = dyi[j] * gain.a[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[j];
            dgain.a[j] += dyi[j] * xh[j];
            dbias.a[j] += dyi[j];
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        double* dxi = dx.row(i);
        for (size_t j = 0; j < d; ++j) {
            const double dxhat = dyi[j] * gain.a[j];
            dxi[j] = inv_std[i] * (dxhat - sum_dxhat * inv_d - xh[j] * (sum_dxhat_xhat * inv_d));
        }
    }
}

void add_bias_rows(Matrix& m, const Matrix& bias) {
    for (size_t i = 0; i < m.rows; ++i) {
        double* row = m.row(i);
        for (size_t j = 0; j < m.cols; ++j) row[j] += bias.a[j];
    }
}

} // namespace

Matrix embed(const std::vector<tok::TokenId>& ids, const ModelParams& params) {
    const auto& cfg = params.cfg;
    if (ids.size() > static_cast<size_t>(cfg.max_seq_len))
        throw DataError("embed: sequence length " + std::to_string(ids.size()) +
                        " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    Matrix e(ids.size(), static_cast<size_t>(cfg.d_model));
    for (size_t i = 0; i < ids.size(); ++i) {
        const tok::TokenId id = ids[i];
        if (id < 0 || id >= cfg.vocab_size)
            throw DataError("embed: token id " + std::to_string(id) + " out of vocabulary");
        const double* trow = params.token_embedding.row(static_cast<size_t>(id));
        const double* prow = params.positional_embedding.row(i);
        double* erow = e.row(i);
        for (size_t j = 0; j < e.cols; ++j) erow[j] = trow[j] + prow[j];
    }
    return e;
}

Matrix augment(const Matrix& embeddings, const std::vector<double>& k_tilde,
               const ModelParams& params) {
    if (k_tilde.size() != static_cast<size_t>(params.cfg.d_know))
        throw DataError("augment: knowledge vector has wrong length");
    const size_t d = embeddings.cols;
    std::vector<double> shift(d, 0.0);
    for (size_t i = 0; i < d; ++i) {
        double s = params.b_proj_k.a[i];
        const double* wrow = params.w_proj_k.row(i);
        for (size_t j = 0; j < k_tilde.size(); ++j) s += wrow[j] * k_tilde[j];
        shift[i] = s;
    }
    Matrix out = embeddings;
    for (size_t i = 0; i < out.rows; ++i) {
        double* row = out.row(i);
        for (size_t j = 0; j < d; ++j) row[j] += shift[j];
    }
    return out;
}

Matrix attention(const Matrix& h, const LayerParams& layer, const ModelConfig& cfg, size_t n_valid,
                 LayerTrace* trace) {
    const size_t n = h.rows;
    const size_t d = static_cast<size_t>(cfg.d_model);
    const size_t dh = static_cast<size_t>(cfg.d_head);
    const size_t heads = static_cast<size_t>(cfg.n_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));

    Matrix q = matmul(h, layer.w_q);
    Matrix k = matmul(h, layer.w_k);
    Matrix v = matmul(h, layer.w_v);

    Matrix concat(n, d);
    std::vector<Matrix> att(heads);
    for (size_t hd = 0; hd < heads; ++hd) {
        const size_t off = hd * dh;
        Matrix& a = att[hd];
        a = Matrix(n, n);
        for (size_t i = 0; i < n; ++i) {
            // causal mask plus PAD-key mask: keys j <= i and j < n_valid
            const size_t limit = std::min(i + 1, n_valid);
            const double* qi = q.row(i) + off;
            double maxs = -std::numeric_limits<double>::infinity();
            std::vector<double> scores(limit);
            for (size_t j = 0; j < limit; ++j) {
                const double* kj = k.row(j) + off;
                double s = 0.0;
                for (size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
                s *= scale;
                scores[j] = s;
                maxs = std::max(maxs, s);
            }
            double z = 0.0;
            double* arow = a.row(i);
            for (size_t j = 0; j < limit; ++j) {
                const double e = std::exp(scores[j] - maxs);
                arow[j] = e;
                z += e;
            }
            const double inv_z = 1.0 / z;
            double* out = concat.row(i) + off;
            for (size_t j = 0; j < limit; ++j) {
                arow[j] *= inv_z;
                const double w = arow[j];
                const double* vj = v.row(j) + off;
                for (size_t t = 0; t < dh; ++t) out[t] += w * vj[t];
            }
        }
    }
    Matrix result = matmul(concat, layer.w_o);
    if (trace) {
        trace->q = std::move(q);
        trace->k = std::move(k);
        trace->v = std::move(v);
        trace->att = std::move(att);
        trace->concat = std::move(concat);
    }
    return result;
}

Matrix block(const Matrix& h, const LayerParams& layer, const ModelConfig& cfg, size_t n_valid,
             LayerTrace* trace) {
    LayerTrace local;
    LayerTrace* t = trace ? trace : &local;
    t->h_in = h;

    Matrix attn_out = attention(h, layer, cfg, n_valid, t);
    t->r1 = h;
    add_inplace(t->r1, attn_out);
    t->h_mid = layernorm(t->r1, layer.ln1_gain, layer.ln1_bias, t->ln1_xhat, t->ln1_inv_std);

    t->z1 = matmul(t->h_mid, layer.w1);
    add_bias_rows(t->z1, layer.b1);
    Matrix a1 = t->z1;
    for (double& x : a1.a) x = x > 0.0 ? x : 0.0;
    Matrix f = matmul(a1, layer.w2);
    add_bias_rows(f, layer.b2);

    t->r2 = t->h_mid;
    add_inplace(t->r2, f);
    t->h_out = layernorm(t->r2, layer.ln2_gain, layer.ln2_bias, t->ln2_xhat, t->ln2_inv_std);
    return t->h_out;
}

ForwardTrace forward(const ModelParams& params, const ConceptMatcher* matcher,
                     const std::vector<tok::TokenId>& ids, size_t n_valid, bool use_kg) {
    const auto& cfg = params.cfg;
    if (ids.empty()) throw DataError("forward: empty sequence");
    if (n_valid == 0 || n_valid > ids.size())
        throw DataError("forward: n_valid out of range");
    if (use_kg && matcher == nullptr)
        throw DataError("forward: knowledge integration requires a concept matcher");

    ForwardTrace trace;
    trace.ids = ids;
    trace.n_valid = n_valid;
    trace.used_kg = use_kg;

    Matrix e = embed(ids, params);
    if (use_kg) {
        std::vector<tok::TokenId> valid(ids.begin(), ids.begin() + static_cast<long>(n_valid));
        trace.matches = matcher->match(valid);
        trace.k_tilde = kg::aggregate_rows(trace.matches, params.concept_embeddings);
        trace.h0 = augment(e, trace.k_tilde, params);
    } else {
        trace.k_tilde.assign(static_cast<size_t>(cfg.d_know), 0.0);
        trace.h0 = std::move(e);
    }

    trace.layers.resize(params.layers.size());
    const Matrix* h = &trace.h0;
    for (size_t l = 0; l < params.layers.size(); ++l) {
        block(*h, params.layers[l], cfg, n_valid, &trace.layers[l]);
        h = &trace.layers[l].h_out;
    }

    trace.logits = matmul(*h, params.w_out);
    add_bias_rows(trace.logits, params.b_out);
    return trace;
}

std::vector<double> next_token_distribution(const ForwardTrace& trace, size_t t) {
    if (t >= trace.logits.rows) throw DataError("next_token_distribution: position out of range");
    const double* row = trace.logits.row(t);
    const size_t v = trace.logits.cols;
    double maxs = row[0];
    for (size_t j = 1; j < v; ++j) maxs = std::max(maxs, row[j]);
    std::vector<double> p(v);
    double z = 0.0;
    for (size_t j = 0; j < v; ++j) {
        p[j] = std::exp(row[j] - maxs);
        z += p[j];
    }
    const double inv_z = 1.0 / z;
    for (double& x : p) x *= inv_z;
    return p;
}

void backward_from_logit_grads(const ModelParams& params, const ForwardTrace& trace,
                               const Matrix& dlogits, ModelParams& grads,
                               const BackwardOptions& opts) {
    const auto& cfg = params.cfg;
    const size_t n = trace.ids.size();
    const size_t d = static_cast<size_t>(cfg.d_model);
    const size_t dh = static_cast<size_t>(cfg.d_head);
    const size_t heads = static_cast<size_t>(cfg.n_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));

    const Matrix& h_last = trace.layers.empty() ? trace.h0 : trace.layers.back().h_out;

    // output head
    add_inplace(grads.w_out, matmul_tn(h_last, dlogits));
    for (size_t i = 0; i < n; ++i) {
        const double* row = dlogits.row(i);
        for (size_t j = 0; j < dlogits.cols; ++j) grads.b_out.a[j] += row[j];
    }
    Matrix dhid = matmul_nt(dlogits, params.w_out);

    // transformer blocks in reverse
    for (size_t l = params.layers.size(); l-- > 0;) {
        const LayerParams& layer = params.layers[l];
        LayerParams& glayer = grads.layers[l];
        const LayerTrace& t = trace.layers[l];

        Matrix dr2;
        layernorm_backward(dhid, t.ln2_xhat, t.ln2_inv_std, layer.ln2_gain, dr2, glayer.ln2_gain,
                           glayer.ln2_bias);

        // FFN branch: r2 = h_mid + relu(z1) w2 + b2
        Matrix a1 = t.z1;
        for (double& x : a1.a) x = x > 0.0 ? x : 0.0;
        add_inplace(glayer.w2, matmul_tn(a1, dr2));
        for (size_t i = 0; i < n; ++i) {
            const double* row = dr2.row(i);
            for (size_t j = 0; j < d; ++j) glayer.b2.a[j] += row[j];
        }
        Matrix da1 = matmul_nt(dr2, layer.w2);
        for (size_t i = 0; i < da1.a.size(); ++i)
            if (t.z1.a[i] <= 0.0) da1.a[i] = 0.0;
        add_inplace(glayer.w1, matmul_tn(t.h_mid, da1));
        for (size_t i = 0; i < n; ++i) {
            const double* row = da1.row(i);
            for (size_t j = 0; j < da1.cols; ++j) glayer.b1.a[j] += row[j];
        }
        Matrix dh_mid = matmul_nt(da1, layer.w1);
        add_inplace(dh_mid, dr2); // residual

        Matrix dr1;
        layernorm_backward(dh_mid, t.ln1_xhat, t.ln1_inv_std, layer.ln1_gain, dr1, glayer.ln1_gain,
                           glayer.ln1_bias);

        // attention branch: r1 = h_in + concat(heads) w_o
        add_inplace(glayer.w_o, matmul_tn(t.concat, dr1));
        Matrix dconcat = matmul_nt(dr1, layer.w_o);

        Matrix dq(n, d), dk(n, d), dv(n, d);
        for (size_t hd = 0; hd < heads; ++hd) {
            const size_t off = hd * dh;
            const Matrix& att = t.att[hd];
            for (size_t i = 0; i < n; ++i) {
                const size_t limit = std::min(i + 1, trace.n_valid);
                const double* doh = dconcat.row(i) + off;
                const double* arow = att.row(i);

                // dAtt_ij = doh . v_j ; softmax backward keeps masked entries at zero
                double rowdot = 0.0;
                std::vector<double> datt(limit);
                for (size_t j = 0; j < limit; ++j) {
                    const double* vj = t.v.row(j) + off;
                    double s = 0.0;
                    for (size_t c = 0; c < dh; ++c) s += doh[c] * vj[c];
                    datt[j] = s;
                    rowdot += s * arow[j];
                }
                for (size_t j = 0; j < limit; ++j) {
                    const double w = arow[j];
                    double* dvj = dv.row(j) + off;
                    for (size_t c = 0; c < dh; ++c) dvj[c] += w * doh[c];

                    const double ds = w * (datt[j] - rowdot) * scale;
                    const double* kj = t.k.row(j) + off;
                    const double* qi = t.q.row(i) + off;
                    double* dqi = dq.row(i) + off;
                    double* dkj = dk.row(j) + off;
                    for (size_t c = 0; c < dh; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
        add_inplace(glayer.w_q, matmul_tn(t.h_in, dq));
        add_inplace(glayer.w_k, matmul_tn(t.h_in, dk));
        add_inplace(glayer.w_v, matmul_tn(t.h_in, dv));

        Matrix dh_in = matmul_nt(dq, layer.w_q);
        add_inplace(dh_in, matmul_nt(dk, layer.w_k));
        add_inplace(dh_in, matmul_nt(dv, layer.w_v));
        add_inplace(dh_in, dr1); // residual
        dhid = std::move(dh_in);
    }

    // dhid is now the gradient at h0 (augmented embeddings)
    for (size_t i = 0; i < n; ++i) {
        const double* row = dhid.row(i);
        double* trow = grads.token_embedding.row(static_cast<size_t>(trace.ids[i]));
        double* prow = grads.positional_embedding.row(i);
        for (size_t j = 0; j < d; ++j) {
            trow[j] += row[j];
            prow[j] += row[j];
        }
    }

    if (trace.used_kg && opts.use_kg) {
        std::vector<double> dp(d, 0.0);
        for (size_t i = 0; i < n; ++i) {
            const double* row = dhid.row(i);
            for (size_t j = 0; j < d; ++j) dp[j] += row[j];
        }
        const size_t dk_dim = static_cast<size_t>(cfg.d_know);
        for (size_t i = 0; i < d; ++i) {
            grads.b_proj_k.a[i] += dp[i];
            double* wrow = grads.w_proj_k.row(i);
            for (size_t j = 0; j < dk_dim; ++j) wrow[j] += dp[i] * trace.k_tilde[j];
        }
        if (!opts.freeze_kg_embeddings && !trace.matches.concept_ids.empty()) {
            std::vector<double> dk_tilde(dk_dim, 0.0);
            for (size_t i = 0; i < d; ++i) {
                const double* wrow = params.w_proj_k.row(i);
                for (size_t j = 0; j < dk_dim; ++j) dk_tilde[j] += wrow[j] * dp[i];
            }
            const double inv = 1.0 / static_cast<double>(trace.matches.concept_ids.size());
            for (int32_t c : trace.matches.concept_ids) {
                double* crow = grads.concept_embeddings.row(static_cast<size_t>(c));
                for (size_t j = 0; j < dk_dim; ++j) crow[j] += dk_tilde[j] * inv;
            }
        }
    }
}

} // namespace cxrlm::model
