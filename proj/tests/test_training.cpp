#include "cxrlm/training.hpp"

#include "cxrlm/rng.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace cxrlm;
using namespace cxrlm::train;

namespace {

model::ModelConfig small_cfg() {
    model::ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_head = 4;
    cfg.d_ff = 16;
    cfg.d_know = 4;
    cfg.max_seq_len = 16;
    return cfg;
}

EncodedExample sample_example(const testsup::TinyWorld& world) {
    EncodedExample ex;
    ex.input = {world.vocab.id_of("w0"), world.vocab.id_of("w1"), tok::SEP,
                world.vocab.id_of("w2")};
    ex.target = {world.vocab.id_of("w3"), world.vocab.id_of("w4"), tok::EOS};
    return ex;
}

std::vector<tok::TokenId> concat_ids(const EncodedExample& ex) {
    auto ids = ex.input;
    ids.insert(ids.end(), ex.target.begin(), ex.target.end());
    return ids;
}

} // namespace

TEST_CASE("loss: uniform distribution costs P * ln|V|") {
    auto world = testsup::TinyWorld::make(8, small_cfg(), 5);
    auto p = world.params;
    std::fill(p.w_out.a.begin(), p.w_out.a.end(), 0.0);
    std::fill(p.b_out.a.begin(), p.b_out.a.end(), 0.0);

    const auto ex = sample_example(world);
    const double loss = example_loss(p, &world.matcher, ex, true);
    const double expected =
        static_cast<double>(ex.target.size()) * std::log(static_cast<double>(p.cfg.vocab_size));
    CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss: probability one on each correct token drives the loss to zero") {
    // hand-built trace: the loss operates on emitted logits only
    model::ForwardTrace trace;
    trace.logits = Matrix(4, 8);
    std::vector<int32_t> targets = {-1, 5, 6, 3};
    for (size_t t = 1; t < 4; ++t) trace.logits.at(t, static_cast<size_t>(targets[t])) = 60.0;
    const double loss = loss_given_targets(trace, targets);
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-9);
}

TEST_CASE("loss: matches an independent log-probability recomputation") {
    auto world = testsup::TinyWorld::make(10, small_cfg(), 7);
    const auto ex = sample_example(world);
    const double loss = example_loss(world.params, &world.matcher, ex, true);

    const auto trace = model::forward(world.params, &world.matcher, concat_ids(ex), true);
    double expected = 0.0;
    for (size_t k = 0; k < ex.target.size(); ++k) {
        const size_t row = ex.input.size() - 1 + k;
        // plain softmax, no max subtraction
        double z = 0.0;
        for (size_t v = 0; v < trace.logits.cols; ++v) z += std::exp(trace.logits.at(row, v));
        expected -=
            std::log(std::exp(trace.logits.at(row, static_cast<size_t>(ex.target[k]))) / z);
    }
    CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss: empty response is rejected") {
    auto world = testsup::TinyWorld::make(8, small_cfg(), 7);
    data::InstructionExample ex;
    findings::Finding f;
    f.id = 1;
    f.entity = "w0";
    ex.image_repr.findings.push_back(f);
    ex.instruction = "w1";
    ex.response = "   ";
    CHECK_THROWS_AS(encode_example(ex, world.vocab, 32), DataError);
}

TEST_CASE("loss and gradients are unchanged by PAD padding") {
    auto world = testsup::TinyWorld::make(10, small_cfg(), 11);
    const auto ex = sample_example(world);

    const auto ids = concat_ids(ex);
    auto padded = ids;
    padded.insert(padded.end(), 4, tok::PAD);

    const auto plain = model::forward(world.params, &world.matcher, ids, true);
    const auto masked = model::forward(world.params, &world.matcher, padded, ids.size(), true);

    std::vector<int32_t> targets(ids.size(), -1);
    for (size_t k = 0; k < ex.target.size(); ++k)
        targets[ex.input.size() - 1 + k] = ex.target[k];
    std::vector<int32_t> padded_targets = targets;
    padded_targets.resize(padded.size(), -1); // PAD positions masked from the loss

    CHECK(loss_given_targets(plain, targets) == loss_given_targets(masked, padded_targets));

    // gradients agree bit-for-bit as well
    model::BackwardOptions opts;
    auto grads_plain = model::ModelParams::zeros_like(world.params);
    auto grads_masked = model::ModelParams::zeros_like(world.params);
    {
        Matrix dlogits(plain.logits.rows, plain.logits.cols);
        for (size_t t = 0; t < targets.size(); ++t) {
            if (targets[t] < 0) continue;
            const auto pr = model::next_token_distribution(plain, t);
            for (size_t v = 0; v < pr.size(); ++v) dlogits.at(t, v) = pr[v];
            dlogits.at(t, static_cast<size_t>(targets[t])) -= 1.0;
        }
        model::backward_from_logit_grads(world.params, plain, dlogits, grads_plain, opts);
    }
    {
        Matrix dlogits(masked.logits.rows, masked.logits.cols);
        for (size_t t = 0; t < padded_targets.size(); ++t) {
            if (padded_targets[t] < 0) continue;
            const auto pr = model::next_token_distribution(masked, t);
            for (size_t v = 0; v < pr.size(); ++v) dlogits.at(t, v) = pr[v];
            dlogits.at(t, static_cast<size_t>(padded_targets[t])) -= 1.0;
        }
        model::backward_from_logit_grads(world.params, masked, dlogits, grads_masked, opts);
    }
    auto ga = grads_plain.tensors();
    auto gb = grads_masked.tensors();
    for (size_t i = 0; i < ga.size(); ++i) {
        if (ga[i].first == "positional_embedding") {
            // PAD rows receive zero gradient; valid rows must agree exactly
            for (size_t r = 0; r < ga[i].second->rows; ++r)
                for (size_t c = 0; c < ga[i].second->cols; ++c)
                    CHECK(ga[i].second->at(r, c) == gb[i].second->at(r, c));
            continue;
        }
        CHECK(ga[i].second->a == gb[i].second->a);
    }
}

TEST_CASE("backward: b_out gradient is the summed softmax-minus-onehot") {
    auto world = testsup::TinyWorld::make(10, small_cfg(), 13);
    const auto ex = sample_example(world);
    const auto grads = example_gradients(world.params, &world.matcher, ex, {});

    const auto trace = model::forward(world.params, &world.matcher, concat_ids(ex), true);
    std::vector<double> expected(static_cast<size_t>(world.cfg.vocab_size), 0.0);
    for (size_t k = 0; k < ex.target.size(); ++k) {
        const size_t row = ex.input.size() - 1 + k;
        const auto pr = model::next_token_distribution(trace, row);
        for (size_t v = 0; v < pr.size(); ++v) expected[v] += pr[v];
        expected[static_cast<size_t>(ex.target[k])] -= 1.0;
    }
    for (size_t v = 0; v < expected.size(); ++v)
        CHECK(grads.b_out.a[v] == doctest::Approx(expected[v]).epsilon(1e-12));
}

TEST_CASE("backward: disable_kg zeroes the knowledge-path gradients") {
    auto world = testsup::TinyWorld::make(10, small_cfg(), 17);
    const auto ex = sample_example(world);
    model::BackwardOptions opts;
    opts.use_kg = false;
    auto grads = model::ModelParams::zeros_like(world.params);
    const auto ids = concat_ids(ex);
    const auto trace = model::forward(world.params, nullptr, ids, ids.size(), false);
    Matrix dlogits(trace.logits.rows, trace.logits.cols);
    for (double& x : dlogits.a) x = 0.25; // arbitrary upstream gradient
    model::backward_from_logit_grads(world.params, trace, dlogits, grads, opts);

    for (double x : grads.w_proj_k.a) CHECK(x == 0.0);
    for (double x : grads.b_proj_k.a) CHECK(x == 0.0);
    for (double x : grads.concept_embeddings.a) CHECK(x == 0.0);
}

TEST_CASE("backward: freeze_kg_embeddings zeroes only the concept embeddings") {
    auto world = testsup::TinyWorld::make(10, small_cfg(), 19);
    const auto ex = sample_example(world);
    model::BackwardOptions opts;
    opts.freeze_kg_embeddings = true;
    const auto grads = example_gradients(world.params, &world.matcher, ex, opts);
    for (double x : grads.concept_embeddings.a) CHECK(x == 0.0);
    double proj_norm = 0.0;
    for (double x : grads.w_proj_k.a) proj_norm += std::abs(x);
    CHECK(proj_norm > 0.0);
}

TEST_CASE("gradient_check: analytic matches central differences on the small model") {
    model::ModelConfig cfg = small_cfg();
    cfg.vocab_size = 20;
    cfg.max_seq_len = 8;
    const auto result = gradient_check(cfg, 123);
    CHECK(result.per_tensor.size() > 0);
    CHECK(result.max_rel_err < 1e-6);
}

TEST_CASE("adamw: first-step closed form") {
    Matrix theta(1, 1), g(1, 1), m(1, 1), v(1, 1);
    theta.a[0] = 1.0;
    g.a[0] = 0.5;
    adamw_update_tensor(theta, g, m, v, 1, 0.1, 0.9, 0.999, 1e-8, 0.0);
    CHECK(theta.a[0] == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adamw: zero gradients and zero decay leave parameters untouched") {
    auto world = testsup::TinyWorld::make(8, small_cfg(), 23);
    auto params = world.params;
    const auto before = params;
    auto grads = model::ModelParams::zeros_like(params);
    OptimizerState state;
    state.m = model::ModelParams::zeros_like(params);
    state.v = model::ModelParams::zeros_like(params);
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step(params, grads, state, cfg);
    CHECK(params == before);
}

TEST_CASE("adamw: five steps on a scalar quadratic match a hand-rolled recurrence") {
    Matrix theta(1, 1), m(1, 1), v(1, 1);
    theta.a[0] = 2.0;
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;

    double ref_theta = 2.0, ref_m = 0.0, ref_v = 0.0;
    for (size_t k = 1; k <= 5; ++k) {
        Matrix g(1, 1);
        g.a[0] = 2.0 * theta.a[0]; // d/dx of x^2
        adamw_update_tensor(theta, g, m, v, k, lr, b1, b2, eps, wd);

        const double ref_g = 2.0 * ref_theta;
        ref_m = b1 * ref_m + (1 - b1) * ref_g;
        ref_v = b2 * ref_v + (1 - b2) * ref_g * ref_g;
        const double mh = ref_m / (1 - std::pow(b1, static_cast<double>(k)));
        const double vh = ref_v / (1 - std::pow(b2, static_cast<double>(k)));
        ref_theta -= lr * (mh / (std::sqrt(vh) + eps) + wd * ref_theta);
        CHECK(theta.a[0] == doctest::Approx(ref_theta).epsilon(1e-15));
    }
}

TEST_CASE("adamw: non-finite gradients abort with a diagnostic") {
    auto world = testsup::TinyWorld::make(8, small_cfg(), 29);
    auto params = world.params;
    auto grads = model::ModelParams::zeros_like(params);
    grads.w_out.a[3] = std::numeric_limits<double>::quiet_NaN();
    OptimizerState state;
    state.m = model::ModelParams::zeros_like(params);
    state.v = model::ModelParams::zeros_like(params);
    TrainConfig cfg;
    CHECK_THROWS_AS(adamw_step(params, grads, state, cfg), NumericError);
}

TEST_CASE("sgd: theta' = theta - eta * g on every tensor") {
    auto world = testsup::TinyWorld::make(8, small_cfg(), 31);
    auto params = world.params;
    const auto before = params;
    auto grads = model::ModelParams::zeros_like(params);
    Rng rng(6);
    for (auto& [name, m] : grads.tensors())
        for (double& x : m->a) x = rng.uniform(-1.0, 1.0);
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.plain_sgd = true;
    sgd_step(params, grads, cfg);

    auto pa = params.tensors();
    auto pb = before.tensors();
    auto gs = grads.tensors();
    for (size_t i = 0; i < pa.size(); ++i)
        for (size_t k = 0; k < pa[i].second->a.size(); ++k)
            CHECK(pa[i].second->a[k] ==
                  doctest::Approx(pb[i].second->a[k] - 0.1 * gs[i].second->a[k]).epsilon(1e-15));
}

namespace {

std::vector<data::InstructionExample> tiny_dataset(size_t n, uint64_t seed) {
    auto cfg = data::default_generator_config();
    cfg.seed = seed;
    cfg.n_examples = n;
    return data::generate_dataset(cfg);
}

} // namespace

TEST_CASE("train: zero learning rate keeps the initial parameters") {
    const auto dataset = tiny_dataset(4, 3);
    const auto gcfg = data::default_generator_config();
    const auto graph = data::build_catalog_kg(gcfg, 4, 3);
    const auto vocab = tok::Vocabulary::build(dataset_corpus(dataset));

    model::ModelConfig mcfg = small_cfg();
    mcfg.max_seq_len = 128;
    TrainConfig tcfg;
    tcfg.learning_rate = 0.0;
    tcfg.weight_decay = 0.0;
    tcfg.total_steps = 5;
    tcfg.batch_size = 2;
    tcfg.seed = 7;

    const auto result = train(dataset, graph, vocab, mcfg, tcfg);
    const auto init = model::ModelParams::init(
        [&] {
            auto c = mcfg;
            c.vocab_size = static_cast<int32_t>(vocab.size());
            return c;
        }(),
        graph, tcfg.seed);
    CHECK(result.params == init);
}

TEST_CASE("train: identical seeds give identical parameters and losses") {
    const auto dataset = tiny_dataset(6, 11);
    const auto gcfg = data::default_generator_config();
    const auto graph = data::build_catalog_kg(gcfg, 4, 11);
    const auto vocab = tok::Vocabulary::build(dataset_corpus(dataset));

    model::ModelConfig mcfg = small_cfg();
    mcfg.max_seq_len = 128;
    TrainConfig tcfg;
    tcfg.total_steps = 8;
    tcfg.batch_size = 3;
    tcfg.seed = 21;

    const auto a = train(dataset, graph, vocab, mcfg, tcfg);
    const auto b = train(dataset, graph, vocab, mcfg, tcfg);
    CHECK(a.params == b.params);
    CHECK(a.step_losses == b.step_losses);
}

TEST_CASE("train: loss descends on a small overfit set") {
    const auto dataset = tiny_dataset(4, 13);
    const auto gcfg = data::default_generator_config();
    const auto graph = data::build_catalog_kg(gcfg, 8, 13);
    const auto vocab = tok::Vocabulary::build(dataset_corpus(dataset));

    model::ModelConfig mcfg = small_cfg();
    mcfg.d_know = 8;
    mcfg.max_seq_len = 128;
    TrainConfig tcfg;
    tcfg.learning_rate = 3e-3;
    tcfg.total_steps = 200;
    tcfg.batch_size = 4;
    tcfg.seed = 2;

    std::vector<EncodedExample> encoded;
    for (const auto& ex : dataset) encoded.push_back(encode_example(ex, vocab, 128));
    const model::ConceptMatcher matcher(graph, vocab);

    auto initial_params = model::ModelParams::init(
        [&] {
            auto c = mcfg;
            c.vocab_size = static_cast<int32_t>(vocab.size());
            return c;
        }(),
        graph, tcfg.seed);
    const double before = dataset_mean_loss(initial_params, &matcher, encoded, true);
    const auto result = train(dataset, graph, vocab, mcfg, tcfg);
    const double after = dataset_mean_loss(result.params, &matcher, encoded, true);
    CHECK(after < before);
}

TEST_CASE("train: disable_kg leaves the knowledge tensors at their initial values") {
    const auto dataset = tiny_dataset(4, 17);
    const auto gcfg = data::default_generator_config();
    const auto graph = data::build_catalog_kg(gcfg, 4, 17);
    const auto vocab = tok::Vocabulary::build(dataset_corpus(dataset));

    model::ModelConfig mcfg = small_cfg();
    mcfg.max_seq_len = 128;
    TrainConfig tcfg;
    tcfg.total_steps = 5;
    tcfg.batch_size = 2;
    tcfg.seed = 5;
    tcfg.disable_kg = true;

    const auto result = train(dataset, graph, vocab, mcfg, tcfg);
    const auto init = model::ModelParams::init(result.params.cfg, graph, tcfg.seed);
    CHECK(result.params.w_proj_k.a == init.w_proj_k.a);
    CHECK(result.params.b_proj_k.a == init.b_proj_k.a);
    CHECK(result.params.concept_embeddings.a == init.concept_embeddings.a);
}

TEST_CASE("train: empty dataset is rejected") {
    const auto gcfg = data::default_generator_config();
    const auto graph = data::build_catalog_kg(gcfg, 4, 1);
    const tok::Vocabulary vocab;
    model::ModelConfig mcfg = small_cfg();
    CHECK_THROWS_AS(train({}, graph, vocab, mcfg, TrainConfig{}), DataError);
}
