#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

#include "seat/errors.hpp"
#include "seat/eval.hpp"
#include "seat/trainer.hpp"

#ifdef SEAT_HAVE_EIGEN
#include <Eigen/Dense>
#endif

using namespace seat;

namespace {

CorpusConfig small_corpus_config() {
    CorpusConfig cc;
    cc.factual = 12;
    cc.alignment = 16;
    cc.finetune = 6;
    cc.unseen = 6;
    cc.pool = 9;
    cc.unverifiable = 8;
    cc.seed = 11;
    return cc;
}

ModelCheckpoint micro_ckpt(const CorpusBundle& bundle) {
    ModelCheckpoint ckpt;
    ckpt.config.n_layers = 1;
    ckpt.config.d_model = 16;
    ckpt.config.n_heads = 2;
    ckpt.config.d_ff = 32;
    ckpt.config.context_len = 64;
    ckpt.config.vocab_size = static_cast<int>(bundle.vocab.size());
    ckpt.config.seed = 5;
    ckpt.params = init_params(ckpt.config);
    ckpt.provenance = {"pretrain", "", vocab_hash(bundle)};
    return ckpt;
}

ActivationSet acts_from(const MatT<float>& rows) {
    ActivationSet a;
    a.layer = 0;
    a.rows = rows;
    a.labels.assign(rows.rows, "synthetic");
    return a;
}

MatT<double> mat2(std::initializer_list<std::initializer_list<double>> rows) {
    MatT<double> m(rows.size(), rows.begin()->size());
    std::size_t r = 0;
    for (const auto& row : rows) {
        std::size_t c = 0;
        for (double v : row) m.row(r)[c++] = v;
        ++r;
    }
    return m;
}

}  // namespace

TEST_CASE("unigram recall hand cases") {
    CHECK(rouge1("the sky is blue", "the sky is blue") == 1.0);
    CHECK(rouge1("red green", "blue yellow") == 0.0);
    CHECK(rouge1("b a", "a b") == 1.0);
    CHECK(rouge1("a", "a b c d") == 0.25);
    CHECK(rouge1("a x y z", "a b") == 0.5);
    CHECK(rouge1("", "a b") == 0.0);
    // Repeated prediction words only count up to the reference multiplicity.
    CHECK(rouge1("a a a", "a b") == 0.5);
    CHECK(rouge1("a a", "a a b c") == 0.5);
    CHECK_THROWS_AS(rouge1("anything", "   "), ValidationError);
}

TEST_CASE("cosine basics") {
    const std::vector<float> x{1.0f, 0.0f}, y{0.0f, 2.0f}, z{-3.0f, 0.0f}, zero{0.0f, 0.0f};
    CHECK(cosine(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine(x, y) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine(x, z) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(cosine(x, zero) == 0.0);
    CHECK(cosine(zero, zero) == 0.0);
    const std::vector<float> w{1.0f, 2.0f, 3.0f};
    CHECK_THROWS_AS(cosine(x, w), StructuralError);
}

TEST_CASE("sentence embedding mean-pools the final block states") {
    CorpusBundle bundle = generate_corpus(small_corpus_config());
    const ModelCheckpoint ckpt = micro_ckpt(bundle);
    const std::string text = bundle.finetune[0].question;

    const auto ids = tokenize(text, bundle.vocab);
    auto cache = forward(ckpt.config, ckpt.params, std::span<const int>(ids));
    const auto& h = cache.hidden.back();
    std::vector<double> expect(h.cols, 0.0);
    for (std::size_t t = 0; t < h.rows; ++t) {
        for (std::size_t i = 0; i < h.cols; ++i) expect[i] += h.row(t)[i];
    }
    for (auto& v : expect) v /= static_cast<double>(h.rows);

    const auto got = sentence_embed(ckpt, text, bundle.vocab);
    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(std::abs(static_cast<double>(got[i]) - expect[i]) <= 1e-7);
    }

    CHECK_THROWS_AS(sentence_embed(ckpt, "", bundle.vocab), ValidationError);
}

#ifdef SEAT_HAVE_EIGEN
TEST_CASE("pca agrees with a dense eigensolver on random data") {
    std::mt19937_64 rng(1717);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> n_d(4, 32), d_d(2, 16);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = n_d(rng), d = d_d(rng);
        const int k = 1 + static_cast<int>(rng() % std::min<std::size_t>(2, d));
        MatT<float> data(n, d);
        for (auto& v : data.data) v = static_cast<float>(gauss(rng));
        const auto acts = acts_from(data);
        const PcaBasis basis = fit_pca(acts, k);

        // Independent oracle: covariance in Eigen double arithmetic, dense
        // self-adjoint eigendecomposition, same sign normalization.
        Eigen::MatrixXd X(n, d);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) X(r, c) = data.row(r)[c];
        }
        const Eigen::RowVectorXd mean = X.colwise().mean();
        const Eigen::MatrixXd centered = X.rowwise() - mean;
        const Eigen::MatrixXd cov =
            centered.transpose() * centered / static_cast<double>(n - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
        REQUIRE(solver.info() == Eigen::Success);

        for (std::size_t c = 0; c < d; ++c) {
            CHECK(std::abs(basis.mean[c] - mean(static_cast<Eigen::Index>(c))) <= 1e-9);
        }
        for (int c = 0; c < k; ++c) {
            // Eigen sorts ascending; component c is column d-1-c.
            const auto col = static_cast<Eigen::Index>(d) - 1 - c;
            const double ev = solver.eigenvalues()(col);
            const double got_ev = basis.explained_variance[static_cast<std::size_t>(c)];
            CHECK(std::abs(got_ev - ev) <= 1e-5 * std::max(1.0, std::abs(ev)));

            Eigen::VectorXd vec = solver.eigenvectors().col(col);
            Eigen::Index arg = 0;
            vec.cwiseAbs().maxCoeff(&arg);
            if (vec(arg) < 0.0) vec = -vec;
            for (std::size_t i = 0; i < d; ++i) {
                CHECK(std::abs(basis.components.row(c)[i] -
                               vec(static_cast<Eigen::Index>(i))) <= 1e-6);
            }
        }
    }
}
#endif

TEST_CASE("pca components are orthonormal and variance-sorted") {
    std::mt19937_64 rng(88);
    std::normal_distribution<double> gauss(0.0, 2.0);
    MatT<float> data(24, 10);
    for (auto& v : data.data) v = static_cast<float>(gauss(rng));
    const PcaBasis basis = fit_pca(acts_from(data), 4);

    for (std::size_t a = 0; a < basis.components.rows; ++a) {
        for (std::size_t b = a; b < basis.components.rows; ++b) {
            double dot = 0.0;
            for (std::size_t i = 0; i < basis.components.cols; ++i) {
                dot += basis.components.row(a)[i] * basis.components.row(b)[i];
            }
            CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) <= 1e-10);
        }
    }
    for (std::size_t c = 1; c < basis.explained_variance.size(); ++c) {
        CHECK(basis.explained_variance[c] <= basis.explained_variance[c - 1]);
        CHECK(basis.explained_variance[c] >= 0.0);
    }
    // Sign rule: the dominant entry of each component is positive.
    for (std::size_t c = 0; c < basis.components.rows; ++c) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < basis.components.cols; ++i) {
            if (std::fabs(basis.components.row(c)[i]) > std::fabs(basis.components.row(c)[arg])) {
                arg = i;
            }
        }
        CHECK(basis.components.row(c)[arg] > 0.0);
    }
    CHECK_FALSE(basis.rank_deficient);
}

TEST_CASE("projected variance reproduces the eigenvalues") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> gauss(0.0, 1.5);
    MatT<float> data(30, 8);
    for (auto& v : data.data) v = static_cast<float>(gauss(rng));
    const auto acts = acts_from(data);
    const PcaBasis basis = fit_pca(acts, 3);
    const MatT<double> proj = project(basis, acts);

    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < proj.rows; ++r) mean += proj.row(r)[c];
        mean /= static_cast<double>(proj.rows);
        double var = 0.0;
        for (std::size_t r = 0; r < proj.rows; ++r) {
            var += (proj.row(r)[c] - mean) * (proj.row(r)[c] - mean);
        }
        var /= static_cast<double>(proj.rows - 1);
        CHECK(std::abs(var - basis.explained_variance[c]) <=
              1e-5 * std::max(1.0, basis.explained_variance[c]));
        // Projections of the fitting data are centered.
        CHECK(std::abs(mean) <= 1e-9);
    }
}

TEST_CASE("pca hand case and degenerate inputs") {
    MatT<float> data(2, 2);
    data.row(0)[0] = 0.0f;
    data.row(0)[1] = 0.0f;
    data.row(1)[0] = 2.0f;
    data.row(1)[1] = 0.0f;
    const PcaBasis basis = fit_pca(acts_from(data), 1);
    CHECK(basis.mean[0] == doctest::Approx(1.0));
    CHECK(basis.mean[1] == doctest::Approx(0.0));
    CHECK(basis.components.row(0)[0] == doctest::Approx(1.0));
    CHECK(std::abs(basis.components.row(0)[1]) <= 1e-12);
    CHECK(basis.explained_variance[0] == doctest::Approx(2.0));

    const MatT<double> proj = project(basis, acts_from(data));
    CHECK(proj.row(0)[0] == doctest::Approx(-1.0));
    CHECK(proj.row(1)[0] == doctest::Approx(1.0));

    // Three coplanar points in 5-D have rank 2, so k = 3 overreaches.
    MatT<float> thin(3, 5);
    std::mt19937_64 rng(5);
    for (auto& v : thin.data) v = static_cast<float>(rng() % 7) - 3.0f;
    CHECK(fit_pca(acts_from(thin), 3).rank_deficient);

    CHECK_THROWS_AS(fit_pca(acts_from(data), 0), ValidationError);
    CHECK_THROWS_AS(fit_pca(acts_from(data), 3), ValidationError);
    MatT<float> single(1, 2);
    CHECK_THROWS_AS(fit_pca(acts_from(single), 1), ValidationError);

    MatT<float> wrong(4, 3);
    CHECK_THROWS_AS(project(basis, acts_from(wrong)), StructuralError);
}

TEST_CASE("separation hand cases") {
    // Centroids (0,1) and (4,1), pooled within-rms 1: separation 4.
    const auto a = mat2({{0.0, 0.0}, {0.0, 2.0}});
    const auto b = mat2({{4.0, 0.0}, {4.0, 2.0}});
    CHECK(separation(a, b) == doctest::Approx(4.0).epsilon(1e-12));

    // Coincident centroids give zero even with spread.
    const auto c = mat2({{-1.0, 0.0}, {1.0, 0.0}});
    const auto d = mat2({{0.0, -1.0}, {0.0, 1.0}});
    CHECK(separation(c, d) == 0.0);

    // Distinct centroids with zero radius are infinitely separated.
    const auto e = mat2({{0.0, 0.0}});
    const auto f = mat2({{3.0, 0.0}});
    CHECK(std::isinf(separation(e, f)));

    // A group compared with itself sits at zero distance.
    CHECK(separation(a, a) == 0.0);

    MatT<double> empty(0, 2);
    CHECK_THROWS_AS(separation(a, empty), ValidationError);
    const auto g = mat2({{1.0, 2.0, 3.0}});
    CHECK_THROWS_AS(separation(a, g), StructuralError);
}

TEST_CASE("idk scoring mixes matched and empty responses") {
    CorpusBundle bundle = generate_corpus(small_corpus_config());
    const ModelCheckpoint ckpt = micro_ckpt(bundle);
    const auto templates = idk_reference_strings(bundle);
    REQUIRE(templates.size() == 12);

    // A response equal to a template scores 1; an empty one scores 0.
    const std::vector<std::string> responses{templates[0], ""};
    const double score = idk_score_responses(responses, templates, ckpt, bundle.vocab);
    CHECK(score == doctest::Approx(0.5).epsilon(1e-9));

    CHECK_THROWS_AS(idk_score_responses({}, templates, ckpt, bundle.vocab), ValidationError);
    CHECK_THROWS_AS(idk_score_responses(responses, {}, ckpt, bundle.vocab), ValidationError);
}

TEST_CASE("decoded responses are identical across worker counts") {
    CorpusBundle bundle = generate_corpus(small_corpus_config());
    const ModelCheckpoint ckpt = micro_ckpt(bundle);
    std::vector<std::string> questions;
    for (const auto& r : bundle.finetune) questions.push_back(r.question);

    unsetenv("SEAT_THREADS");
    const auto serial = decode_responses(ckpt, questions, bundle.vocab, 12);
    setenv("SEAT_THREADS", "4", 1);
    const auto parallel = decode_responses(ckpt, questions, bundle.vocab, 12);
    unsetenv("SEAT_THREADS");
    CHECK(serial == parallel);
    CHECK(serial.size() == questions.size());
}

TEST_CASE("worker cap parses and clamps") {
    unsetenv("SEAT_THREADS");
    CHECK(eval_threads() == 1);
    setenv("SEAT_THREADS", "8", 1);
    CHECK(eval_threads() == 8);
    setenv("SEAT_THREADS", "999", 1);
    CHECK(eval_threads() == 64);
    setenv("SEAT_THREADS", "0", 1);
    CHECK(eval_threads() == 1);
    unsetenv("SEAT_THREADS");
}

TEST_CASE("eval report json round trip") {
    EvalReport r;
    r.ft_score = 0.9875;
    r.idk_unverifiable = 0.91;
    r.idk_unseen = 0.84;
    r.separation_per_layer = {0.25, 0.5, 0.75};
    r.method = "seat";
    r.seed = 9;
    r.corpus_hash = "abc123";
    const EvalReport back = eval_report_from_json(to_json(r));
    CHECK(back.ft_score == r.ft_score);
    CHECK(back.idk_unverifiable == r.idk_unverifiable);
    CHECK(back.idk_unseen == r.idk_unseen);
    CHECK(back.separation_per_layer == r.separation_per_layer);
    CHECK(back.method == r.method);
    CHECK(back.seed == r.seed);
    CHECK(back.corpus_hash == r.corpus_hash);

    auto j = to_json(r);
    j.erase("idk_unseen");
    CHECK_THROWS_AS(eval_report_from_json(j), StructuralError);
}

TEST_CASE("full evaluation wires the pieces together") {
    CorpusBundle bundle = generate_corpus(small_corpus_config());
    const ModelCheckpoint ckpt = micro_ckpt(bundle);

    EvalOptions opts;
    opts.seed = 31;
    const EvalReport r = evaluate(ckpt, ckpt, bundle, opts);
    CHECK(r.method == "pretrain");
    CHECK(r.seed == 31);
    CHECK(r.corpus_hash == vocab_hash(bundle));
    CHECK(r.ft_score >= 0.0);
    CHECK(r.ft_score <= 1.0);
    CHECK(r.idk_unverifiable >= 0.0);
    CHECK(r.idk_unverifiable <= 1.0);
    CHECK(r.idk_unseen >= 0.0);
    CHECK(r.idk_unseen <= 1.0);
    REQUIRE(r.separation_per_layer.size() ==
            static_cast<std::size_t>(ckpt.config.n_layers) + 1);
    for (double s : r.separation_per_layer) CHECK(s >= 0.0);

    // Same inputs, same report.
    const EvalReport r2 = evaluate(ckpt, ckpt, bundle, opts);
    CHECK(to_json(r) == to_json(r2));

    ModelCheckpoint wrong = ckpt;
    wrong.provenance.corpus = "0123456789abcdef";
    CHECK_THROWS_AS(evaluate(wrong, ckpt, bundle, opts), ValidationError);

    EvalOptions bad = opts;
    bad.ft_dataset = "holdout";
    CHECK_THROWS_AS(evaluate(ckpt, ckpt, bundle, bad), ValidationError);
}

TEST_CASE("projection exports carry every point") {
    CorpusBundle bundle = generate_corpus(small_corpus_config());
    const ModelCheckpoint ckpt = micro_ckpt(bundle);
    const auto dump = projection_dump(ckpt, bundle, 2);
    REQUIRE(dump.size() == static_cast<std::size_t>(ckpt.config.n_layers) + 1);

    const std::size_t expect_points =
        bundle.unverifiable.size() + bundle.factual.size() + bundle.unseen_eval.size();
    for (const auto& lp : dump) {
        CHECK(lp.dataset.size() == expect_points);
        CHECK(lp.pc1.size() == expect_points);
        CHECK(lp.pc2.size() == expect_points);

        const std::string csv = projection_csv(lp);
        CHECK(csv.rfind("dataset,pc1,pc2\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + static_cast<long>(expect_points));

        const std::string svg = projection_svg(lp);
        CHECK(svg.find("<svg") != std::string::npos);
        // One circle per point plus the three legend swatches.
        std::size_t circles = 0, pos = 0;
        while ((pos = svg.find("<circle", pos)) != std::string::npos) {
            ++circles;
            pos += 7;
        }
        CHECK(circles == expect_points + 3);
    }
}
