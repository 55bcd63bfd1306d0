#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "surgvae/errors.hpp"
#include "surgvae/gradcheck.hpp"
#include "surgvae/graph.hpp"
#include "surgvae/rng.hpp"
#include "surgvae/tensor.hpp"

using namespace surgvae;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> data(n);
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(data));
}

// Runs gradient_check for a scalar graph builder taking a list of leaf tensors.
GradCheckReport check_builder(const std::function<NodeId(Graph&, const std::vector<NodeId>&)>& build,
                              std::vector<Tensor> leaves, double h = 1e-5, double tol = 1e-4) {
    auto eval = [&](const std::vector<Tensor>& params) {
        Graph g;
        std::vector<NodeId> ids;
        for (const auto& p : params) ids.push_back(g.input(p));
        return g.value(build(g, ids)).item();
    };
    auto analytic = [&](const std::vector<Tensor>& params) {
        Graph g;
        std::vector<NodeId> ids;
        for (const auto& p : params) ids.push_back(g.input(p));
        NodeId root = build(g, ids);
        g.backward(root);
        std::vector<Tensor> out;
        for (NodeId id : ids) out.push_back(g.grad(id));
        return out;
    };
    return gradient_check(eval, analytic, std::move(leaves), h, tol);
}

}  // namespace

TEST_CASE("tensor construction validates shape and finiteness") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    CHECK_THROWS_AS(Tensor({2}, {1.0, std::nan("")}), DomainError);
    CHECK_THROWS_AS(Tensor({2}, {1.0, INFINITY}), DomainError);
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at(1, 2) == 6.0);
    CHECK(Tensor::scalar(4.5).item() == 4.5);
}

TEST_CASE("matmul identity, hand product, zero annihilator") {
    Graph g;
    NodeId eye = g.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    NodeId a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    NodeId prod = g.matmul(eye, a);
    CHECK(g.value(prod).vec() == std::vector<double>{1, 2, 3, 4});

    NodeId r = g.constant(Tensor({1, 2}, {1, 2}));
    NodeId c = g.constant(Tensor({2, 1}, {3, 4}));
    CHECK(g.value(g.matmul(r, c)).item() == doctest::Approx(11.0).epsilon(1e-15));

    NodeId zero = g.constant(Tensor::zeros({2, 2}));
    const Tensor& z = g.value(g.matmul(zero, a));
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);

    CHECK_THROWS_WITH_AS(static_cast<void>(g.matmul(a, r)),
                         doctest::Contains("[2x2] x [1x2]"), DimensionError);
}

TEST_CASE("elementwise basics") {
    Graph g;
    NodeId x = g.constant(Tensor({1, 1}, {0.0}));
    CHECK(g.value(g.sigmoid(x)).item() == 0.5);
    NodeId neg3 = g.constant(Tensor::scalar(-3.0));
    NodeId pos3 = g.constant(Tensor::scalar(3.0));
    CHECK(g.value(g.relu(neg3)).item() == 0.0);
    CHECK(g.value(g.relu(pos3)).item() == 3.0);
    NodeId a = g.constant(Tensor({1, 2}, {1, 2}));
    NodeId b = g.constant(Tensor({1, 2}, {10, 20}));
    CHECK(g.value(g.add(a, b)).vec() == std::vector<double>{11, 22});

    NodeId bad = g.constant(Tensor({1, 2}, {1.0, -1.0}));
    CHECK_THROWS_AS(static_cast<void>(g.log(bad)), DomainError);
    NodeId m = g.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK_THROWS_AS(static_cast<void>(g.add(m, a)), DimensionError);
}

TEST_CASE("row broadcast add") {
    Graph g;
    NodeId m = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    NodeId r = g.constant(Tensor({1, 2}, {10, 20}));
    CHECK(g.value(g.add(m, r)).vec() == std::vector<double>{11, 22, 13, 24});
}

TEST_CASE("reductions") {
    Graph g;
    NodeId v = g.constant(Tensor({3}, {1, 2, 3}));
    CHECK(g.value(g.sum(v)).item() == 6.0);
    NodeId c = g.constant(Tensor::full({4, 2}, 7.5));
    CHECK(g.value(g.mean(c)).item() == 7.5);
    NodeId m = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK(g.value(g.sum_axis(m, 0)).vec() == std::vector<double>{4, 6});
    CHECK(g.value(g.sum_axis(m, 1)).vec() == std::vector<double>{3, 7});
    CHECK_THROWS_AS(static_cast<void>(g.sum_axis(m, 2)), DimensionError);
}

TEST_CASE("softmax rows: uniform, hand values, shift invariance, stochasticity") {
    Graph g;
    NodeId zeros = g.constant(Tensor::zeros({1, 4}));
    const Tensor& u = g.value(g.softmax_rows(zeros));
    for (std::size_t j = 0; j < 4; ++j) CHECK(u[j] == doctest::Approx(0.25).epsilon(1e-15));

    NodeId logs = g.constant(Tensor({1, 2}, {std::log(1.0), std::log(3.0)}));
    const Tensor& s = g.value(g.softmax_rows(logs));
    CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-12));

    Rng rng(11);
    Tensor raw = random_tensor({5, 7}, rng, -30.0, 30.0);
    Graph g2;
    NodeId a = g2.constant(raw);
    const Tensor& sm = g2.value(g2.softmax_rows(a));
    Tensor shifted = raw;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 7; ++j) shifted.at(i, j) += 13.25 * (double(i) + 1.0);
    const Tensor& sm2 = g2.value(g2.softmax_rows(g2.constant(shifted)));
    for (std::size_t i = 0; i < sm.numel(); ++i)
        CHECK(sm[i] == doctest::Approx(sm2[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < 5; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            CHECK(sm.at(i, j) >= 0.0);
            acc += sm.at(i, j);
        }
        CHECK(std::fabs(acc - 1.0) < 1e-12);
    }
}

TEST_CASE("backward quadratic, sigmoid chain, unreachable parameter") {
    Graph g;
    NodeId w = g.input(Tensor({2}, {1, 2}));
    NodeId root = g.sum(g.square(w));
    g.backward(root);
    CHECK(g.grad(w).vec() == std::vector<double>{2, 4});

    Graph g2;
    NodeId w2 = g2.input(Tensor::scalar(0.0));
    NodeId x = g2.constant(Tensor::scalar(1.0));
    NodeId r2 = g2.sigmoid(g2.mul(w2, x));
    g2.backward(r2);
    CHECK(g2.grad(w2).item() == doctest::Approx(0.25).epsilon(1e-15));

    Graph g3;
    NodeId p = g3.input(Tensor({3}, {1, 2, 3}));
    NodeId q = g3.input(Tensor::scalar(2.0));
    NodeId r3 = g3.square(q);
    g3.backward(r3);
    const Tensor& gp = g3.grad(p);
    for (std::size_t i = 0; i < 3; ++i) CHECK(gp[i] == 0.0);

    CHECK_THROWS_AS(g3.backward(p), UsageError);
}

TEST_CASE("backward resets between calls") {
    Graph g;
    NodeId w = g.input(Tensor({2}, {3, 4}));
    NodeId root = g.sum(g.square(w));
    g.backward(root);
    g.backward(root);
    CHECK(g.grad(w).vec() == std::vector<double>{6, 8});  // not doubled
}

TEST_CASE("gradient_check trivial cases") {
    auto f = [](const std::vector<Tensor>& p) { return p[0].item() * p[0].item(); };
    auto an = [](const std::vector<Tensor>& p) {
        return std::vector<Tensor>{Tensor::scalar(2.0 * p[0].item())};
    };
    auto rep = gradient_check(f, an, {Tensor::scalar(3.0)}, 1e-5, 1e-8);
    CHECK(rep.pass);
    CHECK(rep.entries[0].analytic == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(rep.entries[0].numeric == doctest::Approx(6.0).epsilon(1e-8));

    auto fc = [](const std::vector<Tensor>&) { return 5.0; };
    auto anc = [](const std::vector<Tensor>& p) {
        return std::vector<Tensor>{Tensor::zeros(p[0].shape())};
    };
    auto repc = gradient_check(fc, anc, {Tensor({2}, {1, 2})});
    CHECK(repc.pass);
    CHECK(repc.max_rel_err == 0.0);
}

TEST_CASE("every registered op matches central finite differences") {
    Rng rng(1234);
    const double tol = 1e-4;
    struct Case {
        const char* name;
        std::function<NodeId(Graph&, const std::vector<NodeId>&)> build;
        std::vector<Tensor> leaves;
    };
    auto T = [&](std::vector<std::size_t> s, double lo = -1.0, double hi = 1.0) {
        return random_tensor(std::move(s), rng, lo, hi);
    };
    std::vector<Case> cases;
    cases.push_back({"matmul", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.matmul(in[0], in[1])));
                     },
                     {T({3, 4}), T({4, 2})}});
    cases.push_back({"bmm_nn", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.bmm(in[0], in[1])));
                     },
                     {T({2, 3, 4}), T({2, 4, 2})}});
    cases.push_back({"bmm_nt", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.bmm(in[0], in[1], false, true)));
                     },
                     {T({2, 3, 4}), T({2, 5, 4})}});
    cases.push_back({"bmm_tn", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.bmm(in[0], in[1], true, false)));
                     },
                     {T({2, 4, 3}), T({2, 4, 5})}});
    cases.push_back({"add", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.add(in[0], in[1])));
                     },
                     {T({3, 3}), T({3, 3})}});
    cases.push_back({"add_broadcast", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.add(in[0], in[1])));
                     },
                     {T({4, 3}), T({1, 3})}});
    cases.push_back({"sub_broadcast", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.sub(in[0], in[1])));
                     },
                     {T({4, 3}), T({1, 3})}});
    cases.push_back({"mul", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.mul(in[0], in[1])));
                     },
                     {T({3, 3}, 0.3, 1.3), T({3, 3}, 0.3, 1.3)}});
    cases.push_back({"mul_broadcast", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.mul(in[0], in[1])));
                     },
                     {T({4, 3}), T({1, 3})}});
    cases.push_back({"add_colvec", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.add_colvec(in[0], in[1])));
                     },
                     {T({4, 3}), T({4, 1})}});
    cases.push_back({"exp", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.exp(in[0]));
                     },
                     {T({3, 3})}});
    cases.push_back({"log", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.log(in[0]));
                     },
                     {T({3, 3}, 0.5, 2.0)}});
    cases.push_back({"relu", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.relu(in[0])));
                     },
                     {T({3, 3})}});
    cases.push_back({"sigmoid", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.sigmoid(in[0]));
                     },
                     {T({3, 3}, -2.0, 2.0)}});
    cases.push_back({"tanh", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.tanh(in[0]));
                     },
                     {T({3, 3}, -2.0, 2.0)}});
    cases.push_back({"square", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(in[0]));
                     },
                     {T({3, 3})}});
    cases.push_back({"sqrt", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.sqrt(in[0]));
                     },
                     {T({3, 3}, 0.5, 2.0)}});
    cases.push_back({"softplus", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.softplus(in[0]));
                     },
                     {T({3, 3}, -3.0, 3.0)}});
    cases.push_back({"neg", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.neg(in[0])));
                     },
                     {T({3, 3})}});
    cases.push_back({"scale", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.scale(in[0], -2.5)));
                     },
                     {T({3, 3})}});
    cases.push_back({"add_scalar", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.add_scalar(in[0], 1.5)));
                     },
                     {T({3, 3})}});
    cases.push_back({"clamp", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.clamp(in[0], -0.5, 0.5)));
                     },
                     {T({3, 3}, -0.4, 0.4)}});  // away from the kink
    cases.push_back({"mean", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.mean(g.square(in[0]));
                     },
                     {T({3, 4})}});
    cases.push_back({"sum_axis0", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.sum_axis(in[0], 0)));
                     },
                     {T({3, 4})}});
    cases.push_back({"mean_axis1", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.mean_axis(in[0], 1)));
                     },
                     {T({3, 4})}});
    cases.push_back({"sum_axis3d", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.sum_axis(in[0], 1)));
                     },
                     {T({2, 3, 4})}});
    cases.push_back({"logsumexp_axis1", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.logsumexp_axis(in[0], 1)));
                     },
                     {T({3, 4})}});
    cases.push_back({"logsumexp_axis3d", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.logsumexp_axis(in[0], 1)));
                     },
                     {T({2, 3, 4})}});
    cases.push_back({"softmax_rows", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.softmax_rows(in[0])));
                     },
                     {T({3, 5})}});
    cases.push_back({"reshape", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.reshape(in[0], {2, 6})));
                     },
                     {T({3, 4})}});
    cases.push_back({"transpose", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.matmul(g.transpose(in[0]), in[0])));
                     },
                     {T({3, 4})}});
    cases.push_back({"slice_cols", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.slice_cols(in[0], 1, 3)));
                     },
                     {T({3, 5})}});
    cases.push_back({"tokenize", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.tokenize(in[0], in[1], in[2])));
                     },
                     {T({3, 4}), T({4, 2}), T({4, 2})}});
    cases.push_back({"gauss_log_density", [](Graph& g, const std::vector<NodeId>& in) {
                         return g.sum(g.square(g.gauss_log_density(in[0], in[1], in[2])));
                     },
                     {T({3, 2}), T({3, 2}), T({3, 2}, -0.5, 0.5)}});

    for (auto& c : cases) {
        auto rep = check_builder(c.build, c.leaves, 1e-5, tol);
        CHECK_MESSAGE(rep.pass, std::string(c.name), " max rel err ", rep.max_rel_err);
    }
}

TEST_CASE("graph evaluation is deterministic") {
    auto run = [] {
        Rng rng(77);
        Graph g;
        NodeId a = g.input(random_tensor({4, 4}, rng));
        NodeId b = g.input(random_tensor({4, 4}, rng));
        NodeId r = g.mean(g.sigmoid(g.matmul(a, g.softmax_rows(b))));
        g.backward(r);
        auto v = g.value(r).item();
        auto ga = g.grad(a).vec();
        return std::make_pair(v, ga);
    };
    auto r1 = run();
    auto r2 = run();
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
}
