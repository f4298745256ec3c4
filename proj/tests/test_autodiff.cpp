#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "slidealign/graph.hpp"
#include "slidealign/io.hpp"
#include "slidealign/mat.hpp"
#include "slidealign/rng.hpp"

using namespace slidealign;

namespace {

MatD random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    MatD m(r, c);
    for (auto& v : m.a) v = rng.normal() * scale;
    return m;
}

using GVar = Graph<double>::Var;

/// Compares tape gradients of a scalar-valued builder against central
/// differences for every input element.
template <typename BuildFn>
void check_grads(std::vector<MatD> inputs, BuildFn build, double tol = 1e-6) {
    Graph<double> g;
    std::vector<GVar> vars;
    for (auto& m : inputs) vars.push_back(g.input(m));
    auto loss = build(g, vars);
    g.backward(loss);
    std::vector<MatD> analytic;
    for (auto v : vars) analytic.push_back(g.grad(v));

    auto eval = [&]() {
        Graph<double> g2;
        std::vector<GVar> vs;
        for (auto& m : inputs) vs.push_back(g2.input(m));
        return g2.scalar(build(g2, vs));
    };
    const double h = 1e-5;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double saved = inputs[k].a[i];
            inputs[k].a[i] = saved + h;
            const double fp = eval();
            inputs[k].a[i] = saved - h;
            const double fm = eval();
            inputs[k].a[i] = saved;
            const double fd = (fp - fm) / (2 * h);
            const double an = analytic[k].a[i];
            INFO("input " << k << " element " << i << " analytic " << an << " fd " << fd);
            REQUIRE(std::abs(an - fd) <= tol * std::max({1.0, std::abs(an), std::abs(fd)}));
        }
    }
}

/// Reduce any matrix to a scalar through fixed random weights so the whole
/// Jacobian is exercised.
GVar weighted_sum(Graph<double>& g, GVar x, unsigned salt = 0) {
    Rng rng(99 + salt);
    MatD w = random_mat(g.rows(x), g.cols(x), rng);
    return g.sum_all(g.hadamard_const(x, std::move(w)));
}

}  // namespace

TEST_CASE("rng determinism and state round-trip") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    Rng c(7);
    c.uniform01();
    const std::string state = c.save_state();
    const double expect = c.uniform01();
    Rng d(0);
    d.load_state(state);
    REQUIRE(d.uniform01() == expect);

    Rng e(1), f(2);
    REQUIRE(e.next_u64() != f.next_u64());

    Rng g(5);
    for (int i = 0; i < 1000; ++i) {
        const double u = g.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        const int k = g.uniform_int(7);
        REQUIRE(k >= 0);
        REQUIRE(k < 7);
    }
}

TEST_CASE("base64 and little-endian primitives round-trip") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::uint8_t> data(static_cast<std::size_t>(rng.uniform_int(50)));
        for (auto& b : data) b = static_cast<std::uint8_t>(rng.uniform_int(256));
        const std::string enc = base64_encode(data.data(), data.size());
        REQUIRE(base64_decode(enc) == data);
    }
    std::string buf;
    put_u16(buf, 0xBEEF);
    put_u32(buf, 0xDEADBEEFu);
    put_u64(buf, 0x0123456789ABCDEFULL);
    put_f32(buf, 3.25f);
    put_string(buf, "hello");
    ByteReader rd(buf);
    REQUIRE(rd.u16() == 0xBEEF);
    REQUIRE(rd.u32() == 0xDEADBEEFu);
    REQUIRE(rd.u64() == 0x0123456789ABCDEFULL);
    REQUIRE(rd.f32() == 3.25f);
    REQUIRE(rd.str() == "hello");
    REQUIRE(rd.at_end());
}

TEST_CASE("elementwise and broadcast op gradients") {
    Rng rng(11);
    auto a = random_mat(3, 4, rng);
    auto b = random_mat(3, 4, rng);
    auto v = random_mat(1, 4, rng);

    check_grads({a, b}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.add(in[0], in[1]));
    });
    check_grads({a, b}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.sub(in[0], in[1]));
    });
    check_grads({a, v}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.add_rowvec(in[0], in[1]));
    });
    check_grads({a, b}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.hadamard(in[0], in[1]));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.scale(in[0], -1.7));
    });
    check_grads({a}, [&](Graph<double>& g, const std::vector<GVar>& in) {
        Rng r(5);
        return weighted_sum(g, g.hadamard_const(in[0], random_mat(3, 4, r)));
    });
    check_grads({a}, [&](Graph<double>& g, const std::vector<GVar>& in) {
        Rng r(6);
        return weighted_sum(g, g.add_const(in[0], random_mat(3, 4, r)));
    });
    auto s = MatD::scalar(0.8);
    check_grads({a, s}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.scale_var(in[0], in[1]));
    });
}

TEST_CASE("matmul family gradients") {
    Rng rng(12);
    auto a = random_mat(3, 4, rng);
    auto b = random_mat(4, 2, rng);
    auto c = random_mat(5, 4, rng);

    check_grads({a, b}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.matmul(in[0], in[1]));
    });
    check_grads({a, c}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.matmul_nt(in[0], in[1]));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.transpose(in[0]));
    });
}

TEST_CASE("softmax, log-softmax and layer-norm gradients") {
    Rng rng(13);
    auto a = random_mat(4, 5, rng);
    auto gamma = random_mat(1, 5, rng, 0.5);
    auto beta = random_mat(1, 5, rng, 0.5);

    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.row_softmax(in[0]));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.row_log_softmax(in[0]));
    });
    check_grads({a, gamma, beta}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.layer_norm(in[0], in[1], in[2]));
    });

    Graph<double> g;
    auto x = g.input(a);
    const MatD& y = g.val(g.row_softmax(x));
    for (int i = 0; i < y.rows; ++i) {
        double sum = 0;
        for (int j = 0; j < y.cols; ++j) sum += y(i, j);
        REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
}

TEST_CASE("shape op gradients") {
    Rng rng(14);
    auto a = random_mat(3, 4, rng);
    auto b = random_mat(2, 4, rng);
    auto sq = random_mat(4, 4, rng);

    check_grads({a, b}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.concat_rows({in[0], in[1], in[0]}));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.slice_rows(in[0], 1, 3));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.mean_rows(in[0]));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return g.mean_all(in[0]);
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return g.sum_all(in[0]);
    });
    check_grads({a, a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.rowwise_dot(in[0], in[1]));
    });
    check_grads({sq}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.diag(in[0]));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.gather_rows(in[0], {2, 0, 0, 1}));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.select_per_row(in[0], {3, 0, 2}));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.row_l2_normalize(in[0]));
    });
}

TEST_CASE("nonlinearity gradients") {
    Rng rng(15);
    auto a = random_mat(3, 4, rng);
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.tanh_op(in[0]));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.gelu(in[0]));
    });
    check_grads({a}, [](Graph<double>& g, const std::vector<GVar>& in) {
        return weighted_sum(g, g.softplus(in[0]));
    });
}

TEST_CASE("composite expression gradient") {
    Rng rng(16);
    auto a = random_mat(4, 3, rng, 0.4);
    auto w = random_mat(3, 3, rng, 0.4);
    check_grads({a, w}, [](Graph<double>& g, const std::vector<GVar>& in) {
        auto h = g.row_softmax(g.matmul_nt(in[0], in[1]));
        auto n = g.row_l2_normalize(g.gelu(g.matmul_nt(h, in[0])));
        return g.mean_all(g.rowwise_dot(n, n));
    });
}

TEST_CASE("row_l2_normalize reports the zero-norm row") {
    Graph<double> g;
    MatD m(2, 3, 0.0);
    m(0, 0) = 1.0;
    auto v = g.input(m);
    REQUIRE_THROWS_WITH(g.row_l2_normalize(v, "image embedding"),
                        Catch::Matchers::ContainsSubstring("image embedding at index 1"));
}

TEST_CASE("param binding accumulates gradients for reuse") {
    MatD w(2, 2);
    w.a = {1.0, 2.0, -1.0, 0.5};
    Graph<double> g;
    auto wv = g.param(w, "w");
    auto x = g.input(MatD(1, 2, 1.0));
    auto y = g.matmul_nt(x, wv);
    auto z = g.matmul_nt(y, wv);  // same parameter used twice
    auto loss = g.sum_all(z);
    g.backward(loss);
    REQUIRE(g.params().size() == 1);
    REQUIRE(g.params()[0].name == "w");
    REQUIRE(g.params()[0].master == &w);
    // d/dW of sum(W (W x)) has two contribution paths; check both via FD
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
        const double saved = w.a[static_cast<std::size_t>(i)];
        auto eval = [&]() {
            Graph<double> g2;
            auto wv2 = g2.param(w, "w");
            auto x2 = g2.input(MatD(1, 2, 1.0));
            return g2.scalar(g2.sum_all(g2.matmul_nt(g2.matmul_nt(x2, wv2), wv2)));
        };
        w.a[static_cast<std::size_t>(i)] = saved + h;
        const double fp = eval();
        w.a[static_cast<std::size_t>(i)] = saved - h;
        const double fm = eval();
        w.a[static_cast<std::size_t>(i)] = saved;
        const double fd = (fp - fm) / (2 * h);
        REQUIRE_THAT(g.grad(wv).a[static_cast<std::size_t>(i)],
                     Catch::Matchers::WithinAbs(fd, 1e-6));
    }
}
