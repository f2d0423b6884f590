#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "ptffsr/tensor.hpp"

using namespace ptffsr;
using ptffsr::testing::fd_check;
using ptffsr::testing::random_tensor;

TEST_CASE("matmul: identity and orthogonal selection") {
    Tape t;
    Var i2 = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Var a = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK(t.value(matmul(i2, a)).data == std::vector<double>{1, 2, 3, 4});

    Var sel = t.constant(Tensor({1, 2}, {1, 0}));
    Var col = t.constant(Tensor({2, 1}, {0, 5}));
    CHECK(t.value(matmul(sel, col)).data == std::vector<double>{0});
}

TEST_CASE("matmul: shape mismatch raises a dimension error") {
    Tape t;
    Var a = t.constant(Tensor::zeros({2, 3}));
    Var b = t.constant(Tensor::zeros({2, 3}));
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("matmul gradient: sum of product vs column sums and finite differences") {
    RandomStream rng(7);
    Param a(random_tensor({3, 4}, rng));
    Param b(random_tensor({4, 2}, rng));
    auto build = [&](Tape& t) { return sum_all(matmul(t.param(a), t.param(b))); };

    Param* params[] = {&a, &b};
    auto report = fd_check(params, build);
    CHECK(report.max_rel_err < 1e-4);

    // d sum(A.B) / dA_ik = sum_j B_kj, one column-sum per k broadcast over rows.
    a.zero_grad();
    b.zero_grad();
    {
        Tape t;
        backward(build(t));
    }
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 4; ++k) {
            double colsum = 0.0;
            for (int j = 0; j < 2; ++j) colsum += b.value.at(k, j);
            CHECK(a.grad.at(i, k) == doctest::Approx(colsum).epsilon(1e-12));
        }
}

TEST_CASE("sigmoid values: midpoint, saturation, reference point") {
    Tape t;
    Var x = t.constant(Tensor::row({0.0, -50.0, 1.0}));
    const Tensor& y = t.value(sigmoid(x));
    CHECK(y.data[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.data[1] > 0.0);
    CHECK(y.data[1] <= 1e-20);
    CHECK(std::isfinite(y.data[1]));
    CHECK(y.data[2] == doctest::Approx(0.7310585786).epsilon(1e-9));
}

TEST_CASE("softmax rows: symmetry, overflow stability, reference point") {
    Tape t;
    const Tensor& s1 = t.value(softmax_rows(t.constant(Tensor::row({3.3, 3.3, 3.3}))));
    for (double v : s1.data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    const Tensor& s2 = t.value(softmax_rows(t.constant(Tensor::row({1000.0, 0.0}))));
    CHECK(s2.data[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isfinite(s2.data[1]));

    const Tensor& s3 = t.value(softmax_rows(t.constant(Tensor::row({1.0, 0.0}))));
    const double e = std::exp(1.0);
    CHECK(s3.data[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
    CHECK(s3.data[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-12));
}

TEST_CASE("softmax output is a probability vector") {
    RandomStream rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tape t;
        int n = 1 + static_cast<int>(rng.next_below(12));
        const Tensor& y =
            t.value(softmax_rows(t.constant(random_tensor({1, n}, rng, -30.0, 30.0))));
        double sum = 0.0;
        for (double v : y.data) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("cosine similarity: parallel, orthogonal, reference, zero guard") {
    Tape t;
    Var a = t.constant(Tensor::row({2.0, -1.0, 0.5}));
    CHECK(t.value(cosine_sim(a, a)).data[0] == doctest::Approx(1.0).epsilon(1e-12));

    Var u = t.constant(Tensor::row({1.0, 0.0}));
    Var v = t.constant(Tensor::row({0.0, 1.0}));
    CHECK(t.value(cosine_sim(u, v)).data[0] == doctest::Approx(0.0).epsilon(1e-15));

    Var p = t.constant(Tensor::row({1.0, 1.0}));
    CHECK(t.value(cosine_sim(p, u)).data[0] == doctest::Approx(0.70710678).epsilon(1e-8));

    Var z = t.constant(Tensor::row({0.0, 0.0}));
    CHECK(t.value(cosine_sim(z, u)).data[0] == 0.0);
}

TEST_CASE("backward: sum root fills leaf grads with ones") {
    RandomStream rng(3);
    Param w(random_tensor({2, 3}, rng));
    Tape t;
    backward(sum_all(t.param(w)));
    for (double g : w.grad.data) CHECK(g == 1.0);
}

TEST_CASE("backward: non-scalar root is a usage error") {
    Tape t;
    Var a = t.constant(Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(backward(a), InputError);
}

TEST_CASE("backward: chained ops match finite differences") {
    RandomStream rng(5);
    Param w(random_tensor({1, 4}, rng));
    Param v(random_tensor({4, 1}, rng));
    auto build = [&](Tape& t) { return sum_all(matmul(sigmoid(t.param(w)), t.param(v))); };
    Param* params[] = {&w, &v};
    CHECK(fd_check(params, build).max_rel_err < 1e-4);
}

TEST_CASE("backward: calling twice accumulates additively") {
    RandomStream rng(9);
    Param w(random_tensor({1, 3}, rng));
    Tape t;
    Var loss = sum_all(mul(t.param(w), t.param(w)));
    backward(loss);
    Tensor once = w.grad;
    backward(loss);
    for (std::size_t i = 0; i < once.data.size(); ++i)
        CHECK(w.grad.data[i] == doctest::Approx(2.0 * once.data[i]).epsilon(1e-12));
}

TEST_CASE("backward: shared subexpression equals the unrolled tree") {
    RandomStream rng(13);
    Param w(random_tensor({1, 3}, rng));

    // loss = sum(s) + sum(s * s) with s = sigmoid(w) shared
    {
        Tape t;
        Var s = sigmoid(t.param(w));
        backward(add(sum_all(s), sum_all(mul(s, s))));
    }
    Tensor shared_grad = w.grad;
    w.zero_grad();

    // the same expression with s rebuilt at each use
    {
        Tape t;
        Var s1 = sigmoid(t.param(w));
        Var s2 = sigmoid(t.param(w));
        Var s3 = sigmoid(t.param(w));
        backward(add(sum_all(s1), sum_all(mul(s2, s3))));
    }
    for (std::size_t i = 0; i < shared_grad.data.size(); ++i)
        CHECK(w.grad.data[i] == doctest::Approx(shared_grad.data[i]).epsilon(1e-12));
}

TEST_CASE("every differentiable op matches central finite differences") {
    RandomStream rng(101);

    struct OpCase {
        const char* name;
        std::function<Var(Tape&, Param&, Param&)> build;
        double lo = -1.0, hi = 1.0;
    };
    // Each case reduces to a scalar through sum_all so fd_check applies.
    const OpCase cases[] = {
        {"add", [](Tape& t, Param& a, Param& b) { return sum_all(mul(add(t.param(a), t.param(b)), t.param(a))); }},
        {"sub", [](Tape& t, Param& a, Param& b) { return sum_all(mul(sub(t.param(a), t.param(b)), t.param(a))); }},
        {"mul", [](Tape& t, Param& a, Param& b) { return sum_all(mul(t.param(a), t.param(b))); }},
        {"scale", [](Tape& t, Param& a, Param&) { return sum_all(scale(t.param(a), -2.5)); }},
        {"transpose", [](Tape& t, Param& a, Param& b) { return sum_all(matmul(transpose(t.param(a)), t.param(b))); }},
        {"add_row_vec", [](Tape& t, Param& a, Param& b) {
             return sum_all(sigmoid(add_row_vec(t.param(a), row_at(t.param(b), 1))));
         }},
        {"sigmoid", [](Tape& t, Param& a, Param&) { return sum_all(sigmoid(t.param(a))); }},
        {"tanh", [](Tape& t, Param& a, Param&) { return sum_all(tanh_op(t.param(a))); }},
        {"exp", [](Tape& t, Param& a, Param&) { return sum_all(exp_op(t.param(a))); }},
        {"log", [](Tape& t, Param& a, Param&) { return sum_all(log_op(t.param(a))); }, 0.2, 2.0},
        {"log_sigmoid", [](Tape& t, Param& a, Param&) { return sum_all(log_sigmoid(t.param(a))); }},
        {"relu", [](Tape& t, Param& a, Param&) { return sum_all(relu(t.param(a))); }, 0.1, 1.0},
        {"softmax_rows", [](Tape& t, Param& a, Param& b) {
             return sum_all(mul(softmax_rows(t.param(a)), t.param(b)));
         }},
        {"sum_all", [](Tape& t, Param& a, Param&) { return sum_all(t.param(a)); }},
        {"cosine_sim", [](Tape& t, Param& a, Param& b) {
             return cosine_sim(row_at(t.param(a), 0), row_at(t.param(b), 0));
         }},
        {"slice_rows", [](Tape& t, Param& a, Param&) { return sum_all(slice_rows(t.param(a), 1, 3)); }},
        {"stack_rows", [](Tape& t, Param& a, Param&) {
             Var rows[] = {row_at(t.param(a), 0), row_at(t.param(a), 2), row_at(t.param(a), 0)};
             return sum_all(sigmoid(stack_rows(rows)));
         }},
        {"gather_rows", [](Tape& t, Param& a, Param&) {
             const std::int32_t ids[] = {2, 0, 2, 1};
             return sum_all(tanh_op(gather_rows(t.param(a), ids)));
         }},
    };

    for (const auto& c : cases) {
        CAPTURE(c.name);
        double worst = 0.0;
        for (int point = 0; point < 10; ++point) {
            Param a(random_tensor({3, 3}, rng, c.lo, c.hi));
            Param b(random_tensor({3, 3}, rng, c.lo, c.hi));
            Param* params[] = {&a, &b};
            auto build = [&](Tape& t) { return c.build(t, a, b); };
            worst = std::max(worst, fd_check(params, build).max_rel_err);
        }
        CHECK_MESSAGE(worst < 1e-4, c.name);
    }
}

TEST_CASE("add_row_vec and matmul compose and differentiate") {
    RandomStream rng(55);
    Param x(random_tensor({4, 3}, rng));
    Param w(random_tensor({3, 3}, rng));
    Param bias(random_tensor({1, 3}, rng));
    auto build = [&](Tape& t) {
        return sum_all(tanh_op(add_row_vec(matmul(t.param(x), t.param(w)), t.param(bias))));
    };
    Param* params[] = {&x, &w, &bias};
    CHECK(fd_check(params, build).max_rel_err < 1e-4);
}

TEST_CASE("layer norm matches finite differences including gain and bias") {
    RandomStream rng(77);
    for (int point = 0; point < 10; ++point) {
        Param x(random_tensor({3, 5}, rng, -2.0, 2.0));
        Param g(random_tensor({1, 5}, rng, 0.5, 1.5));
        Param b(random_tensor({1, 5}, rng));
        auto build = [&](Tape& t) {
            return sum_all(sigmoid(layer_norm_rows(t.param(x), t.param(g), t.param(b))));
        };
        Param* params[] = {&x, &g, &b};
        CHECK(fd_check(params, build).max_rel_err < 1e-4);
    }
}

TEST_CASE("kernel ops keep finite inputs finite") {
    RandomStream rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        Tape t;
        Var a = t.constant(random_tensor({2, 4}, rng, -100.0, 100.0));
        Var out = sigmoid(a);
        out = add(out, tanh_op(a));
        out = mul(out, softmax_rows(a));
        out = sub(out, relu(a));
        CHECK(t.value(sum_all(log_sigmoid(out))).all_finite());
    }
}
