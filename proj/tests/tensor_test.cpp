#include "gtest/gtest.h"

#include <cmath>
#include <limits>

#include "linattn/rng.hpp"
#include "linattn/tensor.hpp"

using namespace linattn;

TEST(Tensor, ShapeAndIndexing) {
    Tensor t({2, 3}, 0.0);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
    EXPECT_EQ(t.size(), 6u);
    t(1, 2) = 5.0;
    EXPECT_DOUBLE_EQ(t[5], 5.0);

    Tensor cube({2, 2, 2}, 1.0);
    cube(1, 0, 1) = -3.0;
    EXPECT_DOUBLE_EQ(cube[5], -3.0);
}

TEST(Tensor, ZeroExtentIsEmpty) {
    Tensor t({0, 4});
    EXPECT_EQ(t.rows(), 0u);
    EXPECT_EQ(t.size(), 0u);
    EXPECT_TRUE(t.all_finite());
}

TEST(Tensor, MatmulHandValues) {
    Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
    Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
    Tensor c = matmul(a, b);
    EXPECT_DOUBLE_EQ(c(0, 0), 19.0);
    EXPECT_DOUBLE_EQ(c(0, 1), 22.0);
    EXPECT_DOUBLE_EQ(c(1, 0), 43.0);
    EXPECT_DOUBLE_EQ(c(1, 1), 50.0);
}

// The row kernel accumulates in ascending k; a matmul must therefore be
// bitwise identical to the explicit ordered sum.
TEST(Tensor, MatmulAccumulationOrderPinned) {
    Rng rng(11);
    Tensor a = random_tensor<double>(rng, {5, 7});
    Tensor b = random_tensor<double>(rng, {7, 4});
    Tensor c = matmul(a, b);
    for (size_t i = 0; i < 5; ++i) {
        for (size_t j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < 7; ++k) acc += a(i, k) * b(k, j);
            EXPECT_EQ(c(i, j), acc);
        }
    }
}

TEST(Tensor, MatmulShapeErrors) {
    Tensor a({2, 3}), b({4, 2});
    EXPECT_THROW(matmul(a, b), dim_error);
    Tensor cube({2, 2, 2});
    EXPECT_THROW(matmul(cube, a), dim_error);
}

TEST(Tensor, Transpose) {
    Tensor a = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
    Tensor t = transpose(a);
    EXPECT_EQ(t.rows(), 3u);
    EXPECT_EQ(t.cols(), 2u);
    EXPECT_DOUBLE_EQ(t(2, 1), 6.0);
}

TEST(Tensor, RowSoftmaxNormalizes) {
    Rng rng(3);
    Tensor a = random_tensor<double>(rng, {6, 9}, -30.0, 30.0);
    Tensor p = row_softmax(a, 0.25);
    for (size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (size_t j = 0; j < p.cols(); ++j) {
            EXPECT_GE(p(i, j), 0.0);
            s += p(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

// Max-subtraction keeps huge logits and the lowest-finite mask fill from
// overflowing.
TEST(Tensor, RowSoftmaxExtremeLogits) {
    Tensor a = Tensor::from_rows({{1e4, mask_fill_value<double>(), 1e4}});
    Tensor p = row_softmax(a, 1.0);
    EXPECT_TRUE(p.all_finite());
    EXPECT_NEAR(p(0, 0), 0.5, 1e-12);
    EXPECT_NEAR(p(0, 1), 0.0, 1e-300);
}

TEST(Tensor, MaskedFill) {
    Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
    BoolTensor keep({2, 2}, true);
    keep(1, 0) = 0;
    Tensor f = masked_fill(a, keep, -9.0);
    EXPECT_DOUBLE_EQ(f(1, 0), -9.0);
    EXPECT_DOUBLE_EQ(f(0, 0), 1.0);
    BoolTensor wrong({2, 3}, true);
    EXPECT_THROW(masked_fill(a, wrong, 0.0), dim_error);
}

TEST(Tensor, FiniteChecks) {
    Tensor a({2, 2}, 1.0);
    EXPECT_NO_THROW(ensure_finite(a, "a"));
    a(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(a.all_finite());
    EXPECT_THROW(ensure_finite(a, "a"), numeric_error);
}

TEST(Tensor, IdentityFactory) {
    Tensor id = Tensor::identity(3);
    for (size_t i = 0; i < 3; ++i)
        for (size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(id(i, j), i == j ? 1.0 : 0.0);
}

TEST(Rng, DeterministicAndInRange) {
    Rng a(42), b(42), c(43);
    bool all_same = true;
    for (int i = 0; i < 100; ++i) {
        uint64_t x = a.next_u64();
        EXPECT_EQ(x, b.next_u64());
        if (x != c.next_u64()) all_same = false;
    }
    EXPECT_FALSE(all_same);

    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        double u = r.uniform01();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        uint64_t k = r.uniform_int(10);
        EXPECT_LT(k, 10u);
    }
}

TEST(Rng, UniformRespectsBounds) {
    Rng r(9);
    for (int i = 0; i < 1000; ++i) {
        double u = r.uniform(-2.0, 3.0);
        EXPECT_GE(u, -2.0);
        EXPECT_LT(u, 3.0);
    }
}
