#include "gtest/gtest.h"

#include "linattn/augmented.hpp"
#include "linattn/decode.hpp"
#include "linattn/rng.hpp"
#include "linattn/verify.hpp"

using namespace linattn;

namespace {

AttnConfig head_cfg(size_t d, size_t group, size_t kernel,
                    FeatureMap fm = FeatureMap::relu,
                    GlobalScale gs = GlobalScale::none, double alpha = 1.0) {
    AttnConfig cfg;
    cfg.d_model = d;
    cfg.n_heads = 1;
    cfg.head_dim = d;
    cfg.group_size = group;
    cfg.conv_kernel = kernel;
    cfg.alpha = alpha;
    cfg.feature_map = fm;
    cfg.global_scale = gs;
    return cfg;
}

ConvWeights random_conv(Rng& rng, size_t kernel, size_t d) {
    ConvWeights w;
    w.taps = random_tensor<double>(rng, {kernel, d}, -0.5, 0.5);
    return w;
}

}  // namespace

TEST(DecodeState, FreshStateBookkeeping) {
    AttnConfig cfg = head_cfg(4, 3, 2);
    DecodeState st(cfg, ConvWeights::identity(2, 4));
    EXPECT_EQ(st.pos(), 0u);
    EXPECT_EQ(st.folded_tokens(), 0u);
    EXPECT_EQ(st.group_rows(), 0u);
    EXPECT_EQ(st.tail_rows(), 0u);
    for (size_t i = 0; i < st.state_matrix().size(); ++i)
        EXPECT_DOUBLE_EQ(st.state_matrix()[i], 0.0);
}

TEST(DecodeState, ConvShapeMismatchRejected) {
    AttnConfig cfg = head_cfg(4, 3, 2);
    EXPECT_THROW(DecodeState(cfg, ConvWeights::identity(3, 4)), dim_error);
    EXPECT_THROW(DecodeState(cfg, ConvWeights::identity(2, 5)), dim_error);
}

// First token from a fresh state: the local branch softmaxes over {self}
// (giving v), the global state is empty, and the conv window holds only v,
// so out = v + tap_current * v = (1 + c) * v.
TEST(DecodeState, FirstStepHandValue) {
    AttnConfig cfg = head_cfg(1, 4, 2);
    ConvWeights w;
    w.taps = Tensor::from_rows({{0.5}, {0.25}});  // oldest, current
    DecodeState st(cfg, w);
    Tensor q({1}, 2.0), k({1}, 3.0), v({1}, 8.0);
    Tensor out = st.decode_step(q, k, v);
    EXPECT_DOUBLE_EQ(out[0], 8.0 + 0.25 * 8.0);
    EXPECT_EQ(st.pos(), 1u);
    EXPECT_EQ(st.group_rows(), 1u);
    EXPECT_EQ(st.tail_rows(), 1u);
}

// d=1, identity map, G=2, k=1. After committing (k,v) = (1,2) and (3,4)
// the group folds: S = 1*2 + 3*4 = 14, folded count 2. The third step with
// q=2, v=5 then reads local = 5 (softmax over self), global = q*S = 28:
//   scale none    -> 5 + 28   = 33
//   inverse_count -> 5 + 28/2 = 19
TEST(DecodeState, GlobalStateHandValue) {
    for (GlobalScale gs : {GlobalScale::none, GlobalScale::inverse_count}) {
        AttnConfig cfg = head_cfg(1, 2, 1, FeatureMap::identity, gs);
        DecodeState st(cfg, ConvWeights(1, 1));  // zero tap: conv contributes nothing
        Tensor k1({1}, 1.0), v1({1}, 2.0), k2({1}, 3.0), v2({1}, 4.0);
        st.commit_row(k1.data(), v1.data());
        st.commit_row(k2.data(), v2.data());
        EXPECT_EQ(st.folded_tokens(), 2u);
        EXPECT_EQ(st.group_rows(), 0u);
        EXPECT_DOUBLE_EQ(st.state_matrix()(0, 0), 14.0);

        Tensor q({1}, 2.0), k3({1}, 7.0), v3({1}, 5.0);
        Tensor out = st.decode_step(q, k3, v3);
        const double expect = gs == GlobalScale::none ? 33.0 : 19.0;
        EXPECT_DOUBLE_EQ(out[0], expect);
    }
}

TEST(DecodeState, PrefillMatchesBatchedForwardBitwise) {
    Rng rng(81);
    for (size_t group : {1u, 3u, 8u, 64u}) {
        for (size_t kernel : {1u, 4u}) {
            const size_t n = 40 + rng.uniform_int(25);
            const size_t d = 1 + rng.uniform_int(8);
            AttnConfig cfg = head_cfg(d, group, kernel,
                                      static_cast<FeatureMap>(rng.uniform_int(3)),
                                      static_cast<GlobalScale>(rng.uniform_int(2)),
                                      rng.uniform(0.1, 1.5));
            ConvWeights w = random_conv(rng, kernel, d);
            Tensor q = random_tensor<double>(rng, {n, d});
            Tensor k = random_tensor<double>(rng, {n, d});
            Tensor v = random_tensor<double>(rng, {n, d});
            Tensor batched = augmented_attention_forward(q, k, v, w, cfg);
            DecodeState st(cfg, w);
            Tensor streamed = st.prefill(q, k, v);
            EXPECT_EQ(batched, streamed) << "G=" << group << " k=" << kernel;
            EXPECT_EQ(st.pos(), n);
        }
    }
}

TEST(DecodeState, StepwiseMatchesPrefillBitwise) {
    Rng rng(82);
    const size_t n = 50, d = 5;
    AttnConfig cfg = head_cfg(d, 7, 3, FeatureMap::elu_plus_one, GlobalScale::inverse_count,
                              0.9);
    ConvWeights w = random_conv(rng, 3, d);
    Tensor q = random_tensor<double>(rng, {n, d});
    Tensor k = random_tensor<double>(rng, {n, d});
    Tensor v = random_tensor<double>(rng, {n, d});

    DecodeState a(cfg, w);
    Tensor out_prefill = a.prefill(q, k, v);

    DecodeState b(cfg, w);
    Tensor out_steps({n, d});
    for (size_t t = 0; t < n; ++t)
        b.decode_step(q.data() + t * d, k.data() + t * d, v.data() + t * d,
                      out_steps.data() + t * d);
    EXPECT_EQ(out_prefill, out_steps);
    EXPECT_EQ(a, b);
}

// Splitting one stream into prefill(first) + prefill(rest) at any point
// changes nothing: same outputs, same state.
TEST(DecodeState, SplitPointFuzz) {
    Rng rng(83);
    const size_t n = 33, d = 4;
    AttnConfig cfg = head_cfg(d, 5, 4, FeatureMap::relu, GlobalScale::none, 1.1);
    ConvWeights w = random_conv(rng, 4, d);
    Tensor q = random_tensor<double>(rng, {n, d});
    Tensor k = random_tensor<double>(rng, {n, d});
    Tensor v = random_tensor<double>(rng, {n, d});

    DecodeState whole(cfg, w);
    Tensor ref = whole.prefill(q, k, v);

    auto rows = [&](const Tensor& t, size_t r0, size_t r1) {
        Tensor out({r1 - r0, d});
        for (size_t i = r0; i < r1; ++i)
            for (size_t j = 0; j < d; ++j) out(i - r0, j) = t(i, j);
        return out;
    };
    for (int it = 0; it < 20; ++it) {
        const size_t split = rng.uniform_int(n + 1);
        DecodeState st(cfg, w);
        Tensor first = st.prefill(rows(q, 0, split), rows(k, 0, split), rows(v, 0, split));
        Tensor rest = st.prefill(rows(q, split, n), rows(k, split, n), rows(v, split, n));
        EXPECT_EQ(st, whole) << "split=" << split;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < d; ++j) {
                const double got = i < split ? first(i, j) : rest(i - split, j);
                EXPECT_EQ(got, ref(i, j)) << "split=" << split;
            }
    }
}

TEST(DecodeState, EmptyPrefillIsNoOp) {
    Rng rng(84);
    AttnConfig cfg = head_cfg(4, 3, 2);
    ConvWeights w = random_conv(rng, 2, 4);
    DecodeState st(cfg, w);
    Tensor warm_q = random_tensor<double>(rng, {5, 4});
    Tensor warm_k = random_tensor<double>(rng, {5, 4});
    Tensor warm_v = random_tensor<double>(rng, {5, 4});
    st.prefill(warm_q, warm_k, warm_v);
    DecodeState before = st;
    Tensor out = st.prefill(Tensor({0, 4}), Tensor({0, 4}), Tensor({0, 4}));
    EXPECT_EQ(out.rows(), 0u);
    EXPECT_EQ(st, before);
}

TEST(DecodeState, GroupOfOneFoldsEveryToken) {
    Rng rng(85);
    AttnConfig cfg = head_cfg(3, 1, 1);
    ConvWeights w(1, 3);
    DecodeState st(cfg, w);
    for (int t = 0; t < 5; ++t) {
        Tensor k = random_tensor<double>(rng, {3});
        Tensor v = random_tensor<double>(rng, {3});
        st.commit_row(k.data(), v.data());
        EXPECT_EQ(st.group_rows(), 0u);
        EXPECT_EQ(st.folded_tokens(), static_cast<size_t>(t + 1));
    }
}

TEST(DecodeState, FoldGroupContract) {
    AttnConfig cfg = head_cfg(2, 3, 1);
    DecodeState st(cfg, ConvWeights(1, 2));
    EXPECT_THROW(st.fold_group(), contract_error);
    Tensor k({2}, 1.0), v({2}, 1.0);
    st.commit_row(k.data(), v.data());
    EXPECT_THROW(st.fold_group(), contract_error);
}

TEST(DecodeState, TailHoldsLastKernelMinusOneRows) {
    Rng rng(86);
    AttnConfig cfg = head_cfg(2, 10, 3);
    DecodeState st(cfg, random_conv(rng, 3, 2));
    std::vector<Tensor> vs;
    for (int t = 0; t < 6; ++t) {
        Tensor k = random_tensor<double>(rng, {2});
        Tensor v = random_tensor<double>(rng, {2});
        vs.push_back(v);
        st.commit_row(k.data(), v.data());
    }
    ASSERT_EQ(st.tail_rows(), 2u);
    // Oldest-to-newest: positions 4 and 5.
    EXPECT_DOUBLE_EQ(st.tail_row(0)[0], vs[4][0]);
    EXPECT_DOUBLE_EQ(st.tail_row(1)[1], vs[5][1]);
}

TEST(DecodeState, DecodeStepShapeErrors) {
    AttnConfig cfg = head_cfg(3, 2, 1);
    DecodeState st(cfg, ConvWeights(1, 3));
    Tensor bad({4}, 1.0), good({3}, 1.0);
    EXPECT_THROW(st.decode_step(bad, good, good), dim_error);
    EXPECT_THROW(st.decode_step(good, good, Tensor({3, 1}, 1.0)), dim_error);
    Tensor wide({5, 3}, 1.0), wrong({5, 4}, 1.0);
    EXPECT_THROW(st.prefill(wide, wide, wrong), dim_error);
}

TEST(DecodeState, WithConvSwapsTapsOnly) {
    Rng rng(87);
    AttnConfig cfg = head_cfg(3, 4, 2, FeatureMap::relu, GlobalScale::none, 0.0);
    ConvWeights w0(2, 3);  // zero taps
    DecodeState st(cfg, w0);
    Tensor q = random_tensor<double>(rng, {3}), k = random_tensor<double>(rng, {3}),
           v = random_tensor<double>(rng, {3});
    st.commit_row(k.data(), v.data());

    ConvWeights w1 = ConvWeights::identity(2, 3);
    DecodeState swapped = st.with_conv(w1);
    EXPECT_EQ(swapped, st);  // stream state is identical; only taps differ
    Tensor out0({3}), out1({3});
    st.compute_row(q.data(), k.data(), v.data(), out0.data());
    swapped.compute_row(q.data(), k.data(), v.data(), out1.data());
    for (size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out1[c] - out0[c], v[c]);
    EXPECT_THROW(st.with_conv(ConvWeights(3, 3)), dim_error);
}

TEST(Snapshot, RoundTripBitwise) {
    Rng rng(88);
    AttnConfig cfg = head_cfg(4, 5, 3, FeatureMap::elu_plus_one, GlobalScale::inverse_count,
                              0.8);
    ConvWeights w = random_conv(rng, 3, 4);
    DecodeState st(cfg, w);
    Tensor q = random_tensor<double>(rng, {13, 4});
    Tensor k = random_tensor<double>(rng, {13, 4});
    Tensor v = random_tensor<double>(rng, {13, 4});
    st.prefill(q, k, v);  // 13 = 2 full groups + 3 buffered rows

    std::vector<uint8_t> blob = st.snapshot();
    DecodeState back = DecodeState::restore(cfg, w, blob);
    EXPECT_EQ(back, st);

    // The restored state must continue the stream bitwise.
    Tensor nq = random_tensor<double>(rng, {4}), nk = random_tensor<double>(rng, {4}),
           nv = random_tensor<double>(rng, {4});
    EXPECT_EQ(st.decode_step(nq, nk, nv), back.decode_step(nq, nk, nv));
    EXPECT_EQ(st, back);
}

TEST(Snapshot, RejectsCorruptBlobs) {
    Rng rng(89);
    AttnConfig cfg = head_cfg(3, 4, 2);
    ConvWeights w = random_conv(rng, 2, 3);
    DecodeState st(cfg, w);
    Tensor q = random_tensor<double>(rng, {6, 3});
    Tensor k = random_tensor<double>(rng, {6, 3});
    Tensor v = random_tensor<double>(rng, {6, 3});
    st.prefill(q, k, v);
    const std::vector<uint8_t> good = st.snapshot();

    std::vector<uint8_t> bad = good;
    bad[0] = 'X';
    EXPECT_THROW(DecodeState::restore(cfg, w, bad), io_error);

    bad = good;
    bad[4] = 0xFF;  // version field
    EXPECT_THROW(DecodeState::restore(cfg, w, bad), io_error);

    bad = good;
    bad.resize(bad.size() - 3);  // truncated payload
    EXPECT_THROW(DecodeState::restore(cfg, w, bad), io_error);

    bad = good;
    bad.push_back(0);  // trailing bytes
    EXPECT_THROW(DecodeState::restore(cfg, w, bad), io_error);

    AttnConfig other = head_cfg(4, 4, 2);  // wrong head_dim
    EXPECT_THROW(DecodeState::restore(other, ConvWeights(2, 4), good), io_error);

    EXPECT_THROW(DecodeState::restore(cfg, w, {}), io_error);
}

// Committed-future invariance at the op level: outputs for rows <= t are
// frozen history; changing later inputs cannot revise them (they were
// already returned). The streaming form makes this structural; here we
// spot-check the equivalent batched statement.
TEST(DecodeState, HistoryRowsImmuneToFuture) {
    Rng rng(90);
    const size_t n = 24, d = 4;
    AttnConfig cfg = head_cfg(d, 5, 3);
    ConvWeights w = random_conv(rng, 3, d);
    Tensor q = random_tensor<double>(rng, {n, d});
    Tensor k = random_tensor<double>(rng, {n, d});
    Tensor v = random_tensor<double>(rng, {n, d});
    Tensor base = augmented_attention_forward(q, k, v, w, cfg);
    const size_t t = 10;
    Tensor q2 = q, k2 = k, v2 = v;
    for (size_t i = t + 1; i < n; ++i)
        for (size_t j = 0; j < d; ++j) {
            q2(i, j) = rng.uniform(-2.0, 2.0);
            k2(i, j) = rng.uniform(-2.0, 2.0);
            v2(i, j) = rng.uniform(-2.0, 2.0);
        }
    Tensor bumped = augmented_attention_forward(q2, k2, v2, w, cfg);
    for (size_t i = 0; i <= t; ++i)
        for (size_t j = 0; j < d; ++j) EXPECT_EQ(base(i, j), bumped(i, j));
}
