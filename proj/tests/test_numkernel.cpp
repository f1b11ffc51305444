#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "modcomp/model.hpp"
#include "modcomp/optimizer.hpp"
#include "modcomp/ops.hpp"
#include "test_util.hpp"

using namespace modcomp;
using testutil::check_gradient;
using testutil::random_tensor;
using testutil::scalarize;

namespace {
Tensor mat(std::vector<int> shape, std::vector<float> v) {
  return Tensor::from_values(std::move(shape), std::move(v));
}
}  // namespace

TEST_CASE("matmul basics") {
  Tensor eye = mat({2, 2}, {1, 0, 0, 1});
  Tensor a = mat({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul<float>(nullptr, eye, a);
  CHECK(*out.data == std::vector<float>{1, 2, 3, 4});

  Tensor basis = mat({1, 2}, {1, 0});
  Tensor col = mat({2, 1}, {5, 7});
  CHECK(matmul<float>(nullptr, basis, col).at(0) == 5.0f);

  Tensor ones = mat({2, 1}, {1, 1});
  Tensor prod = matmul<float>(nullptr, a, ones);
  CHECK(prod.at(0) == 3.0f);
  CHECK(prod.at(1) == 7.0f);

  Tensor bad = mat({3, 1}, {1, 2, 3});
  CHECK_THROWS_AS(matmul<float>(nullptr, a, bad), DimensionError);
}

TEST_CASE("softmax values and invariants") {
  Tensor z = mat({1, 2}, {0, 0});
  Tensor s = softmax<float>(nullptr, z);
  CHECK(s.at(0) == doctest::Approx(0.5));
  CHECK(s.at(1) == doctest::Approx(0.5));

  Tensor lg = mat({1, 2}, {std::log(1.0f), std::log(3.0f)});
  Tensor p = softmax<float>(nullptr, lg);
  CHECK(p.at(0) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(p.at(1) == doctest::Approx(0.75).epsilon(1e-6));

  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor<float>({4, 7}, rng, false, 3.0);
    Tensor y = softmax<float>(nullptr, x);
    for (int i = 0; i < 4; ++i) {
      double sum = 0;
      for (int j = 0; j < 7; ++j) {
        const float v = y.at(i * 7 + j);
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        sum += v;
      }
      CHECK(std::fabs(sum - 1.0) < 1e-6);
    }
    // shift invariance
    const float c = static_cast<float>(rng.next_normal() * 10.0);
    Tensor xs = x.clone();
    for (std::int64_t i = 0; i < xs.numel(); ++i) xs.ptr()[i] += c;
    Tensor ys = softmax<float>(nullptr, xs);
    for (std::int64_t i = 0; i < ys.numel(); ++i)
      CHECK(std::fabs(ys.at(i) - y.at(i)) < 1e-6f);
  }
}

TEST_CASE("cross entropy values") {
  // uniform logits over V=4 -> ln 4 for any targets
  Tensor logits = Tensor::zeros({3, 4});
  std::vector<int> targets = {2, 0, 3};
  Tensor loss = cross_entropy_mean<float>(nullptr, logits, targets);
  CHECK(loss.at(0) == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  // one-hot-correct with growing margin -> 0
  Tensor margin = Tensor::zeros({1, 4});
  margin.ptr()[1] = 50.0f;
  std::vector<int> t1 = {1};
  CHECK(cross_entropy_mean<float>(nullptr, margin, t1).at(0) < 1e-3f);

  // per-position correct probs 0.5 and 0.125 -> (ln2 + ln8)/2
  Tensor two = Tensor::zeros({2, 8});
  two.ptr()[0] = std::log(7.0f);  // p = 7/(7+7) = 0.5
  std::vector<int> t2 = {0, 0};   // second row uniform -> p = 1/8
  Tensor l2 = cross_entropy_mean<float>(nullptr, two, t2);
  CHECK(l2.at(0) == doctest::Approx((std::log(2.0) + std::log(8.0)) / 2).epsilon(1e-6));

  std::vector<int> bad = {4, 0, 1};
  CHECK_THROWS_AS(cross_entropy_mean<float>(nullptr, logits, bad), IndexError);
}

TEST_CASE("adam update rules") {
  AdamHyper h;
  h.lr = 1e-3;
  h.weight_decay = 0.0;

  ParamTree params;
  params.entries.emplace("p", Tensor::from_values({1}, {0.7f}));
  ParamTree grads;
  grads.entries.emplace("p", Tensor::from_values({1}, {0.0f}));
  auto state = AdamState::init(params);

  // zero gradient, zero decay -> fixed point
  adam_step(params, grads, state, h, 1);
  CHECK(params.at("p").at(0) == 0.7f);

  // first step with g != 0 and tiny eps -> |update| ~= lr
  h.eps = 1e-12;
  grads.at("p").ptr()[0] = 0.42f;
  state = AdamState::init(params);
  const float before = params.at("p").at(0);
  adam_step(params, grads, state, h, 1);
  CHECK(std::fabs(before - params.at("p").at(0)) == doctest::Approx(h.lr).epsilon(1e-5));

  // decoupled decay with zero gradient: p <- p * (1 - lr*wd) each step
  AdamHyper hd;
  hd.lr = 0.1;
  hd.weight_decay = 0.01;
  ParamTree pd;
  pd.entries.emplace("p", Tensor::from_values({1}, {2.0f}));
  ParamTree gz;
  gz.entries.emplace("p", Tensor::from_values({1}, {0.0f}));
  auto sd = AdamState::init(pd);
  double expect = 2.0;
  for (int t = 1; t <= 3; ++t) {
    adam_step(pd, gz, sd, hd, t);
    expect *= 1.0 - hd.lr * hd.weight_decay;
    CHECK(pd.at("p").at(0) == doctest::Approx(expect).epsilon(1e-6));
  }

  // structural mismatch
  ParamTree wrong;
  wrong.entries.emplace("q", Tensor::from_values({1}, {0.0f}));
  CHECK_THROWS_AS(adam_step(pd, wrong, sd, hd, 4), StructureError);
}

TEST_CASE("tape replays in reverse order and leaves non-participants alone") {
  TapeT<float> tape;
  std::vector<int> visited;
  tape.record([&] { visited.push_back(1); });
  tape.record([&] { visited.push_back(2); });
  tape.record([&] { visited.push_back(3); });
  tape.backward();
  CHECK(visited == std::vector<int>{3, 2, 1});

  Tape t2;
  Tensor a = Tensor::from_values({1, 2}, {1, 2}, true);
  Tensor b = Tensor::from_values({1, 2}, {3, 4}, true);
  Tensor bystander = Tensor::from_values({1, 2}, {5, 6}, true);
  Tensor out = add(&t2, a, b);
  out.gptr()[0] = 1.0f;
  out.gptr()[1] = 1.0f;
  t2.backward();
  CHECK(a.gptr()[0] == 1.0f);
  CHECK(bystander.gptr()[0] == 0.0f);
  CHECK(bystander.gptr()[1] == 0.0f);
}

TEST_CASE("finite differences: every differentiable op") {
  Rng rng(1234);
  std::vector<double> lw, rw;
  for (int i = 0; i < 64; ++i) {
    lw.push_back(rng.next_normal());
    rw.push_back(rng.next_normal());
  }

  auto check2d = [&](TensorT<double>& param, auto make_out) {
    auto res = check_gradient(param, [&](TapeT<double>* tape) {
      return scalarize(tape, make_out(tape), lw, rw);
    });
    CHECK(res.checked > 0);
    CHECK(res.max_rel_err < 1e-5);
  };

  SUBCASE("matmul") {
    auto a = random_tensor<double>({3, 4}, rng, true);
    auto b = random_tensor<double>({4, 5}, rng, true);
    check2d(a, [&](TapeT<double>* t) { return matmul(t, a, b); });
    check2d(b, [&](TapeT<double>* t) { return matmul(t, a, b); });
  }
  SUBCASE("matmul_nt") {
    auto a = random_tensor<double>({3, 4}, rng, true);
    auto b = random_tensor<double>({5, 4}, rng, true);
    check2d(a, [&](TapeT<double>* t) { return matmul_nt(t, a, b); });
    check2d(b, [&](TapeT<double>* t) { return matmul_nt(t, a, b); });
  }
  SUBCASE("add and add_bias") {
    auto a = random_tensor<double>({4, 6}, rng, true);
    auto b = random_tensor<double>({4, 6}, rng, true);
    auto v = random_tensor<double>({6}, rng, true);
    check2d(a, [&](TapeT<double>* t) { return add(t, a, b); });
    check2d(v, [&](TapeT<double>* t) { return add_bias(t, a, v); });
  }
  SUBCASE("embedding") {
    auto table = random_tensor<double>({9, 5}, rng, true);
    std::vector<int> ids = {0, 4, 4, 8, 1};
    check2d(table, [&](TapeT<double>* t) { return embedding(t, table, ids); });
  }
  SUBCASE("layer_norm") {
    auto x = random_tensor<double>({4, 8}, rng, true);
    auto g = random_tensor<double>({8}, rng, true, 0.5);
    auto b = random_tensor<double>({8}, rng, true, 0.5);
    for (int i = 0; i < 8; ++i) g.ptr()[i] += 1.0;
    check2d(x, [&](TapeT<double>* t) { return layer_norm(t, x, g, b); });
    check2d(g, [&](TapeT<double>* t) { return layer_norm(t, x, g, b); });
    check2d(b, [&](TapeT<double>* t) { return layer_norm(t, x, g, b); });
  }
  SUBCASE("gelu") {
    auto x = random_tensor<double>({4, 6}, rng, true);
    check2d(x, [&](TapeT<double>* t) { return gelu(t, x); });
  }
  SUBCASE("relu") {
    auto x = random_tensor<double>({4, 6}, rng, true);
    // keep probes away from the kink
    for (std::int64_t i = 0; i < x.numel(); ++i)
      if (std::fabs(x.ptr()[i]) < 0.01) x.ptr()[i] = 0.5;
    check2d(x, [&](TapeT<double>* t) { return relu(t, x); });
  }
  SUBCASE("softmax") {
    auto x = random_tensor<double>({3, 7}, rng, true);
    check2d(x, [&](TapeT<double>* t) { return softmax(t, x); });
  }
  SUBCASE("causal attention") {
    auto q = random_tensor<double>({6, 8}, rng, true);
    auto k = random_tensor<double>({6, 8}, rng, true);
    auto v = random_tensor<double>({6, 8}, rng, true);
    check2d(q, [&](TapeT<double>* t) { return causal_attention(t, q, k, v, 2); });
    check2d(k, [&](TapeT<double>* t) { return causal_attention(t, q, k, v, 2); });
    check2d(v, [&](TapeT<double>* t) { return causal_attention(t, q, k, v, 2); });
  }
  SUBCASE("cross entropy") {
    auto logits = random_tensor<double>({5, 6}, rng, true);
    std::vector<int> targets = {1, 0, 5, 3, 3};
    auto res = check_gradient(logits, [&](TapeT<double>* t) {
      return cross_entropy_mean(t, logits, targets);
    });
    CHECK(res.max_rel_err < 1e-5);
  }
}

TEST_CASE("finite differences: composed two-layer model end to end") {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.vocab_size = 11;
  cfg.max_seq_len = 8;
  cfg.reduction_factor = 3;
  BaseModel base = init_base(cfg, 99);
  AdapterModule adapter = init_adapter(base, "fd");
  // non-trivial adapter weights so the up-projection path carries gradient
  Rng rng(5);
  for (auto& [name, t] : adapter.theta.entries)
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t.ptr()[i] += static_cast<float>(rng.next_normal() * 0.05);

  ParamTreeT<double> phi = to_double(base.phi);
  ParamTreeT<double> theta = to_double(adapter.theta);
  std::vector<int> tokens = {2, 5, 7, 3, 9};
  std::vector<int> targets = {5, 7, 3, 9, 1};

  auto loss_fn = [&](TapeT<double>* tape) {
    TensorT<double> logits = model_forward<double>(cfg, phi, &theta, tokens, tape);
    return cross_entropy_mean(tape, logits, targets);
  };

  // every theta entry plus a sample of phi entries participates
  for (auto& [name, t] : theta.entries) {
    t.enable_grad();
    auto res = check_gradient(t, loss_fn, 12);
    INFO("theta entry ", name);
    CHECK(res.max_rel_err < 1e-5);
    t.drop_grad();
  }
  for (const char* name : {"tok_emb.w", "layers.00.attn.wq", "layers.01.ffn.w2", "final_ln.g"}) {
    auto& t = phi.at(name);
    t.enable_grad();
    auto res = check_gradient(t, loss_fn, 10);
    INFO("phi entry ", name);
    CHECK(res.max_rel_err < 1e-5);
    t.drop_grad();
  }
}

TEST_CASE("parallel kernels match the serial reference bitwise") {
  Rng rng(77);
  const int m = 33, k = 17, n = 29;
  auto a = random_tensor<float>({m, k}, rng);
  auto b = random_tensor<float>({k, n}, rng);
  std::vector<float> c1(static_cast<std::size_t>(m) * n), c2(c1.size());
  kern::serial::matmul(a.ptr(), b.ptr(), c1.data(), m, k, n);
  kern::matmul(a.ptr(), b.ptr(), c2.data(), m, k, n);
  CHECK(c1 == c2);

  auto x = random_tensor<float>({64, 40}, rng, false, 2.0);
  std::vector<float> s1(x.numel()), s2(x.numel());
  kern::serial::softmax_rows(x.ptr(), s1.data(), 64, 40);
  kern::softmax_rows(x.ptr(), s2.data(), 64, 40);
  CHECK(s1 == s2);

  auto g = random_tensor<float>({40}, rng);
  auto be = random_tensor<float>({40}, rng);
  std::vector<float> y1(x.numel()), y2(x.numel()), mu1(64), mu2(64), rs1(64), rs2(64);
  kern::serial::layernorm_rows(x.ptr(), g.ptr(), be.ptr(), y1.data(), mu1.data(), rs1.data(), 64,
                               40, 1e-5f);
  kern::layernorm_rows(x.ptr(), g.ptr(), be.ptr(), y2.data(), mu2.data(), rs2.data(), 64, 40,
                       1e-5f);
  CHECK(y1 == y2);

  std::vector<float> gl1(x.numel()), gl2(x.numel());
  kern::serial::gelu(x.ptr(), gl1.data(), x.numel());
  kern::gelu(x.ptr(), gl2.data(), x.numel());
  CHECK(gl1 == gl2);

  const int T = 24, d = 16, H = 4;
  auto q = random_tensor<float>({T, d}, rng);
  auto kk = random_tensor<float>({T, d}, rng);
  auto v = random_tensor<float>({T, d}, rng);
  std::vector<float> w1(static_cast<std::size_t>(H) * T * T), w2(w1.size());
  std::vector<float> o1(static_cast<std::size_t>(T) * d), o2(o1.size());
  kern::serial::attention(q.ptr(), kk.ptr(), v.ptr(), w1.data(), o1.data(), T, d, H);
  kern::attention(q.ptr(), kk.ptr(), v.ptr(), w2.data(), o2.data(), T, d, H);
  CHECK(w1 == w2);
  CHECK(o1 == o2);
}
