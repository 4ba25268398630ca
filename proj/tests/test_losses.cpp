#include <doctest.h>

#include <cmath>

#include "cp2/losses.hpp"
#include "support/oracles.hpp"

using namespace cp2;

namespace {

FeatureMask mask_from_bits(int r, std::vector<std::uint8_t> bits) {
  FeatureMask m;
  m.r = r;
  m.bits = std::move(bits);
  return m;
}

MemoryBank bank_from(const std::vector<std::vector<double>>& vs, int capacity) {
  MemoryBank bank(capacity, static_cast<int>(vs.at(0).size()));
  for (const auto& v : vs) bank.enqueue(v);
  return bank;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("dense loss: single positive pair against orthogonal background") {
  // r=2, C=4. One foreground cell per side, query equals the positive key,
  // the other three key cells orthogonal to it.
  FeatureMap fq(2, 4, true), fk(2, 4, true);
  fq.at(0, 0) = 1.0;             // e0
  fk.at(0, 0) = 1.0;             // e0 (positive)
  fk.at(1, 1) = 1.0;             // e1
  fk.at(2, 2) = 1.0;             // e2
  fk.at(3, 3) = 1.0;             // e3
  fq.at(1, 1) = fq.at(2, 2) = fq.at(3, 3) = 1.0;  // arbitrary unit fills

  const auto mq = mask_from_bits(2, {1, 0, 0, 0});
  const auto mk = mask_from_bits(2, {1, 0, 0, 0});
  const auto res = dense_loss(fq, fk, mq, mk, 1.0);

  const double e = std::exp(1.0);
  const double expected = -std::log(e / (e + 3.0));
  CHECK(res.value == doctest::Approx(expected).epsilon(1e-12));
  CHECK(res.value == doctest::Approx(0.7435).epsilon(1e-3));
}

TEST_CASE("dense loss: all key cells identical reduces to log of cell count") {
  FeatureMap fq(2, 3, true), fk(2, 3, true);
  fq.at(0, 0) = 1.0;
  for (int cell = 1; cell < 4; ++cell) fq.at(cell, 0) = 1.0;
  for (int cell = 0; cell < 4; ++cell) fk.at(cell, 0) = 1.0;

  const auto mq = mask_from_bits(2, {1, 0, 0, 0});
  const auto mk = mask_from_bits(2, {1, 1, 1, 1});
  const auto res = dense_loss(fq, fk, mq, mk, 1.0);
  CHECK(res.value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(res.value == doctest::Approx(1.3863).epsilon(1e-3));
}

TEST_CASE("dense loss: nonnegative on random inputs") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int r = rng.uniform_int(2, 4);
    const int c = rng.uniform_int(2, 8);
    const auto fq = oracle::random_feature_map(rng, r, c);
    const auto fk = oracle::random_feature_map(rng, r, c);
    const auto mq = oracle::random_feature_mask(rng, r, 1, 0);
    const auto mk = oracle::random_feature_mask(rng, r, 1, 1);
    const double tau = rng.uniform(0.2, 2.0);
    CHECK(dense_loss(fq, fk, mq, mk, tau).value >= 0.0);
  }
}

TEST_CASE("dense loss: matches the nested-loop reference on random instances") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int r = rng.uniform_int(2, 4);
    const int c = rng.uniform_int(2, 8);
    const auto fq = oracle::random_feature_map(rng, r, c);
    const auto fk = oracle::random_feature_map(rng, r, c);
    const auto mq = oracle::random_feature_mask(rng, r, 1, 0);
    const auto mk = oracle::random_feature_mask(rng, r, 1, 1);
    const double tau = rng.uniform(0.3, 1.5);
    const double fast = dense_loss(fq, fk, mq, mk, tau).value;
    const double slow = oracle::dense_loss_naive(fq, fk, mq, mk, tau);
    CHECK(std::abs(fast - slow) <= 1e-6 * std::max(1.0, std::abs(slow)));
  }
}

TEST_CASE("dense loss: invariant under foreground permutations") {
  Rng rng(13);
  const int r = 3, c = 5;
  auto fq = oracle::random_feature_map(rng, r, c);
  auto fk = oracle::random_feature_map(rng, r, c);
  const auto mq = mask_from_bits(3, {1, 1, 0, 0, 1, 0, 0, 0, 0});
  const auto mk = mask_from_bits(3, {0, 1, 1, 0, 0, 0, 1, 0, 0});
  const double base = dense_loss(fq, fk, mq, mk, 0.7).value;

  // Swap two foreground cells on each side (0<->4 in q, 1<->6 in k).
  auto swap_cells = [&](FeatureMap& fm, int a, int b) {
    for (int ch = 0; ch < fm.channels; ++ch) std::swap(fm.at(a, ch), fm.at(b, ch));
  };
  swap_cells(fq, 0, 4);
  swap_cells(fk, 1, 6);
  CHECK(dense_loss(fq, fk, mq, mk, 0.7).value == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("dense loss: rejects empty foreground") {
  Rng rng(17);
  const auto fq = oracle::random_feature_map(rng, 2, 4);
  const auto fk = oracle::random_feature_map(rng, 2, 4);
  CHECK_THROWS_AS(dense_loss(fq, fk, mask_from_bits(2, {0, 0, 0, 0}),
                             mask_from_bits(2, {1, 0, 0, 0}), 1.0),
                  DegenerateMask);
  CHECK_THROWS_AS(dense_loss(fq, fk, mask_from_bits(2, {1, 0, 0, 0}),
                             mask_from_bits(2, {0, 0, 0, 0}), 1.0),
                  DegenerateMask);
}

TEST_CASE("dense loss: analytic gradients match central differences") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = rng.uniform_int(2, 3);
    const int c = rng.uniform_int(2, 6);
    auto fq = oracle::random_feature_map(rng, r, c);
    auto fk = oracle::random_feature_map(rng, r, c);
    const auto mq = oracle::random_feature_mask(rng, r, 1, 0);
    const auto mk = oracle::random_feature_mask(rng, r, 1, 1);
    const double tau = rng.uniform(0.4, 1.3);

    const auto res = dense_loss(fq, fk, mq, mk, tau);
    const auto eval = [&] { return dense_loss(fq, fk, mq, mk, tau).value; };

    const auto fd_q = oracle::finite_diff(eval, fq.cells.data(), fq.cells.numel());
    const auto fd_k = oracle::finite_diff(eval, fk.cells.data(), fk.cells.numel());
    std::vector<double> an_q(res.grad_q.data(), res.grad_q.data() + res.grad_q.numel());
    std::vector<double> an_k(res.grad_k.data(), res.grad_k.data() + res.grad_k.numel());
    CHECK(oracle::grads_match(an_q, fd_q));
    CHECK(oracle::grads_match(an_k, fd_k));
  }
}

TEST_CASE("masked pool: analytic cases") {
  FeatureMap fm(2, 3, true);
  fm.at(0, 0) = 1.0;  // e0
  fm.at(1, 1) = 1.0;  // e1
  fm.at(2, 0) = 1.0;
  fm.at(3, 0) = 1.0;

  SUBCASE("single foreground cell returns the cell itself") {
    const auto v = masked_pool(fm, mask_from_bits(2, {1, 0, 0, 0}));
    CHECK(v[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(0.0));
    CHECK(v[2] == doctest::Approx(0.0));
  }
  SUBCASE("collinear cells pool to the shared direction") {
    const auto v = masked_pool(fm, mask_from_bits(2, {1, 0, 1, 1}));
    CHECK(v[0] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("two orthogonal cells pool to the normalized diagonal") {
    const auto v = masked_pool(fm, mask_from_bits(2, {1, 1, 0, 0}));
    CHECK(v[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  }
  SUBCASE("empty foreground is rejected") {
    CHECK_THROWS_AS(masked_pool(fm, mask_from_bits(2, {0, 0, 0, 0})), DegenerateMask);
  }
}

TEST_CASE("masked pool: unit norm on random inputs") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int r = rng.uniform_int(2, 4);
    const int c = rng.uniform_int(2, 8);
    const auto fm = oracle::random_feature_map(rng, r, c);
    const auto mask = oracle::random_feature_mask(rng, r, 1, 0);
    const auto v = masked_pool(fm, mask);
    double sq = 0.0;
    for (double x : v) sq += x * x;
    CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-5);
  }
}

TEST_CASE("masked pool: backward matches central differences") {
  Rng rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    const int r = 2;
    const int c = rng.uniform_int(2, 6);
    auto fm = oracle::random_feature_map(rng, r, c);
    const auto mask = oracle::random_feature_mask(rng, r, 1, 0);
    const auto probe = oracle::random_unit_vector(rng, c);

    const auto eval = [&] {
      const auto v = masked_pool(fm, mask);
      double s = 0.0;
      for (int i = 0; i < c; ++i)
        s += probe[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
      return s;
    };
    const auto fd = oracle::finite_diff(eval, fm.cells.data(), fm.cells.numel());
    const Tensor an = masked_pool_backward(fm, mask, probe);
    CHECK(oracle::grads_match(std::vector<double>(an.data(), an.data() + an.numel()), fd));
  }
}

TEST_CASE("instance loss: closed-form cases") {
  SUBCASE("strong positive with two orthogonal negatives") {
    const std::vector<double> q{1, 0, 0}, k{1, 0, 0};
    const auto bank = bank_from({{0, 1, 0}, {0, 0, 1}}, 8);
    const auto res = instance_loss(q, k, bank, 0.2);
    const double e5 = std::exp(5.0);
    CHECK(res.value == doctest::Approx(-std::log(e5 / (e5 + 2.0))).epsilon(1e-12));
    CHECK(res.value == doctest::Approx(0.01338).epsilon(1e-3));
  }
  SUBCASE("negative identical to the positive gives log 2") {
    const std::vector<double> q{0, 1}, k{0, 1};
    const auto bank = bank_from({{0, 1}}, 4);
    CHECK(instance_loss(q, k, bank, 0.2).value ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("empty bank is an error") {
    MemoryBank bank(4, 2);
    CHECK_THROWS_AS(instance_loss({1, 0}, {1, 0}, bank, 0.2), InvalidState);
  }
  SUBCASE("always positive") {
    Rng rng(31);
    for (int t = 0; t < 50; ++t) {
      const int c = rng.uniform_int(2, 8);
      const auto q = oracle::random_unit_vector(rng, c);
      const auto k = oracle::random_unit_vector(rng, c);
      MemoryBank bank(16, c);
      const int n = rng.uniform_int(1, 16);
      for (int i = 0; i < n; ++i) bank.enqueue(oracle::random_unit_vector(rng, c));
      CHECK(instance_loss(q, k, bank, 0.2).value > 0.0);
    }
  }
}

TEST_CASE("instance loss: matches the scalar-loop reference at several bank sizes") {
  Rng rng(37);
  for (const int bank_size : {1, 8, 64}) {
    for (int trial = 0; trial < 100; ++trial) {
      const int c = rng.uniform_int(2, 8);
      const auto q = oracle::random_unit_vector(rng, c);
      const auto k = oracle::random_unit_vector(rng, c);
      std::vector<std::vector<double>> negatives;
      for (int i = 0; i < bank_size; ++i)
        negatives.push_back(oracle::random_unit_vector(rng, c));
      const auto bank = bank_from(negatives, bank_size);
      const double tau = rng.uniform(0.1, 1.0);
      const double fast = instance_loss(q, k, bank, tau).value;
      const double slow = oracle::instance_loss_naive(q, k, negatives, tau);
      CHECK(std::abs(fast - slow) <= 1e-6 * std::max(1.0, std::abs(slow)));
    }
  }
}

TEST_CASE("instance loss: analytic gradients match central differences") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = rng.uniform_int(2, 6);
    auto q = oracle::random_unit_vector(rng, c);
    auto k = oracle::random_unit_vector(rng, c);
    MemoryBank bank(8, c);
    const int n = rng.uniform_int(1, 8);
    for (int i = 0; i < n; ++i) bank.enqueue(oracle::random_unit_vector(rng, c));
    const double tau = rng.uniform(0.1, 0.8);

    const auto res = instance_loss(q, k, bank, tau);
    const auto eval = [&] { return instance_loss(q, k, bank, tau).value; };
    const auto fd_q = oracle::finite_diff(eval, q.data(), q.size());
    const auto fd_k = oracle::finite_diff(eval, k.data(), k.size());
    CHECK(oracle::grads_match(res.grad_q, fd_q));
    CHECK(oracle::grads_match(res.grad_k, fd_k));
  }
}

TEST_CASE("total loss: mode arithmetic") {
  CHECK(total_loss(1.0, 0.5, 0.0, LossMode::full) == doctest::Approx(1.0));
  CHECK(total_loss(1.0, 0.5, 0.2, LossMode::full) == doctest::Approx(1.1));
  CHECK(total_loss(1.0, 0.5, 0.2, LossMode::instance_only) == doctest::Approx(1.0));
  CHECK(total_loss(1.0, 0.5, 0.2, LossMode::dense_only) == doctest::Approx(0.5));
  CHECK(total_loss(1.0, 0.5, 0.2, LossMode::no_copy_paste) == doctest::Approx(1.0));
}

TEST_CASE("memory bank: FIFO semantics") {
  SUBCASE("enqueue into empty bank fills by the batch size") {
    MemoryBank bank(8, 2);
    bank.enqueue_batch({{1, 0}, {0, 1}, {1, 0}});
    CHECK(bank.filled() == 3);
  }
  SUBCASE("capacity overflow evicts the oldest entry") {
    MemoryBank bank(3, 1);
    for (int i = 0; i < 4; ++i) bank.enqueue({static_cast<double>(i)});
    CHECK(bank.filled() == 3);
    CHECK(bank.entry_by_age(0)[0] == doctest::Approx(1.0));  // value 0 evicted
    CHECK(bank.entry_by_age(2)[0] == doctest::Approx(3.0));
  }
  SUBCASE("eviction order matches a reference queue across three wraparounds") {
    const int capacity = 5;
    MemoryBank bank(capacity, 2);
    oracle::ReferenceQueue ref(capacity);
    Rng rng(43);
    for (int i = 0; i < capacity * 3 + 2; ++i) {
      const auto v = oracle::random_unit_vector(rng, 2);
      bank.enqueue(v);
      ref.push(v);
      REQUIRE(bank.filled() == static_cast<int>(ref.size()));
      for (std::size_t age = 0; age < ref.size(); ++age)
        for (int c = 0; c < 2; ++c)
          CHECK(bank.entry_by_age(static_cast<int>(age))[c] == ref.by_age(age)[c]);
    }
  }
  SUBCASE("stored vectors stay unit within tolerance") {
    Rng rng(47);
    MemoryBank bank(16, 5);
    bank.fill_random_unit(rng);
    for (int age = 0; age < bank.filled(); ++age) {
      double sq = 0.0;
      for (int c = 0; c < 5; ++c) sq += bank.entry_by_age(age)[c] * bank.entry_by_age(age)[c];
      CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("loss config validation") {
  LossConfig bad;
  bad.tau_dense = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = LossConfig{};
  bad.alpha = -0.1;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  CHECK_NOTHROW(LossConfig{}.validate());
}

}  // TEST_SUITE
