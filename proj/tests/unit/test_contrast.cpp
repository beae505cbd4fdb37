#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "subcon/contrast.hpp"

using namespace subcon;

namespace {

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < t.rows(); ++r) out.emplace_back(t.row(r).begin(), t.row(r).end());
  return out;
}

Tensor unit_rows(std::mt19937_64& rng, std::size_t n, std::size_t f) {
  auto t = oracle::random_tensor(rng, n, f);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < f; ++c) s += t(r, c) * t(r, c);
    for (std::size_t c = 0; c < f; ++c) t(r, c) /= std::sqrt(s);
  }
  return t;
}

double loss_of(const Tensor& h, const std::vector<ClassId>& labels, double tau, bool supervised) {
  Tape t;
  auto w = supervised ? supervised_positive_weights(labels) : paired_positive_weights(labels.size() / 2);
  return contrastive_loss(t.constant(h), w, tau).value().item();
}

Graph labelled_graph(const std::vector<std::size_t>& sizes) {
  std::vector<ClassId> labels;
  for (ClassId c = 0; c < sizes.size(); ++c) labels.insert(labels.end(), sizes[c], c);
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId i = 0; i + 1 < labels.size(); ++i) edges.emplace_back(i, i + 1);
  return oracle::make_graph(labels.size(), edges, labels);
}

}  // namespace

TEST_CASE("G-SupCon matches a direct evaluation") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const std::size_t b = 2 + t % 5;
    std::vector<ClassId> half(b);
    std::uniform_int_distribution<ClassId> pick(0, 2);
    for (auto& l : half) l = pick(rng);
    std::vector<ClassId> labels = half;
    labels.insert(labels.end(), half.begin(), half.end());
    const auto h = unit_rows(rng, 2 * b, 4);
    const double tau = 0.3 + 0.1 * t;
    CHECK(loss_of(h, labels, tau, true) ==
          doctest::Approx(oracle::reference_supcon(rows_of(h), labels, tau)).epsilon(1e-12));
  }
}

TEST_CASE("loss invariants") {
  std::mt19937_64 rng(99);
  SUBCASE("non-negative") {
    for (int t = 0; t < 50; ++t) {
      const std::size_t b = 1 + t % 6;
      std::vector<ClassId> half(b);
      std::uniform_int_distribution<ClassId> pick(0, 3);
      for (auto& l : half) l = pick(rng);
      auto labels = half;
      labels.insert(labels.end(), half.begin(), half.end());
      const auto h = unit_rows(rng, 2 * b, 3);
      CHECK(loss_of(h, labels, 0.2, true) >= 0.0);
      CHECK(loss_of(h, labels, 0.2, false) >= 0.0);
    }
  }
  SUBCASE("B = 1 gives zero") {
    for (int t = 0; t < 10; ++t) {
      const auto h = unit_rows(rng, 2, 5);
      CHECK(std::abs(loss_of(h, {3, 3}, 0.5, true)) < 1e-12);
    }
  }
  SUBCASE("permutation invariant") {
    for (int t = 0; t < 20; ++t) {
      const std::size_t n = 8;
      std::vector<ClassId> labels(n);
      std::uniform_int_distribution<ClassId> pick(0, 2);
      for (auto& l : labels) l = pick(rng);
      const auto h = unit_rows(rng, n, 4);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Tensor hp(n, 4);
      std::vector<ClassId> lp(n);
      for (std::size_t i = 0; i < n; ++i) {
        lp[i] = labels[perm[i]];
        for (std::size_t c = 0; c < 4; ++c) hp(i, c) = h(perm[i], c);
      }
      CHECK(std::abs(loss_of(h, labels, 0.4, true) - loss_of(hp, lp, 0.4, true)) < 1e-10);
    }
  }
  SUBCASE("equals SimCLR when labels are distinct") {
    for (int t = 0; t < 20; ++t) {
      const std::size_t b = 2 + t % 5;
      std::vector<ClassId> labels;
      for (ClassId c = 0; c < b; ++c) labels.push_back(c);
      labels.insert(labels.end(), labels.begin(), labels.end());
      const auto h = unit_rows(rng, 2 * b, 4);
      CHECK(loss_of(h, labels, 0.7, true) == loss_of(h, labels, 0.7, false));
    }
  }
}

TEST_CASE("positive weights") {
  const auto w = supervised_positive_weights(std::vector<ClassId>{0, 1, 0, 0, 1, 0});
  CHECK(w(0, 0) == 0.0);
  CHECK(w(0, 2) == doctest::Approx(1.0 / 3.0));
  CHECK(w(1, 4) == 1.0);
  CHECK(w(0, 1) == 0.0);
  const auto p = paired_positive_weights(3);
  CHECK(p(0, 3) == 1.0);
  CHECK(p(4, 1) == 1.0);
  CHECK(p(0, 1) == 0.0);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    const std::vector<ClassId> labels{0, 1, 0, 2, 0, 1, 0, 2};
    const auto h0 = oracle::random_tensor(rng, 8, 3);
    auto build = [&](const Tensor& x, Tape& tape, Var& v) {
      v = tape.parameter(x);
      return contrastive_loss(ad::l2_normalize_rows(v), supervised_positive_weights(labels), 0.5);
    };
    Tape tape;
    Var v;
    auto loss = build(h0, tape, v);
    tape.backward(loss);
    const auto numeric = oracle::numeric_gradient(
        [&](const Tensor& x) {
          Tape tp;
          Var vv;
          return build(x, tp, vv).value().item();
        },
        h0);
    CHECK(oracle::relative_error(tape.grad(v), numeric) < 1e-6);
  }
}

TEST_CASE("cross-entropy pretraining loss") {
  Tape t;
  auto z = t.constant(Tensor(2, 2, {1.0, 0.0, 0.0, 1.0}));
  auto w = t.constant(Tensor(2, 2, {2.0, 0.0, 0.0, 2.0}));
  auto b = t.constant(Tensor(1, 2));
  const std::vector<ClassId> classes{4, 7};
  const std::vector<ClassId> labels{4, 7};
  const double expected = std::log(1.0 + std::exp(-2.0));
  CHECK(ce_pretrain_loss(z, labels, classes, w, b).value().item() == doctest::Approx(expected));
  const std::vector<ClassId> bad{4, 5};
  CHECK_THROWS(ce_pretrain_loss(z, bad, classes, w, b));
}

TEST_CASE("balanced sampling") {
  const auto g = labelled_graph({50, 30, 20, 15, 15});
  const ClassSplit split{{0, 1, 2}, {3, 4}};
  SUBCASE("exact quota per base class") {
    BalancedSampler s(g, split, 31);
    CHECK(s.quota() == 10);
    CHECK(s.effective_batch() == 30);
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
      const auto plan = s.sample(rng);
      CHECK(plan.warnings.empty());
      std::map<ClassId, int> count;
      for (auto v : plan.nodes) ++count[g.label(v)];
      CHECK(count.size() == 3);
      for (auto [c, k] : count) CHECK(k == 10);
      CHECK(std::set<NodeId>(plan.nodes.begin(), plan.nodes.end()).size() == plan.nodes.size());
    }
  }
  SUBCASE("small classes sample with replacement and warn") {
    BalancedSampler s(g, split, 75);
    std::mt19937_64 rng(2);
    const auto plan = s.sample(rng);
    CHECK(plan.nodes.size() == 75);
    CHECK(plan.warnings.size() == 1);
  }
  SUBCASE("batch smaller than class count") {
    CHECK_THROWS(BalancedSampler(g, split, 2));
  }
  SUBCASE("deterministic given seed") {
    CHECK(balanced_sample(g, split, 30, 4).nodes == balanced_sample(g, split, 30, 4).nodes);
    CHECK(balanced_sample(g, split, 30, 4).nodes != balanced_sample(g, split, 30, 5).nodes);
  }
  SUBCASE("uniform sampler follows class frequency") {
    UniformSampler s(g, split, 20);
    std::mt19937_64 rng(3);
    std::map<ClassId, int> count;
    for (int t = 0; t < 200; ++t) {
      const auto plan = s.sample(rng);
      CHECK(plan.nodes.size() == 20);
      for (auto v : plan.nodes) {
        CHECK(split.is_base(g.label(v)));
        ++count[g.label(v)];
      }
    }
    CHECK(count[0] > count[1]);
    CHECK(count[1] > count[2]);
  }
}

TEST_CASE("temperature") {
  const auto g = oracle::make_graph(3, {{0, 1}, {1, 2}, {0, 2}});
  CHECK(temperature(1.0, g) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(temperature(2.0, g) == doctest::Approx(2.0 / std::sqrt(2.0)));
  CHECK_THROWS(temperature(0.0, g));
  CHECK_THROWS(temperature(1.0, oracle::make_graph(2, {})));
}

TEST_CASE("duo batch layout and readout normalization") {
  Tape t;
  BatchEmbedding emb;
  emb.readouts = t.constant(Tensor(2, 2, {0.6, 0.6, 0.3, 0.4}));
  emb.centric = t.constant(Tensor(2, 2, {1.0, 0.0, 0.0, 1.0}));
  const std::vector<ClassId> labels{4, 7};

  const auto raw = make_duo_batch(emb, labels, 0.5, false);
  CHECK(raw.h.rows() == 4);
  CHECK(raw.labels == std::vector<ClassId>{4, 7, 4, 7});
  CHECK(raw.h.value()(1, 1) == 0.4);
  CHECK(raw.h.value()(3, 1) == 1.0);

  const auto& n = make_duo_batch(emb, labels, 0.5).h.value();
  CHECK(n(0, 0) == doctest::Approx(std::sqrt(0.5)));
  CHECK(n(1, 0) == doctest::Approx(0.6));
  CHECK(n(1, 1) == doctest::Approx(0.8));
  CHECK(n(2, 0) == 1.0);

  CHECK_THROWS_AS(make_duo_batch(emb, std::vector<ClassId>{1}, 0.5), ShapeError);
  CHECK_THROWS(make_duo_batch(emb, labels, 0.0));
}
