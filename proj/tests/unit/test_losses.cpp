#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <set>

#include "sslbd/errors.hpp"
#include "sslbd/losses.hpp"
#include "sslbd/rng.hpp"

using namespace sslbd;

namespace {

torch::Tensor unit_rows(int64_t n, int64_t d, torch::Dtype dtype = torch::kDouble) {
  auto x = torch::randn({n, d}, torch::TensorOptions().dtype(dtype));
  return x / x.norm(2, {1}, true);
}

// -log softmax(logits)[0], evaluated term by term in long double.
double direct_info_nce(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& neg, double t) {
  long double total = 0;
  for (int64_t i = 0; i < q.size(0); ++i) {
    const long double pos = (q[i] * k[i]).sum().item<double>() / t;
    long double denom = std::exp(pos);
    for (int64_t j = 0; j < neg.size(0); ++j) denom += std::exp((long double)(q[i] * neg[j]).sum().item<double>() / t);
    total += -(pos - std::log(denom));
  }
  return static_cast<double>(total / q.size(0));
}

// Central differences of a scalar function of one tensor argument.
torch::Tensor numeric_grad(const std::function<double(const torch::Tensor&)>& f, const torch::Tensor& x,
                           double h = 1e-6) {
  auto g = torch::zeros_like(x);
  auto flat = x.clone().reshape({-1});
  auto gf = g.reshape({-1});
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double up = f(flat.reshape(x.sizes()));
    flat[i] = orig - h;
    const double down = f(flat.reshape(x.sizes()));
    flat[i] = orig;
    gf[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_error(const torch::Tensor& a, const torch::Tensor& b) {
  return ((a - b).norm() / std::max(1e-12, b.norm().item<double>())).item<double>();
}

}  // namespace

TEST(InfoNce, NoNegativesGivesZero) {
  torch::manual_seed(0);
  auto q = unit_rows(5, 8);
  EXPECT_NEAR(info_nce_loss(q, q, torch::empty({0, 8}, torch::kDouble), 0.2).item<double>(), 0.0, 1e-12);
}

TEST(InfoNce, OrthogonalNegativesClosedForm) {
  auto q = torch::tensor({{1.0, 0.0, 0.0}}, torch::kDouble);
  auto neg = torch::tensor({{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}, torch::kDouble);
  EXPECT_NEAR(info_nce_loss(q, q, neg, 1.0).item<double>(), std::log(1.0 + 2.0 / std::exp(1.0)), 1e-12);
  EXPECT_NEAR(std::log(1.0 + 2.0 / std::exp(1.0)), 0.5514, 5e-5);
}

TEST(InfoNce, MatchesDirectSoftmaxCrossEntropy) {
  torch::manual_seed(1);
  Rng rng = make_rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = 1 + uniform_index(rng, 4), d = 2 + uniform_index(rng, 16), K = uniform_index(rng, 20);
    const double t = uniform(rng, 0.05, 2.0);
    auto q = unit_rows(n, d), k = unit_rows(n, d), neg = unit_rows(K, d);
    const double got = info_nce_loss(q, k, neg, t).item<double>();
    const double want = direct_info_nce(q, k, neg, t);
    ASSERT_LE(std::abs(got - want), 1e-6 * std::max(1.0, std::abs(want))) << "trial " << trial;
    ASSERT_GE(got, 0.0);
  }
}

TEST(InfoNce, DecreasesAsPositiveAlignmentIncreases) {
  auto neg = torch::tensor({{0.0, 0.0, 1.0}, {0.0, -1.0, 0.0}}, torch::kDouble);
  auto q = torch::tensor({{1.0, 0.0, 0.0}}, torch::kDouble);
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 20; ++i) {
    const double a = M_PI * (1.0 - i / 20.0);
    auto k = torch::tensor({{std::cos(a), std::sin(a), 0.0}}, torch::kDouble);
    const double loss = info_nce_loss(q, k, neg, 0.5).item<double>();
    EXPECT_LT(loss, prev);
    prev = loss;
  }
}

TEST(InfoNce, ContractViolations) {
  auto q = unit_rows(2, 4);
  EXPECT_THROW(info_nce_loss(q, q, unit_rows(3, 4), 0.0), ConfigError);
  EXPECT_THROW(info_nce_loss(q * 2.0, q, unit_rows(3, 4), 0.2), ConfigError);
  EXPECT_THROW(info_nce_loss(q, q, unit_rows(3, 4) * 0.5, 0.2), ConfigError);
}

TEST(Byol, TermEndpoints) {
  auto p = torch::tensor({{1.0, 2.0, -3.0}}, torch::kDouble);
  EXPECT_NEAR(byol_term(p, p * 5.0).item<double>(), 0.0, 1e-12);
  EXPECT_NEAR(byol_term(p, -p).item<double>(), 4.0, 1e-12);
  EXPECT_THROW(byol_term(p, torch::zeros_like(p)), DataError);
}

TEST(Byol, SymmetrizedByAveraging) {
  torch::manual_seed(2);
  auto p1 = torch::randn({4, 6}, torch::kDouble), z2 = torch::randn({4, 6}, torch::kDouble);
  auto p2 = torch::randn({4, 6}, torch::kDouble), z1 = torch::randn({4, 6}, torch::kDouble);
  const double want = 0.5 * (byol_term(p1, z2).mean() + byol_term(p2, z1).mean()).item<double>();
  EXPECT_NEAR(byol_loss(p1, z2, p2, z1).item<double>(), want, 1e-12);
}

TEST(Byol, GradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t n = 1 + trial % 4, d = 3 + trial;
    auto p1 = torch::randn({n, d}, torch::kDouble), p2 = torch::randn({n, d}, torch::kDouble);
    auto z1 = torch::randn({n, d}, torch::kDouble), z2 = torch::randn({n, d}, torch::kDouble);
    auto x = p1.clone().requires_grad_(true);
    byol_loss(x, z2, p2, z1).backward();
    auto num = numeric_grad([&](const torch::Tensor& v) { return byol_loss(v, z2, p2, z1).item<double>(); }, p1);
    EXPECT_LT(rel_error(x.grad(), num), 1e-4) << "trial " << trial;
  }
}

TEST(Msf, NeighborsMatchBruteForceScan) {
  torch::manual_seed(4);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t n = 3, d = 5, B = 40, k = 1 + trial;
    auto u = unit_rows(n, d), bank = unit_rows(B, d);
    auto idx = msf_neighbors(u, bank, k);
    for (int64_t i = 0; i < n; ++i) {
      std::vector<std::pair<double, int64_t>> sims{{1.0, 0}};
      for (int64_t j = 0; j < B; ++j) sims.push_back({(u[i] * bank[j]).sum().item<double>(), j + 1});
      std::sort(sims.begin(), sims.end(), [](auto a, auto b) { return a.first > b.first; });
      std::set<int64_t> want, got;
      for (int64_t j = 0; j < k; ++j) {
        want.insert(sims[j].second);
        got.insert(idx[i][j].item<int64_t>());
      }
      EXPECT_EQ(got, want);
      EXPECT_EQ(idx[i][0].item<int64_t>(), 0);
    }
  }
}

TEST(Msf, DegenerateCases) {
  torch::manual_seed(5);
  auto u = unit_rows(4, 6), bank = unit_rows(10, 6), q = unit_rows(4, 6);
  const double want = (q - u).pow(2).sum(1).mean().item<double>();
  EXPECT_NEAR(msf_loss(q, u, bank, 1).item<double>(), want, 1e-12);
  // q equal to every neighbor: a bank full of copies of u.
  auto u1 = unit_rows(1, 6);
  EXPECT_NEAR(msf_loss(u1, u1, u1.expand({5, 6}).clone(), 4).item<double>(), 0.0, 1e-12);
  EXPECT_THROW(msf_loss(q, u, bank, 12), ConfigError);
}

TEST(Msf, GradientMatchesFiniteDifferences) {
  torch::manual_seed(6);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t n = 2 + trial % 3, d = 4 + trial, k = 1 + trial % 5;
    auto u = unit_rows(n, d), bank = unit_rows(30, d), q = unit_rows(n, d);
    auto x = q.clone().requires_grad_(true);
    msf_loss(x, u, bank, k).backward();
    auto num = numeric_grad([&](const torch::Tensor& v) { return msf_loss(v, u, bank, k).item<double>(); }, q);
    EXPECT_LT(rel_error(x.grad(), num), 1e-4) << "trial " << trial;
  }
}

TEST(Similarity, SingleAnchorAndUniformCases) {
  auto x = unit_rows(3, 4);
  auto one = similarity_distribution(x, unit_rows(1, 4), 0.04);
  EXPECT_TRUE(torch::allclose(one, torch::ones({3, 1}, torch::kDouble)));
  // Anchors symmetric about x: equal cosine to every anchor.
  auto e = torch::tensor({{1.0, 0.0, 0.0}}, torch::kDouble);
  auto anchors = torch::tensor({{0.0, 1.0, 0.0}, {0.0, -1.0, 0.0}, {0.0, 0.0, 1.0}, {0.0, 0.0, -1.0}}, torch::kDouble);
  auto p = similarity_distribution(e, anchors, 0.04);
  EXPECT_TRUE(torch::allclose(p, torch::full({1, 4}, 0.25, torch::kDouble)));
  EXPECT_THROW(similarity_distribution(x, torch::empty({0, 4}, torch::kDouble), 0.04), ConfigError);
}

TEST(Similarity, TwoAnchorClosedForm) {
  auto x = torch::tensor({{1.0, 0.0}}, torch::kDouble);
  auto anchors = torch::tensor({{1.0, 0.0}, {0.0, 1.0}}, torch::kDouble);
  auto p = similarity_distribution(x, anchors, 1.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(p[0][0].item<double>(), e / (e + 1), 1e-9);
  EXPECT_NEAR(p[0][1].item<double>(), 1 / (e + 1), 1e-9);
}

TEST(Kl, ClosedFormAndProperties) {
  EXPECT_NEAR(kl_divergence(std::vector<double>{0.75, 0.25}, std::vector<double>{0.5, 0.5}),
              0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-15);
  EXPECT_NEAR(kl_divergence(std::vector<double>{0.75, 0.25}, std::vector<double>{0.5, 0.5}), 0.1308, 5e-5);
  auto p = torch::tensor({{0.75, 0.25}}, torch::kDouble), q = torch::tensor({{0.5, 0.5}}, torch::kDouble);
  EXPECT_NEAR(kl_divergence(p, q).item<double>(), 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-12);
  EXPECT_THROW(kl_divergence(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}), ConfigError);
  // Zero-probability terms contribute nothing; a zero q is floored.
  EXPECT_NEAR(kl_divergence(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 0.0}), 0.0, 1e-15);
  EXPECT_TRUE(std::isfinite(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0})));
}

TEST(Kl, NonNegativeAndZeroOnIdenticalOverRandomPairs) {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 10);
    std::vector<double> p(n), q(n);
    double sp = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = -std::log(1.0 - uniform01(rng));
      q[i] = -std::log(1.0 - uniform01(rng));
      sp += p[i];
      sq += q[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    ASSERT_GE(kl_divergence(p, q), -1e-15);
    ASSERT_NEAR(kl_divergence(p, p), 0.0, 1e-15);
  }
}

TEST(Ema, ScalarCase) {
  EXPECT_NEAR(ema_scalar(0.0, 1.0, 0.999), 0.001, 1e-15);
  EXPECT_EQ(ema_scalar(0.25, 0.75, 1.0), 0.25);
  EXPECT_EQ(ema_scalar(0.25, 0.75, 0.0), 0.75);
}

TEST(Ema, ModuleUpdateEndpointsContractionAndBuffers) {
  torch::manual_seed(8);
  auto make = [] { return torch::nn::Sequential(torch::nn::Linear(4, 3), torch::nn::BatchNorm1d(3)); };
  auto key = make(), query = make();
  query->forward(torch::randn({8, 4}));  // moves the running stats
  auto dist = [&] {
    double s = 0;
    auto kp = key->parameters();
    auto qp = query->parameters();
    for (std::size_t i = 0; i < kp.size(); ++i) s += (kp[i] - qp[i]).pow(2).sum().item<double>();
    return std::sqrt(s);
  };
  auto before = key->parameters()[0].clone();
  ema_update(*key, *query, 1.0);
  EXPECT_TRUE(torch::equal(key->parameters()[0], before));
  const double d0 = dist();
  ema_update(*key, *query, 0.9);
  EXPECT_LE(dist(), 0.9 * d0 + 1e-7);
  for (std::size_t i = 0; i < key->buffers().size(); ++i)
    EXPECT_TRUE(torch::equal(key->buffers()[i], query->buffers()[i]));
  ema_update(*key, *query, 0.0);
  EXPECT_NEAR(dist(), 0.0, 1e-7);
}
