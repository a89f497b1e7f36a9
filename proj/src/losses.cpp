#include "sslbd/losses.hpp"

#include <cmath>

#include "sslbd/errors.hpp"

namespace sslbd {

namespace F = torch::nn::functional;

void require_unit_rows(const torch::Tensor& x, const char* what) {
  if (x.numel() == 0) return;
  const double dev = (x.detach().norm(2, {1}) - 1.0).abs().max().item<double>();
  if (!(dev <= kUnitNormTolerance)) throw ConfigError(std::string(what) + " rows must be unit-norm");
}

torch::Tensor info_nce_loss(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& negatives,
                            double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  require_unit_rows(q, "query");
  require_unit_rows(k, "positive key");
  require_unit_rows(negatives, "negative");
  auto pos = (q * k).sum(1, true);
  auto logits = negatives.size(0) > 0 ? torch::cat({pos, q.matmul(negatives.t())}, 1) : pos;
  logits = logits / temperature;
  auto target = torch::zeros({q.size(0)}, torch::kLong);
  return F::cross_entropy(logits, target);
}

torch::Tensor byol_term(const torch::Tensor& p, const torch::Tensor& z) {
  const auto pn = p.norm(2, {1});
  const auto zn = z.norm(2, {1});
  if ((pn == 0).any().item<bool>() || (zn == 0).any().item<bool>()) {
    throw DataError("cannot normalize a zero-norm embedding");
  }
  return 2.0 - 2.0 * (p * z).sum(1) / (pn * zn);
}

torch::Tensor byol_loss(const torch::Tensor& p1, const torch::Tensor& z2, const torch::Tensor& p2,
                        const torch::Tensor& z1) {
  return 0.5 * (byol_term(p1, z2).mean() + byol_term(p2, z1).mean());
}

torch::Tensor msf_neighbors(const torch::Tensor& u, const torch::Tensor& bank, int64_t k) {
  if (k < 1 || k > bank.size(0) + 1) throw ConfigError("nn_count exceeds memory bank occupancy");
  torch::NoGradGuard guard;
  // u_i . u_i = 1 is the maximum cosine, so column 0 always wins the top-k.
  auto self = torch::ones({u.size(0), 1}, u.options());
  auto sims = torch::cat({self, u.matmul(bank.t())}, 1);
  return std::get<1>(sims.topk(k, 1, true, true));
}

torch::Tensor msf_loss(const torch::Tensor& q, const torch::Tensor& u, const torch::Tensor& bank, int64_t k) {
  require_unit_rows(u, "target");
  require_unit_rows(bank, "bank");
  const auto idx = msf_neighbors(u, bank, k);
  torch::Tensor neighbors;
  {
    torch::NoGradGuard guard;
    const int64_t n = u.size(0);
    auto pool = bank.unsqueeze(0).expand({n, bank.size(0), bank.size(1)});
    auto all = torch::cat({u.detach().unsqueeze(1), pool}, 1);  // [N, 1+B, d]
    neighbors = all.gather(1, idx.unsqueeze(2).expand({n, k, u.size(1)}));
  }
  return (q.unsqueeze(1) - neighbors).pow(2).sum(2).mean(1).mean();
}

torch::Tensor similarity_distribution(const torch::Tensor& x, const torch::Tensor& anchors, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (anchors.size(0) == 0) throw ConfigError("anchor bank is empty");
  return torch::softmax(x.matmul(anchors.t()) / temperature, 1);
}

torch::Tensor kl_divergence(const torch::Tensor& p, const torch::Tensor& q) {
  if (p.sizes() != q.sizes()) throw ConfigError("distribution lengths differ");
  auto logq = q.clamp_min(kKlFloor).log();
  auto logp = p.clamp_min(kKlFloor).log();
  auto terms = torch::where(p > 0, p * (logp - logq), torch::zeros_like(p));
  return terms.sum(-1).mean();
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ConfigError("distribution lengths differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) sum += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kKlFloor)));
  }
  return sum;
}

void ema_update(torch::nn::Module& key, const torch::nn::Module& query, double m) {
  torch::NoGradGuard guard;
  auto kp = key.named_parameters(true);
  for (const auto& item : query.named_parameters(true)) {
    kp[item.key()].mul_(m).add_(item.value().detach(), 1.0 - m);
  }
  auto kb = key.named_buffers(true);
  for (const auto& item : query.named_buffers(true)) kb[item.key()].copy_(item.value());
}

}  // namespace sslbd
