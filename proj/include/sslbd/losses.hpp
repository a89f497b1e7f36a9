#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace sslbd {

/// Unit-norm tolerance accepted by loss contracts.
inline constexpr double kUnitNormTolerance = 1e-4;

/// Throws ConfigError when any row of `x` ([N, d]) is not unit-norm.
void require_unit_rows(const torch::Tensor& x, const char* what);

/// Mean over rows of -log(exp(q.k/t) / (exp(q.k/t) + sum_i exp(q.n_i/t))).
/// q, k: [N, d]; negatives: [K, d] (K may be 0). All rows unit-norm.
torch::Tensor info_nce_loss(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& negatives,
                            double temperature);

/// Per-row 2 - 2 cos(p, z); inputs need not be normalized but must be nonzero.
torch::Tensor byol_term(const torch::Tensor& p, const torch::Tensor& z);

/// Average of the two directional BYOL terms, each averaged over the batch.
torch::Tensor byol_loss(const torch::Tensor& p1, const torch::Tensor& z2, const torch::Tensor& p2,
                        const torch::Tensor& z1);

/// Indices (into the concatenation [u_i; bank]) of the k rows of highest
/// cosine similarity to u_i, per row. Column 0 refers to u_i itself.
torch::Tensor msf_neighbors(const torch::Tensor& u, const torch::Tensor& bank, int64_t k);

/// Mean over rows of (1/k) sum_{z in NN_k(u)} ||q - z||^2, with u counted as
/// its own neighbor. q is the normalized online prediction; u and bank are
/// unit target embeddings and carry no gradient.
torch::Tensor msf_loss(const torch::Tensor& q, const torch::Tensor& u, const torch::Tensor& bank, int64_t k);

/// softmax(x . anchors^T / t) per row. x: [N, d], anchors: [A, d].
torch::Tensor similarity_distribution(const torch::Tensor& x, const torch::Tensor& anchors, double temperature);

/// Floor applied to q inside KL so log q stays finite.
inline constexpr double kKlFloor = 1e-12;

/// Mean over rows of KL(p || q) = sum_i p_i ln(p_i / max(q_i, floor)).
/// Terms with p_i = 0 contribute 0.
torch::Tensor kl_divergence(const torch::Tensor& p, const torch::Tensor& q);

/// Scalar reference forms used by CLI diagnostics and tests.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

/// theta_key <- m theta_key + (1 - m) theta_query.
inline double ema_scalar(double key, double query, double m) { return m * key + (1.0 - m) * query; }

/// EMA over parameters; buffers (BN running stats) are copied from `query`.
void ema_update(torch::nn::Module& key, const torch::nn::Module& query, double m);

}  // namespace sslbd
