#include "cl4st/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cl4st::losses {

using namespace ad;

Var contrastive_loss(const Var& z, const Var& z_prime, const LossConfig& cfg) {
  if (z->rows < 2) throw std::invalid_argument("contrastive_loss: batch must be >= 2");
  if (z->rows != z_prime->rows || z->cols != z_prime->cols)
    throw std::invalid_argument("contrastive_loss: shape mismatch");
  if (cfg.tau_cl <= 0.0) throw std::invalid_argument("contrastive_loss: tau must be > 0");
  const std::size_t b = z->rows;
  for (std::size_t r = 0; r < b; ++r) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < z->cols; ++c) {
      s1 += z->at(r, c) * z->at(r, c);
      s2 += z_prime->at(r, c) * z_prime->at(r, c);
    }
    if (s1 == 0.0 || s2 == 0.0)
      throw std::invalid_argument("contrastive_loss: zero-norm row " + std::to_string(r));
  }

  Var zn = row_l2_normalize(z);
  Var zpn = row_l2_normalize(z_prime);
  Var s = scale(matmul(zn, transpose(zpn)), 1.0 / cfg.tau_cl);  // s[i][j] = sim(z_i, z'_j)/tau

  std::vector<std::size_t> diag_idx(b);
  std::vector<double> diag_mask(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i) diag_mask[i * b + i] = 1.0;

  auto one_direction = [&](const Var& sim) {
    Var masked = sim;
    if (!cfg.include_positive_in_denominator) {
      // Push the positive's logit to -inf so it drops out of the denominator.
      masked = add(sim, constant(b, b, [&] {
                     std::vector<double> m(b * b, 0.0);
                     for (std::size_t i = 0; i < b; ++i) m[i * b + i] = -1e300;
                     return m;
                   }()));
    }
    Var lse = logsumexp_rows(masked);                       // b x 1
    Var diag = sum(mul(sim, constant(b, b, diag_mask)));    // sum of positives
    return sub(sum(lse), diag);                             // sum_i [lse_i - s_ii]
  };

  Var total = add(one_direction(s), one_direction(transpose(s)));
  return scale(total, 1.0 / static_cast<double>(b));
}

double contrastive_loss_bruteforce(const std::vector<std::vector<double>>& z,
                                   const std::vector<std::vector<double>>& zp,
                                   double tau, bool include_positive) {
  const std::size_t b = z.size();
  auto cosine = [](const std::vector<double>& a, const std::vector<double>& c) {
    double dot = 0.0, na = 0.0, nc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      dot += a[k] * c[k];
      na += a[k] * a[k];
      nc += c[k] * c[k];
    }
    return dot / (std::sqrt(na) * std::sqrt(nc));
  };
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    // l(z_i, z'_i)
    double denom = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (!include_positive && j == i) continue;
      denom += std::exp(cosine(z[i], zp[j]) / tau);
    }
    total += -std::log(std::exp(cosine(z[i], zp[i]) / tau) / denom);
    // l(z'_i, z_i)
    denom = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (!include_positive && j == i) continue;
      denom += std::exp(cosine(zp[i], z[j]) / tau);
    }
    total += -std::log(std::exp(cosine(zp[i], z[i]) / tau) / denom);
  }
  return total / static_cast<double>(b);
}

Var huber_loss(const Var& pred, const std::vector<double>& target, double delta) {
  return ad::huber(pred, target, delta);
}

Var squared_error_loss(const Var& pred, const std::vector<double>& target) {
  return ad::mse(pred, target);
}

Var prediction_loss(const std::vector<double>& target, const Var& pred,
                    const Var& pred_aug, const LossConfig& cfg) {
  if (cfg.task == Task::traffic) {
    return add(huber_loss(pred, target, cfg.delta), huber_loss(pred_aug, target, cfg.delta));
  }
  return add(squared_error_loss(pred, target), squared_error_loss(pred_aug, target));
}

Var joint_loss(const Var& pred, const Var& cl, const Var& kl_spatial,
               const Var& kl_temporal, const std::array<double, 3>& lambdas) {
  auto check = [](const Var& v, const char* name) {
    if (!std::isfinite(v->scalar()))
      throw std::runtime_error(std::string("joint_loss: non-finite component ") + name);
  };
  check(pred, "prediction");
  check(cl, "contrastive");
  check(kl_spatial, "kl_spatial");
  check(kl_temporal, "kl_temporal");
  Var total = pred;
  if (lambdas[0] != 0.0) total = add(total, scale(cl, lambdas[0]));
  if (lambdas[1] != 0.0) total = add(total, scale(kl_spatial, lambdas[1]));
  if (lambdas[2] != 0.0) total = add(total, scale(kl_temporal, lambdas[2]));
  return total;
}

std::array<double, 3> AnnealSchedule::at(std::size_t epoch) const {
  std::array<double, 3> out{};
  const double frac =
      ramp_epochs == 0
          ? 1.0
          : std::min(1.0, static_cast<double>(epoch) / static_cast<double>(ramp_epochs));
  double ramp = frac;
  if (shape == AnnealShape::cosine) ramp = 0.5 * (1.0 - std::cos(M_PI * frac));
  for (int i = 0; i < 3; ++i) out[i] = lambda_max[i] * ramp;
  return out;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  std::size_t decays = 0;
  for (std::size_t e : cfg.decay_epochs)
    if (e <= epoch) ++decays;
  return cfg.lr * std::pow(cfg.decay_ratio, static_cast<double>(decays));
}

}  // namespace cl4st::losses
