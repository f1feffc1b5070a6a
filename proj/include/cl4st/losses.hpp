#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "cl4st/tensor.hpp"

namespace cl4st::losses {

using ad::Var;

enum class Task { traffic, crime };

struct LossConfig {
  Task task = Task::traffic;
  double delta = 1.0;    // Huber threshold
  double tau_cl = 0.5;   // contrastive temperature
  bool include_positive_in_denominator = true;
};

// NT-Xent over matched rows of Z (B x d) and Z' (B x d), cosine similarity.
// By default the denominator ranges over all j including the positive; the
// flag reproduces the literal indicator form that removes it.
Var contrastive_loss(const Var& z, const Var& z_prime, const LossConfig& cfg);

// Independent brute-force double-loop oracle, used by tests.
double contrastive_loss_bruteforce(const std::vector<std::vector<double>>& z,
                                   const std::vector<std::vector<double>>& z_prime,
                                   double tau, bool include_positive = true);

Var huber_loss(const Var& pred, const std::vector<double>& target, double delta);
Var squared_error_loss(const Var& pred, const std::vector<double>& target);

Var prediction_loss(const std::vector<double>& target, const Var& pred,
                    const Var& pred_aug, const LossConfig& cfg);

// L = L_pre + l1*L_cl + l2*L_s-gen + l3*L_t-gen. NaN components are rejected.
Var joint_loss(const Var& pred, const Var& cl, const Var& kl_spatial,
               const Var& kl_temporal, const std::array<double, 3>& lambdas);

enum class AnnealShape { linear, cosine };

struct AnnealSchedule {
  std::array<double, 3> lambda_max{1.0, 1.0, 1.0};
  std::size_t ramp_epochs = 1;
  AnnealShape shape = AnnealShape::linear;

  std::array<double, 3> at(std::size_t epoch) const;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double decay_ratio = 0.5;
  std::vector<std::size_t> decay_epochs{1, 50, 100};
  std::size_t max_epochs = 20;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // 0 disables
  std::size_t patience = 15;
};

double lr_at(std::size_t epoch, const TrainConfig& cfg);

}  // namespace cl4st::losses
