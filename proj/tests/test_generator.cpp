#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cl4st/generator.hpp"
#include "cl4st/tensor.hpp"

using namespace cl4st;
using namespace cl4st::ad;
using namespace cl4st::gen;

namespace {

// Two-unit rectified hidden layer computing the identity on scalars:
// relu(x) - relu(-x) = x.
MlpVars identity_mlp() {
  MlpVars m;
  m.w1 = leaf(1, 2, {1.0, -1.0});
  m.b1 = leaf(1, 2, {0.0, 0.0});
  m.w2 = leaf(2, 1, {1.0, -1.0});
  m.b2 = leaf(1, 1, {0.0});
  return m;
}

}  // namespace

TEST_CASE("mlp flatten and unflatten round trip") {
  MlpShape s{2, 3, 2};
  CHECK(s.param_count() == 17);
  std::vector<double> w1 = {1, 2, 3, 4, 5, 6}, b1 = {7, 8, 9};
  std::vector<double> w2 = {10, 11, 12, 13, 14, 15}, b2 = {16, 17};
  std::vector<double> flat = flatten_mlp(w1, b1, w2, b2);
  CHECK(flat.size() == 17);
  MlpVars m = unflatten_mlp(leaf(1, 17, flat), s);
  CHECK(m.w1->rows == 2);
  CHECK(m.w1->cols == 3);
  CHECK(m.w1->val == w1);
  CHECK(m.b1->val == b1);
  CHECK(m.w2->rows == 3);
  CHECK(m.w2->val == w2);
  CHECK(m.b2->val == b2);
  CHECK_THROWS(unflatten_mlp(leaf(1, 16, std::vector<double>(16, 0.0)), s));
}

TEST_CASE("first GIN parameter block has the documented size") {
  ModelConfig cfg;  // gin_hidden = 16, gin_d1 = 8
  CHECK(theta1_shape(2, cfg).param_count() == 184);  // 2*16 + 16 + 16*8 + 8
  CHECK(theta2_shape(cfg).param_count() == 8 * 16 + 16 + 16 * 3 + 3);
  CHECK(theta3_shape(cfg).param_count() == 16 * 16 + 16 + 16 * 2 + 2);
}

TEST_CASE("gin layer aggregates neighbors with epsilon self weight") {
  Var h = leaf(2, 1, {1.0, 2.0});
  std::vector<std::pair<std::size_t, std::size_t>> edges = {{0, 1}, {1, 0}};
  Var out = gin_layer(h, edges, identity_mlp(), 0.5);
  // agg_v = 1.5 * h_v + sum of neighbor rows.
  CHECK(out->at(0, 0) == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(out->at(1, 0) == doctest::Approx(4.0).epsilon(1e-12));
  Var out0 = gin_layer(h, {}, identity_mlp(), 0.0);  // no edges: plain MLP
  CHECK(out0->at(0, 0) == doctest::Approx(1.0));
  CHECK(out0->at(1, 0) == doctest::Approx(2.0));
}

TEST_CASE("gumbel softmax samples stay on the simplex") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  const std::size_t draws = 10000;
  std::vector<double> logits(draws * 3);
  for (auto& v : logits) v = 2.0 * g(rng);
  GumbelSample gs = gumbel_softmax(constant(draws, 3, logits), 0.7, false, rng);
  for (std::size_t r = 0; r < draws; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double p = gs.soft->at(r, c);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("low temperature with a clear logit gap recovers the argmax") {
  std::mt19937_64 rng(2);
  const std::size_t draws = 1000;
  std::vector<double> logits(draws * 3, 0.0);
  // Gap of 8 to class 0: per-competitor flip probability sigmoid(-8) leaves
  // comfortable margin under the 99% recovery budget.
  for (std::size_t r = 0; r < draws; ++r) logits[r * 3] = 8.0;
  GumbelSample gs = gumbel_softmax(constant(draws, 3, logits), 0.01, true, rng);
  std::size_t match = 0;
  for (std::size_t r = 0; r < draws; ++r) match += gs.action[r] == 0 ? 1 : 0;
  CHECK(static_cast<double>(match) / draws >= 0.99);
}

TEST_CASE("zero logits sample each class uniformly") {
  std::mt19937_64 rng(3);
  const std::size_t draws = 100000;
  GumbelSample gs =
      gumbel_softmax(constant(draws, 3, std::vector<double>(draws * 3, 0.0)), 1.0, true, rng);
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t r = 0; r < draws; ++r) ++counts[gs.action[r]];
  for (int c = 0; c < 3; ++c) {
    const double freq = static_cast<double>(counts[c]) / draws;
    CHECK(std::abs(freq - 1.0 / 3.0) <= 0.03 / 3.0);  // within 3% of uniform
  }
}

TEST_CASE("hard sampling forwards one-hot rows and keeps soft gradients") {
  Var logits = leaf(2, 3, {0.5, 0.1, -0.3, 1.0, 2.0, 3.0});
  std::vector<double> noise(6, 0.0);
  GumbelSample gs = gumbel_softmax(logits, 1.0, true, noise);
  CHECK(gs.action == std::vector<std::size_t>{0, 2});
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(gs.sample->at(r, c) == (c == gs.action[r] ? 1.0 : 0.0));
  backward(sum(mul(gs.sample, constant(2, 3, {1, 2, 3, 4, 5, 6}))));
  double grad_norm = 0.0;
  for (double gv : logits->grad) grad_norm += gv * gv;
  CHECK(grad_norm > 0.0);  // straight-through estimator passes gradients back

  // Same noise, soft path: finite-difference check against the backward pass.
  Var l2 = leaf(1, 3, {0.2, -0.4, 0.9});
  auto loss_at = [&](const std::vector<double>& v) {
    GumbelSample s = gumbel_softmax(constant(1, 3, v), 0.8, false,
                                    std::vector<double>{0.3, -0.1, 0.2});
    Var weighted = mul(s.soft, constant(1, 3, {1.0, 2.0, 3.0}));
    return sum(weighted)->val[0];
  };
  GumbelSample s = gumbel_softmax(l2, 0.8, false, std::vector<double>{0.3, -0.1, 0.2});
  backward(sum(mul(s.soft, constant(1, 3, {1.0, 2.0, 3.0}))));
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> plus = l2->val, minus = l2->val;
    plus[i] += 1e-6;
    minus[i] -= 1e-6;
    const double fd = (loss_at(plus) - loss_at(minus)) / 2e-6;
    CHECK(l2->grad[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("gumbel sampling is deterministic in the rng seed") {
  std::vector<double> logits(30, 0.0);
  std::mt19937_64 a(77), b(77), c(78);
  auto ga = gumbel_softmax(constant(10, 3, logits), 1.0, true, a);
  auto gb = gumbel_softmax(constant(10, 3, logits), 1.0, true, b);
  auto gc = gumbel_softmax(constant(10, 3, logits), 1.0, true, c);
  CHECK(ga.action == gb.action);
  CHECK(ga.soft->val == gb.soft->val);
  CHECK(ga.action != gc.action);
}

TEST_CASE("closed-form KL against the standard normal") {
  CHECK(kl_closed_form({0.0}, {1.0}) == 0.0);  // exact
  CHECK(kl_closed_form({1.0}, {1.0}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS(kl_closed_form({0.0}, {0.0}));

  // kl_loss over Vars agrees with the scalar form, summed across groups.
  std::vector<KlInput> in;
  in.push_back({leaf(1, 2, {0.3, -0.7}), leaf(1, 2, {0.5, 1.4})});
  in.push_back({leaf(1, 1, {1.1}), leaf(1, 1, {0.9})});
  Var total = kl_loss(in);
  const double expect =
      kl_closed_form({0.3, -0.7}, {0.5, 1.4}) + kl_closed_form({1.1}, {0.9});
  CHECK(total->val[0] == doctest::Approx(expect).epsilon(1e-12));

  // Gradients: d/dmu = mu, d/dvar = 0.5 (1 - 1/var).
  backward(total);
  CHECK(in[0].mu->grad[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(in[0].var->grad[1] == doctest::Approx(0.5 * (1.0 - 1.0 / 1.4)).epsilon(1e-12));
}

TEST_CASE("Monte Carlo KL estimate matches the closed form within 2%") {
  const double mu = 0.8, var = 0.6, sd = std::sqrt(var);
  const double exact = kl_closed_form({mu}, {var});
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  const std::size_t n = 100000;
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double x = mu + sd * g(rng);
    // log q(x) - log p(x) for q = N(mu, var), p = N(0, 1).
    acc += -0.5 * std::log(var) - (x - mu) * (x - mu) / (2.0 * var) + 0.5 * x * x;
  }
  const double mc = acc / static_cast<double>(n);
  CHECK(std::abs(mc - exact) / exact <= 0.02);
}

TEST_CASE("structural view application") {
  // Path graph 0-1-2 with unit weights, 2-wide features.
  const std::size_t n = 3, width = 2;
  std::vector<double> adj = {0, 1, 0, 1, 0, 1, 0, 1, 0};
  std::vector<std::pair<std::size_t, std::size_t>> edges = {{0, 1}, {1, 0}, {1, 2}, {2, 1}};
  std::vector<double> feat = {1, 2, 3, 4, 5, 6};

  SUBCASE("all-keep is the identity") {
    auto out = apply_views(n, adj, edges, feat, width, {kNodeKeep, kNodeKeep, kNodeKeep},
                           {kEdgeKeep, kEdgeKeep, kEdgeKeep, kEdgeKeep});
    CHECK(out.adjacency == adj);
    CHECK(out.features == feat);
    CHECK(out.edge_list == edges);
  }
  SUBCASE("mask replaces a row with the feature mean") {
    auto out = apply_views(n, adj, edges, feat, width, {kNodeKeep, kNodeMask, kNodeKeep},
                           {kEdgeKeep, kEdgeKeep, kEdgeKeep, kEdgeKeep});
    CHECK(out.features[2] == doctest::Approx(3.0));  // mean of 1,3,5
    CHECK(out.features[3] == doctest::Approx(4.0));  // mean of 2,4,6
    CHECK(out.features[0] == 1.0);
    CHECK(out.adjacency == adj);  // mask keeps structure
  }
  SUBCASE("drop zeroes features and removes incident edges") {
    auto out = apply_views(n, adj, edges, feat, width, {kNodeDrop, kNodeKeep, kNodeKeep},
                           {kEdgeKeep, kEdgeKeep, kEdgeKeep, kEdgeKeep});
    CHECK(out.features[0] == 0.0);
    CHECK(out.features[1] == 0.0);
    CHECK(out.adjacency[0 * 3 + 1] == 0.0);
    CHECK(out.adjacency[1 * 3 + 0] == 0.0);
    CHECK(out.adjacency[1 * 3 + 2] == 1.0);
    CHECK(out.edge_list == std::vector<std::pair<std::size_t, std::size_t>>{{1, 2}, {2, 1}});
  }
  SUBCASE("edge drop removes exactly that directed entry") {
    auto out = apply_views(n, adj, edges, feat, width, {kNodeKeep, kNodeKeep, kNodeKeep},
                           {kEdgeDrop, kEdgeKeep, kEdgeKeep, kEdgeKeep});
    CHECK(out.adjacency[0 * 3 + 1] == 0.0);
    CHECK(out.adjacency[1 * 3 + 0] == 1.0);
    CHECK(out.features == feat);
  }
  SUBCASE("stale views are rejected") {
    CHECK_THROWS(apply_views(n, adj, edges, feat, width, {kNodeKeep}, {1, 1, 1, 1}));
    CHECK_THROWS(apply_views(n, adj, edges, feat, width, {1, 1, 1}, {1}));
  }
}

TEST_CASE("differentiable node view mixes keep, mask, and drop") {
  Var feat = constant(2, 2, {1, 2, 3, 4});
  // Row 0 keeps, row 1 is fully masked; mean row is (2, 3).
  Var sample = constant(2, 3, {0, 1, 0, 0, 0, 1});
  Var out = apply_node_view_features(feat, sample);
  CHECK(out->at(0, 0) == doctest::Approx(1.0));
  CHECK(out->at(0, 1) == doctest::Approx(2.0));
  CHECK(out->at(1, 0) == doctest::Approx(2.0));
  CHECK(out->at(1, 1) == doctest::Approx(3.0));
  // Dropped row goes to zero.
  Var drop = apply_node_view_features(feat, constant(2, 3, {1, 0, 0, 0, 1, 0}));
  CHECK(drop->at(0, 0) == 0.0);
  CHECK(drop->at(1, 0) == doctest::Approx(3.0));
}

TEST_CASE("soft edge weights combine edge keep with endpoint survival") {
  std::vector<std::pair<std::size_t, std::size_t>> edges = {{0, 2}, {0, 1}};
  AugmentationView view;
  // Node 0 keep, node 1 drop, node 2 mask.
  view.node_sample = constant(3, 3, {0, 1, 0, 1, 0, 0, 0, 0, 1});
  view.edge_sample = constant(2, 2, {0.2, 0.8, 0.0, 1.0});
  view.edge_actions = {kEdgeKeep, kEdgeKeep};
  Var w = edge_weights_from_view(view, edges);
  CHECK(w->rows == 2);
  CHECK(w->at(0, 0) == doctest::Approx(0.8));  // keep * alive(0) * alive(2)
  CHECK(w->at(1, 0) == doctest::Approx(0.0));  // node 1 dropped
}

TEST_CASE("node and edge views produce aligned distributions") {
  std::mt19937_64 rng(4);
  ModelConfig cfg;
  GINParams gin;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  auto rand_mlp = [&](MlpShape s) {
    std::vector<double> flat(s.param_count());
    for (auto& v : flat) v = u(rng);
    return unflatten_mlp(leaf(1, s.param_count(), flat), s);
  };
  gin.theta1 = rand_mlp(theta1_shape(2, cfg));
  gin.theta2 = rand_mlp(theta2_shape(cfg));
  EdgeViewParams ev;
  ev.theta3 = rand_mlp(theta3_shape(cfg));

  Var feat = constant(4, 2, {1, 0, 0, 1, 1, 1, 0.5, 0.2});
  std::vector<std::pair<std::size_t, std::size_t>> edges = {{0, 1}, {1, 0}, {2, 3}, {3, 2}};
  AugmentationView view = node_view(feat, edges, gin, 1.0, true, rng);
  CHECK(view.node_probs->rows == 4);
  CHECK(view.node_probs->cols == 3);
  CHECK(view.node_actions.size() == 4);
  CHECK(view.h1->rows == 4);
  CHECK(view.h1->cols == cfg.gin_d1);
  edge_view(view, edges, ev, 1.0, true, rng);
  CHECK(view.edge_probs->rows == 4);
  CHECK(view.edge_probs->cols == 2);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += view.node_probs->at(r, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(view.node_actions[r] < 3);
    CHECK(view.edge_actions[r] < 2);
  }
}

TEST_CASE("meta generator emits correctly shaped parameters") {
  std::mt19937_64 rng(6);
  ModelConfig cfg;
  cfg.d_z = 4;
  cfg.phi_hidden = 8;
  cfg.psi_hidden = 8;
  cfg.gin_hidden = 6;
  cfg.gin_d1 = 5;
  const std::size_t feature_dim = 12, f_node = 3;

  for (bool share : {true, false}) {
    cfg.share_theta3_latent = share;
    MetaGeneratorState st = make_meta_generator(feature_dim, f_node, cfg, rng);
    CHECK(st.groups.size() == (share ? 2 : 3));
    std::vector<double> feat(feature_dim, 0.25);
    GeneratedParams p = generate_params(feat, st, cfg, rng, /*deterministic=*/true);
    CHECK(p.kl_inputs.size() == (share ? 2 : 3));
    CHECK(p.gin.theta1.w1->rows == f_node);
    CHECK(p.gin.theta1.w1->cols == cfg.gin_hidden);
    CHECK(p.gin.theta2.w2->cols == 3);
    CHECK(p.edge.theta3.w1->rows == 2 * cfg.gin_d1);
    CHECK(p.edge.theta3.w2->cols == 2);

    // Deterministic emission is reproducible; stochastic emission is not.
    GeneratedParams p2 = generate_params(feat, st, cfg, rng, true);
    CHECK(p.gin.theta1.w1->val == p2.gin.theta1.w1->val);
    std::mt19937_64 ra(1), rb(2);
    GeneratedParams sa = generate_params(feat, st, cfg, ra, false);
    GeneratedParams sb = generate_params(feat, st, cfg, rb, false);
    CHECK(sa.gin.theta1.w1->val != sb.gin.theta1.w1->val);

    // KL terms are valid for the closed form (positive variances).
    for (const auto& k : p.kl_inputs)
      for (double v : k.var->val) CHECK(v > 0.0);
    CHECK(kl_loss(p.kl_inputs)->val[0] >= 0.0);
    CHECK_THROWS(generate_params(std::vector<double>(feature_dim + 1, 0.0), st, cfg, rng));
  }
}
