#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cl4st/model.hpp"
#include "cl4st/stg.hpp"
#include "cl4st/tensor.hpp"

using namespace cl4st;
using namespace cl4st::ad;
using namespace cl4st::model;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d = 4;
  cfg.d_s = 4;
  cfg.d_t = 4;
  cfg.d_pos = 3;
  cfg.d_proj = 5;
  cfg.k_spatial = 2;
  cfg.k_temporal = 1;
  cfg.n_gat_layers = 2;
  cfg.dec_hidden = 6;
  cfg.proj_hidden = 4;
  return cfg;
}

GraphStructure line_structure(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    edges.emplace_back(i, i + 1);
    edges.emplace_back(i + 1, i);
  }
  return build_structure(n, edges);
}

double attention_row_sum(const GraphStructure& g, const std::vector<double>& alpha,
                         std::size_t node) {
  double s = 0.0;
  for (std::size_t e = g.offsets[node]; e < g.offsets[node + 1]; ++e) s += alpha[e];
  return s;
}

}  // namespace

TEST_CASE("graph structure lists self entry first") {
  std::vector<std::pair<std::size_t, std::size_t>> edges = {{0, 1}, {1, 0}};
  GraphStructure g = build_structure(2, edges);
  CHECK(g.offsets == std::vector<std::size_t>{0, 2, 4});
  CHECK(g.row == std::vector<std::size_t>{0, 0, 1, 1});
  CHECK(g.col == std::vector<std::size_t>{0, 1, 1, 0});
  CHECK(g.entry_edge[0] == GraphStructure::npos);
  CHECK(g.entry_edge[1] == 0);
  CHECK(g.entry_edge[2] == GraphStructure::npos);
  CHECK(g.entry_edge[3] == 1);
}

TEST_CASE("layout permutations invert each other") {
  const std::size_t t = 3, n = 4;
  auto fwd = perm_time_to_node_major(t, n);
  auto bwd = perm_node_to_time_major(t, n);
  for (std::size_t k = 0; k < t * n; ++k) {
    CHECK(fwd[bwd[k]] == k);
    CHECK(bwd[fwd[k]] == k);
  }
}

TEST_CASE("input embedding is an affine per-row map") {
  std::mt19937_64 rng(1);
  EncoderDecoder m = make_model(small_config(), 2, 1, 3, 2, 1, rng);
  Var x = constant(6, 2, {1, 0, 0, 1, 1, 1, 2, -1, 0.5, 0.25, -2, 3});
  Var x0 = embed_input(x, m);
  CHECK(x0->rows == 6);
  CHECK(x0->cols == 4);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      double expect = m.b0->val[c];
      for (std::size_t k = 0; k < 2; ++k) expect += x->at(r, k) * m.w0->at(k, c);
      CHECK(x0->at(r, c) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("uniform attention with zero scoring vector") {
  // One head, identity value transform, a = 0: every neighborhood entry gets
  // equal attention, so each two-entry node averages itself and its neighbor.
  GatLayerParams layer;
  layer.heads.resize(1);
  layer.heads[0].w = leaf(2, 2, {1, 0, 0, 1});
  layer.heads[0].a = leaf(4, 1, {0, 0, 0, 0});
  GraphStructure g = build_structure(2, {{0, 1}, {1, 0}});
  Var x = leaf(2, 2, {2.0, 4.0, 6.0, 8.0});
  std::vector<std::vector<double>> alphas;
  Var out = gat_layer(x, g, layer, 0.2, false, std::nullopt, &alphas);
  for (double a : alphas[0]) CHECK(a == doctest::Approx(0.5).epsilon(1e-12));
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(out->at(0, c) == doctest::Approx(0.5 * (x->at(0, c) + x->at(1, c))));
    CHECK(out->at(1, c) == doctest::Approx(0.5 * (x->at(0, c) + x->at(1, c))));
  }
}

TEST_CASE("attention rows always sum to one") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GraphStructure g = line_structure(5);
  GatLayerParams layer;
  layer.heads.resize(2);
  for (auto& head : layer.heads) {
    std::vector<double> w(2 * 1), a(2 * 1);
    for (auto& v : w) v = u(rng);
    for (auto& v : a) v = u(rng);
    head.w = leaf(2, 1, w);
    head.a = leaf(2, 1, a);
  }
  std::vector<double> xv(10);
  for (auto& v : xv) v = u(rng);
  Var x = leaf(5, 2, xv);

  SUBCASE("plain softmax") {
    std::vector<std::vector<double>> alphas;
    gat_layer(x, g, layer, 0.2, false, std::nullopt, &alphas);
    for (const auto& alpha : alphas)
      for (std::size_t v = 0; v < 5; ++v)
        CHECK(attention_row_sum(g, alpha, v) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("renormalized under fractional edge weights") {
    std::size_t n_edges = 8;  // line of 5 nodes, both directions
    std::vector<double> wv(n_edges, 0.5);
    std::vector<std::vector<double>> alphas;
    gat_layer(x, g, layer, 0.2, false, constant(n_edges, 1, wv), &alphas);
    for (const auto& alpha : alphas)
      for (std::size_t v = 0; v < 5; ++v)
        CHECK(attention_row_sum(g, alpha, v) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("zero edge weight equals removing the edge") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GatLayerParams layer;
  layer.heads.resize(1);
  layer.heads[0].w = leaf(2, 2, {u(rng), u(rng), u(rng), u(rng)});
  layer.heads[0].a = leaf(4, 1, {u(rng), u(rng), u(rng), u(rng)});
  Var x = leaf(3, 2, {u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)});

  // Triangle graph with edge (0,1) weighted to zero ...
  std::vector<std::pair<std::size_t, std::size_t>> full = {{0, 1}, {0, 2}, {1, 2}};
  GraphStructure ga = build_structure(3, full);
  Var w = constant(3, 1, {0.0, 1.0, 1.0});
  Var out_weighted = gat_layer(x, ga, layer, 0.2, false, w);
  // ... versus the graph without that edge.
  GraphStructure gb = build_structure(3, {{0, 2}, {1, 2}});
  Var out_removed = gat_layer(x, gb, layer, 0.2, false);
  for (std::size_t k = 0; k < out_weighted->size(); ++k)
    CHECK(out_weighted->val[k] == doctest::Approx(out_removed->val[k]).epsilon(1e-12));
}

TEST_CASE("encoder produces well-shaped states and recorded attention") {
  std::mt19937_64 rng(3);
  ModelConfig cfg = small_config();
  const std::size_t t = 3, n = 4, f = 2;
  EncoderDecoder m = make_model(cfg, t, 1, n, f, 1, rng);
  GraphStructure spatial = line_structure(n);
  TemporalGraph tg = build_temporal_graph(t);
  GraphStructure temporal = build_structure(t, tg.edge_list);

  std::vector<double> xv(t * n * f);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : xv) v = u(rng);
  EncodeResult r = encode(constant(t * n, f, xv), spatial, temporal, m, std::nullopt,
                          std::nullopt, /*record_attention=*/true);
  CHECK(r.x0->rows == t * n);
  CHECK(r.x0->cols == cfg.d);
  CHECK(r.h->rows == t * n);
  CHECK(r.h->cols == cfg.d);
  REQUIRE(r.spatial_attn.alpha.size() == cfg.n_gat_layers);
  REQUIRE(r.spatial_attn.alpha[0].size() == cfg.k_spatial);
  REQUIRE(r.temporal_attn.alpha[0].size() == cfg.k_temporal);
  for (const auto& layer : r.spatial_attn.alpha)
    for (const auto& alpha : layer) {
      CHECK(alpha.size() == spatial.row.size());
      for (std::size_t v = 0; v < n; ++v)
        CHECK(attention_row_sum(spatial, alpha, v) == doctest::Approx(1.0).epsilon(1e-9));
    }
  for (const auto& layer : r.temporal_attn.alpha)
    for (const auto& alpha : layer)
      for (std::size_t v = 0; v < t; ++v)
        CHECK(attention_row_sum(temporal, alpha, v) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("decoder output layout and calendar sensitivity") {
  std::mt19937_64 rng(4);
  ModelConfig cfg = small_config();
  const std::size_t t = 3, t_out = 2, n = 4, f = 2, f_out = 1;
  EncoderDecoder m = make_model(cfg, t, t_out, n, f, f_out, rng);
  GraphStructure spatial = line_structure(n);
  GraphStructure temporal = build_structure(t, build_temporal_graph(t).edge_list);
  std::vector<double> xv(t * n * f, 0.3);
  EncodeResult r = encode(constant(t * n, f, xv), spatial, temporal, m);

  Var y1 = decode(r.h, r.x0, m, 10, 2);
  CHECK(y1->rows == t_out * n);
  CHECK(y1->cols == f_out);
  Var y2 = decode(r.h, r.x0, m, 11, 2);
  Var y3 = decode(r.h, r.x0, m, 10, 3);
  bool tod_differs = false, dow_differs = false;
  for (std::size_t k = 0; k < y1->size(); ++k) {
    tod_differs |= y1->val[k] != y2->val[k];
    dow_differs |= y1->val[k] != y3->val[k];
  }
  CHECK(tod_differs);
  CHECK(dow_differs);
  CHECK_THROWS_AS(decode(r.h, r.x0, m, kTodSlots, 0), std::out_of_range);
  CHECK_THROWS_AS(decode(r.h, r.x0, m, 0, kDowSlots), std::out_of_range);
}

TEST_CASE("projection head pools over rows") {
  std::mt19937_64 rng(5);
  EncoderDecoder m = make_model(small_config(), 2, 1, 3, 2, 1, rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> hv(6 * 4);
  for (auto& v : hv) v = u(rng);
  Var h = constant(6, 4, hv);
  Var z = project(h, m);
  CHECK(z->rows == 1);
  CHECK(z->cols == 5);
  // Mean pooling makes the projection invariant to row order.
  std::vector<std::size_t> perm = {5, 3, 1, 0, 4, 2};
  Var zp = project(permute_rows(h, perm), m);
  for (std::size_t k = 0; k < z->size(); ++k)
    CHECK(zp->val[k] == doctest::Approx(z->val[k]).epsilon(1e-12));
}

TEST_CASE("end-to-end gradients match finite differences") {
  std::mt19937_64 rng(6);
  ModelConfig cfg = small_config();
  const std::size_t t = 2, n = 3, f = 2;
  EncoderDecoder m = make_model(cfg, t, 1, n, f, 1, rng);
  GraphStructure spatial = line_structure(n);
  GraphStructure temporal = build_structure(t, build_temporal_graph(t).edge_list);
  std::vector<double> xv(t * n * f);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : xv) v = u(rng);

  auto loss_value = [&]() {
    EncodeResult r = encode(constant(t * n, f, xv), spatial, temporal, m);
    Var y = decode(r.h, r.x0, m, 5, 1);
    return sum(mul(y, y))->val[0];
  };

  EncodeResult r = encode(constant(t * n, f, xv), spatial, temporal, m);
  Var y = decode(r.h, r.x0, m, 5, 1);
  backward(sum(mul(y, y)));

  auto fd_check = [&](const Var& p, std::size_t idx) {
    const double h = 1e-5;
    const double saved = p->val[idx];
    p->val[idx] = saved + h;
    const double up = loss_value();
    p->val[idx] = saved - h;
    const double down = loss_value();
    p->val[idx] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double an = p->grad.empty() ? 0.0 : p->grad[idx];
    const double denom = std::max({std::abs(fd), std::abs(an), 1.0});
    CHECK(std::abs(fd - an) / denom <= 1e-6);
  };

  fd_check(m.w0, 0);
  fd_check(m.w0, 3);
  fd_check(m.spatial_layers[0].heads[0].w, 1);
  fd_check(m.spatial_layers[1].heads[1].a, 0);
  fd_check(m.temporal_layers[0].heads[0].a, 1);
  fd_check(m.w_t, 2);
  fd_check(m.omega2.w1, 4);
  fd_check(m.e_tod, 5 * cfg.d_pos);     // the gathered tod row
  fd_check(m.e_dow, 1 * cfg.d_pos + 1); // the gathered dow row
}

TEST_CASE("named parameters are unique and complete") {
  std::mt19937_64 rng(9);
  EncoderDecoder m = make_model(small_config(), 2, 1, 3, 2, 1, rng);
  auto named = m.named_parameters();
  CHECK(named.size() == m.parameters().size());
  for (std::size_t i = 0; i < named.size(); ++i)
    for (std::size_t j = i + 1; j < named.size(); ++j)
      CHECK(named[i].first != named[j].first);
}
