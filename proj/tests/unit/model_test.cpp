#include <cmath>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "tracekit/model.hpp"
#include "tracekit/rng.hpp"

using namespace tracekit;
using nlohmann::json;

namespace {

std::string fx(const std::string& rel) { return std::string(FIXTURE_DIR) + "/" + rel; }

const ModelWeights& fixture_model() {
  static ModelWeights w = load_model(fx("model/model.safetensors"),
                                     ModelConfig::from_json_file(fx("model/config.json")));
  return w;
}

json load_json(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  return json::parse(f);
}

MatrixRM noise_for_span(int rows, int cols, uint64_t seed, double scale) {
  GaussianRng g(seed);
  MatrixRM m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = float(g.next() * scale);
  return m;
}

}  // namespace

TEST_CASE("final logits match the reference run on all parity prompts") {
  const ModelWeights& w = fixture_model();
  json parity = load_json(fx("model/parity.json"));
  REQUIRE(parity.size() == 10);
  double worst = 0;
  for (const auto& p : parity) {
    std::vector<int> ids = p["ids"].get<std::vector<int>>();
    std::vector<double> want = p["final_logits"].get<std::vector<double>>();
    VectorF got = forward(ids, w).final_logits;
    REQUIRE(got.size() == int(want.size()));
    for (int i = 0; i < got.size(); ++i)
      worst = std::max(worst, std::abs(double(got(i)) - want[i]));
  }
  CHECK(worst <= 1e-3);
  MESSAGE("max logit deviation vs reference: ", worst);
}

TEST_CASE("captured activations match the reference hooks") {
  const ModelWeights& w = fixture_model();
  json caps = load_json(fx("model/activations.json"));
  for (const auto& cap : caps) {
    std::vector<int> ids = cap["ids"].get<std::vector<int>>();
    ForwardResult res = forward(ids, w, nullptr, true);
    REQUIRE(res.cache.has_value());
    const ActivationCache& c = *res.cache;
    REQUIRE(c.seq_len == int(ids.size()));
    REQUIRE(c.residual.size() == 3);
    REQUIRE(c.mlp_out.size() == 2);
    REQUIRE(c.attn_out.size() == 2);

    auto check_grid = [&](const json& want, const MatrixRM& got, double tol) {
      REQUIRE(got.rows() == int(want.size()));
      double worst = 0;
      for (int r = 0; r < got.rows(); ++r)
        for (int cc = 0; cc < got.cols(); ++cc)
          worst = std::max(worst,
                           std::abs(double(got(r, cc)) - want[r][cc].get<double>()));
      CHECK(worst <= tol);
    };
    check_grid(cap["residual0"], c.residual_at(-1), 1e-5);
    check_grid(cap["residual1"], c.residual_at(0), 1e-4);
    check_grid(cap["attn_out"][0], c.component_at(0, Component::AttnOut), 1e-4);
    check_grid(cap["attn_out"][1], c.component_at(1, Component::AttnOut), 1e-4);
    check_grid(cap["mlp_out"][0], c.component_at(0, Component::MlpOut), 1e-4);
    check_grid(cap["mlp_out"][1], c.component_at(1, Component::MlpOut), 1e-4);
  }
}

TEST_CASE("layer -1 residual equals token plus position embedding") {
  const ModelWeights& w = fixture_model();
  std::vector<int> ids = {5, 300, 7, 123};
  ForwardResult res = forward(ids, w, nullptr, true);
  const MatrixRM& emb = res.cache->residual_at(-1);
  for (int t = 0; t < 4; ++t) {
    VectorF want = (w.wte.row(ids[size_t(t)]) + w.wpe.row(t)).transpose();
    CHECK((emb.row(t).transpose() - want).cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("restoring every site from the clean cache reproduces clean logits") {
  const ModelWeights& w = fixture_model();
  std::vector<int> ids = {10, 260, 450, 32, 99, 271};
  ForwardResult clean = forward(ids, w, nullptr, true);

  InterventionSet iv;
  iv.embedding_noise = EmbeddingNoise{{1, 3}, noise_for_span(3, 64, 77, 0.5)};
  for (int l = -1; l < 2; ++l)
    for (int p = 0; p < 6; ++p) {
      iv.restorations.push_back({l, p, Component::Residual, &*clean.cache});
      if (l >= 0) {
        iv.restorations.push_back({l, p, Component::MlpOut, &*clean.cache});
        iv.restorations.push_back({l, p, Component::AttnOut, &*clean.cache});
      }
    }
  VectorF restored = forward(ids, w, &iv).final_logits;
  CHECK((restored - clean.final_logits).cwiseAbs().maxCoeff() <= 1e-5f);
}

TEST_CASE("empty intervention set is a plain forward") {
  const ModelWeights& w = fixture_model();
  std::vector<int> ids = {1, 2, 3, 4, 5};
  InterventionSet iv;
  VectorF a = forward(ids, w).final_logits;
  VectorF b = forward(ids, w, &iv).final_logits;
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("forward is bit-deterministic") {
  const ModelWeights& w = fixture_model();
  std::vector<int> ids = {17, 5, 401, 3};
  VectorF a = forward(ids, w).final_logits;
  VectorF b = forward(ids, w).final_logits;
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("restoration never changes earlier layers or positions") {
  const ModelWeights& w = fixture_model();
  std::vector<int> ids = {10, 20, 30, 40, 50, 60, 70};
  ForwardResult clean = forward(ids, w, nullptr, true);

  InterventionSet noise_only;
  noise_only.embedding_noise = EmbeddingNoise{{0, 2}, noise_for_span(3, 64, 5, 0.4)};
  ForwardResult corrupt = forward(ids, w, &noise_only, true);

  const int layer = 1, pos = 3;
  InterventionSet iv = noise_only;
  iv.restorations.push_back({layer, pos, Component::MlpOut, &*clean.cache});
  ForwardResult restored = forward(ids, w, &iv, true);

  // everything strictly before the restored layer must be untouched
  for (int l = -1; l < layer; ++l)
    CHECK((restored.cache->residual_at(l) - corrupt.cache->residual_at(l))
              .cwiseAbs()
              .maxCoeff() == 0.0f);
  // positions before the restored one are untouched at every layer
  for (int l = layer; l < 2; ++l)
    for (int p = 0; p < pos; ++p)
      CHECK((restored.cache->residual_at(l).row(p) - corrupt.cache->residual_at(l).row(p))
                .cwiseAbs()
                .maxCoeff() == 0.0f);
}

TEST_CASE("next_token_distribution is a probability vector") {
  const ModelWeights& w = fixture_model();
  Eigen::VectorXd p = next_token_distribution({44, 55, 66}, w);
  CHECK(p.size() == 512);
  CHECK(std::abs(p.sum() - 1.0) <= 1e-5);
  CHECK(p.minCoeff() >= 0.0);
  CHECK(p.maxCoeff() <= 1.0);
}

TEST_CASE("uniform logits give a uniform distribution") {
  // zeroed weights make every path constant, so logits are equal everywhere
  ModelWeights w = fixture_model();
  w.wte.setZero();
  w.wpe.setZero();
  Eigen::VectorXd p = next_token_distribution({1, 2, 3}, w);
  CHECK(std::abs(p.maxCoeff() - p.minCoeff()) <= 1e-12);
}

TEST_CASE("object_probability picks the requested entry") {
  const ModelWeights& w = fixture_model();
  std::vector<int> ids = {100, 200, 300};
  Eigen::VectorXd p = next_token_distribution(ids, w);
  int arg = 0;
  p.maxCoeff(&arg);
  CHECK(object_probability(ids, arg, w) == p(arg));
  CHECK(object_probability(ids, arg, w) == object_probability(ids, arg, w));
  CHECK_THROWS_AS(object_probability(ids, 512, w), UnknownId);
}

TEST_CASE("input validation raises typed errors") {
  const ModelWeights& w = fixture_model();
  std::vector<int> too_long(65, 1);
  CHECK_THROWS_AS(forward(too_long, w), ContextOverflow);
  CHECK_THROWS_AS(forward({0, 512}, w), UnknownId);
  CHECK_THROWS(forward({}, w));

  ForwardResult clean = forward({1, 2, 3}, w, nullptr, true);
  InterventionSet iv;
  iv.restorations.push_back({5, 0, Component::MlpOut, &*clean.cache});
  CHECK_THROWS_AS(forward({1, 2, 3}, w, &iv), SiteOutOfRange);
  iv.restorations = {{-1, 0, Component::MlpOut, &*clean.cache}};
  CHECK_THROWS_AS(forward({1, 2, 3}, w, &iv), SiteOutOfRange);
  iv.restorations = {{0, 3, Component::MlpOut, &*clean.cache}};
  CHECK_THROWS_AS(forward({1, 2, 3}, w, &iv), SiteOutOfRange);
  iv.restorations = {{0, 0, Component::MlpOut, &*clean.cache},
                     {0, 0, Component::MlpOut, &*clean.cache}};
  CHECK_THROWS(forward({1, 2, 3}, w, &iv));
  iv.restorations.clear();
  iv.embedding_noise = EmbeddingNoise{{0, 4}, noise_for_span(5, 64, 1, 0.1)};
  CHECK_THROWS_AS(forward({1, 2, 3}, w, &iv), SiteOutOfRange);
}
