#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "idmatch/imprinting.hpp"
#include "oracles.hpp"

using namespace idmatch;

namespace {

Eigen::VectorXd unit(std::initializer_list<double> vals) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v[i++] = x;
  return v.normalized();
}

Eigen::VectorXd random_unit(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);
  return v.normalized();
}

}  // namespace

TEST_CASE("batch targets pool per class and domain") {
  const Eigen::VectorXd u = unit({1, 0, 0});
  const Eigen::VectorXd v = unit({0, 1, 0});
  const Eigen::VectorXd w = unit({0, 0, 1});
  std::vector<BatchFeature> batch{
      {u, 0, Domain::DocSide},
      {v, 0, Domain::LiveSide},
      {w, 1, Domain::LiveSide},
  };

  SECTION("average mode pools everything present") {
    const ClassTargets t = batch_targets(batch, TargetMode::AverageFeature);
    REQUIRE(t.size() == 2);
    CHECK((t.at(0) - (u + v) / 2.0).norm() < 1e-15);
    CHECK((t.at(1) - w).norm() == 0.0);  // single live sample, no doc: kept
  }
  SECTION("doc mode ignores live samples entirely") {
    std::vector<int> skipped;
    const ClassTargets t = batch_targets(batch, TargetMode::DocFeature, &skipped);
    REQUIRE(t.size() == 1);
    CHECK((t.at(0) - u).norm() == 0.0);
    CHECK(skipped == std::vector<int>{1});  // no doc sample for class 1
  }
  SECTION("live mode ignores doc samples entirely") {
    std::vector<int> skipped;
    const ClassTargets t = batch_targets(batch, TargetMode::LiveFeature, &skipped);
    REQUIRE(t.size() == 2);
    CHECK((t.at(0) - v).norm() == 0.0);
    CHECK((t.at(1) - w).norm() == 0.0);
    CHECK(skipped.empty());
  }
  SECTION("multiple live samples average within the domain") {
    batch.push_back({u, 1, Domain::LiveSide});
    const ClassTargets t = batch_targets(batch, TargetMode::LiveFeature);
    CHECK((t.at(1) - (w + u) / 2.0).norm() < 1e-15);
  }
  SECTION("empty batch is rejected") {
    std::vector<BatchFeature> none;
    CHECK_THROWS_AS(batch_targets(none, TargetMode::AverageFeature), ArgumentError);
  }
}

TEST_CASE("doc-mode targets do not depend on live embeddings") {
  std::vector<BatchFeature> batch{
      {random_unit(4, 1), 0, Domain::DocSide},
      {random_unit(4, 2), 0, Domain::LiveSide},
  };
  const ClassTargets before = batch_targets(batch, TargetMode::DocFeature);
  batch[1].embedding = random_unit(4, 99);
  const ClassTargets after = batch_targets(batch, TargetMode::DocFeature);
  CHECK((before.at(0) - after.at(0)).norm() == 0.0);
}

TEST_CASE("direct replacement at full update rate") {
  MarginHead head = MarginHead::random_init(3, 4, 5);
  const Eigen::VectorXd target = 0.3 * random_unit(4, 8);  // deliberately non-unit
  ClassTargets targets{{1, target}};

  dwi_update(head, targets, 1.0);
  CHECK((head.weights_raw.row(1).transpose() - target.normalized()).norm() < 1e-15);
}

TEST_CASE("zero update rate is a bitwise no-op") {
  MarginHead head = MarginHead::random_init(3, 4, 5);
  const Eigen::MatrixXd before = head.weights_raw;
  ClassTargets targets{{0, random_unit(4, 1)}, {2, random_unit(4, 2)}};
  dwi_update(head, targets, 0.0);
  CHECK((head.weights_raw.array() == before.array()).all());
}

TEST_CASE("half-rate blend between orthogonal directions") {
  MarginHead head = MarginHead::random_init(2, 2, 5);
  head.weights_raw.row(0) << 1, 0;
  ClassTargets targets{{0, unit({0, 1})}};
  dwi_update(head, targets, 0.5);
  // (0.5, 0.5) normalized
  CHECK(head.weights_raw(0, 0) == Catch::Approx(0.70710678).margin(1e-8));
  CHECK(head.weights_raw(0, 1) == Catch::Approx(0.70710678).margin(1e-8));
}

TEST_CASE("updated rows are unit norm, absent rows bitwise untouched") {
  MarginHead head = MarginHead::random_init(5, 6, 7);
  head.weights_raw.row(3) *= 4.0;  // non-unit raw storage is legal
  const Eigen::MatrixXd before = head.weights_raw;

  ClassTargets targets{{1, 0.2 * random_unit(6, 3)}, {3, random_unit(6, 4)}};
  dwi_update(head, targets, 0.7);

  for (int j : {1, 3}) {
    CHECK(std::abs(head.weights_raw.row(j).norm() - 1.0) < 1e-12);
  }
  for (int j : {0, 2, 4}) {
    CHECK((head.weights_raw.row(j).array() == before.row(j).array()).all());
  }
}

TEST_CASE("full-rate imprinting is idempotent") {
  MarginHead head = MarginHead::random_init(3, 4, 9);
  ClassTargets targets{{0, random_unit(4, 11)}, {2, random_unit(4, 12)}};
  dwi_update(head, targets, 1.0);
  const Eigen::MatrixXd once = head.weights_raw;
  dwi_update(head, targets, 1.0);
  CHECK((head.weights_raw.array() == once.array()).all());
}

TEST_CASE("imprint update input contracts") {
  MarginHead head = MarginHead::random_init(3, 4, 5);
  ClassTargets ok{{0, random_unit(4, 1)}};
  CHECK_THROWS_AS(dwi_update(head, ok, -0.1), ArgumentError);
  CHECK_THROWS_AS(dwi_update(head, ok, 1.5), ArgumentError);
  ClassTargets zero{{0, Eigen::VectorXd::Zero(4)}};
  CHECK_THROWS_AS(dwi_update(head, zero, 1.0), ArgumentError);
  ClassTargets unknown{{7, random_unit(4, 1)}};
  CHECK_THROWS_AS(dwi_update(head, unknown, 1.0), ArgumentError);
  // Failed validation must leave the head untouched.
  const Eigen::MatrixXd before = head.weights_raw;
  try {
    dwi_update(head, unknown, 1.0);
  } catch (const ArgumentError&) {
  }
  CHECK((head.weights_raw.array() == before.array()).all());
}

TEST_CASE("cancelled blend skips the row and leaves it unchanged") {
  MarginHead head = MarginHead::random_init(2, 3, 5);
  head.weights_raw.row(0) << 1, 0, 0;
  const Eigen::MatrixXd before = head.weights_raw;
  // alpha 0.5 with target exactly opposite the current row cancels to zero
  ClassTargets targets{{0, unit({-1, 0, 0})}};
  std::vector<int> skipped;
  dwi_update(head, targets, 0.5, &skipped);
  CHECK(skipped == std::vector<int>{0});
  CHECK((head.weights_raw.array() == before.array()).all());
}

TEST_CASE("imprint config validation") {
  ImprintConfig cfg;
  cfg.validate();
  cfg.alpha = 1.2;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg.alpha = 0.5;
  cfg.schedule = ImprintSchedule::StaticPeriodical;
  cfg.period_epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("full-dataset imprinting matches hand-built targets") {
  const ShallowDataset data = generate_synthetic(6, {1, 2}, 5, 0.4, 0.1, 21);
  NetworkConfig net_cfg;
  net_cfg.hidden = {8};
  net_cfg.embed_dim = 4;
  const SiblingPair pair = make_sibling_pair(
      net_cfg, 5, SharingMask::parse("high-fc", net_cfg.layer_count()), 31);

  MarginHead head = MarginHead::random_init(6, 4, 41);
  static_imprint_all(head, pair, data, TargetMode::AverageFeature);

  // Reference: per-class mean of normalized embeddings, renormalized.
  for (int id = 0; id < 6; ++id) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(4);
    int count = 0;
    for (const Sample& s : data.samples) {
      if (s.identity != id) continue;
      sum += pair.route(s).normalized();
      ++count;
    }
    const Eigen::VectorXd expected = (sum / count).normalized();
    CHECK((head.weights_raw.row(id).transpose() - expected).norm() < 1e-12);
    CHECK(std::abs(head.weights_raw.row(id).norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("full-dataset imprinting spends one forward pass per sample") {
  const ShallowDataset data = generate_synthetic(5, {2, 2}, 4, 0.4, 0.1, 22);
  NetworkConfig net_cfg;
  net_cfg.hidden = {6};
  net_cfg.embed_dim = 3;
  const SiblingPair pair = make_sibling_pair(
      net_cfg, 4, SharingMask::parse("none", net_cfg.layer_count()), 1);
  MarginHead head = MarginHead::random_init(5, 3, 2);

  pair.doc_net.reset_forward_calls();
  pair.live_net.reset_forward_calls();
  static_imprint_all(head, pair, data, TargetMode::AverageFeature);
  // 5 identities x (1 doc + 2 live) = 15 samples: 5 doc routes, 10 live routes.
  CHECK(pair.doc_net.forward_calls() == 5);
  CHECK(pair.live_net.forward_calls() == 10);
}

TEST_CASE("full-dataset imprinting rejects a mismatched head") {
  const ShallowDataset data = generate_synthetic(4, {1, 1}, 4, 0.4, 0.1, 23);
  NetworkConfig net_cfg;
  net_cfg.hidden = {};
  net_cfg.embed_dim = 3;
  const SiblingPair pair = make_sibling_pair(
      net_cfg, 4, SharingMask::parse("all", net_cfg.layer_count()), 1);
  MarginHead head = MarginHead::random_init(7, 3, 2);
  CHECK_THROWS_AS(static_imprint_all(head, pair, data, TargetMode::DocFeature),
                  ArgumentError);
}

TEST_CASE("full-rate batch update equals full-dataset imprint on the same batch") {
  // When a batch covers the whole dataset, the dynamic path at rate 1 and the
  // static path must land on identical rows.
  const ShallowDataset data = generate_synthetic(4, {1, 1}, 5, 0.3, 0.1, 33);
  NetworkConfig net_cfg;
  net_cfg.hidden = {6};
  net_cfg.embed_dim = 4;
  const SiblingPair pair = make_sibling_pair(
      net_cfg, 5, SharingMask::parse("high-fc", net_cfg.layer_count()), 3);

  MarginHead via_batch = MarginHead::random_init(4, 4, 17);
  MarginHead via_static = via_batch;

  std::vector<BatchFeature> features;
  for (const Sample& s : data.samples) {
    features.push_back({pair.route(s).normalized(), s.identity, s.domain});
  }
  dwi_update(via_batch, batch_targets(features, TargetMode::AverageFeature), 1.0);
  static_imprint_all(via_static, pair, data, TargetMode::AverageFeature);

  CHECK((via_batch.weights_raw - via_static.weights_raw).cwiseAbs().maxCoeff() <
        1e-15);
}
