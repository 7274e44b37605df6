#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "idmatch/losses.hpp"
#include "oracles.hpp"

using namespace idmatch;

namespace {

Eigen::VectorXd random_vec(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

MarginHead axis_head(double s, double m) {
  MarginHead head;
  head.weights_raw.resize(2, 2);
  head.weights_raw << 1, 0, 0, 1;
  head.log_scale = std::log(s);
  head.margin = m;
  return head;
}

// Cross-entropy on logits s*W*f - m*onehot treating W rows as the final
// (already normalized) weights; the independent reference for the
// attraction/repulsion signals.
double ce_on_normalized(const Eigen::MatrixXd& w, const Eigen::VectorXd& f,
                        int label, double s, double m) {
  Eigen::VectorXd logits = s * (w * f);
  logits[label] -= m;
  const double mx = logits.maxCoeff();
  return -(logits[label] - mx - std::log((logits.array() - mx).exp().sum()));
}

}  // namespace

TEST_CASE("cosine margin loss on orthogonal axes") {
  const MarginHead head = axis_head(1.0, 0.0);
  Eigen::VectorXd f(2);
  f << 1, 0;

  const LossOutput out = am_softmax(head, f, 0);
  const double e = std::exp(1.0);
  CHECK(out.prob[0] == Catch::Approx(e / (e + 1.0)).epsilon(1e-12));
  CHECK(out.prob[0] == Catch::Approx(0.731059).margin(5e-7));
  CHECK(out.loss == Catch::Approx(0.313262).margin(5e-7));
  CHECK(out.loss == Catch::Approx(-std::log(e / (e + 1.0))).epsilon(1e-12));
}

TEST_CASE("equidistant embedding splits mass evenly") {
  for (double s : {1.0, 7.5, 30.0}) {
    const MarginHead head = axis_head(s, 0.0);
    Eigen::VectorXd f(2);
    f << 1, 1;  // normalized internally; same cosine to both rows
    const LossOutput out = am_softmax(head, f, 1);
    CHECK(out.prob[0] == Catch::Approx(0.5).epsilon(1e-12));
    CHECK(out.prob[1] == Catch::Approx(0.5).epsilon(1e-12));
    CHECK(out.loss == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("probabilities form a simplex") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const MarginHead head = MarginHead::random_init(5, 8, seed, 16.0, 5.0);
    const LossOutput out = am_softmax(head, random_vec(8, seed + 50), 2);
    CHECK(std::abs(out.prob.sum() - 1.0) < 1e-12);
    CHECK(out.prob.minCoeff() > 0.0);
    CHECK(out.prob.maxCoeff() < 1.0);
  }
}

TEST_CASE("margin zero reduces to scaled softmax on cosines") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    MarginHead head = MarginHead::random_init(6, 5, seed, 12.0, 0.0);
    const Eigen::VectorXd u = random_vec(5, seed + 7);

    PlainHead flat;
    flat.weights = head.scale() * head.normalized_weights();
    flat.bias = Eigen::VectorXd::Zero(6);
    const LossOutput a = am_softmax(head, u, 3);
    const LossOutput b = plain_softmax(flat, u.normalized(), 3);
    CHECK(std::abs(a.loss - b.loss) < 1e-12);
    CHECK((a.prob - b.prob).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("embedding magnitude does not matter") {
  const MarginHead head = MarginHead::random_init(4, 6, 3, 16.0, 5.0);
  const Eigen::VectorXd u = random_vec(6, 9);
  const LossOutput base = am_softmax(head, u, 1);
  for (double c : {0.001, 0.5, 3.0, 4096.0}) {
    const LossOutput scaled = am_softmax(head, c * u, 1);
    CHECK(std::abs(scaled.loss - base.loss) < 1e-12);
    CHECK((scaled.prob - base.prob).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("loss grows with the margin") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const Eigen::VectorXd u = random_vec(7, seed + 31);
    double previous = -1.0;
    for (double m : {0.0, 0.5, 2.0, 5.0, 9.0}) {
      const MarginHead head = MarginHead::random_init(5, 7, seed, 16.0, m);
      const double loss = am_softmax(head, u, 0).loss;
      CHECK(loss > previous);
      previous = loss;
    }
  }
}

TEST_CASE("margin loss input contracts") {
  MarginHead head = axis_head(1.0, 0.0);
  Eigen::VectorXd f(2);
  f << 1, 0;
  CHECK_THROWS_AS(am_softmax(head, f, 2), ArgumentError);
  CHECK_THROWS_AS(am_softmax(head, f, -1), ArgumentError);
  CHECK_THROWS_AS(am_softmax(head, random_vec(3, 1), 0), ArgumentError);
  CHECK_THROWS_AS(am_softmax(head, Eigen::VectorXd::Zero(2), 0), NumericError);
  head.weights_raw.row(1).setZero();
  CHECK_THROWS_AS(am_softmax(head, f, 0), NumericError);
  CHECK_THROWS_AS(MarginHead::random_init(1, 4, 1), ArgumentError);
  CHECK_THROWS_AS(MarginHead::random_init(4, 4, 1, -2.0), ArgumentError);
  CHECK_THROWS_AS(MarginHead::random_init(4, 4, 1, 16.0, -1.0), ArgumentError);
}

TEST_CASE("margin loss gradients match finite differences") {
  int configs_checked = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (double m : {0.0, 5.0}) {
      for (int classes : {2, 7}) {
        const int d = 6;
        const int label = static_cast<int>(seed) % classes;
        MarginHead head = MarginHead::random_init(classes, d, seed, 16.0, m);
        // Non-unit raw rows so the row normalization chain is exercised.
        for (int j = 0; j < classes; ++j) {
          head.weights_raw.row(j) *= 0.5 + 0.3 * j;
        }
        const Eigen::VectorXd u = 1.7 * random_vec(d, seed * 13 + 1);
        const LossOutput out = am_softmax(head, u, label);

        const auto fd_emb = oracles::fd_gradient(
            [&](const Eigen::VectorXd& v) { return am_softmax(head, v, label).loss; },
            u);
        CHECK(oracles::rel_error_vec(out.grad_embedding, fd_emb) < 1e-6);

        const auto fd_w = oracles::fd_gradient_matrix(
            [&](const Eigen::MatrixXd& w) {
              MarginHead h = head;
              h.weights_raw = w;
              return am_softmax(h, u, label).loss;
            },
            head.weights_raw);
        CHECK(oracles::rel_error(out.grad_weights, fd_w) < 1e-6);

        // d loss / d log s = s * dL/ds
        const double fd_ls = oracles::fd_scalar(
            [&](double ls) {
              MarginHead h = head;
              h.log_scale = ls;
              return am_softmax(h, u, label).loss;
            },
            head.log_scale);
        CHECK(oracles::rel_error_scalar(out.grad_scale * head.scale(), fd_ls) < 1e-6);
        ++configs_checked;
      }
    }
  }
  CHECK(configs_checked == 20);
}

TEST_CASE("weight update signals point along the embedding") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const MarginHead head = MarginHead::random_init(5, 6, seed, 16.0, 5.0);
    const Eigen::VectorXd u = random_vec(6, seed + 17);
    const int label = 2;
    const Eigen::MatrixXd signals = weight_gradients(head, u, label);
    const LossOutput out = am_softmax(head, u, label);
    const Eigen::VectorXd f = u.normalized();
    const double s = head.scale();

    for (int j = 0; j < 5; ++j) {
      const Eigen::VectorXd row = signals.row(j).transpose();
      const double along = row.dot(f);
      // Rows are exact multiples of f.
      CHECK((row - along * f).norm() < 1e-12);
      if (j == label) {
        CHECK(along == Catch::Approx(s * (1.0 - out.prob[j])).epsilon(1e-12));
        CHECK(along > 0.0);
      } else {
        CHECK(along == Catch::Approx(-s * out.prob[j]).epsilon(1e-12));
        CHECK(along < 0.0);
      }
    }
  }
}

TEST_CASE("attraction magnitude at an engineered posterior") {
  // Margin chosen so the target logit lands at ln 9: p_y = 0.9 exactly.
  const double s = 30.0;
  const MarginHead head = axis_head(s, s - std::log(9.0));
  Eigen::VectorXd f(2);
  f << 1, 0;
  const LossOutput out = am_softmax(head, f, 0);
  REQUIRE(out.prob[0] == Catch::Approx(0.9).epsilon(1e-12));

  const Eigen::MatrixXd signals = weight_gradients(head, f, 0);
  CHECK(signals.row(0).norm() == Catch::Approx(3.0).epsilon(1e-12));
  CHECK(signals.row(0).dot(f) > 0.0);
}

TEST_CASE("update signals are the negative gradient on normalized weights") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const MarginHead head = MarginHead::random_init(4, 5, seed, 9.0, 2.0);
    const Eigen::VectorXd u = random_vec(5, seed + 40);
    const int label = 1;
    const Eigen::MatrixXd signals = weight_gradients(head, u, label);
    const Eigen::VectorXd f = u.normalized();

    const auto fd = oracles::fd_gradient_matrix(
        [&](const Eigen::MatrixXd& w) {
          return ce_on_normalized(w, f, label, head.scale(), head.margin);
        },
        head.normalized_weights());
    CHECK(oracles::rel_error(signals, -fd) < 1e-6);
  }
}

TEST_CASE("plain softmax on equal logits") {
  PlainHead head;
  head.weights = Eigen::MatrixXd::Zero(2, 3);
  head.bias = Eigen::VectorXd::Zero(2);
  const LossOutput out = plain_softmax(head, random_vec(3, 1), 0);
  CHECK(out.loss == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(out.prob[0] == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("plain softmax loss decays as the correct logit grows") {
  PlainHead head = PlainHead::random_init(3, 4, 2);
  const Eigen::VectorXd u = random_vec(4, 3);
  double previous = std::numeric_limits<double>::infinity();
  for (double boost : {0.0, 1.0, 4.0, 16.0, 64.0}) {
    PlainHead h = head;
    h.bias[1] += boost;
    const double loss = plain_softmax(h, u, 1).loss;
    CHECK(loss < previous);
    previous = loss;
  }
  CHECK(previous < 1e-20);
}

TEST_CASE("plain softmax gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    PlainHead head = PlainHead::random_init(4, 5, seed);
    head.bias = 0.1 * random_vec(4, seed + 3);
    const Eigen::VectorXd u = random_vec(5, seed + 9);
    const int label = static_cast<int>(seed) % 4;
    const LossOutput out = plain_softmax(head, u, label);

    const auto fd_emb = oracles::fd_gradient(
        [&](const Eigen::VectorXd& v) { return plain_softmax(head, v, label).loss; },
        u);
    CHECK(oracles::rel_error_vec(out.grad_embedding, fd_emb) < 1e-6);

    const auto fd_w = oracles::fd_gradient_matrix(
        [&](const Eigen::MatrixXd& w) {
          PlainHead h = head;
          h.weights = w;
          return plain_softmax(h, u, label).loss;
        },
        head.weights);
    CHECK(oracles::rel_error(out.grad_weights, fd_w) < 1e-6);

    const auto fd_b = oracles::fd_gradient(
        [&](const Eigen::VectorXd& b) {
          PlainHead h = head;
          h.bias = b;
          return plain_softmax(h, u, label).loss;
        },
        head.bias);
    CHECK(oracles::rel_error_vec(out.grad_bias, fd_b) < 1e-6);
  }
  PlainHead head = PlainHead::random_init(3, 4, 1);
  CHECK_THROWS_AS(plain_softmax(head, random_vec(4, 1), 5), ArgumentError);
  CHECK_THROWS_AS(plain_softmax(head, random_vec(2, 1), 0), ArgumentError);
}

TEST_CASE("contrastive loss endpoints") {
  const Eigen::VectorXd x = random_vec(4, 5).normalized();

  SECTION("coincident genuine pair") {
    std::vector<EmbeddingPair> pairs{{x, x, true}};
    const PairLossOutput out = contrastive_loss(pairs, 1.0);
    CHECK(out.loss == 0.0);
    CHECK(out.grads[0].first.norm() == 0.0);
    CHECK(out.grads[0].second.norm() == 0.0);
  }
  SECTION("impostors beyond the margin") {
    Eigen::VectorXd y = -x;  // distance 2 on the unit sphere
    std::vector<EmbeddingPair> pairs{{x, y, false}};
    const PairLossOutput out = contrastive_loss(pairs, 1.0);
    CHECK(out.loss == 0.0);
    CHECK(out.grads[0].first.norm() == 0.0);
  }
  SECTION("coincident impostors hit the kink with zero subgradient") {
    std::vector<EmbeddingPair> pairs{{x, x, false}};
    const PairLossOutput out = contrastive_loss(pairs, 1.0);
    CHECK(out.loss == 1.0);  // (margin - 0)^2
    CHECK(out.grads[0].first.norm() == 0.0);
  }
  SECTION("loss is the mean over pairs") {
    Eigen::VectorXd z = random_vec(4, 6).normalized();
    std::vector<EmbeddingPair> one{{x, z, true}};
    std::vector<EmbeddingPair> two{{x, z, true}, {x, x, true}};
    CHECK(contrastive_loss(two, 1.0).loss ==
          Catch::Approx(contrastive_loss(one, 1.0).loss / 2.0).epsilon(1e-12));
  }
  SECTION("input contracts") {
    std::vector<EmbeddingPair> none;
    CHECK_THROWS_AS(contrastive_loss(none, 1.0), ArgumentError);
    std::vector<EmbeddingPair> bad{{random_vec(3, 1), random_vec(4, 1), true}};
    CHECK_THROWS_AS(contrastive_loss(bad, 1.0), ArgumentError);
    std::vector<EmbeddingPair> ok{{x, x, true}};
    CHECK_THROWS_AS(contrastive_loss(ok, -1.0), ArgumentError);
  }
}

TEST_CASE("contrastive gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::vector<EmbeddingPair> pairs;
    for (int p = 0; p < 4; ++p) {
      pairs.push_back({0.6 * random_vec(3, seed * 20 + p),
                       0.6 * random_vec(3, seed * 20 + 10 + p), p % 2 == 0});
    }
    const PairLossOutput out = contrastive_loss(pairs, 1.0);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto fd_a = oracles::fd_gradient(
          [&](const Eigen::VectorXd& v) {
            auto probe = pairs;
            probe[p].a = v;
            return contrastive_loss(probe, 1.0).loss;
          },
          pairs[p].a);
      CHECK(oracles::rel_error_vec(out.grads[p].first, fd_a) < 1e-6);
      const auto fd_b = oracles::fd_gradient(
          [&](const Eigen::VectorXd& v) {
            auto probe = pairs;
            probe[p].b = v;
            return contrastive_loss(probe, 1.0).loss;
          },
          pairs[p].b);
      CHECK(oracles::rel_error_vec(out.grads[p].second, fd_b) < 1e-6);
    }
  }
}

TEST_CASE("triplet loss endpoints") {
  const Eigen::VectorXd a = random_vec(4, 7).normalized();

  SECTION("comfortably satisfied triplet") {
    const TripletLossOutput out = triplet_loss(a, a, -a, 0.5);
    CHECK(out.loss == 0.0);
    CHECK(out.grad_anchor.norm() == 0.0);
    CHECK(out.grad_positive.norm() == 0.0);
    CHECK(out.grad_negative.norm() == 0.0);
  }
  SECTION("fully degenerate triplet scores the margin") {
    const TripletLossOutput out = triplet_loss(a, a, a, 0.5);
    CHECK(out.loss == 0.5);
  }
  SECTION("input contracts") {
    CHECK_THROWS_AS(triplet_loss(a, random_vec(3, 1), a, 0.5), ArgumentError);
    CHECK_THROWS_AS(triplet_loss(a, a, a, -0.5), ArgumentError);
  }
}

TEST_CASE("triplet gradients match finite differences on active triplets") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    // Small spread keeps the hinge active: margin dominates the distances.
    const Eigen::VectorXd a = 0.2 * random_vec(5, seed * 3 + 1);
    const Eigen::VectorXd p = 0.2 * random_vec(5, seed * 3 + 2);
    const Eigen::VectorXd n = 0.2 * random_vec(5, seed * 3 + 3);
    const TripletLossOutput out = triplet_loss(a, p, n, 1.0);
    REQUIRE(out.loss > 0.0);

    const auto fd_a = oracles::fd_gradient(
        [&](const Eigen::VectorXd& v) { return triplet_loss(v, p, n, 1.0).loss; }, a);
    CHECK(oracles::rel_error_vec(out.grad_anchor, fd_a) < 1e-6);
    const auto fd_p = oracles::fd_gradient(
        [&](const Eigen::VectorXd& v) { return triplet_loss(a, v, n, 1.0).loss; }, p);
    CHECK(oracles::rel_error_vec(out.grad_positive, fd_p) < 1e-6);
    const auto fd_n = oracles::fd_gradient(
        [&](const Eigen::VectorXd& v) { return triplet_loss(a, p, v, 1.0).loss; }, n);
    CHECK(oracles::rel_error_vec(out.grad_negative, fd_n) < 1e-6);
  }
}
