#include <doctest.h>

#include "mever/error.hpp"
#include "mever/verifier.hpp"
#include "support.hpp"

using namespace mever;
using namespace mever::testing;

namespace {

Mat token_fuse_oracle(const Mat& H, const std::vector<Mat>& Z, const ver::FusionParams& p, int n_heads) {
  Mat zt = Mat::Zero(H.rows(), H.cols());
  for (const Mat& z : Z) zt += mha_oracle(H, z, p.attn, n_heads);
  if (!Z.empty()) zt /= static_cast<double>(Z.size());
  Mat cat(H.rows(), 2 * H.cols());
  cat << H, zt;
  return matmul_loops(cat, p.w_1.value);
}

RowVec interact_oracle(const std::vector<Mat>& U, const Mat& Uc, const ver::FusionParams& p, int n_heads) {
  RowVec pooled = RowVec::Zero(Uc.cols());
  for (const Mat& u : U) pooled += mha_oracle(u, Uc, p.attn, n_heads).row(0);
  return pooled / static_cast<double>(U.size());
}

enc::EncodedUnit random_unit(std::mt19937_64& rng, int d, int n_images) {
  enc::EncodedUnit u;
  u.H = random_mat(rng, 4, d);
  u.text_embedding = u.H.row(0);
  for (int i = 0; i < n_images; ++i) {
    u.Z.push_back(random_mat(rng, 3, d));
    u.image_embeddings.push_back(u.Z.back().row(0));
  }
  return u;
}

RowVec evidence_fuse_oracle(const RowVec& c, const std::vector<enc::EncodedUnit>& ev, const ver::FusionParams& p,
                            const enc::EncoderParams& ep) {
  const int d = p.dim();
  Mat keys(static_cast<Eigen::Index>(ev.size()), d);
  for (std::size_t k = 0; k < ev.size(); ++k) {
    RowVec z_hat = RowVec::Zero(d);
    if (!ev[k].Z.empty()) {
      Mat z(static_cast<Eigen::Index>(ev[k].Z.size()), d);
      for (std::size_t i = 0; i < ev[k].Z.size(); ++i) z.row(static_cast<Eigen::Index>(i)) = matmul_loops(ev[k].Z[i].topRows(1), ep.w_img.value).row(0);
      z_hat = gnn_oracle(matmul_loops(ev[k].H.topRows(1), ep.w_txt.value).row(0), z, ep.b_i2t.value.row(0));
    }
    Mat cat(1, 2 * d);
    cat << ev[k].H.topRows(1), z_hat;
    keys.row(static_cast<Eigen::Index>(k)) = matmul_loops(matmul_loops(cat, p.w_2.value), p.w_evid.value).row(0);
  }
  return gnn_oracle(matmul_loops(c, ep.w_txt.value).row(0), keys, p.b_e2c.value.row(0));
}

}  // namespace

TEST_CASE("token fusion matches the scalar oracle") {
  std::mt19937_64 rng(1);
  const auto p = ver::FusionParams::init(8, 2, 3);
  for (int t = 0; t < 10; ++t) {
    const Mat H = random_mat(rng, 4, 8);
    const std::vector<Mat> Z{random_mat(rng, 3, 8), random_mat(rng, 5, 8)};
    CHECK(max_abs_diff(ver::token_fuse_unit(H, Z, p, 1), token_fuse_oracle(H, Z, p, 1)) <= 1e-9);
    CHECK(max_abs_diff(ver::token_fuse_unit(H, Z, p, 2), token_fuse_oracle(H, Z, p, 2)) <= 1e-9);
    CHECK(max_abs_diff(ver::token_fuse_unit(H, {Z[1], Z[0]}, p, 1), ver::token_fuse_unit(H, Z, p, 1)) <= 1e-12);
    CHECK(max_abs_diff(ver::token_fuse_unit(H, {Z[0], Z[0]}, p, 1), ver::token_fuse_unit(H, {Z[0]}, p, 1)) <= 1e-12);
    Mat cat(4, 16);
    cat << H, Mat::Zero(4, 8);
    CHECK(max_abs_diff(ver::token_fuse_unit(H, {}, p, 1), cat * p.w_1.value) <= 1e-12);
  }
  CHECK_THROWS_AS(ver::token_fuse_unit(Mat::Zero(2, 7), {}, p, 1), Error);
}

TEST_CASE("claim-evidence interaction matches the oracle and ignores evidence order") {
  std::mt19937_64 rng(2);
  const auto p = ver::FusionParams::init(8, 3, 4);
  for (int t = 0; t < 10; ++t) {
    const Mat Uc = random_mat(rng, 5, 8);
    const std::vector<Mat> U{random_mat(rng, 4, 8), random_mat(rng, 6, 8), random_mat(rng, 3, 8)};
    const RowVec c = ver::claim_evidence_interact(U, Uc, p);
    CHECK(max_abs_diff(c, interact_oracle(U, Uc, p, 1)) <= 1e-9);
    CHECK(max_abs_diff(ver::claim_evidence_interact({U[2], U[0], U[1]}, Uc, p), c) <= 1e-12);
    CHECK(max_abs_diff(ver::claim_evidence_interact({U[1], U[1], U[1]}, Uc, p), ver::claim_evidence_interact({U[1]}, Uc, p)) <= 1e-12);
    CHECK(max_abs_diff(ver::claim_evidence_interact({U[0]}, Uc, p), mha_oracle(U[0], Uc, p.attn, 1).row(0)) <= 1e-9);
  }
  CHECK_THROWS_AS(ver::claim_evidence_interact({}, Mat::Zero(2, 8), p), Error);
}

TEST_CASE("evidence fusion matches the oracle") {
  std::mt19937_64 rng(3);
  const auto p = ver::FusionParams::init(8, 2, 5);
  const auto ep = enc::EncoderParams::init(tiny_encoder(), 6);
  for (int t = 0; t < 10; ++t) {
    const RowVec c = random_mat(rng, 1, 8);
    const std::vector<enc::EncodedUnit> ev{random_unit(rng, 8, 2), random_unit(rng, 8, 0), random_unit(rng, 8, 3)};
    const RowVec got = ver::evidence_fuse(c, ev, p, ep);
    CHECK(max_abs_diff(got, evidence_fuse_oracle(c, ev, p, ep)) <= 1e-9);
    CHECK(max_abs_diff(ver::evidence_fuse(c, {ev[1], ev[2], ev[0]}, p, ep), got) <= 1e-12);
    CHECK(max_abs_diff(ver::evidence_fuse(c, {ev[0], ev[0]}, p, ep), ver::evidence_fuse(c, {ev[0]}, p, ep)) <= 1e-12);
  }
  CHECK_THROWS_AS(ver::evidence_fuse(RowVec::Zero(8), {}, p, ep), Error);
}

TEST_CASE("classifier distributions") {
  auto p = ver::FusionParams::init(8, 3, 7);
  const std::vector<std::string> labels{"SUPPORT", "REFUTE", "NEI"};
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto v = ver::classify(random_mat(rng, 1, 8, 3.0), random_mat(rng, 1, 8, 3.0), p, labels);
    double s = 0.0;
    for (double x : v.probs) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
  p.for_each([](Parameter& q) { q.value.setZero(); });
  const auto u = ver::classify(random_mat(rng, 1, 8), random_mat(rng, 1, 8), p, labels);
  for (double x : u.probs) CHECK(x == doctest::Approx(1.0 / 3.0));
  CHECK(u.predicted_label == "NEI");

  const auto two = ver::FusionParams::init(8, 2, 7);
  CHECK(ver::classify(RowVec::Zero(8), RowVec::Zero(8), two, {"SUPPORT", "REFUTE"}).probs.size() == 2);
}

TEST_CASE("verification loss") {
  ver::VerdictDistribution one = ver::make_distribution((RowVec(2) << 1.0, 0.0).finished(), {"SUPPORT", "REFUTE"});
  CHECK(ver::verification_loss(one, "SUPPORT") == 0.0);
  CHECK(ver::verification_loss(one, "REFUTE") == doctest::Approx(-std::log(1e-12)));
  ver::VerdictDistribution uni = ver::make_distribution(RowVec::Constant(3, 1.0 / 3.0), {"SUPPORT", "REFUTE", "NEI"});
  CHECK(ver::verification_loss(uni, "NEI") == doctest::Approx(std::log(3.0)));
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> raw;
    for (int i = 0; i < 3; ++i) raw.push_back(random_mat(rng, 1, 1, 3.0)(0, 0));
    const auto pr = softmax(raw);
    const auto dist = ver::make_distribution((RowVec(3) << pr[0], pr[1], pr[2]).finished(), {"SUPPORT", "REFUTE", "NEI"});
    CHECK(std::abs(ver::verification_loss(dist, "REFUTE") + std::log(pr[1])) <= 1e-12);
  }
  CHECK_THROWS_AS(ver::verification_loss(uni, "MAYBE"), Error);
}

TEST_CASE("ablated fusion paths run end to end") {
  std::mt19937_64 rng(6);
  const auto p = ver::FusionParams::init(8, 2, 8);
  const auto ep = enc::EncoderParams::init(tiny_encoder(), 9);
  const auto claim = random_unit(rng, 8, 1);
  const std::vector<enc::EncodedUnit> ev{random_unit(rng, 8, 2), random_unit(rng, 8, 1)};
  const std::vector<std::string> labels{"SUPPORT", "REFUTE"};
  for (bool tf : {true, false}) {
    for (bool ef : {true, false}) {
      ver::FusionOptions o;
      o.token_fusion = tf;
      o.evidence_fusion = ef;
      const auto v = ver::predict(claim, ev, p, ep, o, labels);
      CHECK(std::abs(v.probs[0] + v.probs[1] - 1.0) <= 1e-12);
    }
  }
  ver::FusionOptions none;
  none.token_fusion = false;
  none.evidence_fusion = false;
  const auto direct = ver::classify(claim.text_embedding, claim.text_embedding, p, labels);
  CHECK(ver::predict(claim, ev, p, ep, none, labels).probs == direct.probs);
  CHECK_THROWS_AS(ver::predict(claim, {}, p, ep, {}, labels), Error);
}

TEST_CASE("fusion parameter accounting") {
  for (int d : {8, 12}) {
    const auto p = ver::FusionParams::init(d, 3, 1);
    const auto b = ver::breakdown(p);
    CHECK(b.core == static_cast<std::size_t>(8 * d * d));
    CHECK(b.total() == p.count());
  }
}
