#include <doctest.h>

#include "mever/error.hpp"
#include "mever/explainer.hpp"
#include "support.hpp"

using namespace mever;
using namespace mever::testing;

namespace {

double nll_oracle(const Mat& logits, const std::vector<int>& gold) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index c = 0; c < logits.cols(); ++c) row[static_cast<std::size_t>(c)] = logits(r, c);
    total -= std::log(std::max(softmax(row)[static_cast<std::size_t>(gold[static_cast<std::size_t>(r)])], 1e-12));
  }
  return total;
}

double consistency_oracle(const std::vector<double>& p, const std::vector<double>& q, int gold) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double lp = std::log(std::max(p[i], 1e-12)), lq = std::log(std::max(q[i], 1e-12));
    s += p[i] * (lp - lq) + q[i] * (lq - lp);
  }
  return s - std::log(std::max(q[static_cast<std::size_t>(gold)], 1e-12));
}

RowVec to_row(const std::vector<double>& v) {
  RowVec r(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) r(static_cast<Eigen::Index>(i)) = v[i];
  return r;
}

}  // namespace

TEST_CASE("fusion-in-decoder input layout") {
  const std::vector<int> claim{10, 11, 12}, evidence{20, 21, 22, 23};
  CHECK(expl::fid_token_ids(claim, evidence, 40) == std::vector<int>{10, 11, 12, Vocabulary::kSep, 20, 21, 22, 23});
  CHECK(expl::fid_token_ids(claim, evidence, 6) == std::vector<int>{10, 11, 12, Vocabulary::kSep, 20, 21});
  CHECK(expl::fid_token_ids(claim, evidence, 4) == std::vector<int>{10, 11, 12, Vocabulary::kSep});
  CHECK_THROWS_AS(expl::fid_token_ids(claim, evidence, 3), Error);

  const auto cfg = tiny_seq2seq();
  const auto sp = expl::Seq2SeqParams::init(cfg, 3, 1);
  const auto ep = enc::EncoderParams::init(tiny_encoder(), 2);
  std::mt19937_64 rng(1);
  ad::Tape tape(false);
  const Mat ci = random_mat(rng, 1, 8), e1 = random_mat(rng, 1, 8), e2 = random_mat(rng, 1, 8);
  const Var in = expl::build_fid_input(tape, claim, evidence, {tape.constant(ci)}, {tape.constant(e1), tape.constant(e2)},
                                       sp, cfg, ep);
  REQUIRE(in.rows() == 3 + 8);
  CHECK(max_abs_diff(in.value().row(0), matmul_loops(ci, ep.w_img.value)) <= 1e-12);
  CHECK(max_abs_diff(in.value().row(2), matmul_loops(e2, ep.w_img.value)) <= 1e-12);
  CHECK(max_abs_diff(in.value().row(3), sp.embedding.value.row(10) + sp.positional.value.row(0)) <= 1e-12);
  CHECK(max_abs_diff(in.value().row(6), sp.embedding.value.row(Vocabulary::kSep) + sp.positional.value.row(3)) <= 1e-12);
  const Var plain = expl::build_fid_input(tape, claim, evidence, {}, {}, sp, cfg, ep);
  CHECK(plain.rows() == 8);
}

TEST_CASE("fusion-in-decoder mean") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const Mat a = random_mat(rng, 5, 8), b = random_mat(rng, 3, 8), c = random_mat(rng, 4, 8);
    CHECK(expl::fuse_in_decoder({a}) == a);
    CHECK(max_abs_diff(expl::fuse_in_decoder({a, a, a}), a) <= 1e-12);
    const Mat f = expl::fuse_in_decoder({a, b, c});
    CHECK(max_abs_diff(expl::fuse_in_decoder({c, a, b}), f) <= 1e-12);
    REQUIRE(f.rows() == 5);
    for (Eigen::Index r = 0; r < 5; ++r) {
      RowVec want = a.row(r);
      int n = 1;
      if (r < 3) {
        want += b.row(r);
        ++n;
      }
      if (r < 4) {
        want += c.row(r);
        ++n;
      }
      CHECK(max_abs_diff(f.row(r), want / n) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(expl::fuse_in_decoder(std::vector<Mat>{}), Error);
  CHECK_THROWS_AS(expl::fuse_in_decoder({Mat::Zero(2, 8), Mat::Zero(2, 7)}), Error);
}

TEST_CASE("generation loss") {
  CHECK(expl::generation_loss(Mat::Zero(4, 50), {1, 2, 3, 4}) == doctest::Approx(4.0 * std::log(50.0)));
  Mat sharp = Mat::Constant(2, 5, -100.0);
  sharp(0, 2) = 100.0;
  sharp(1, 4) = 100.0;
  CHECK(expl::generation_loss(sharp, {2, 4}) <= 1e-12);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const int n = random_int(rng, 1, 6);
    const Mat l = random_mat(rng, n, 12, 4.0);
    std::vector<int> gold;
    for (int i = 0; i < n; ++i) gold.push_back(random_int(rng, 0, 11));
    CHECK(std::abs(expl::generation_loss(l, gold) - nll_oracle(l, gold)) <= 1e-9);
  }
  CHECK_THROWS_AS(expl::generation_loss(Mat::Zero(0, 5), {}), Error);
}

TEST_CASE("pooled logits") {
  const RowVec a = (RowVec(3) << 1.0, 2.0, 3.0).finished(), b = (RowVec(3) << 3.0, 0.0, -1.0).finished();
  CHECK(expl::pool_logits({a}) == a);
  CHECK(max_abs_diff(expl::pool_logits({a, b}), (RowVec(3) << 2.0, 1.0, 1.0).finished()) <= 1e-15);
  CHECK_THROWS_AS(expl::pool_logits(std::vector<RowVec>{}), Error);
}

TEST_CASE("consistency loss") {
  for (int g = 0; g < 3; ++g) {
    RowVec one = RowVec::Zero(3);
    one(g) = 1.0;
    CHECK(std::abs(expl::consistency_loss(one, one, g)) <= 1e-12);
  }
  const RowVec u = RowVec::Constant(3, 1.0 / 3.0);
  CHECK(expl::consistency_loss(u, u, 1) == doctest::Approx(std::log(3.0)));
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> rp, rq;
    for (int i = 0; i < 3; ++i) {
      rp.push_back(random_mat(rng, 1, 1, 3.0)(0, 0));
      rq.push_back(random_mat(rng, 1, 1, 3.0)(0, 0));
    }
    const auto p = softmax(rp), q = softmax(rq);
    const int g = random_int(rng, 0, 2);
    CHECK(std::abs(expl::consistency_loss(to_row(p), to_row(q), g) - consistency_oracle(p, q, g)) <= 1e-9);
    CHECK(expl::consistency_loss(to_row(p), to_row(q), g) >= -std::log(q[static_cast<std::size_t>(g)]) - 1e-12);
  }
  CHECK_THROWS_AS(expl::consistency_loss(u, u, 3), Error);
  CHECK_THROWS_AS(expl::consistency_loss(u, RowVec::Constant(2, 0.5), 0), Error);
}

TEST_CASE("decoder is causal and teacher forcing lines up targets") {
  const auto cfg = tiny_seq2seq();
  const auto sp = expl::Seq2SeqParams::init(cfg, 2, 5);
  std::mt19937_64 rng(5);
  const Mat fused = random_mat(rng, 6, 8);
  const std::vector<int> ids{Vocabulary::kBos, 7, 9, 11, 13};
  ad::Tape tape(false);
  const Mat full = expl::decoder_logits(tape, tape.constant(fused), ids, sp, cfg).value();
  for (std::size_t n = 1; n <= ids.size(); ++n) {
    const std::vector<int> prefix(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
    const Mat part = expl::decoder_logits(tape, tape.constant(fused), prefix, sp, cfg).value();
    CHECK(max_abs_diff(part, full.topRows(static_cast<Eigen::Index>(n))) <= 1e-10);
  }
  const Mat e = sp.embedding.value;
  CHECK(full.cols() == e.rows());

  const std::vector<int> expl_ids{7, 9, 11, 13};
  const auto tf = expl::teacher_force(tape, tape.constant(fused), expl_ids, sp, cfg);
  CHECK(max_abs_diff(tf.logits.value(), full) <= 1e-12);
  CHECK(std::abs(tf.loss.scalar() - nll_oracle(full, {7, 9, 11, 13, Vocabulary::kEos})) <= 1e-9);
  CHECK(max_abs_diff(tf.pooled.value(), full.topRows(4).colwise().mean()) <= 1e-12);
  CHECK_THROWS_AS(expl::teacher_force(tape, tape.constant(fused), {}, sp, cfg), Error);
  CHECK_THROWS_AS(expl::decoder_logits(tape, tape.constant(fused), {}, sp, cfg), Error);
}

TEST_CASE("greedy generation follows a step-by-step argmax oracle") {
  const auto cfg = tiny_seq2seq();
  const Vocabulary vocab = Vocabulary::synthetic(cfg.vocab_size);
  std::mt19937_64 rng(6);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sp = expl::Seq2SeqParams::init(cfg, 2, seed);
    const Mat fused = random_mat(rng, 5, 8);
    const auto g = expl::generate(fused, sp, cfg, vocab, cfg.max_len);

    std::vector<int> input{Vocabulary::kBos}, want;
    std::vector<RowVec> steps;
    RowVec eos_row;
    for (int step = 0; step < cfg.max_len; ++step) {
      ad::Tape tape(false);
      const Mat l = expl::decoder_logits(tape, tape.constant(fused), input, sp, cfg).value();
      const RowVec last = l.row(l.rows() - 1);
      int best = 0;
      for (Eigen::Index i = 0; i < last.size(); ++i) {
        if (last(i) > last(best)) best = static_cast<int>(i);
      }
      if (best == Vocabulary::kEos) {
        eos_row = last;
        break;
      }
      want.push_back(best);
      steps.push_back(last);
      input.push_back(best);
    }
    CHECK(g.token_ids == want);
    CHECK(g.text == vocab.decode(want));
    CHECK(max_abs_diff(g.pooled, steps.empty() ? eos_row : expl::pool_logits(steps)) <= 1e-12);
    CHECK(static_cast<int>(g.token_ids.size()) <= cfg.max_len);

    const auto again = expl::generate(fused, sp, cfg, vocab, cfg.max_len);
    CHECK(again.token_ids == g.token_ids);
    CHECK(again.pooled == g.pooled);
    CHECK(expl::generate(fused, sp, cfg, vocab, 1).token_ids.size() <= 1);
  }

  RowVec tie = RowVec::Zero(5);
  tie(2) = 1.0;
  tie(4) = 1.0;
  CHECK(expl::argmax_lowest(tie) == 2);
  CHECK(expl::argmax_lowest(RowVec::Zero(4)) == 0);
  const auto sp = expl::Seq2SeqParams::init(cfg, 2, 0);
  CHECK_THROWS_AS(expl::generate(Mat::Zero(0, 8), sp, cfg, vocab, 4), Error);
  CHECK_THROWS_AS(expl::generate(Mat::Zero(2, 8), sp, cfg, vocab, 0), Error);
}

TEST_CASE("sequence-to-sequence parameter accounting") {
  for (int layers : {1, 2, 3}) {
    auto cfg = tiny_seq2seq();
    cfg.layers = layers;
    cfg.d = 12;
    const auto p = expl::Seq2SeqParams::init(cfg, 3, 1);
    const auto b = expl::breakdown(p);
    const std::size_t d = 12, L = static_cast<std::size_t>(layers);
    CHECK(b.encoder_core + b.decoder_core == 28 * L * d * d);
    CHECK(b.embedding == static_cast<std::size_t>(cfg.vocab_size) * d);
    CHECK(b.positional == static_cast<std::size_t>(cfg.max_positions) * d);
    CHECK(b.total() == p.count());
  }
}
