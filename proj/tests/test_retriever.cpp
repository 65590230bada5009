#include <doctest.h>

#include <filesystem>

#include "mever/error.hpp"
#include "mever/retriever.hpp"
#include "support.hpp"

using namespace mever;
using namespace mever::testing;
namespace fs = std::filesystem;

namespace {

double contrastive_oracle(const Mat& c, const Mat& e) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    std::vector<double> s;
    for (Eigen::Index j = 0; j < e.rows(); ++j) {
      double dot = 0.0;
      for (Eigen::Index k = 0; k < c.cols(); ++k) dot += c(i, k) * e(j, k);
      s.push_back(dot);
    }
    total -= std::log(softmax(s)[static_cast<std::size_t>(i)]);
  }
  return total;
}

}  // namespace

TEST_CASE("score is the dot product") {
  RowVec a = RowVec::Zero(4), b = RowVec::Zero(4);
  a(0) = 1.0;
  b(1) = 1.0;
  CHECK(retrieval::score(a, b) == 0.0);
  CHECK(retrieval::score(a, a) == 1.0);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const RowVec x = random_mat(rng, 1, 8), y = random_mat(rng, 1, 8);
    double dot = 0.0;
    for (int k = 0; k < 8; ++k) dot += x(k) * y(k);
    CHECK(std::abs(retrieval::score(x, y) - dot) <= 1e-12);
    CHECK(retrieval::score(x, y) == retrieval::score(y, x));
  }
  CHECK_THROWS_AS(retrieval::score(RowVec::Zero(3), RowVec::Zero(4)), Error);
}

TEST_CASE("contrastive loss matches the softmax oracle") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const Mat c = random_mat(rng, 3, 8), e = random_mat(rng, 3, 8);
    CHECK(std::abs(retrieval::contrastive_loss(c, e) - contrastive_oracle(c, e)) <= 1e-9);
  }
  const Mat same = Mat::Constant(4, 8, 0.3);
  CHECK(std::abs(retrieval::contrastive_loss(same, same) - 4.0 * std::log(4.0)) <= 1e-9);
  const Mat big = 40.0 * Mat::Identity(3, 3);
  CHECK(retrieval::contrastive_loss(big, big) < 1e-9);
  CHECK_THROWS_AS(retrieval::contrastive_loss(Mat::Ones(1, 4), Mat::Ones(1, 4)), Error);
  CHECK(std::isfinite(retrieval::contrastive_loss(1e3 * random_mat(rng, 3, 8), random_mat(rng, 3, 8))));
}

TEST_CASE("index building, ranking and persistence") {
  const auto cfg = tiny_encoder();
  const data::Dataset d = data::generate_synthetic(tiny_corpus_options());
  const Vocabulary vocab = train::build_vocabulary(d);
  auto params = enc::EncoderParams::init(cfg, 1);
  const auto idx = retrieval::build_index(d, vocab, params, cfg);
  REQUIRE(idx.size() == d.evidence.size());
  const auto again = retrieval::build_index(d, vocab, params, cfg);
  CHECK(idx.embeddings() == again.embeddings());
  CHECK(idx.params_fingerprint() == retrieval::fingerprint(params));

  const auto& e0 = d.evidence[0];
  const auto u = enc::encode(e0.text, enc::resolve_images(d, e0.image_ids), vocab, params, cfg);
  CHECK(idx.embeddings().row(0) == u.text_embedding);

  SUBCASE("fingerprint changes with any parameter") {
    std::vector<Parameter*> ps;
    collect_params(params, ps);
    for (std::size_t i = 0; i < ps.size(); i += 7) {
      enc::EncoderParams copy = params;
      std::vector<Parameter*> cs;
      collect_params(copy, cs);
      cs[i]->value(0, 0) += 1e-9;
      CHECK(retrieval::fingerprint(copy) != retrieval::fingerprint(params));
    }
  }

  SUBCASE("round trip through the index file") {
    const fs::path p = fs::temp_directory_path() / "mever_index_test.bin";
    idx.save(p);
    const auto back = retrieval::RetrievalIndex::load(p);
    CHECK(back.evidence_ids() == idx.evidence_ids());
    CHECK(back.params_fingerprint() == idx.params_fingerprint());
    CHECK(max_abs_diff(back.embeddings(), idx.embeddings()) <= 1e-6);
    fs::remove(p);
  }

  SUBCASE("single evidence corpus") {
    data::Dataset one = d;
    one.evidence.resize(1);
    const auto small = retrieval::build_index(one, vocab, params, cfg);
    CHECK(small.size() == 1);
    const auto r = retrieval::retrieve(d.claims[0], one, vocab, small, params, cfg, 5);
    REQUIRE(r.entries.size() == 1);
    CHECK(r.entries[0].first == one.evidence[0].id);
  }

  data::Dataset none = d;
  none.evidence.clear();
  CHECK_THROWS_AS(retrieval::build_index(none, vocab, params, cfg), Error);
  CHECK_THROWS_AS(retrieval::rank("c", RowVec::Zero(cfg.d), retrieval::RetrievalIndex{}, 3), Error);
}

TEST_CASE("rank matches a full-sort oracle with id tie-break") {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 30; ++t) {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) ids.push_back("ev" + std::to_string(100 + (i * 7) % 20));
    Mat emb = random_mat(rng, 20, 8);
    // Force ties: copy a few rows.
    emb.row(3) = emb.row(11);
    emb.row(5) = emb.row(11);
    const retrieval::RetrievalIndex idx(ids, emb, 0);
    const RowVec q = random_mat(rng, 1, 8);
    std::vector<std::pair<double, std::string>> all;
    for (int i = 0; i < 20; ++i) all.emplace_back(retrieval::score(q, emb.row(i)), ids[static_cast<std::size_t>(i)]);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const auto r = retrieval::rank("c", q, idx, 5);
    REQUIRE(r.entries.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(r.entries[i].first == all[i].second);
      CHECK(std::abs(r.entries[i].second - all[i].first) <= 1e-12);
    }
  }
}
