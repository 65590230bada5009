#include <doctest.h>

#include <array>

#include "mever/error.hpp"
#include "support.hpp"

using namespace mever;
using namespace mever::testing;

namespace {

struct OpFixture {
  std::mt19937_64 rng{11};
  Parameter a{"a", random_mat(rng, 3, 4)};
  Parameter b{"b", random_mat(rng, 4, 3)};
  Parameter row{"row", random_mat(rng, 1, 4)};
  Parameter c{"c", random_mat(rng, 3, 4)};
  std::vector<Parameter*> all() { return {&a, &b, &row, &c}; }
};

// Reduces any matrix to a scalar through a fixed random weighting so every
// output entry influences the checked gradient.
Var weighted_sum(ad::Tape& tape, const Var& x) {
  std::mt19937_64 rng(99);
  return ad::sum(ad::mul(x, tape.constant(random_mat(rng, x.rows(), x.cols()))));
}

void check(const std::vector<Parameter*>& ps, const std::function<Var(ad::Tape&)>& f) {
  const GradCheck g = grad_check(ps, f, 12);
  INFO(g.worst);
  CHECK(g.max_rel_error <= 1e-6);
}

}  // namespace

TEST_CASE("elementwise and matrix ops match finite differences") {
  OpFixture f;
  auto ps = f.all();
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::matmul(t.param(f.a), t.param(f.b))); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::add(t.param(f.a), t.param(f.c))); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::sub(t.param(f.a), t.param(f.c))); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::mul(t.param(f.a), t.param(f.c))); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::scale(t.param(f.a), -2.5)); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::add_row(t.param(f.a), t.param(f.row))); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::transpose(t.param(f.a))); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::sigmoid(t.param(f.a))); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::gelu(t.param(f.a))); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::softmax_rows(t.param(f.a))); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::log_softmax_rows(t.param(f.a))); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::mean_rows(t.param(f.a))); });
  check(ps, [&](ad::Tape& t) {
    return weighted_sum(t, ad::log(ad::add(ad::mul(t.param(f.a), t.param(f.a)), t.constant(Mat::Ones(3, 4)))));
  });
  check(ps, [&](ad::Tape& t) {
    return weighted_sum(t, ad::layer_norm_rows(t.param(f.a), t.param(f.row), ad::scale(t.param(f.row), 0.3)));
  });
}

TEST_CASE("shape ops route gradients to the right entries") {
  OpFixture f;
  auto ps = f.all();
  check(ps, [&](ad::Tape& t) {
    std::vector<Var> parts{t.param(f.a), t.param(f.c), t.param(f.row)};
    return weighted_sum(t, ad::vstack(parts));
  });
  check(ps, [&](ad::Tape& t) {
    std::vector<Var> parts{t.param(f.a), ad::transpose(t.param(f.b))};
    return weighted_sum(t, ad::hstack(parts));
  });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::slice_rows(t.param(f.a), 1, 2)); });
  check(ps, [&](ad::Tape& t) { return weighted_sum(t, ad::slice_cols(t.param(f.a), 1, 2)); });
  check(ps, [&](ad::Tape& t) {
    const std::array<int, 5> ids{2, 0, 2, 1, 2};
    return weighted_sum(t, ad::gather_rows(t.param(f.a), ids));
  });
  check(ps, [&](ad::Tape& t) {
    std::vector<Var> parts{t.param(f.a), t.param(f.c)};
    return weighted_sum(t, ad::mean(parts));
  });
  check(ps, [&](ad::Tape& t) {
    const std::array<int, 3> targets{1, 3, 0};
    return ad::nll_rows(t.param(f.a), targets, 1e-12);
  });
}

TEST_CASE("a parameter read twice accumulates both paths") {
  Parameter p("p", Mat::Constant(1, 1, 3.0));
  ad::Tape tape;
  Var x = tape.param(p);
  Var y = tape.param(p);
  CHECK(x.id() == y.id());
  tape.backward(ad::mul(x, y));
  CHECK(p.grad(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("detach and no-grad tapes stop gradients") {
  Parameter p("p", Mat::Constant(1, 1, 2.0));
  {
    ad::Tape tape;
    Var x = tape.param(p);
    tape.backward(ad::add(ad::mul(x, ad::detach(x)), ad::scale(ad::detach(x), 5.0)));
    CHECK(p.grad(0, 0) == doctest::Approx(2.0));
  }
  p.zero_grad();
  ad::Tape frozen(false);
  Var x = frozen.param(p);
  CHECK(ad::mul(x, x).scalar() == doctest::Approx(4.0));
  CHECK(p.grad(0, 0) == 0.0);
}

TEST_CASE("softmax rows are normalized and stable for large inputs") {
  ad::Tape tape(false);
  Mat m(2, 3);
  m << 1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0;
  const Mat s = ad::softmax_rows(tape.constant(m)).value();
  for (int r = 0; r < 2; ++r) CHECK(s.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.allFinite());
}

TEST_CASE("nll_rows equals the summed negative log softmax") {
  std::mt19937_64 rng(5);
  const Mat logits = random_mat(rng, 4, 6, 3.0);
  const std::array<int, 4> targets{0, 5, 2, 2};
  ad::Tape tape(false);
  double expected = 0.0;
  for (int r = 0; r < 4; ++r) {
    std::vector<double> v;
    for (int c = 0; c < 6; ++c) v.push_back(logits(r, c));
    expected -= std::log(softmax(v)[static_cast<std::size_t>(targets[static_cast<std::size_t>(r)])]);
  }
  CHECK(ad::nll_rows(tape.constant(logits), targets).scalar() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar root") {
  Parameter p("p", Mat::Ones(2, 2));
  ad::Tape tape;
  CHECK_THROWS_AS(tape.backward(tape.param(p)), Error);
}
