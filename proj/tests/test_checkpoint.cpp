#include <doctest.h>

#include <filesystem>

#include "mever/checkpoint.hpp"
#include "mever/error.hpp"
#include "support.hpp"

using namespace mever;
using namespace mever::testing;
namespace fs = std::filesystem;

namespace {

ckpt::Checkpoint sample(std::mt19937_64& rng) {
  ckpt::Checkpoint c;
  c.meta["config"] = "d=8\nlayers=2\n";
  c.meta["empty"] = "";
  c.groups["a"] = {{"w", random_mat(rng, 3, 4)}, {"b", random_mat(rng, 1, 4)}};
  c.groups["b"] = {{"x", Mat::Zero(0, 0)}};
  c.epoch = 17;
  c.rng_state = "123 456 789";
  c.history["loss"] = {1.5, 1.25, std::numeric_limits<double>::denorm_min()};
  return c;
}

ckpt::Checkpoint expect_error(const std::string& bytes, ErrorKind kind) {
  try {
    ckpt::deserialize(bytes);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == kind);
  }
  return {};
}

}  // namespace

TEST_CASE("checkpoint bytes round trip exactly") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const ckpt::Checkpoint c = sample(rng);
    const std::string bytes = ckpt::serialize(c);
    const ckpt::Checkpoint back = ckpt::deserialize(bytes);
    CHECK(back == c);
    CHECK(ckpt::serialize(back) == bytes);
  }
  const fs::path p = fs::temp_directory_path() / "mever_ckpt_test.bin";
  const ckpt::Checkpoint c = sample(rng);
  ckpt::save_checkpoint(c, p);
  CHECK(ckpt::load_checkpoint(p) == c);
  fs::remove(p);
  CHECK_THROWS_AS(ckpt::load_checkpoint(p), Error);
}

TEST_CASE("damaged checkpoints are rejected") {
  std::mt19937_64 rng(2);
  const std::string bytes = ckpt::serialize(sample(rng));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    expect_error(bytes.substr(0, cut), ErrorKind::CorruptFile);
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 0x10);
  expect_error(flipped, ErrorKind::CorruptFile);
  std::string magic = bytes;
  magic[0] = 'X';
  expect_error(magic, ErrorKind::CorruptFile);

  ckpt::Checkpoint future = sample(rng);
  future.version = ckpt::kVersion + 1;
  expect_error(ckpt::serialize(future), ErrorKind::VersionMismatch);
}

TEST_CASE("parameter import checks names and shapes") {
  auto a = enc::EncoderParams::init(tiny_encoder(), 1);
  auto b = enc::EncoderParams::init(tiny_encoder(), 2);
  ckpt::import_params(b, ckpt::export_params(a));
  CHECK(ckpt::export_params(b) == ckpt::export_params(a));

  auto g = ckpt::export_params(a);
  g[0].value = Mat::Zero(g[0].value.rows() + 1, g[0].value.cols());
  CHECK_THROWS_AS(ckpt::import_params(b, g), Error);
  g = ckpt::export_params(a);
  g[1].name = "renamed";
  CHECK_THROWS_AS(ckpt::import_params(b, g), Error);
  g = ckpt::export_params(a);
  g.pop_back();
  CHECK_THROWS_AS(ckpt::import_params(b, g), Error);

  std::mt19937_64 rng(3);
  CHECK_THROWS_AS(sample(rng).group("missing"), Error);
  CHECK_THROWS_AS(sample(rng).meta_value("missing"), Error);
}
