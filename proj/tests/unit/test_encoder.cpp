#include <doctest.h>

#include <cmath>

#include "kp/encoder.hpp"
#include "kp/error.hpp"

using namespace kp;

namespace {

Embedding unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  for (double& x : v) x /= std::sqrt(n);
  return {v};
}

}  // namespace

TEST_CASE("toy text embeddings") {
  ToyEncoder enc;
  CHECK(enc.id() == "toy-fnv1a-d256");
  std::vector<std::string> texts{"hold the ball", "hold the ball", "", "a b", "b a"};
  auto e = enc.embed_text(texts);
  CHECK(e[0] == e[1]);
  CHECK(e[2].is_zero());
  CHECK(e[3] == e[4]);
  CHECK(e[0].norm() == doctest::Approx(1.0).epsilon(1e-12));

  // direct hash construction
  std::vector<double> want(256, 0.0);
  want[fnv1a64("a") % 256] += 1.0;
  want[fnv1a64("b") % 256] += 1.0;
  CHECK(e[3] == unit(want));
}

TEST_CASE("token bags hash like text") {
  ToyEncoder enc;
  std::vector<FrameContent> frames{TokenBag{{"ball"}}, TokenBag{{"BALL"}}, TokenBag{}};
  auto f = enc.embed_frame(frames);
  std::vector<std::string> texts{"ball"};
  auto t = enc.embed_text(texts);
  CHECK(cosine(f[0], t[0]) == 1.0);
  CHECK(f[1] == f[0]);
  CHECK(f[2].is_zero());
  CHECK(cosine(f[2], t[0]) == 0.0);

  REQUIRE(enc.bucket("cup") != enc.bucket("door"));
  std::vector<FrameContent> other{TokenBag{{"door"}}};
  std::vector<std::string> cup{"cup"};
  CHECK(cosine(enc.embed_frame(other)[0], enc.embed_text(cup)[0]) == 0.0);

  std::vector<FrameContent> img{ImageRef{"bytes"}};
  CHECK_THROWS_AS(enc.embed_frame(img), InvalidInput);
}

TEST_CASE("match scales cosines by the temperature") {
  std::vector<Embedding> frames{unit({1, 0, 0}), unit({1, 1, 0})};
  std::vector<Embedding> texts{unit({1, 0, 0}), unit({0, 0, 1}), unit({0, 1, 1})};
  auto s = match(frames, texts, MatchConfig{});
  REQUIRE(s.rows == 2);
  REQUIRE(s.cols == 3);
  CHECK(s.at(0, 0) == doctest::Approx(100.0));
  CHECK(s.at(0, 1) == 0.0f);
  const double oracle[2][3] = {{1.0, 0.0, 0.0}, {1 / std::sqrt(2.0), 0.0, 0.5}};
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(s.at(i, j) - 100.0 * oracle[i][j]) <= 1e-6 * 100.0);
  }
  auto half = match(frames, texts, MatchConfig(0.5));
  CHECK(half.at(0, 0) == 2.0f);
  CHECK_THROWS_AS(MatchConfig(0.0), InvalidInput);
  std::vector<Embedding> wrong{unit({1, 0})};
  CHECK_THROWS_AS(match(frames, wrong, MatchConfig{}), ShapeError);
}

TEST_CASE("permuting texts permutes columns") {
  ToyEncoder enc;
  std::vector<std::string> a{"pick up cup", "kick ball", "open door"};
  std::vector<std::string> b{"open door", "pick up cup", "kick ball"};
  std::vector<FrameContent> frames{TokenBag{{"pick", "cup"}}, TokenBag{{"door", "ball"}}};
  auto fe = enc.embed_frame(frames);
  auto sa = match(fe, enc.embed_text(a), MatchConfig{});
  auto sb = match(fe, enc.embed_text(b), MatchConfig{});
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(sa.at(i, 0) == sb.at(i, 1));
    CHECK(sa.at(i, 1) == sb.at(i, 2));
    CHECK(sa.at(i, 2) == sb.at(i, 0));
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(sa.at(i, j) <= 100.0f);
      CHECK(sa.at(i, j) >= -100.0f);
    }
  }
}
