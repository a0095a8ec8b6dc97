#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <vector>

#include "fedsim/error_feedback.hpp"
#include "fedsim/rng.hpp"

using fedsim::CompressorKind;
using fedsim::compress_with_ef;
using fedsim::ErrorBuffer;
using fedsim::SparseUpdate;

TEST_CASE("worked example: residual keeps what the threshold dropped") {
  ErrorBuffer buf(2);
  const std::vector<double> delta{0.5, -0.2};
  const SparseUpdate msg =
      compress_with_ef(buf, delta, CompressorKind::hard_threshold(0.3));
  CHECK(msg.indices == std::vector<std::uint32_t>{0});
  CHECK(msg.values == std::vector<double>{0.5});
  CHECK(buf.e == std::vector<double>{0.0, -0.2});

  // Next round the buffered residual pushes the coordinate over the line.
  const std::vector<double> delta2{0.0, -0.15};
  const SparseUpdate msg2 =
      compress_with_ef(buf, delta2, CompressorKind::hard_threshold(0.3));
  CHECK(msg2.indices == std::vector<std::uint32_t>{1});
  CHECK(msg2.values == std::vector<double>{-0.35});
  CHECK(buf.e == std::vector<double>{0.0, 0.0});
}

TEST_CASE("zero threshold flushes the buffer in one step") {
  ErrorBuffer buf(3);
  buf.e = {0.4, -0.1, 0.0};
  const std::vector<double> delta{0.1, 0.0, 0.2};
  const SparseUpdate msg =
      compress_with_ef(buf, delta, CompressorKind::hard_threshold(0.0));
  const std::vector<double> dense = fedsim::decompress(msg);
  CHECK(dense == std::vector<double>{0.5, -0.1, 0.2});
  CHECK(buf.e == std::vector<double>{0.0, 0.0, 0.0});

  // Drain: with nothing buffered and nothing new, the buffer stays empty.
  const std::vector<double> zero{0.0, 0.0, 0.0};
  compress_with_ef(buf, zero, CompressorKind::hard_threshold(0.0));
  CHECK(buf.e == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("dimension mismatch is rejected") {
  ErrorBuffer buf(2);
  const std::vector<double> delta{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(compress_with_ef(buf, delta, CompressorKind::identity()),
                  std::invalid_argument);
}

TEST_CASE("freeze is the identity and idempotent") {
  ErrorBuffer buf(2);
  buf.e = {0.1, -0.7};
  CHECK(fedsim::freeze(buf) == buf);
  CHECK(fedsim::freeze(fedsim::freeze(buf)) == fedsim::freeze(buf));
  ErrorBuffer zero(4);
  CHECK(fedsim::freeze(zero) == zero);
}

TEST_CASE("conservation is exact and the residual is threshold-bounded") {
  fedsim::Rng rng(6021);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng.below(48);
    ErrorBuffer buf(d);
    std::vector<double> delta(d);
    for (std::size_t i = 0; i < d; ++i) {
      buf.e[i] = 2.0 * rng.normal();
      delta[i] = 2.0 * rng.normal();
    }
    const double lambda = rng.uniform() * 3.0;

    const std::vector<double> e_before = buf.e;
    const SparseUpdate msg =
        compress_with_ef(buf, delta, CompressorKind::hard_threshold(lambda));

    const std::vector<double> dense = fedsim::decompress(msg);
    for (std::size_t i = 0; i < d; ++i) {
      // Bit-for-bit: transmitted values are exact, dropped ones stay whole.
      CHECK(dense[i] + buf.e[i] == e_before[i] + delta[i]);
      CHECK(std::fabs(buf.e[i]) <= lambda);
    }
  }
}

TEST_CASE("conservation through top-k and the quantizer") {
  fedsim::Rng rng(733);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 4 + rng.below(32);
    ErrorBuffer buf(d);
    std::vector<double> delta(d);
    for (std::size_t i = 0; i < d; ++i) {
      buf.e[i] = rng.normal();
      delta[i] = rng.normal();
    }
    const std::vector<double> e_before = buf.e;

    CompressorKind comp = CompressorKind::topk(0.25);
    comp.quantize_after = (trial % 2 == 1);
    const SparseUpdate msg = compress_with_ef(buf, delta, comp);

    const std::vector<double> dense = fedsim::decompress(msg);
    for (std::size_t i = 0; i < d; ++i) {
      const double want = e_before[i] + delta[i];
      if (comp.quantize_after) {
        CHECK(dense[i] + buf.e[i] == doctest::Approx(want).epsilon(1e-12));
      } else {
        CHECK(dense[i] + buf.e[i] == want);
      }
    }
  }
}

TEST_CASE("buffer norm stays within the absolute-compressor bound") {
  fedsim::Rng rng(9443);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 8 + rng.below(64);
    ErrorBuffer buf(d);
    std::vector<double> delta(d);
    const double lambda = 0.1 + rng.uniform();
    double norm2 = 0.0;
    for (int round = 0; round < 5; ++round) {
      for (std::size_t i = 0; i < d; ++i) delta[i] = rng.normal();
      compress_with_ef(buf, delta, CompressorKind::hard_threshold(lambda));
      norm2 = 0.0;
      for (double v : buf.e) norm2 += v * v;
      CHECK(norm2 <= static_cast<double>(d) * lambda * lambda + 1e-12);
    }
  }
}
