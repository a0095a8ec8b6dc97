#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedsim/compressors.hpp"
#include "fedsim/rng.hpp"

using fedsim::compress_hard_threshold;
using fedsim::compress_topk;
using fedsim::decompress;
using fedsim::SparseUpdate;

namespace {

std::vector<double> random_vector(fedsim::Rng& rng, std::size_t d, double scale = 1.0) {
  std::vector<double> x(d);
  for (double& v : x) v = scale * rng.normal();
  return x;
}

double squared_error(const std::vector<double>& x, const SparseUpdate& u) {
  const std::vector<double> dense = decompress(u);
  double err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - dense[i];
    err += diff * diff;
  }
  return err;
}

}  // namespace

TEST_CASE("hard threshold keeps strictly-above coordinates with exact values") {
  const std::vector<double> x{0.5, -0.2, 1.0};
  const SparseUpdate u = compress_hard_threshold(x, 0.3);
  CHECK(u.indices == std::vector<std::uint32_t>{0, 2});
  CHECK(u.values == std::vector<double>{0.5, 1.0});

  // Boundary ties are dropped.
  const SparseUpdate tie = compress_hard_threshold(std::vector<double>{0.3, -0.3}, 0.3);
  CHECK(tie.nnz() == 0);

  // lambda = 0 transmits every nonzero coordinate and round-trips exactly.
  fedsim::Rng rng(7);
  const std::vector<double> y = random_vector(rng, 64);
  const SparseUpdate full = compress_hard_threshold(y, 0.0);
  CHECK(decompress(full) == y);
  CHECK(fedsim::compression_ratio(full) == 1.0);
}

TEST_CASE("hard threshold satisfies the absolute-compressor bound") {
  fedsim::Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng.below(40);
    const std::vector<double> x = random_vector(rng, d, 1.0 + rng.uniform() * 3.0);
    const double lambda = rng.uniform() * 2.0;
    const SparseUpdate u = compress_hard_threshold(x, lambda);
    CHECK(squared_error(x, u) <= static_cast<double>(d) * lambda * lambda + 1e-12);
    // Per-coordinate residual never exceeds lambda.
    const std::vector<double> dense = decompress(u);
    for (std::size_t i = 0; i < d; ++i) {
      CHECK(std::fabs(x[i] - dense[i]) <= lambda);
    }
  }
}

TEST_CASE("top-k keeps the largest magnitudes with deterministic tie-breaks") {
  {
    const SparseUpdate u = compress_topk(std::vector<double>{0.5, -0.2, 1.0}, 1.0 / 3.0);
    CHECK(u.indices == std::vector<std::uint32_t>{2});
    CHECK(u.values == std::vector<double>{1.0});
  }
  {
    // Tie between |-2.0| and |2.0| resolves toward the lower index.
    const SparseUpdate u = compress_topk(std::vector<double>{-2.0, 2.0, 1.0}, 2.0 / 3.0);
    CHECK(u.indices == std::vector<std::uint32_t>{0, 1});
  }
  {
    std::vector<double> x(10, 0.0);
    x[3] = 1.0;
    const SparseUpdate u = compress_topk(x, 0.25);
    CHECK(u.nnz() == 2);  // floor(0.25 * 10)
  }
  {
    // k*d < 1 still transmits one coordinate.
    const SparseUpdate u = compress_topk(std::vector<double>{3.0, 4.0, 5.0}, 0.01);
    CHECK(u.indices == std::vector<std::uint32_t>{2});
  }
}

TEST_CASE("top-k is subset-optimal (exhaustive check for small d)") {
  fedsim::Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 4 + rng.below(9);  // up to 12
    const std::vector<double> x = random_vector(rng, d);
    const std::size_t m = 1 + rng.below(d);
    const SparseUpdate best = compress_topk(x, static_cast<double>(m) / static_cast<double>(d));
    REQUIRE(best.nnz() == m);
    const double best_err = squared_error(x, best);

    for (std::uint32_t mask = 0; mask < (1u << d); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != m) continue;
      SparseUpdate candidate;
      candidate.dim = static_cast<std::uint32_t>(d);
      for (std::size_t i = 0; i < d; ++i) {
        if (mask & (1u << i)) {
          candidate.indices.push_back(static_cast<std::uint32_t>(i));
          candidate.values.push_back(x[i]);
        }
      }
      CHECK(best_err <= squared_error(x, candidate) + 1e-12);
    }
  }
}

TEST_CASE("hard threshold agrees with the matching top-k on distinct magnitudes") {
  fedsim::Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 3 + rng.below(30);
    std::vector<double> x;
    // Distinct magnitudes by construction.
    for (std::size_t i = 0; i < d; ++i) {
      const double mag = (static_cast<double>(i) + 1.0) * (0.5 + rng.uniform());
      x.push_back(rng.uniform() < 0.5 ? -mag : mag);
    }
    for (std::size_t i = d; i-- > 1;) {
      std::swap(x[i], x[rng.below(i + 1)]);
    }
    const double lambda = rng.uniform() * static_cast<double>(d);
    const SparseUpdate ht = compress_hard_threshold(x, lambda);
    if (ht.nnz() == 0) continue;  // top-k cannot express an empty message
    const double k = static_cast<double>(ht.nnz()) / static_cast<double>(d);
    CHECK(ht == compress_topk(x, k));
  }
}

TEST_CASE("ternary quantizer preserves L1 mass and signs") {
  {
    SparseUpdate u;
    u.dim = 4;
    u.indices = {1, 3};
    u.values = {0.5, -0.3};
    const SparseUpdate q = fedsim::quantize_ternary(u);
    CHECK(q.ternary_magnitude == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(q.values == std::vector<double>{0.4, -0.4});
    CHECK(q.encoding == fedsim::SparseEncoding::kTernary);
  }
  {
    SparseUpdate empty;
    empty.dim = 8;
    const SparseUpdate q = fedsim::quantize_ternary(empty);
    CHECK(q.nnz() == 0);
    CHECK(q.ternary_magnitude == 0.0);
  }
  {
    SparseUpdate one;
    one.dim = 2;
    one.indices = {0};
    one.values = {-1.0};
    const SparseUpdate q = fedsim::quantize_ternary(one);
    CHECK(q.values == std::vector<double>{-1.0});
  }

  fedsim::Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<double> x = random_vector(rng, 16 + rng.below(32));
    const SparseUpdate u = compress_hard_threshold(x, 0.5);
    const SparseUpdate q = fedsim::quantize_ternary(u);
    double in_mass = 0.0, out_mass = 0.0;
    for (double v : u.values) in_mass += std::fabs(v);
    for (double v : q.values) out_mass += std::fabs(v);
    CHECK(out_mass == doctest::Approx(in_mass).epsilon(1e-9));
    for (std::size_t j = 0; j < u.nnz(); ++j) {
      CHECK(std::signbit(q.values[j]) == std::signbit(u.values[j]));
    }
  }
}

TEST_CASE("decompress scatters into a dense vector") {
  SparseUpdate u;
  u.dim = 3;
  u.indices = {0, 2};
  u.values = {0.5, 1.0};
  CHECK(decompress(u) == std::vector<double>{0.5, 0.0, 1.0});

  SparseUpdate empty;
  empty.dim = 4;
  CHECK(decompress(empty) == std::vector<double>(4, 0.0));
}

TEST_CASE("encoded sizes follow the wire format") {
  SparseUpdate u;
  u.dim = 100;
  u.indices = {1, 5};
  u.values = {1.0, -2.0};
  CHECK(fedsim::encoded_size_bytes(u) == 24);

  SparseUpdate empty;
  empty.dim = 100;
  CHECK(fedsim::encoded_size_bytes(empty) == 8);

  SparseUpdate t;
  t.dim = 100;
  for (std::uint32_t i = 0; i < 8; ++i) {
    t.indices.push_back(i);
    t.values.push_back(1.0);
  }
  t.encoding = fedsim::SparseEncoding::kTernary;
  t.ternary_magnitude = 1.0;
  CHECK(fedsim::encoded_size_bytes(t) == 45);
}

TEST_CASE("compression ratio") {
  SparseUpdate u;
  u.dim = 1000;
  u.indices = {77};
  u.values = {1.0};
  CHECK(fedsim::compression_ratio(u) == doctest::Approx(0.001));
  SparseUpdate empty;
  empty.dim = 10;
  CHECK(fedsim::compression_ratio(empty) == 0.0);
}

TEST_CASE("wire round-trip matches the declared size and layout") {
  fedsim::Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<double> x = random_vector(rng, 8 + rng.below(40));
    SparseUpdate u = compress_hard_threshold(x, 0.4);
    if (trial % 2 == 1) u = fedsim::quantize_ternary(u);

    const std::vector<std::uint8_t> bytes = fedsim::serialize(u);
    CHECK(bytes.size() == fedsim::encoded_size_bytes(u));

    const SparseUpdate back = fedsim::deserialize(bytes);
    CHECK(back.dim == u.dim);
    CHECK(back.indices == u.indices);
    CHECK(back.encoding == u.encoding);
    // Values ride the wire as 32-bit floats.
    for (std::size_t j = 0; j < u.nnz(); ++j) {
      CHECK(back.values[j] == doctest::Approx(u.values[j]).epsilon(1e-6));
    }
  }
}

TEST_CASE("identical inputs produce identical messages") {
  fedsim::Rng rng(51);
  const std::vector<double> x = random_vector(rng, 128);
  CHECK(compress_hard_threshold(x, 0.3) == compress_hard_threshold(x, 0.3));
  CHECK(compress_topk(x, 0.1) == compress_topk(x, 0.1));
  CHECK(fedsim::serialize(compress_topk(x, 0.1)) == fedsim::serialize(compress_topk(x, 0.1)));
}
