#include <gtest/gtest.h>

#include <chrono>
#include <cstring>

#include "prunekit/container.hpp"
#include "prunekit/tensor.hpp"
#include "test_util.hpp"

using namespace prunekit;

namespace {

WeightContainer sample_container() {
  WeightContainer container;
  container.metadata["model"] = "sample";
  container.add_layer("conv1", Tensor({2, 1, 1, 1}, {1.0f, 2.0f}));
  return container;
}

}  // namespace

TEST(Tensor, ValidatesShapeAndDataCoherence) {
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<float>(6, 0.0f)));
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5, 0.0f)), Error);
  EXPECT_THROW(Tensor({}, {}), Error);
  EXPECT_THROW(Tensor({1, 1, 1, 1, 1}, std::vector<float>(1, 0.0f)), Error);
  EXPECT_THROW(Tensor({2, 0}, {}), Error);
}

TEST(FilterBank, ReshapesFourDimensionalTensors) {
  const Tensor t({3, 2, 1, 1}, {1, 2, 3, 4, 5, 6});
  const FilterBank bank = as_filter_bank(t, "conv");
  EXPECT_EQ(bank.n, 3u);
  EXPECT_EQ(bank.c, 2u);
  EXPECT_EQ(bank.k, 1u);
  ASSERT_EQ(bank.filters.size(), 3u);
  EXPECT_EQ(bank.filters[0], (std::vector<float>{1, 2}));
  EXPECT_EQ(bank.filters[1], (std::vector<float>{3, 4}));
  EXPECT_EQ(bank.filters[2], (std::vector<float>{5, 6}));
}

TEST(FilterBank, SingleFilterIsIdentitySlice) {
  const Tensor t({1, 1, 2, 2}, {10, 20, 30, 40});
  const FilterBank bank = as_filter_bank(t, "conv");
  ASSERT_EQ(bank.n, 1u);
  EXPECT_EQ(bank.filters[0], (std::vector<float>{10, 20, 30, 40}));
}

TEST(FilterBank, RejectsNonFourDimensional) {
  const Tensor t({2, 3}, std::vector<float>(6, 0.0f));
  try {
    as_filter_bank(t, "dense");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::invalid_argument);
    EXPECT_NE(std::string(e.what()).find("non-4-D tensor"), std::string::npos);
  }
}

TEST(FilterBank, RejectsNonSquareKernels) {
  const Tensor t({1, 1, 2, 3}, std::vector<float>(6, 0.0f));
  try {
    as_filter_bank(t, "conv");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-square kernel"), std::string::npos);
  }
}

TEST(FilterBank, RoundTripsToTensorBitExactly) {
  prunekit::SplitMix64 rng(11);
  for (int iter = 0; iter < 20; ++iter) {
    const Tensor t = testutil::random_conv_tensor(rng, 1 + rng.next_below(8),
                                                  1 + rng.next_below(4), 1 + rng.next_below(3));
    EXPECT_TRUE(bit_equal(t, to_tensor(as_filter_bank(t, "conv"))));
  }
}

TEST(Container, RejectsDuplicateAndInvalidNames) {
  WeightContainer container;
  container.add_layer("a.b/c_1", Tensor({1}, {0.0f}));
  EXPECT_THROW(container.add_layer("a.b/c_1", Tensor({1}, {0.0f})), Error);
  EXPECT_THROW(container.add_layer("", Tensor({1}, {0.0f})), Error);
  EXPECT_THROW(container.add_layer("has space", Tensor({1}, {0.0f})), Error);
  EXPECT_THROW(container.add_layer("tab\there", Tensor({1}, {0.0f})), Error);
}

TEST(Container, WriteReadRoundTripsExactly) {
  testutil::TempDir dir("roundtrip");
  const WeightContainer original = sample_container();
  write_container(original, dir.file("sample.pktc"));
  const WeightContainer loaded = read_container(dir.file("sample.pktc"));
  EXPECT_TRUE(bit_equal(original, loaded));
}

TEST(Container, WriteIsDeterministic) {
  testutil::TempDir dir("determinism");
  const WeightContainer container = sample_container();
  write_container(container, dir.file("a.pktc"));
  write_container(container, dir.file("b.pktc"));
  EXPECT_EQ(testutil::read_file_bytes(dir.file("a.pktc")),
            testutil::read_file_bytes(dir.file("b.pktc")));
}

TEST(Container, RandomContainersRoundTripBitExactly) {
  testutil::TempDir dir("property");
  prunekit::SplitMix64 rng(2024);
  for (int iter = 0; iter < 50; ++iter) {
    const WeightContainer original = testutil::random_container(rng);
    const auto path = dir.file("case.pktc");
    write_container(original, path);
    EXPECT_TRUE(bit_equal(original, read_container(path))) << "iteration " << iter;
  }
}

TEST(Container, RejectsBadMagic) {
  testutil::TempDir dir("badmagic");
  const auto path = dir.file("sample.pktc");
  write_container(sample_container(), path);
  std::string bytes = testutil::read_file_bytes(path);
  bytes[0] = 'X';
  testutil::write_file_bytes(path, bytes);
  try {
    read_container(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::bad_magic);
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(Container, RejectsUnsupportedVersion) {
  testutil::TempDir dir("version");
  const auto path = dir.file("sample.pktc");
  write_container(sample_container(), path);
  std::string bytes = testutil::read_file_bytes(path);
  bytes[4] = 9;
  testutil::write_file_bytes(path, bytes);
  try {
    read_container(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::unsupported_version);
  }
}

TEST(Container, TruncatedPayloadNamesTheLayer) {
  testutil::TempDir dir("truncated");
  const auto path = dir.file("sample.pktc");
  write_container(sample_container(), path);
  std::string bytes = testutil::read_file_bytes(path);
  bytes.resize(bytes.size() - 4);  // drop half of conv1's payload
  testutil::write_file_bytes(path, bytes);
  try {
    read_container(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::truncated_payload);
    EXPECT_NE(std::string(e.what()).find("conv1"), std::string::npos);
  }
}

TEST(Container, RejectsTrailingPayloadBytes) {
  testutil::TempDir dir("trailing");
  const auto path = dir.file("sample.pktc");
  write_container(sample_container(), path);
  std::string bytes = testutil::read_file_bytes(path);
  bytes += std::string(8, '\0');
  testutil::write_file_bytes(path, bytes);
  try {
    read_container(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::length_mismatch);
  }
}

TEST(Container, RejectsNonFiniteValuesOnLoad) {
  testutil::TempDir dir("nonfinite");
  const auto path = dir.file("sample.pktc");
  write_container(sample_container(), path);
  std::string bytes = testutil::read_file_bytes(path);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + bytes.size() - 4, &nan, 4);  // last payload float
  testutil::write_file_bytes(path, bytes);
  try {
    read_container(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::non_finite_value);
    EXPECT_NE(std::string(e.what()).find("conv1"), std::string::npos);
  }
}

TEST(Container, RejectsNonFiniteValuesOnWrite) {
  testutil::TempDir dir("nonfinitewrite");
  WeightContainer container;
  container.add_layer("conv1",
                      Tensor({2}, {1.0f, std::numeric_limits<float>::infinity()}));
  EXPECT_THROW(write_container(container, dir.file("bad.pktc")), Error);
}

TEST(Container, MissingFileNamesThePath) {
  try {
    read_container("/nonexistent/nowhere.pktc");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::io_error);
    EXPECT_NE(std::string(e.what()).find("nowhere.pktc"), std::string::npos);
  }
}

// Smoke check, not a hard performance gate: 256 layers / 1e7 total elements
// should load in well under a second.
TEST(Container, LargeContainerLoadsQuickly) {
  testutil::TempDir dir("perf");
  WeightContainer container;
  const std::size_t per_layer = 10'000'000 / 256;
  for (int i = 0; i < 256; ++i)
    container.add_layer("layer_" + std::to_string(i),
                        Tensor({per_layer}, std::vector<float>(per_layer, 0.5f)));
  const auto path = dir.file("big.pktc");
  write_container(container, path);

  const auto start = std::chrono::steady_clock::now();
  const WeightContainer loaded = read_container(path);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_EQ(loaded.size(), 256u);
  std::cerr << "large container load: " << elapsed.count() << " s\n";
  EXPECT_LT(elapsed.count(), 1.0);
}
