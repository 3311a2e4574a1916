#include <gtest/gtest.h>

#include <bit>
#include <limits>

#include "fixtures.hpp"

using namespace allnet;
using fixture::TempDir;

TEST(Tensor, LengthMatchesShapeProduct) {
  const Tensor t(Shape{2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.shape().per_sample(), 60u);
  EXPECT_THROW(Tensor(Shape{2, 3, 4, 5}, std::vector<float>(119)), ShapeError);
  EXPECT_THROW(Tensor(Shape{0, 3, 4, 5}), ShapeError);
}

TEST(Tensor, RowMajorNchwIndexing) {
  Tensor t(Shape{2, 3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i);
  EXPECT_EQ(t.at(1, 2, 3, 4), 119.0f);
  EXPECT_EQ(t.at(0, 1, 0, 0), 20.0f);
  EXPECT_EQ(t.at(1, 0, 0, 0), 60.0f);
  EXPECT_EQ(t.sample(1).front(), 60.0f);
}

TEST(Tensor, SliceChannelsCopiesTheRange) {
  Rng rng(1);
  const Tensor t = fixture::random_tensor(Shape{2, 5, 3, 3}, rng);
  const Tensor s = slice_channels(t, 1, 3);
  ASSERT_EQ(s.shape(), (Shape{2, 2, 3, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(s.at(n, c, i, j), t.at(n, c + 1, i, j));
  EXPECT_THROW(slice_channels(t, 3, 6), ShapeError);
  EXPECT_THROW(slice_channels(t, 2, 2), ShapeError);
}

TEST(Rtf, RoundTripIsBitExact) {
  Rng rng(2);
  Tensor t = fixture::random_tensor(Shape{1, 2, 3, 4}, rng, -1e6, 1e6);
  t[0] = -0.0f;
  t[1] = std::numeric_limits<float>::denorm_min();
  const Tensor back = decode_rtf(encode_rtf(t));
  ASSERT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back[i]), std::bit_cast<std::uint32_t>(t[i]));
  }
  TempDir dir;
  save_rtf(dir / "t.rtf", t);
  EXPECT_EQ(load_rtf(dir / "t.rtf"), t);
}

TEST(Rtf, LayoutIsMagicRankDimsPayload) {
  const Tensor t(Shape{1, 1, 1, 2}, std::vector<float>{1.0f, -2.0f});
  const auto bytes = encode_rtf(t);
  ASSERT_EQ(bytes.size(), 4u + 4 + 16 + 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RTF1");
  EXPECT_EQ(bytes[4], 4);
  EXPECT_EQ(bytes[20], 2); // last dim, little-endian
  // 1.0f = 0x3f800000 little-endian
  EXPECT_EQ(bytes[24], 0x00);
  EXPECT_EQ(bytes[27], 0x3f);
}

TEST(Rtf, RejectsMalformedInput) {
  const Tensor t(Shape{1, 1, 2, 2}, 1.0f);
  auto bytes = encode_rtf(t);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_rtf(truncated), DataError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_rtf(bad_magic), DataError);
  auto bad_rank = bytes;
  bad_rank[4] = 3;
  EXPECT_THROW(decode_rtf(bad_rank), DataError);
  auto zero_dim = bytes;
  zero_dim[8] = 0;
  EXPECT_THROW(decode_rtf(zero_dim), DataError);
  EXPECT_THROW(load_rtf("/nonexistent/t.rtf"), IoError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    (void)c;
  }
  EXPECT_NE(Rng(42).next(), Rng(43).next());
}

TEST(Rng, BelowStaysInRangeAndUniformInUnitInterval) {
  Rng r(5);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++hist[v];
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
  for (int h : hist) EXPECT_GT(h, 800);
}

TEST(Rng, StateRestoresTheStream) {
  Rng r(9);
  r.next();
  Rng copy(r.state());
  EXPECT_EQ(r.next(), copy.next());
}
