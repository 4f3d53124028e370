#include <gtest/gtest.h>

#include <sstream>

#include "dcl/tensor.hpp"
#include "test_util.hpp"

namespace dcl {
namespace {

TEST(Tensor, ShapeAndIndexing) {
  Tensor t(2, 3, 4, 5);
  EXPECT_EQ(t.size(), 120u);
  t.at(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(t[119], 7.0);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.grad().size(), t.size());
  EXPECT_TRUE(t.has_grad());
  EXPECT_THROW(t.reshape({1, 1, 1, 7}), ShapeError);
}

TEST(TensorBlob, HeaderIsFourLittleEndianDims) {
  Tensor t(1, 2, 3, 4);
  t[0] = 1.0;
  std::ostringstream os;
  write_tensor(os, t);
  const std::string s = os.str();
  ASSERT_EQ(s.size(), 16u + 24u * 8u);
  const unsigned char expect[16] = {1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0};
  for (int i = 0; i < 16; ++i) EXPECT_EQ(static_cast<unsigned char>(s[i]), expect[i]);
  // 1.0 = 0x3FF0000000000000, little-endian.
  EXPECT_EQ(static_cast<unsigned char>(s[16 + 7]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(s[16 + 6]), 0xF0);
}

TEST(TensorBlob, RoundTripIsBitExact) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Shape s{1 + static_cast<int>(rng.below(2)), 1 + static_cast<int>(rng.below(3)),
                  1 + static_cast<int>(rng.below(5)), 1 + static_cast<int>(rng.below(5))};
    const Tensor t = test::random_tensor(s, rng, -1e6, 1e6);
    std::stringstream ss;
    write_tensor(ss, t);
    const Tensor u = read_tensor(ss);
    ASSERT_EQ(u.shape(), t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(u[i], t[i]);
  }
}

TEST(TensorBlob, TruncatedInputThrows) {
  std::stringstream ss;
  write_tensor(ss, Tensor(1, 1, 2, 2));
  std::string s = ss.str();
  s.resize(s.size() - 3);
  std::stringstream bad(s);
  EXPECT_THROW(read_tensor(bad), IoError);
}

}  // namespace
}  // namespace dcl
