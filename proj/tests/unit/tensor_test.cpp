#include "xcnn/tensor.hpp"

#include <gtest/gtest.h>

#include "xcnn/error.hpp"
#include "xcnn/ops.hpp"

namespace xcnn {
namespace {

TEST(TensorTest, RejectsBadShapes) {
  EXPECT_THROW(Tensord({2, 0}, {}), ShapeError);
  EXPECT_THROW(Tensord({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  EXPECT_NO_THROW(Tensord({2, 2}, {1.0, 2.0, 3.0, 4.0}));
}

TEST(TensorTest, SumGradientIsOnes) {
  Tensord x({2, 2}, {1.0, -2.0, 3.0, 0.5}, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(TensorTest, SquareGradient) {
  Tensord x({2}, {1.0, 2.0}, true);
  sum(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(TensorTest, ReusedTensorSumsContributions) {
  Tensord x({3}, {1.0, -2.0, 0.5}, true);
  add(sum(x), sum(mul(x, x))).backward();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 1.0 + 2.0 * x.data()[i]);
}

TEST(TensorTest, RepeatedBackwardAccumulates) {
  Tensord x({2}, {1.0, 2.0}, true);
  const Tensord loss = sum(mul(x, x));
  loss.backward();
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(TensorTest, NonScalarBackwardIsContractViolation) {
  Tensord x({2}, {1.0, 2.0}, true);
  EXPECT_THROW(mul(x, x).backward(), ContractViolation);
}

TEST(TensorTest, NoGradGuardSkipsRecording) {
  Tensord x({2}, {1.0, 2.0}, true);
  Tensord y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
  const Tensord z = mul(x, x);
  EXPECT_TRUE(z.requires_grad());
  // Same forward values with and without tracking.
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(y.data()[i], z.data()[i]);
}

TEST(TensorTest, TapeVisitsInputsBeforeOutputs) {
  Tensord a({2}, {1.0, 2.0}, true);
  Tensord b({2}, {3.0, 4.0}, true);
  const Tensord c = mul(a, b);
  const Tensord loss = sum(add(c, a));
  const auto tape = GradTape<double>::record(loss);
  const auto nodes = tape.nodes();
  ASSERT_EQ(tape.size(), 5u);
  auto pos = [&](const Tensord& t) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i] == t.node()) return i;
    }
    return nodes.size();
  };
  EXPECT_LT(pos(a), pos(c));
  EXPECT_LT(pos(b), pos(c));
  EXPECT_EQ(pos(loss), nodes.size() - 1);
}

TEST(TensorTest, DetachBreaksTheGraph) {
  Tensord x({2}, {1.0, 2.0}, true);
  const Tensord d = mul(x, x).detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(d.data()[1], 4.0);
}

TEST(TensorTest, ScalarItem) {
  EXPECT_EQ(Tensord::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensord({2}, {1.0, 2.0}).item(), ShapeError);
}

}  // namespace
}  // namespace xcnn
