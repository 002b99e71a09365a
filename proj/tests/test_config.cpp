#include <gtest/gtest.h>

#include <sstream>

#include "sparsepose/config.hpp"

using namespace sparsepose;

namespace {
KeyValueConfig parse(const std::string& s) {
  std::istringstream in(s);
  return KeyValueConfig::parse(in);
}
}  // namespace

TEST(Config, ParsesAndAppliesKnownKeys) {
  const auto c = parse("# toy\nembed_dim = 64\nhidden_dim=64  # small\n\nlr=0.003\nbatch=16\nuwb_near_m=0.4\nbogus=1\n");
  net::ModelConfig m;
  net::TrainConfig t;
  tracking::TrackerConfig tr;
  apply(c, m);
  apply(c, t);
  apply(c, tr);
  EXPECT_EQ(m.embed_dim, 64);
  EXPECT_EQ(m.hidden_dim, 64);
  EXPECT_DOUBLE_EQ(t.lr, 0.003);
  EXPECT_EQ(t.batch, 16);
  EXPECT_DOUBLE_EQ(tr.uwb_near_m, 0.4);
  EXPECT_EQ(c.unused(), std::set<std::string>{"bogus"});
}

TEST(Config, Errors) {
  EXPECT_THROW(parse("embed_dim\n"), FormatError);
  EXPECT_THROW(parse("=3\n"), FormatError);
  net::ModelConfig m;
  EXPECT_THROW(apply(parse("layers=two\n"), m), InvalidConfig);
  EXPECT_THROW(apply(parse("layers=0\n"), m), InvalidConfig);
}
