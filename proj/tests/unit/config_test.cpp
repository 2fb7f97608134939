#include <gtest/gtest.h>

#include "reldist/config.hpp"
#include "reldist/error.hpp"

using namespace reldist;

namespace {

ErrorCode code_of(const std::string& text) {
  try {
    parse_train_config(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "accepted: " << text;
  return ErrorCode::Io;
}

}  // namespace

TEST(Config, ParsesSectionsAndComments) {
  const TrainConfig c = parse_train_config(
      "# run\n[train]\nepochs = 12\nlearning_rate = 5e-4 \n; note\n[encoder]\nd = 16\nshare_encoders = true\n");
  EXPECT_EQ(c.epochs, 12);
  EXPECT_EQ(c.learning_rate, 5e-4);
  EXPECT_EQ(c.encoder.d, 16);
  EXPECT_TRUE(c.encoder.share_encoders);
  EXPECT_EQ(c.sample_k, TrainConfig{}.sample_k);
}

TEST(Config, RejectsBadInput) {
  EXPECT_EQ(code_of("[train]\nepoch = 3\n"), ErrorCode::Config);
  EXPECT_EQ(code_of("[model]\nd = 3\n"), ErrorCode::Config);
  EXPECT_EQ(code_of("[train]\nepochs = 3\nepochs = 4\n"), ErrorCode::Config);
  EXPECT_EQ(code_of("[train]\nepochs = three\n"), ErrorCode::Config);
  EXPECT_EQ(code_of("epochs = 3\n"), ErrorCode::Config);
  EXPECT_EQ(code_of("[train]\nlambda_corr = 0\nlambda_cons = 0\n"), ErrorCode::Config);
  EXPECT_EQ(code_of("[train]\nfinal_lr_scale = 0\n"), ErrorCode::Config);
  EXPECT_EQ(code_of("[train]\nfinal_lr_scale = 1.5\n"), ErrorCode::Config);
  EXPECT_EQ(code_of("[encoder]\nd = 30\n"), ErrorCode::WidthNotDivisible);
}

TEST(Config, FormatRoundTrips) {
  TrainConfig c;
  c.epochs = 7;
  c.learning_rate = 0.1 + 0.2;
  c.final_lr_scale = 0.25;
  c.seed = 123456789;
  c.encoder.frame_coordinates = false;
  const TrainConfig r = parse_train_config(format_train_config(c));
  EXPECT_EQ(r.epochs, 7);
  EXPECT_EQ(r.learning_rate, c.learning_rate);
  EXPECT_EQ(r.final_lr_scale, 0.25);
  EXPECT_EQ(r.seed, c.seed);
  EXPECT_FALSE(r.encoder.frame_coordinates);
  EXPECT_EQ(format_train_config(r), format_train_config(c));
}
