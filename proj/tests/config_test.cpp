#include <string>

#include <gtest/gtest.h>

#include "peg/config.hpp"

namespace peg {
namespace {

TEST(Config, DefaultsAreValid) {
  const RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.loss_mode, "progressive");
  EXPECT_DOUBLE_EQ(cfg.alpha, 0.5);
  EXPECT_DOUBLE_EQ(cfg.beta, 0.1);
  EXPECT_DOUBLE_EQ(cfg.tau, 0.01);
  EXPECT_EQ(cfg.mine_k, 5u);
}

TEST(Config, ParsesKeysCommentsAndLists) {
  const auto cfg = parse_config(
      "# comment\n\n  dim = 24\nloss_mode = infonce\nquery_prefix = \"query: \"\nrecall_ks = 1, 5\n"
      "include_unjudged = true\nlr=0.25\n");
  EXPECT_EQ(cfg.dim, 24u);
  EXPECT_EQ(cfg.loss_mode, "infonce");
  EXPECT_EQ(cfg.query_prefix, "query: ");
  EXPECT_EQ(cfg.recall_ks, (std::vector<std::size_t>{1, 5}));
  EXPECT_TRUE(cfg.include_unjudged);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.25);
}

TEST(Config, ErrorsNameTheLine) {
  auto message = [](const std::string& text) {
    try {
      parse_config(text, "run.conf");
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("dim = 4\nbogus = 1\n").find("run.conf:2"), std::string::npos);
  EXPECT_NE(message("dim = four\n").find("run.conf:1"), std::string::npos);
  EXPECT_NE(message("dim 4\n").find("expected"), std::string::npos);
  EXPECT_NE(message("include_unjudged = yes\n").find("true|false"), std::string::npos);
  EXPECT_NE(message("lr = 1e999\n"), "no error");
}

TEST(Config, SerializeRoundTrips) {
  RunConfig cfg;
  cfg.corpus = "data/c \"x\".jsonl";
  cfg.query_prefix = "q: ";
  cfg.lr = 0.1 + 0.2;
  cfg.recall_ks = {1, 3, 100};
  cfg.include_unjudged = true;
  cfg.noise_rate = 0.125;
  EXPECT_EQ(parse_config(serialize_config(cfg)), cfg);
}

TEST(Config, ValidateRejectsBadValues) {
  auto rejects = [](auto mutate) {
    RunConfig cfg;
    mutate(cfg);
    EXPECT_THROW(cfg.validate(), ValidationError);
  };
  rejects([](RunConfig& c) { c.mine_k = 0; });
  rejects([](RunConfig& c) { c.mine_k = 6; });
  rejects([](RunConfig& c) { c.tau = 0.0; });
  rejects([](RunConfig& c) { c.alpha = 1.5; });
  rejects([](RunConfig& c) { c.beta = -0.1; });
  rejects([](RunConfig& c) { c.loss_mode = "triplet"; });
  rejects([](RunConfig& c) { c.judge = "maybe"; });
  rejects([](RunConfig& c) { c.mask_ratio = 1.0; });
  rejects([](RunConfig& c) { c.recall_ks.clear(); });
  rejects([](RunConfig& c) { c.synth_train = c.synth_gallery; });
}

}  // namespace
}  // namespace peg
