#include <gtest/gtest.h>

#include "abmem/run_config.hpp"

using namespace abmem;

TEST(RunConfig, ParseSkipsCommentsAndBlanks) {
  const auto kv = parse_key_values("# header\n\nn_way = 3\n  lr=0.01\nbank=/tmp/x.bin\n");
  EXPECT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv.at("n_way"), "3");
  EXPECT_EQ(kv.at("lr"), "0.01");
  EXPECT_EQ(kv.at("bank"), "/tmp/x.bin");
  EXPECT_THROW(parse_key_values("n_way 3\n"), std::invalid_argument);
}

TEST(RunConfig, ApplyOverridesFields) {
  RunConfig cfg;
  apply_key_values(cfg, {{"n_way", "3"}, {"lr", "0.01"}, {"classifier", "fc"}, {"k_shot", "1"},
                         {"head_init", "zero"}, {"label_flip", "0.25"}});
  EXPECT_EQ(cfg.model.n_way, 3u);
  EXPECT_EQ(cfg.model.learning_rate, 0.01);
  EXPECT_EQ(cfg.model.classifier, ClassifierKind::fc);
  EXPECT_EQ(cfg.model.head_init, HeadInit::zero);
  EXPECT_EQ(cfg.k_shot, 1u);
  EXPECT_EQ(cfg.label_flip, 0.25);
}

TEST(RunConfig, RejectsUnknownAndMalformed) {
  RunConfig cfg;
  EXPECT_THROW(apply_key_values(cfg, {{"n_wya", "3"}}), std::invalid_argument);
  EXPECT_THROW(apply_key_values(cfg, {{"n_way", "three"}}), std::invalid_argument);
  EXPECT_THROW(apply_key_values(cfg, {{"n_way", "3x"}}), std::invalid_argument);
  EXPECT_THROW(apply_key_values(cfg, {{"lr", ""}}), std::invalid_argument);
  EXPECT_THROW(apply_key_values(cfg, {{"classifier", "rnn"}}), std::invalid_argument);
}

TEST(RunConfig, KeyValueRoundTrip) {
  RunConfig cfg;
  cfg.bank = "data/b.bin";
  cfg.model.hidden = 17;
  cfg.model.learning_rate = 3.0e-4 / 7.0;  // not short in decimal
  cfg.model.seed = 123456789012345ull;
  cfg.external_classes = 12;
  RunConfig back;
  apply_key_values(back, parse_key_values(format_key_values(to_key_values(cfg))));
  EXPECT_EQ(to_key_values(back), to_key_values(cfg));
  EXPECT_EQ(back.model.learning_rate, cfg.model.learning_rate);
  EXPECT_EQ(back.model.seed, cfg.model.seed);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig cfg;
  cfg.model.dropout = 0.125;
  cfg.train_steps = 77;
  const auto j = to_json(cfg);
  EXPECT_TRUE(j.is_object());
  EXPECT_EQ(to_key_values(run_config_from_json(j)), to_key_values(cfg));
}

TEST(RunConfig, VersionIsNonEmpty) { EXPECT_GT(std::string(version_string()).size(), 0u); }
