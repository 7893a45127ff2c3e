#include <gtest/gtest.h>

#include "matteforge/config.hpp"

namespace {

using namespace matteforge;

TEST(Defaults, ShippedConstants) {
  const RunConfig c;
  EXPECT_EQ(c.train.weights.lambda_s, 1.0);
  EXPECT_EQ(c.train.weights.lambda_d, 10.0);
  EXPECT_EQ(c.train.weights.lambda_alpha, 1.0);
  EXPECT_EQ(c.ofd.xi, 0.1);
  EXPECT_EQ(c.train.optimizer, Optimizer::sgd);
  EXPECT_EQ(c.train.lr, 0.01);
  EXPECT_EQ(c.train.lr_decay_factor, 0.1);
  EXPECT_EQ(c.train.lr_decay_every, 10);
  EXPECT_EQ(c.train.epochs, 40);
  EXPECT_EQ(c.train.momentum, 0.0);
  EXPECT_EQ(c.soc.lr, 0.0001);
  EXPECT_TRUE(c.soc.freeze_norm);
  EXPECT_EQ(c.model.d_channels <= 64, true);
  EXPECT_EQ(c.model.d_layers, 12);
  EXPECT_EQ(c.model.s_downsample_factor, 16);
  EXPECT_EQ(c.model.d_internal_downsample, 4);
  EXPECT_EQ(c.train.g.kernel, 3);
  EXPECT_EQ(c.train.g.sigma, 1.0);
  EXPECT_EQ(c.train.mask.kernel, 3);
  EXPECT_EQ(c.train.mask.iterations, 2);
  EXPECT_FALSE(c.trimap.threshold.has_value());
}

TEST(Json, RoundTripPreservesEveryField) {
  RunConfig c;
  c.train.optimizer = Optimizer::adam;
  c.train.lr = 0.003;
  c.train.terms.detail = false;
  c.soc.steps = 17;
  c.ofd.xi = 0.2;
  c.trimap.threshold = 0.4;
  c.model.use_norm = true;
  c.data.count = 32;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Json, PartialDocumentOverlaysDefaults) {
  const RunConfig c = run_config_from_json(nlohmann::json::parse(R"({"train": {"epochs": 3}, "ofd": {"xi": 0.2}})"));
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.ofd.xi, 0.2);
  EXPECT_EQ(c.train.lr, 0.01);
}

TEST(Json, UnknownKeysAreRejectedWithTheirPath) {
  for (const char* doc : {R"({"trian": {}})", R"({"train": {"epoch": 3}})", R"({"soc": {"mask": {"kernal": 3}}})",
                          R"({"model": {"channels": 3}})"}) {
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse(doc)), ConfigError) << doc;
  }
  try {
    run_config_from_json(nlohmann::json::parse(R"({"train": {"epoch": 3}})"));
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epoch"), std::string::npos);
  }
}

TEST(Json, InvalidValuesAreConfigErrors) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"epochs": "many"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"ofd": {"xi": 1.5}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"optimizer": "rmsprop"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"model": {"d_channels": 65}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"data": {"size": 40}})")), ConfigError);
}

TEST(Hash, StableAndSensitive) {
  const RunConfig a;
  RunConfig b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16U);
  b.train.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Hash, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Load, MissingOrMalformedFile) {
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
  const std::string path = testing::TempDir() + "bad_config.json";
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_run_config(path), ConfigError);
}

}  // namespace
