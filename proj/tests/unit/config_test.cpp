#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mst/config.hpp"
#include "mst/error.hpp"
#include "mst/manifest.hpp"

using namespace mst;

TEST(KeyValueConfig, ParsesSectionsAndComments) {
  const auto c = KeyValueConfig::parse("# top\ntop = 1\n[model]\nhidden = 40 \n; other\n[train]\nlr=0.5\n");
  EXPECT_EQ(c.get("top"), "1");
  EXPECT_EQ(c.get_size("model.hidden", 0), 40u);
  EXPECT_EQ(c.get_double("train.lr", 0), 0.5);
  EXPECT_EQ(c.keys_in("model"), (std::vector<std::string>{"hidden"}));
  EXPECT_FALSE(c.get("model.heads").has_value());
  EXPECT_EQ(c.get_size("model.heads", 7), 7u);
}

TEST(KeyValueConfig, ErrorsNameOriginAndLine) {
  auto message = [](const std::string& text) -> std::string {
    try {
      KeyValueConfig::parse(text, "x.ini");
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message("a = 1\n[s\n").find("x.ini:2"), std::string::npos);
  EXPECT_NE(message("just words\n").find("x.ini:1"), std::string::npos);
  EXPECT_NE(message("a = 1\na = 2\n").find("duplicate"), std::string::npos);
  EXPECT_NE(message("b@d = 1\n").find("bad key"), std::string::npos);
}

TEST(KeyValueConfig, TypedGettersRejectMalformedValues) {
  const auto c = KeyValueConfig::parse("n = -3\nx = 1.5e\nb = maybe\nok = yes\n");
  EXPECT_THROW(c.get_size("n", 0), ConfigError);
  EXPECT_THROW(c.get_double("x", 0), ConfigError);
  EXPECT_THROW(c.get_bool("b", false), ConfigError);
  EXPECT_TRUE(c.get_bool("ok", false));
}

TEST(KeyValueConfig, RenderRoundTripAndMerge) {
  KeyValueConfig c;
  c.set("model.hidden", "40");
  c.set("train.lr", format_double(0.1 + 0.2));
  c.set("name", "x");
  const auto back = KeyValueConfig::parse(c.render());
  EXPECT_EQ(back.get("model.hidden"), "40");
  EXPECT_EQ(back.get_double("train.lr", 0), 0.1 + 0.2);
  EXPECT_EQ(back.get("name"), "x");
  KeyValueConfig over;
  over.set("model.hidden", "8");
  c.merge(over);
  EXPECT_EQ(c.get("model.hidden"), "8");
  EXPECT_EQ(c.keys().size(), 3u);
}

TEST(KeyValueConfig, RequireKnownNamesTheKey) {
  const auto c = KeyValueConfig::parse("[model]\nhidden = 1\nhiden = 2\n");
  try {
    c.require_known("model", {"hidden"});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.hiden"), std::string::npos);
  }
  EXPECT_NO_THROW(c.require_known("model", {"hidden", "hiden"}));
}

TEST(FormatDouble, RoundTrips) {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1.0 / 3.0, 1e-300, 6.02214076e23,
                   std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::max()})
    EXPECT_EQ(parse_double(format_double(v), "v"), v) << format_double(v);
  EXPECT_EQ(split_list("a, b,,c"), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Manifest, JsonRoundTrip) {
  RunManifest m;
  m.command = "mirrored";
  m.argv = {"mst", "mirrored", "--seed", "3", "quote\"and\\slash"};
  m.config.set("train.lr", "0.003");
  m.config.set("mirrored.ks", "10,20");
  m.outputs = {"mirrored.csv"};
  m.start();
  m.add_metric("flex.K10.median_test_mse", 0.1 + 0.2);
  m.add_metric("tiny", 4.9e-324);
  m.finish();
  const auto back = RunManifest::from_json(m.to_json());
  EXPECT_EQ(back.command, m.command);
  EXPECT_EQ(back.argv, m.argv);
  EXPECT_EQ(back.config.render(), m.config.render());
  EXPECT_EQ(back.outputs, m.outputs);
  EXPECT_EQ(back.metrics, m.metrics);
  EXPECT_EQ(back.version, library_version());
  EXPECT_EQ(back.started, m.started);
  EXPECT_THROW(RunManifest::from_json("{\"command\": "), ConfigError);
}
