#include "profact/config.hpp"
#include "profact/error.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace profact;
using testing_support::temp_dir;

TEST(Toml, ScalarsTablesAndArrays) {
    const auto j = parse_toml(R"(
# training
dataset = "runs/data" # trailing comment
batch_size = 4
lr_initial = 1e-4
flag = true
tags = ["a#b", 'c']
[loss]
lambda = 0.5
[augment.grid]
levels = [1, 2.5, -3]
)");
    EXPECT_EQ(j["dataset"], "runs/data");
    EXPECT_EQ(j["batch_size"], 4);
    EXPECT_TRUE(j["batch_size"].is_number_integer());
    EXPECT_DOUBLE_EQ(j["lr_initial"].get<double>(), 1e-4);
    EXPECT_EQ(j["flag"], true);
    EXPECT_EQ(j["tags"][0], "a#b");
    EXPECT_EQ(j["tags"][1], "c");
    EXPECT_DOUBLE_EQ(j["loss"]["lambda"].get<double>(), 0.5);
    EXPECT_DOUBLE_EQ(j["augment"]["grid"]["levels"][1].get<double>(), 2.5);
}

TEST(Toml, ErrorsCarryLineNumbers) {
    try {
        parse_toml("a = 1\nb = \n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_toml("a = 1\na = 2\n"), ConfigError);
    EXPECT_THROW(parse_toml("[x\n"), ConfigError);
    EXPECT_THROW(parse_toml("just words\n"), ConfigError);
}

TEST(ConfigFile, DispatchOnExtension) {
    const auto dir = temp_dir("config");
    std::ofstream(dir / "a.toml") << "x = 3\n";
    std::ofstream(dir / "b.json") << R"({"x": 4})";
    std::ofstream(dir / "c.json") << "{nope";
    EXPECT_EQ(read_config_file(dir / "a.toml")["x"], 3);
    EXPECT_EQ(read_config_file(dir / "b.json")["x"], 4);
    EXPECT_THROW(read_config_file(dir / "c.json"), ConfigError);
    EXPECT_THROW(read_config_file(dir / "d.json"), FileNotFound);
}

TEST(ConfigFile, UnknownKeysAreNamed) {
    const nlohmann::json j = {{"alpha", 1}, {"bogus", 2}};
    try {
        reject_unknown_keys(j, {"alpha"}, "loss");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
    }
    EXPECT_NO_THROW(reject_unknown_keys(j, {"alpha", "bogus"}, "loss"));
}
