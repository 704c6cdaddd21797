#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <string>

#include "eggscan/config.hpp"
#include "eggscan/manifest.hpp"
#include "test_util.hpp"

using namespace eggscan;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << text;
}

}  // namespace

TEST_CASE("manifest lines round-trip through save and load") {
  DatasetManifest manifest;
  manifest.push_back({"images/a.png",
                      {{EggClass::AL, {10, 20, 60, 40}},
                       {EggClass::Tn, {200, 100, 30, 30}}}});
  manifest.push_back({"images/b.png", {{EggClass::FB, {0, 0, 100, 100}}}});

  testing::TempDir dir("manifest-rt");
  const std::string path = dir.str("manifest.jsonl");
  save_manifest(path, manifest);
  const DatasetManifest loaded = load_manifest(path);

  REQUIRE(loaded.size() == manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    CHECK(loaded[i].image_path == manifest[i].image_path);
    REQUIRE(loaded[i].annotations.size() == manifest[i].annotations.size());
    for (std::size_t j = 0; j < manifest[i].annotations.size(); ++j) {
      const Annotation& want = manifest[i].annotations[j];
      const Annotation& got = loaded[i].annotations[j];
      CHECK(got.class_label == want.class_label);
      CHECK(got.bbox.x == want.bbox.x);
      CHECK(got.bbox.y == want.bbox.y);
      CHECK(got.bbox.w == want.bbox.w);
      CHECK(got.bbox.h == want.bbox.h);
    }
  }
}

TEST_CASE("manifest blank lines are ignored") {
  testing::TempDir dir("manifest-blank");
  const std::string path = dir.str("m.jsonl");
  write_text(path,
             "\n{\"image_path\":\"x.png\",\"annotations\":[]}\n\n"
             "{\"image_path\":\"y.png\",\"annotations\":[]}\n");
  const DatasetManifest m = load_manifest(path);
  REQUIRE(m.size() == 2);
  CHECK(m[0].image_path == "x.png");
  CHECK(m[1].image_path == "y.png");
}

TEST_CASE("manifest errors name the offending line") {
  testing::TempDir dir("manifest-err");
  const std::string path = dir.str("m.jsonl");

  SECTION("broken JSON") {
    write_text(path, "{\"image_path\": nope}\n");
    CHECK_THROWS_WITH(load_manifest(path),
                      Catch::Matchers::ContainsSubstring("manifest line 1"));
  }
  SECTION("missing image path") {
    write_text(path, "{\"annotations\":[]}\n");
    CHECK_THROWS_WITH(
        load_manifest(path),
        Catch::Matchers::ContainsSubstring("missing field image_path"));
  }
  SECTION("missing annotations") {
    write_text(path, "{\"image_path\":\"a.png\"}\n");
    CHECK_THROWS_WITH(
        load_manifest(path),
        Catch::Matchers::ContainsSubstring("missing field annotations"));
  }
  SECTION("error on the second line names line 2") {
    write_text(path,
               "{\"image_path\":\"a.png\",\"annotations\":[]}\n"
               "{\"image_path\":\"b.png\"}\n");
    CHECK_THROWS_WITH(load_manifest(path),
                      Catch::Matchers::ContainsSubstring("manifest line 2"));
  }
  SECTION("unknown class name") {
    write_text(path,
               "{\"image_path\":\"a.png\",\"annotations\":"
               "[{\"class\":\"XX\",\"bbox\":[0,0,10,10]}]}\n");
    CHECK_THROWS_AS(load_manifest(path), config_error);
  }
  SECTION("background is not an annotatable class") {
    write_text(path,
               "{\"image_path\":\"a.png\",\"annotations\":"
               "[{\"class\":\"BG\",\"bbox\":[0,0,10,10]}]}\n");
    CHECK_THROWS_WITH(
        load_manifest(path),
        Catch::Matchers::ContainsSubstring("must be an egg class"));
  }
  SECTION("bbox needs four entries") {
    write_text(path,
               "{\"image_path\":\"a.png\",\"annotations\":"
               "[{\"class\":\"AL\",\"bbox\":[0,0,10]}]}\n");
    CHECK_THROWS_WITH(load_manifest(path),
                      Catch::Matchers::ContainsSubstring("bbox"));
  }
  SECTION("bbox needs positive extent") {
    write_text(path,
               "{\"image_path\":\"a.png\",\"annotations\":"
               "[{\"class\":\"AL\",\"bbox\":[0,0,0,10]}]}\n");
    CHECK_THROWS_AS(load_manifest(path), config_error);
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_manifest(dir.str("nope.jsonl")), io_error);
  }
}

TEST_CASE("image paths resolve relative to the manifest") {
  CHECK(resolve_manifest_path("/data/run1/manifest.jsonl", "images/a.png") ==
        "/data/run1/images/a.png");
  CHECK(resolve_manifest_path("/data/run1/manifest.jsonl", "/abs/b.png") ==
        "/abs/b.png");
  CHECK(resolve_manifest_path("manifest.jsonl", "c.png") == "c.png");
}

TEST_CASE("an empty config document yields the defaults") {
  const PipelineConfig cfg = parse_config(nlohmann::json::object());
  CHECK(cfg.grid.patch_size == 100);
  CHECK(cfg.grid.stride == 20);
  CHECK(cfg.fusion.sigma == 1.0);
  CHECK(cfg.fusion.threshold == 0.5);
  CHECK(cfg.train.momentum == 0.9);
  CHECK(cfg.backend == "reference");
  CHECK(cfg.synth.width == 640);
  CHECK(cfg.synth.height == 480);
}

TEST_CASE("unknown config keys are rejected by name") {
  CHECK_THROWS_WITH(parse_config({{"bogus", 1}}),
                    Catch::Matchers::ContainsSubstring(
                        "unknown config key: bogus"));
  CHECK_THROWS_WITH(parse_config({{"grid", {{"patch", 50}}}}),
                    Catch::Matchers::ContainsSubstring(
                        "unknown config key: grid.patch"));
  CHECK_THROWS_WITH(parse_config({{"fusion", {{"sgima", 1.0}}}}),
                    Catch::Matchers::ContainsSubstring(
                        "unknown config key: fusion.sgima"));
}

TEST_CASE("config type errors name the field") {
  CHECK_THROWS_WITH(parse_config({{"train", {{"learning_rate", "fast"}}}}),
                    Catch::Matchers::ContainsSubstring(
                        "train.learning_rate"));
  CHECK_THROWS_WITH(parse_config({{"grid", {{"stride", "wide"}}}}),
                    Catch::Matchers::ContainsSubstring("grid.stride"));
  CHECK_THROWS_WITH(parse_config({{"grid", 3}}),
                    Catch::Matchers::ContainsSubstring("grid"));
  CHECK_THROWS_WITH(
      parse_config({{"synth", {{"class_mix", {0.5, 0.5}}}}}),
      Catch::Matchers::ContainsSubstring("synth.class_mix"));
  CHECK_THROWS_WITH(
      parse_config({{"synth", {{"class_mix", {0.25, 0.25, 0.25, "x"}}}}}),
      Catch::Matchers::ContainsSubstring("synth.class_mix"));
}

TEST_CASE("invalid settings are rejected after parsing") {
  CHECK_THROWS_AS(parse_config({{"fusion", {{"sigma", 0.0}}}}), config_error);
  CHECK_THROWS_AS(parse_config({{"fusion", {{"threshold", 1.5}}}}),
                  config_error);
  CHECK_THROWS_AS(parse_config({{"backend", "banana"}}), config_error);
  CHECK_THROWS_AS(parse_config({{"backend", "cmd:"}}), config_error);
  CHECK_NOTHROW(parse_config({{"backend", "cmd:python3 backend.py"}}));
  CHECK_THROWS_AS(parse_config({{"grid", {{"stride", 0}}}}), config_error);
}

TEST_CASE("config survives a serialization round trip") {
  PipelineConfig cfg;
  cfg.grid.patch_size = 60;
  cfg.grid.stride = 12;
  cfg.augment.target_per_class = 123;
  cfg.augment.rotation_max_deg = 90.0;
  cfg.augment.seed = 19;
  cfg.train.learning_rate = 0.07;
  cfg.train.batch_size = 16;
  cfg.train.seed = 23;
  cfg.fusion.sigma = 0.8;
  cfg.fusion.threshold = 0.25;
  cfg.split.test_fraction = 0.3;
  cfg.split.seed = 29;
  cfg.synth.width = 320;
  cfg.synth.class_mix = {0.4, 0.3, 0.2, 0.1};
  cfg.synth.seed = 31;
  cfg.backend = "cmd:./mock";

  const PipelineConfig back = parse_config(config_to_json(cfg));
  CHECK(back.grid.patch_size == 60);
  CHECK(back.grid.stride == 12);
  CHECK(back.augment.target_per_class == 123);
  CHECK(back.augment.rotation_max_deg == 90.0);
  CHECK(back.augment.seed == 19);
  CHECK(back.train.learning_rate == 0.07);
  CHECK(back.train.batch_size == 16);
  CHECK(back.train.seed == 23);
  CHECK(back.fusion.sigma == 0.8);
  CHECK(back.fusion.threshold == 0.25);
  CHECK(back.split.test_fraction == 0.3);
  CHECK(back.split.seed == 29);
  CHECK(back.synth.width == 320);
  CHECK(back.synth.class_mix[0] == 0.4);
  CHECK(back.synth.class_mix[3] == 0.1);
  CHECK(back.synth.seed == 31);
  CHECK(back.backend == "cmd:./mock");
}

TEST_CASE("a run record parses as the config it captured") {
  PipelineConfig cfg;
  cfg.fusion.threshold = 0.42;
  nlohmann::json run;
  run["command"] = "evaluate";
  run["config"] = config_to_json(cfg);
  run["outputs"] = {"report.json"};

  const PipelineConfig back = parse_config(run);
  CHECK(back.fusion.threshold == 0.42);
}

TEST_CASE("run records written to disk load back as configs") {
  testing::TempDir dir("runjson");
  PipelineConfig cfg;
  cfg.train.seed = 77;
  cfg.augment.target_per_class = 55;
  write_run_json(dir.str("run.json"), "train", cfg,
                 {{"model", "model.bin"}});

  const PipelineConfig back = load_config(dir.str("run.json"));
  CHECK(back.train.seed == 77);
  CHECK(back.augment.target_per_class == 55);
}

TEST_CASE("config loading distinguishes io and parse failures") {
  testing::TempDir dir("cfg-load");
  CHECK_THROWS_AS(load_config(dir.str("absent.json")), io_error);
  write_text(dir.str("bad.json"), "{not json");
  CHECK_THROWS_AS(load_config(dir.str("bad.json")), config_error);
}

TEST_CASE("one master seed fans out into distinct stage seeds") {
  PipelineConfig a;
  PipelineConfig b;
  apply_master_seed(a, 42);
  apply_master_seed(b, 42);
  CHECK(a.synth.seed == b.synth.seed);
  CHECK(a.augment.seed == b.augment.seed);
  CHECK(a.train.seed == b.train.seed);
  CHECK(a.split.seed == b.split.seed);

  CHECK(a.synth.seed == mix_seed(42, 1));
  CHECK(a.augment.seed == mix_seed(42, 2));
  CHECK(a.train.seed == mix_seed(42, 3));
  CHECK(a.split.seed == mix_seed(42, 4));

  // the four stage seeds never collide
  CHECK(a.synth.seed != a.augment.seed);
  CHECK(a.synth.seed != a.train.seed);
  CHECK(a.synth.seed != a.split.seed);
  CHECK(a.augment.seed != a.train.seed);
  CHECK(a.augment.seed != a.split.seed);
  CHECK(a.train.seed != a.split.seed);

  PipelineConfig c;
  apply_master_seed(c, 43);
  CHECK(c.synth.seed != a.synth.seed);
}
