#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <vector>

#include "eggscan/patching.hpp"
#include "eggscan/rng.hpp"
#include "test_util.hpp"

using namespace eggscan;
using eggscan::testing::constant_image;

TEST_CASE("canonical 640x480 grid has 560 row-major positions", "[patching]") {
  const PatchGrid grid = patch_positions(640, 480, {});
  REQUIRE(grid.positions.size() == 560u);
  CHECK(grid.positions.front().x == 0);
  CHECK(grid.positions.front().y == 0);
  CHECK(grid.positions.back().x == 540);
  CHECK(grid.positions.back().y == 380);
  // row-major, strictly increasing, no duplicates
  for (std::size_t i = 1; i < grid.positions.size(); ++i) {
    const Position &a = grid.positions[i - 1], &b = grid.positions[i];
    CHECK((b.y > a.y || (b.y == a.y && b.x > a.x)));
  }
  for (const Position& p : grid.positions) {
    CHECK(p.x >= 0);
    CHECK(p.x <= 540);
    CHECK(p.y >= 0);
    CHECK(p.y <= 380);
    CHECK(p.x % 20 == 0);
    CHECK(p.y % 20 == 0);
  }
}

TEST_CASE("exact-fit image yields a single position", "[patching]") {
  const PatchGrid grid = patch_positions(100, 100, {});
  REQUIRE(grid.positions.size() == 1u);
  CHECK(grid.positions[0].x == 0);
  CHECK(grid.positions[0].y == 0);
}

TEST_CASE("unaligned extent appends a clamped final window", "[patching]") {
  const PatchGrid grid = patch_positions(105, 100, {});
  REQUIRE(grid.positions.size() == 2u);
  CHECK(grid.positions[0].x == 0);
  CHECK(grid.positions[1].x == 5);
}

TEST_CASE("grid rejects patches larger than the image", "[patching]") {
  CHECK_THROWS_AS(patch_positions(99, 480, {}), invalid_input);
  CHECK_THROWS_AS(patch_positions(640, 99, {}), invalid_input);
}

TEST_CASE("coverage is total and interior multiplicity is 25", "[patching]") {
  const GridConfig config;
  const PatchGrid grid = patch_positions(640, 480, config);
  std::vector<int> cover(640 * 480, 0);
  for (const Position& p : grid.positions)
    for (int dy = 0; dy < config.patch_size; ++dy)
      for (int dx = 0; dx < config.patch_size; ++dx)
        ++cover[(p.y + dy) * 640 + p.x + dx];
  for (int v : cover) REQUIRE(v >= 1);
  CHECK(cover[0] == 1);  // corner pixel: only patch (0,0)
  // interior pixel away from all borders: 5 x-offsets times 5 y-offsets
  CHECK(cover[240 * 640 + 320] == 25);
}

TEST_CASE("coverage holds for awkward image sizes", "[patching]") {
  for (const auto& [w, h] : {std::pair{101, 103}, {140, 215}, {379, 117}}) {
    const PatchGrid grid = patch_positions(w, h, {});
    std::vector<int> cover(static_cast<std::size_t>(w) * h, 0);
    for (const Position& p : grid.positions)
      for (int dy = 0; dy < 100; ++dy)
        for (int dx = 0; dx < 100; ++dx)
          ++cover[static_cast<std::size_t>(p.y + dy) * w + p.x + dx];
    for (int v : cover) REQUIRE(v >= 1);
  }
}

TEST_CASE("crop_patch is a coordinate identity", "[patching]") {
  ImageBuffer img(200, 150, 1);
  Rng rng(2);
  for (auto& p : img.pixels)
    p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  const ImageBuffer crop = crop_patch(img, 40, 30, 100);
  REQUIRE(crop.width == 100);
  REQUIRE(crop.height == 100);
  for (int v = 0; v < 100; v += 7)
    for (int u = 0; u < 100; u += 7)
      CHECK(crop.at(u, v) == img.at(40 + u, 30 + v));
}

TEST_CASE("extract_patches emits one aligned crop per position", "[patching]") {
  ImageBuffer img = constant_image(120, 110, 1, 55);
  img.at(0, 0) = 7;
  const PatchGrid grid = patch_positions(120, 110, {});
  const auto patches = extract_patches(img, grid);
  REQUIRE(patches.size() == grid.positions.size());
  CHECK(patches[0].second.at(0, 0) == 7);
  for (const auto& [pos, patch] : patches) {
    CHECK(patch.width == 100);
    CHECK(patch.height == 100);
    CHECK(patch.at(50, 50) == 55);
    (void)pos;
  }
}

TEST_CASE("extract_patches rejects grids from other image sizes",
          "[patching]") {
  const PatchGrid grid = patch_positions(640, 480, {});
  const ImageBuffer img = constant_image(320, 240, 1, 0);
  CHECK_THROWS_AS(extract_patches(img, grid), invalid_input);
}

TEST_CASE("label_patches marks containment, background and exclusion",
          "[patching]") {
  const PatchGrid grid = patch_positions(640, 480, {});
  const std::vector<Annotation> anns = {{EggClass::AL, {10, 10, 80, 20}}};
  const auto labels = label_patches(grid, anns);
  REQUIRE(labels.size() == grid.positions.size());

  std::map<std::pair<int, int>, PatchLabel> by_pos;
  for (const auto& [pos, label] : labels) by_pos[{pos.x, pos.y}] = label;

  CHECK(by_pos[{0, 0}] == PatchLabel::AL);       // bbox fully inside
  CHECK(by_pos[{200, 200}] == PatchLabel::BG);   // far away
  CHECK(by_pos[{20, 0}] == PatchLabel::Excluded);  // cuts the bbox at x=90
}

TEST_CASE("partial overlap without containment is excluded", "[patching]") {
  // bbox (90,10,80,20) vs the patch at (0,0): overlaps but never contained
  const PatchGrid grid = patch_positions(640, 480, {});
  const auto labels = label_patches(grid, {{EggClass::HD, {90, 10, 80, 20}}});
  for (const auto& [pos, label] : labels)
    if (pos.x == 0 && pos.y == 0) CHECK(label == PatchLabel::Excluded);
}

TEST_CASE("two contained boxes of different classes exclude the patch",
          "[patching]") {
  const PatchGrid grid = patch_positions(640, 480, {});
  const std::vector<Annotation> anns = {{EggClass::AL, {10, 10, 30, 20}},
                                        {EggClass::Tn, {50, 40, 30, 20}}};
  const auto labels = label_patches(grid, anns);
  for (const auto& [pos, label] : labels)
    if (pos.x == 0 && pos.y == 0) CHECK(label == PatchLabel::Excluded);
}

TEST_CASE("two contained boxes of one class keep the class label",
          "[patching]") {
  const PatchGrid grid = patch_positions(640, 480, {});
  const std::vector<Annotation> anns = {{EggClass::FB, {10, 10, 30, 20}},
                                        {EggClass::FB, {50, 40, 30, 20}}};
  const auto labels = label_patches(grid, anns);
  for (const auto& [pos, label] : labels)
    if (pos.x == 0 && pos.y == 0) CHECK(label == PatchLabel::FB);
}

TEST_CASE("every grid position receives exactly one label", "[patching]") {
  const PatchGrid grid = patch_positions(640, 480, {});
  const auto labels = label_patches(grid, {{EggClass::Tn, {300, 200, 60, 40}}});
  REQUIRE(labels.size() == grid.positions.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    CHECK(labels[i].first.x == grid.positions[i].x);
    CHECK(labels[i].first.y == grid.positions[i].y);
  }
}

TEST_CASE("label_patches rejects oversized bboxes", "[patching]") {
  const PatchGrid grid = patch_positions(640, 480, {});
  CHECK_THROWS_AS(label_patches(grid, {{EggClass::AL, {0, 0, 101, 20}}}),
                  invalid_input);
  CHECK_THROWS_AS(label_patches(grid, {{EggClass::AL, {0, 0, 20, 101}}}),
                  invalid_input);
}

TEST_CASE("bounding box center uses integer midpoint", "[patching]") {
  const BoundingBox box{10, 20, 80, 20};
  CHECK(box.center_x() == 50);
  CHECK(box.center_y() == 30);
}
