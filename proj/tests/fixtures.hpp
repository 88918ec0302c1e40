#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace jex::testing {

struct FixtureCategory {
  std::int64_t id;
  std::string name;
  std::string supercategory;
  std::uint64_t images;     // distinct images holding the category
  std::uint64_t instances;  // annotation records, >= images
};

// COCO-style instances document with exactly the requested per-category
// image and instance counts. Each category gets its own image id range;
// surplus instances go to the category's first image.
inline nlohmann::json instances_fixture(const std::vector<FixtureCategory>& cats) {
  nlohmann::json doc = {{"images", nlohmann::json::array()},
                        {"annotations", nlohmann::json::array()},
                        {"categories", nlohmann::json::array()}};
  std::int64_t next_image = 1, next_ann = 1;
  for (const auto& c : cats) {
    doc["categories"].push_back({{"id", c.id}, {"name", c.name}, {"supercategory", c.supercategory}});
    const std::int64_t first = next_image;
    for (std::uint64_t i = 0; i < c.images; ++i) {
      doc["images"].push_back({{"id", next_image}});
      doc["annotations"].push_back({{"id", next_ann++}, {"image_id", next_image}, {"category_id", c.id}});
      ++next_image;
    }
    for (std::uint64_t i = c.images; i < c.instances; ++i) {
      doc["annotations"].push_back({{"id", next_ann++}, {"image_id", first}, {"category_id", c.id}});
    }
  }
  return doc;
}

// Vehicle group with the instance counts 4,761 (train) and 5,278 (airplane)
// and image counts under which airplane has the smaller product.
inline nlohmann::json airplane_train_fixture() {
  return instances_fixture({{1, "person", "person", 10, 12},
                            {2, "train", "vehicle", 3662, 4761},
                            {3, "airplane", "vehicle", 3000, 5278},
                            {4, "bus", "vehicle", 4000, 6000}});
}

}  // namespace jex::testing
