// Regenerates the bundled symbol PNGs, taxonomies and pretrained registry.
#include "tma/image_io.hpp"
#include "tma/shapes.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Entry {
  const char* name;
  const char* article;
  tma::ShapeFamily family;
};

void write_taxonomy(const fs::path& path, std::initializer_list<Entry> entries) {
  json doc = json::array();
  int id = 0;
  for (const auto& e : entries) {
    doc.push_back({{"id", id++},
                   {"name", e.name},
                   {"article", e.article},
                   {"symbol_path", "../symbols/" + std::string(tma::family_slug(e.family)) + ".png"}});
  }
  std::ofstream(path) << doc.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("assets");
  fs::create_directories(root / "symbols");
  fs::create_directories(root / "taxonomies");

  for (int k = 0; k < tma::kShapeFamilyCount; ++k) {
    const auto family = static_cast<tma::ShapeFamily>(k);
    tma::write_png(root / "symbols" / (std::string(tma::family_slug(family)) + ".png"),
                   tma::render_symbol(family, 128));
  }

  using F = tma::ShapeFamily;
  write_taxonomy(root / "taxonomies" / "galaxy10.json",
                 {{"disturbed galaxy", "a", F::kIrregularClumps},
                  {"merging galaxy", "a", F::kMergingPair},
                  {"round smooth galaxy", "a", F::kDisk},
                  {"in-between round smooth galaxy", "an", F::kInBetweenSmooth},
                  {"cigar shaped smooth galaxy", "a", F::kCigar},
                  {"barred spiral galaxy", "a", F::kBarredSpiral},
                  {"unbarred tight spiral galaxy", "an", F::kTightSpiral},
                  {"unbarred loose spiral galaxy", "an", F::kLooseSpiral},
                  {"edge-on galaxy without bulge", "an", F::kEdgeOnBar},
                  {"edge-on galaxy with bulge", "an", F::kEdgeOnBulge}});
  write_taxonomy(root / "taxonomies" / "galaxymnist.json",
                 {{"smooth round galaxy", "a", F::kDisk},
                  {"smooth cigar galaxy", "a", F::kCigar},
                  {"edge-on disk galaxy", "an", F::kEdgeOnBar},
                  {"unbarred spiral galaxy", "an", F::kLooseSpiral}});

  const json clip_mean = {0.48145466, 0.4578275, 0.40821073};
  const json clip_std = {0.26862954, 0.26130258, 0.27577711};
  json registry = {
      {"vit-b-16-clip",
       {{"backbone", "vit"}, {"image_size", 224}, {"embed_dim", 512}, {"mean", clip_mean},
        {"std", clip_std}, {"optimizer", {{"lr", 1e-4}, {"weight_decay", 0.02}}}}},
      {"convnext-b-clip",
       {{"backbone", "convnext"}, {"image_size", 224}, {"embed_dim", 640}, {"mean", clip_mean},
        {"std", clip_std}, {"optimizer", {{"lr", 5e-6}, {"weight_decay", 2e-4}}}}},
  };
  std::ofstream(root / "pretrained_registry.json") << registry.dump(2) << '\n';
  std::cout << "assets written to " << root.string() << '\n';
  return 0;
}
