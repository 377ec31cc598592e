#include "setdet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "setdet/errors.hpp"

namespace setdet {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Annotation> Sample::normalized_annotations() const {
  std::vector<Annotation> out;
  out.reserve(annotations.size());
  for (const auto& a : annotations) out.push_back({a.class_id, convert(a.box, BoxFormat::CenterNorm, size())});
  return out;
}

// ---- manifest ------------------------------------------------------------------

namespace {

std::string id_string(const json& v, const std::string& what) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw MalformedRecord(what + ": id must be a string or integer");
}

const json& field(const json& obj, const char* key, const std::string& what) {
  if (!obj.is_object() || !obj.contains(key)) throw MalformedRecord(what + ": missing \"" + key + "\"");
  return obj.at(key);
}

std::size_t positive_size(const json& v, const std::string& what) {
  if (!v.is_number_integer() || v.get<long long>() <= 0) throw MalformedRecord(what + " must be a positive integer");
  return static_cast<std::size_t>(v.get<long long>());
}

}  // namespace

std::vector<std::string> DatasetManifest::image_ids() const {
  std::vector<std::string> ids;
  ids.reserve(images.size());
  for (const auto& im : images) ids.push_back(im.id);
  return ids;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("manifest not found: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw MalformedRecord("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  const fs::path base = path.parent_path();
  DatasetManifest m;
  m.source = path;

  std::unordered_map<std::string, std::size_t> category_index;
  for (const auto& c : field(doc, "categories", "manifest")) {
    const auto id = id_string(field(c, "id", "category"), "category");
    if (!category_index.emplace(id, m.categories.size()).second)
      throw MalformedRecord("duplicate category id " + id);
    m.categories.push_back(c.value("name", id));
  }

  std::unordered_map<std::string, std::size_t> image_index;
  for (const auto& im : field(doc, "images", "manifest")) {
    ManifestImage rec;
    rec.id = id_string(field(im, "id", "image"), "image");
    const auto& file = field(im, "file_name", "image " + rec.id);
    if (!file.is_string()) throw MalformedRecord("image " + rec.id + ": file_name must be a string");
    rec.file = base / file.get<std::string>();
    rec.width = positive_size(field(im, "width", "image " + rec.id), "image width");
    rec.height = positive_size(field(im, "height", "image " + rec.id), "image height");
    if (!image_index.emplace(rec.id, m.images.size()).second)
      throw MalformedRecord("duplicate image id " + rec.id);
    m.images.push_back(std::move(rec));
  }

  for (const auto& a : field(doc, "annotations", "manifest")) {
    ManifestAnnotation rec;
    rec.image_id = id_string(field(a, "image_id", "annotation"), "annotation");
    const auto img = image_index.find(rec.image_id);
    if (img == image_index.end())
      throw DanglingReference("annotation references unknown image id " + rec.image_id);
    const auto cat = category_index.find(id_string(field(a, "category_id", "annotation"), "annotation"));
    if (cat == category_index.end())
      throw DanglingReference("annotation on image " + rec.image_id + " references unknown category");
    rec.class_id = static_cast<int>(cat->second);
    const auto& im = m.images[img->second];

    if (a.contains("mask_path")) {
      rec.mask_path = base / a.at("mask_path").get<std::string>();
      const auto mask = read_pgm_mask(rec.mask_path->string());
      if (mask.width != im.width || mask.height != im.height)
        throw MalformedRecord("mask " + rec.mask_path->string() + " does not match image extents");
      rec.box = mask_to_bbox(mask);
    } else {
      const auto& bb = field(a, "bbox", "annotation on image " + rec.image_id);
      if (!bb.is_array() || bb.size() != 4) throw MalformedRecord("bbox must be [x, y, w, h]");
      std::array<double, 4> v{};
      for (std::size_t i = 0; i < 4; ++i) {
        if (!bb[i].is_number()) throw MalformedRecord("bbox entries must be numbers");
        v[i] = bb[i].get<double>();
      }
      rec.box = Box::corner_abs(v[0], v[1], v[0] + v[2], v[1] + v[3]);
    }
    const auto& b = rec.box;
    if (!(b.a >= 0.0 && b.b >= 0.0 && b.a < b.c && b.b < b.d && b.c <= static_cast<double>(im.width) &&
          b.d <= static_cast<double>(im.height)))
      throw MalformedRecord("annotation box " + to_string(b) + " outside image " + im.id);
    m.annotations.push_back(std::move(rec));
  }
  return m;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest) {
  std::unordered_map<std::string, std::size_t> index;
  std::vector<Sample> samples;
  samples.reserve(manifest.images.size());
  for (const auto& im : manifest.images) {
    Sample s;
    s.id = im.id;
    s.image = read_ppm(im.file.string());
    if (s.image.width() != im.width || s.image.height() != im.height)
      throw MalformedRecord("image " + im.file.string() + " extents differ from manifest");
    index[im.id] = samples.size();
    samples.push_back(std::move(s));
  }
  for (const auto& a : manifest.annotations) samples[index.at(a.image_id)].annotations.push_back({a.class_id, a.box});
  return samples;
}

fs::path write_dataset(const std::vector<Sample>& samples, const std::vector<std::string>& categories,
                       const fs::path& dir) {
  fs::create_directories(dir);
  json doc;
  doc["images"] = json::array();
  doc["annotations"] = json::array();
  doc["categories"] = json::array();
  for (std::size_t c = 0; c < categories.size(); ++c)
    doc["categories"].push_back({{"id", c}, {"name", categories[c]}});
  for (const auto& s : samples) {
    const std::string file = s.id + ".ppm";
    write_ppm(s.image, (dir / file).string());
    doc["images"].push_back(
        {{"id", s.id}, {"file_name", file}, {"width", s.image.width()}, {"height", s.image.height()}});
    for (const auto& a : s.annotations) {
      const auto& b = a.box;
      doc["annotations"].push_back(
          {{"image_id", s.id}, {"category_id", a.class_id}, {"bbox", {b.a, b.b, b.c - b.a, b.d - b.b}}});
    }
  }
  const fs::path out = dir / "manifest.json";
  std::ofstream f(out);
  f << doc.dump(2) << '\n';
  if (!f) throw Error("failed writing " + out.string());
  return out;
}

// ---- synthetic ------------------------------------------------------------------

std::array<double, 3> class_color(std::size_t cls) {
  static constexpr std::array<std::array<double, 3>, 6> palette{{
      {0.90, 0.20, 0.20},
      {0.20, 0.85, 0.25},
      {0.25, 0.35, 0.95},
      {0.95, 0.85, 0.20},
      {0.85, 0.30, 0.85},
      {0.20, 0.85, 0.85},
  }};
  return palette[cls % palette.size()];
}

std::vector<Sample> generate_synthetic(std::uint64_t seed, std::size_t count, std::size_t image_size,
                                       std::size_t max_objects, std::size_t num_classes) {
  if (count == 0) throw ContractError("generate_synthetic: count must be at least 1");
  if (image_size < 8 || max_objects == 0 || num_classes == 0)
    throw ContractError("generate_synthetic: image_size >= 8, max_objects >= 1 and num_classes >= 1 required");
  Rng rng = derived_stream(seed, 0x73796e746801ULL);
  const auto min_side = std::max<std::size_t>(2, image_size / 6);
  const auto max_side = std::max<std::size_t>(min_side + 1, image_size * 2 / 5);

  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "syn_%04zu", n);
    s.id = id;
    const double bg = uniform(rng, 0.05, 0.25);
    s.image = Image(image_size, image_size, bg);
    const std::size_t objects = 1 + uniform_index(rng, max_objects);
    for (std::size_t attempt = 0; attempt < 200 && s.annotations.size() < objects; ++attempt) {
      const auto w = min_side + uniform_index(rng, max_side - min_side + 1);
      const auto h = min_side + uniform_index(rng, max_side - min_side + 1);
      const auto x = uniform_index(rng, image_size - w + 1);
      const auto y = uniform_index(rng, image_size - h + 1);
      const auto box = Box::corner_abs(static_cast<double>(x), static_cast<double>(y),
                                       static_cast<double>(x + w), static_cast<double>(y + h));
      const auto cls = static_cast<int>(uniform_index(rng, num_classes));
      const bool overlaps = std::any_of(s.annotations.begin(), s.annotations.end(), [&](const Annotation& a) {
        return a.box.a < box.c && box.a < a.box.c && a.box.b < box.d && box.b < a.box.d;
      });
      if (overlaps) continue;
      s.annotations.push_back({cls, box});
    }
    for (const auto& a : s.annotations) {
      const auto color = class_color(static_cast<std::size_t>(a.class_id));
      for (auto yy = static_cast<std::size_t>(a.box.b); yy < static_cast<std::size_t>(a.box.d); ++yy)
        for (auto xx = static_cast<std::size_t>(a.box.a); xx < static_cast<std::size_t>(a.box.c); ++xx)
          for (std::size_t c = 0; c < 3; ++c) s.image.at(c, yy, xx) = color[c];
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---- folds --------------------------------------------------------------------

std::vector<std::string> FoldPlan::validation_ids(std::size_t fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignments)
    if (f == fold) ids.push_back(id);
  return ids;
}

std::vector<std::string> FoldPlan::training_ids(std::size_t fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignments)
    if (f != fold) ids.push_back(id);
  return ids;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (const auto& [id, f] : assignments) ++sizes[f];
  return sizes;
}

FoldPlan kfold_split(std::vector<std::string> ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ContractError("kfold_split: k must be at least 2");
  if (ids.size() < k)
    throw ContractError("kfold_split: " + std::to_string(ids.size()) + " ids cannot fill " + std::to_string(k) +
                        " folds");
  std::unordered_set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) throw ContractError("kfold_split: duplicate ids");
  // Sort first so the plan depends only on the id set, not on input order.
  std::sort(ids.begin(), ids.end());
  Rng rng = derived_stream(seed, 0x666f6c6473ULL);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[uniform_index(rng, i)]);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  for (std::size_t i = 0; i < ids.size(); ++i) plan.assignments[ids[i]] = i % k;
  return plan;
}

json fold_plan_to_json(const FoldPlan& plan) {
  json folds = json::array();
  for (std::size_t f = 0; f < plan.k; ++f) folds.push_back(plan.validation_ids(f));
  return {{"k", plan.k}, {"seed", plan.seed}, {"folds", folds}};
}

FoldPlan fold_plan_from_json(const json& j) {
  FoldPlan plan;
  try {
    plan.k = j.at("k").get<std::size_t>();
    plan.seed = j.value("seed", std::uint64_t{0});
    const auto& folds = j.at("folds");
    if (folds.size() != plan.k) throw MalformedRecord("fold plan: fold count differs from k");
    for (std::size_t f = 0; f < plan.k; ++f)
      for (const auto& id : folds[f]) {
        if (!plan.assignments.emplace(id.get<std::string>(), f).second)
          throw MalformedRecord("fold plan: id assigned twice");
      }
  } catch (const json::exception& e) {
    throw MalformedRecord(std::string("fold plan: ") + e.what());
  }
  return plan;
}

// ---- resize ---------------------------------------------------------------------

ResizePlan plan_resize(std::size_t width, std::size_t height, std::size_t target_short, std::size_t max_long) {
  if (width == 0 || height == 0) throw ContractError("plan_resize: empty image");
  const auto short_edge = static_cast<double>(std::min(width, height));
  const auto long_edge = static_cast<double>(std::max(width, height));
  double scale = static_cast<double>(target_short) / short_edge;
  if (scale * long_edge > static_cast<double>(max_long)) scale = static_cast<double>(max_long) / long_edge;
  const auto round_extent = [scale](std::size_t v) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(v) * scale)));
  };
  return {round_extent(width), round_extent(height), scale};
}

std::vector<Annotation> scale_annotations(const std::vector<Annotation>& anns, double sx, double sy, double width,
                                          double height) {
  std::vector<Annotation> out;
  out.reserve(anns.size());
  for (const auto& a : anns) {
    const double x1 = std::clamp(a.box.a * sx, 0.0, width);
    const double x2 = std::clamp(a.box.c * sx, 0.0, width);
    const double y1 = std::clamp(a.box.b * sy, 0.0, height);
    const double y2 = std::clamp(a.box.d * sy, 0.0, height);
    if (x1 < x2 && y1 < y2) out.push_back({a.class_id, Box::corner_abs(x1, y1, x2, y2)});
  }
  return out;
}

Sample resize_to_short_edge(const Sample& sample, std::size_t target_short, std::size_t max_long) {
  const auto plan = plan_resize(sample.image.width(), sample.image.height(), target_short, max_long);
  Sample out;
  out.id = sample.id;
  out.image = resize_bilinear(sample.image, plan.width, plan.height);
  out.annotations = scale_annotations(sample.annotations, plan.scale, plan.scale, static_cast<double>(plan.width),
                                      static_cast<double>(plan.height));
  return out;
}

Sample resize_multiscale(const Sample& sample, Rng& rng) {
  const auto target = kShortEdgeChoices[uniform_index(rng, kShortEdgeChoices.size())];
  return resize_to_short_edge(sample, target);
}

}  // namespace setdet
