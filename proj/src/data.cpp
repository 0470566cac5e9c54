#include "milseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace milseg {

int mil_bag_label(const std::vector<int>& instance_labels) {
  if (instance_labels.empty())
    throw InputError("mil_bag_label: empty instance list");
  for (int y : instance_labels)
    if (y != kLabelGood && y != kLabelBad)
      throw InputError("mil_bag_label: instance labels must be +1 or -1");
  for (int y : instance_labels)
    if (y == kLabelGood) return kLabelGood;
  return kLabelBad;
}

namespace {

void stamp_disk(ImageGrid& img, BinaryMask& mask, double cr, double cc,
                double radius, double density, double intensity,
                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int r0 = std::max(0, static_cast<int>(std::floor(cr - radius)));
  const int r1 = std::min(img.h - 1, static_cast<int>(std::ceil(cr + radius)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cc - radius)));
  const int c1 = std::min(img.w - 1, static_cast<int>(std::ceil(cc + radius)));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double dr = r - cr, dc = c - cc;
      if (dr * dr + dc * dc > radius * radius) continue;
      mask.set(r, c, true);
      if (uni(rng) < density)
        img.at(r, c) = static_cast<float>(intensity * (0.85 + 0.15 * uni(rng)));
    }
}

LabeledImage make_image(const SyntheticParams& p, bool good, int index,
                        std::mt19937_64& rng) {
  const int s = p.image_size;
  LabeledImage out;
  out.bag_label = good ? kLabelGood : kLabelBad;
  {
    std::ostringstream id;
    id << (good ? "good_" : "bad_");
    id.width(3);
    id.fill('0');
    id << index;
    out.id = id.str();
  }
  ImageGrid img(s, s, 0.0f);
  BinaryMask mask(s, s);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  if (good) {
    std::uniform_int_distribution<int> nblobs(p.good_blob_min, p.good_blob_max);
    const int n = nblobs(rng);
    for (int b = 0; b < n; ++b) {
      const double radius =
          (p.good_radius_min_frac +
           uni(rng) * (p.good_radius_max_frac - p.good_radius_min_frac)) * s;
      const double margin = radius * 0.8;
      const double cr = margin + uni(rng) * (s - 2 * margin);
      const double cc = margin + uni(rng) * (s - 2 * margin);
      // a colony is a clump of overlapping disks, irregular at the rim
      const int lobes = 3 + static_cast<int>(uni(rng) * 3);
      stamp_disk(img, mask, cr, cc, radius, p.good_cell_density,
                 p.cell_intensity, rng);
      for (int l = 0; l < lobes; ++l) {
        const double ang = uni(rng) * 2.0 * 3.14159265358979;
        const double off = radius * (0.3 + 0.4 * uni(rng));
        stamp_disk(img, mask, cr + off * std::cos(ang), cc + off * std::sin(ang),
                   radius * (0.4 + 0.3 * uni(rng)), p.good_cell_density,
                   p.cell_intensity, rng);
      }
    }
  } else {
    std::uniform_int_distribution<int> ncells(p.bad_cell_min, p.bad_cell_max);
    const int n = ncells(rng);
    for (int b = 0; b < n; ++b) {
      const double radius =
          std::max(1.0, (p.bad_radius_min_frac +
                         uni(rng) * (p.bad_radius_max_frac -
                                     p.bad_radius_min_frac)) * s);
      const double cr = radius + uni(rng) * (s - 2 * radius);
      const double cc = radius + uni(rng) * (s - 2 * radius);
      stamp_disk(img, mask, cr, cc, radius, p.bad_cell_density,
                 p.cell_intensity, rng);
    }
  }

  // Fill the background so both classes draw their global mean from the
  // same jittered distribution; neither the mean nor the background level
  // is then a reliable class shortcut.
  const double target = p.target_mean + (2.0 * uni(rng) - 1.0) * p.target_mean_jitter;
  double content_sum = 0.0;
  long long bg_count = 0;
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      if (img.at(r, c) > 0.0f)
        content_sum += img.at(r, c);
      else
        ++bg_count;
    }
  const double total = static_cast<double>(s) * s;
  double bg = bg_count > 0 ? (target * total - content_sum) / bg_count : 0.0;
  bg = std::clamp(bg, 0.0, 1.0);
  std::normal_distribution<double> noise(0.0, p.noise_std);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      double v = img.at(r, c) > 0.0f ? img.at(r, c) : bg;
      v += noise(rng);
      img.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }

  out.pixels = std::move(img);
  out.truth_mask = std::move(mask);
  return out;
}

}  // namespace

Dataset generate_synthetic(const SyntheticParams& params, int n_good, int n_bad) {
  if (n_good < 0 || n_bad < 0 || n_good + n_bad == 0)
    throw ConfigError("generate_synthetic: need positive image counts");
  if (params.image_size < 8)
    throw ConfigError("generate_synthetic: image_size too small");
  std::mt19937_64 rng(params.seed);
  Dataset ds;
  for (int i = 0; i < n_good; ++i)
    ds.items.push_back(make_image(params, true, i, rng));
  for (int i = 0; i < n_bad; ++i)
    ds.items.push_back(make_image(params, false, i, rng));
  return ds;
}

namespace {

ImageGrid map_pixels(const ImageGrid& in, int oh, int ow, auto&& src) {
  ImageGrid out(oh, ow);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      auto [sr, sc] = src(r, c);
      out.at(r, c) = in.at(sr, sc);
    }
  return out;
}

BinaryMask map_mask(const BinaryMask& in, int oh, int ow, auto&& src) {
  BinaryMask out(oh, ow);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      auto [sr, sc] = src(r, c);
      out.set(r, c, in.at(sr, sc));
    }
  return out;
}

LabeledImage transform(const LabeledImage& img, const std::string& suffix,
                       auto&& src) {
  LabeledImage out;
  out.bag_label = img.bag_label;
  out.id = img.id + suffix;
  const int h = img.pixels.h, w = img.pixels.w;
  out.pixels = map_pixels(img.pixels, h, w, src);
  if (img.truth_mask) out.truth_mask = map_mask(*img.truth_mask, h, w, src);
  return out;
}

}  // namespace

std::vector<LabeledImage> augment(const LabeledImage& img) {
  const int h = img.pixels.h, w = img.pixels.w;
  if (h != w)
    throw InputError("augment: rotations require a square image, got " +
                     std::to_string(h) + "x" + std::to_string(w));
  const int n = h;
  std::vector<LabeledImage> out;
  out.reserve(6);
  out.push_back(transform(img, "", [](int r, int c) { return std::pair{r, c}; }));
  out.back().id = img.id + "_id";
  out.push_back(transform(img, "_hf",
                          [n](int r, int c) { return std::pair{r, n - 1 - c}; }));
  out.push_back(transform(img, "_vf",
                          [n](int r, int c) { return std::pair{n - 1 - r, c}; }));
  // rot90: out(r,c) = in(n-1-c, r); applying it twice gives rot180.
  out.push_back(transform(img, "_r90",
                          [n](int r, int c) { return std::pair{n - 1 - c, r}; }));
  out.push_back(transform(
      img, "_r180",
      [n](int r, int c) { return std::pair{n - 1 - r, n - 1 - c}; }));
  out.push_back(transform(img, "_r270",
                          [n](int r, int c) { return std::pair{c, n - 1 - r}; }));
  return out;
}

namespace {

std::vector<size_t> shuffled_indices_of_label(const Dataset& ds, int label,
                                              std::mt19937_64& rng) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < ds.items.size(); ++i)
    if (ds.items[i].bag_label == label) idx.push_back(i);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

FoldSplit kfold_split(const Dataset& dataset, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("kfold_split: k must be >= 2");
  const int n_good = dataset.count_label(kLabelGood);
  const int n_bad = dataset.count_label(kLabelBad);
  if (k > std::min(n_good, n_bad))
    throw ConfigError("kfold_split: k exceeds the smaller class count");
  std::mt19937_64 rng(seed);
  FoldSplit split;
  split.k = k;
  split.fold_of.assign(dataset.items.size(), -1);
  for (int label : {kLabelGood, kLabelBad}) {
    auto idx = shuffled_indices_of_label(dataset, label, rng);
    for (size_t i = 0; i < idx.size(); ++i)
      split.fold_of[idx[i]] = static_cast<int>(i % k);
  }
  return split;
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& dataset,
                                          int n_train_good, int n_train_bad,
                                          std::uint64_t seed) {
  const int n_good = dataset.count_label(kLabelGood);
  const int n_bad = dataset.count_label(kLabelBad);
  if (n_train_good < 0 || n_train_bad < 0 || n_train_good > n_good ||
      n_train_bad > n_bad)
    throw ConfigError("holdout_split: requested per-class train counts "
                      "exceed the dataset");
  std::mt19937_64 rng(seed);
  Dataset train, test;
  for (int label : {kLabelGood, kLabelBad}) {
    auto idx = shuffled_indices_of_label(dataset, label, rng);
    const size_t n_train = static_cast<size_t>(
        label == kLabelGood ? n_train_good : n_train_bad);
    for (size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? train : test).items.push_back(dataset.items[idx[i]]);
  }
  return {std::move(train), std::move(test)};
}

void save_dataset(const std::string& dir, const Dataset& dataset) {
  fs::create_directories(fs::path(dir) / "images");
  bool any_mask = false;
  for (const auto& it : dataset.items)
    if (it.truth_mask) any_mask = true;
  if (any_mask) fs::create_directories(fs::path(dir) / "masks");

  std::ofstream labels(fs::path(dir) / "labels.csv", std::ios::trunc);
  if (!labels) throw IoError("cannot write labels.csv in " + dir);
  labels << "id,label\n";
  for (const auto& it : dataset.items) {
    save_pgm((fs::path(dir) / "images" / (it.id + ".pgm")).string(), it.pixels);
    if (it.truth_mask) {
      ImageGrid m(it.truth_mask->h, it.truth_mask->w);
      for (size_t i = 0; i < m.v.size(); ++i)
        m.v[i] = it.truth_mask->bits[i] ? 1.0f : 0.0f;
      save_pgm((fs::path(dir) / "masks" / (it.id + ".pgm")).string(), m);
    }
    labels << it.id << "," << (it.bag_label == kLabelGood ? "good" : "bad")
           << "\n";
  }
  if (!labels) throw IoError("failed writing labels.csv in " + dir);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream labels(fs::path(dir) / "labels.csv");
  if (!labels) throw IoError("cannot open labels.csv in " + dir);
  std::string line;
  if (!std::getline(labels, line) || line != "id,label")
    throw IoError("labels.csv in " + dir + " has an unexpected header");
  Dataset ds;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw IoError("malformed labels.csv row: " + line);
    LabeledImage item;
    item.id = line.substr(0, comma);
    const std::string label = line.substr(comma + 1);
    if (label == "good")
      item.bag_label = kLabelGood;
    else if (label == "bad")
      item.bag_label = kLabelBad;
    else
      throw IoError("unknown label '" + label + "' for id " + item.id);
    item.pixels = load_pgm((fs::path(dir) / "images" / (item.id + ".pgm")).string());
    const fs::path mask_path = fs::path(dir) / "masks" / (item.id + ".pgm");
    if (fs::exists(mask_path)) {
      ImageGrid m = load_pgm(mask_path.string());
      BinaryMask mask(m.h, m.w);
      for (size_t i = 0; i < m.v.size(); ++i) mask.bits[i] = m.v[i] > 0.5f;
      item.truth_mask = std::move(mask);
    }
    ds.items.push_back(std::move(item));
  }
  return ds;
}

void save_folds_csv(const std::string& path, const Dataset& dataset,
                    const FoldSplit& split) {
  if (split.fold_of.size() != dataset.items.size())
    throw UsageError("save_folds_csv: split does not match dataset");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << "id,fold\n";
  for (size_t i = 0; i < dataset.items.size(); ++i)
    f << dataset.items[i].id << "," << split.fold_of[i] << "\n";
  if (!f) throw IoError("failed writing " + path);
}

}  // namespace milseg
