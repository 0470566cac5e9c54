#pragma once

// Synthetic colony images (stand-in for the private microscope corpus),
// bag labeling, augmentation, dataset directory I/O, and train/test
// splitting.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "milseg/image.hpp"
#include "milseg/morphology.hpp"

namespace milseg {

constexpr int kLabelGood = +1;
constexpr int kLabelBad = -1;

// Class index used by the classifier head: bad -> 0, good -> 1.
inline int label_to_class(int bag_label) { return bag_label == kLabelGood ? 1 : 0; }
inline int class_to_label(int cls) { return cls == 1 ? kLabelGood : kLabelBad; }

struct LabeledImage {
  ImageGrid pixels;            // intensities in [0, 1]
  int bag_label = kLabelBad;   // +1 good, -1 bad
  std::optional<BinaryMask> truth_mask;  // synthetic data only
  std::string id;
};

struct Dataset {
  std::vector<LabeledImage> items;

  int count_label(int bag_label) const {
    int n = 0;
    for (const auto& it : items)
      if (it.bag_label == bag_label) ++n;
    return n;
  }
};

struct FoldSplit {
  int k = 0;
  std::vector<int> fold_of;  // per-item fold index in [0, k)
};

struct SyntheticParams {
  int image_size = 64;
  // good class: few large dense blobs
  int good_blob_min = 1;
  int good_blob_max = 2;
  double good_radius_min_frac = 0.18;  // of image_size
  double good_radius_max_frac = 0.30;
  double good_cell_density = 0.92;  // bright-pixel probability inside a blob
  // bad class: scattered isolated cells
  int bad_cell_min = 6;
  int bad_cell_max = 14;
  double bad_radius_min_frac = 0.04;
  double bad_radius_max_frac = 0.06;
  double bad_cell_density = 1.0;
  double cell_intensity = 0.85;
  double noise_std = 0.03;
  // Both classes share the same per-image mean distribution so that
  // neither global mean nor background level separates them; the jitter
  // smears the residual background-vs-coverage correlation.
  double target_mean = 0.35;
  double target_mean_jitter = 0.10;
  std::uint64_t seed = 1234;
};

// Bag label per the MIL rule: positive iff any instance is positive.
int mil_bag_label(const std::vector<int>& instance_labels);

// Deterministic under params.seed. Good images carry dense contiguous
// blobs (truth_mask = blob support); bad images carry sparse isolated
// cells (truth_mask = their union).
Dataset generate_synthetic(const SyntheticParams& params, int n_good, int n_bad);

// {identity, horizontal flip, vertical flip, rot90, rot180, rot270}
// applied to pixels and truth mask alike. Rotations follow the
// counter-clockwise convention rot90(out)(r,c) = in(H-1-c, r) and
// require a square image.
std::vector<LabeledImage> augment(const LabeledImage& img);

// Stratified k-fold partition, deterministic under seed: per-fold class
// counts differ by at most one from an even split.
FoldSplit kfold_split(const Dataset& dataset, int k, std::uint64_t seed);

// Per-class train counts (e.g. 44 good / 30 bad train, rest test).
std::pair<Dataset, Dataset> holdout_split(const Dataset& dataset,
                                          int n_train_good, int n_train_bad,
                                          std::uint64_t seed);

// Directory layout: images/<id>.pgm, masks/<id>.pgm (optional),
// labels.csv with header id,label (label in {good,bad}).
void save_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

void save_folds_csv(const std::string& path, const Dataset& dataset,
                    const FoldSplit& split);

}  // namespace milseg
