#pragma once

// Single-threaded training driver shared by the CLI and the tests.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "milseg/data.hpp"
#include "milseg/model.hpp"
#include "milseg/optim.hpp"

namespace milseg {

struct TrainOptions {
  ModelConfig model;
  double alpha = 0.0001;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.000001;
  LrSchedule schedule;
  int epochs = 30;
  int batch_size = 4;
  bool augment = true;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;            // 1-based
  long long iteration = 0;  // optimizer steps taken so far
  double lr = 0.0;          // effective rate at that iteration
  double train_loss = 0.0;  // mean over the epoch's batches
  double train_acc = 0.0;   // argmax accuracy over the epoch's samples
};

// Called after each epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochStats&, MilNet<float>&)>;

// Trains on the given set with on-the-fly augmentation (all six variants
// per epoch when enabled). Deterministic under opts.seed.
MilNet<float> train_model(const Dataset& train_set, const TrainOptions& opts,
                          std::vector<EpochStats>* log = nullptr,
                          const EpochCallback& callback = nullptr);

// Inference-mode P(good) scores plus bag labels, in dataset order.
std::pair<std::vector<double>, std::vector<int>> score_dataset(
    MilNet<float>& net, const Dataset& dataset);

void write_train_log_csv(const std::string& path,
                         const std::vector<EpochStats>& log);

}  // namespace milseg
