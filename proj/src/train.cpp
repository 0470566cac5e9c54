#include "milseg/train.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

namespace milseg {

namespace {

Tensor<float> make_batch(const std::vector<const LabeledImage*>& items) {
  const int n = static_cast<int>(items.size());
  const int h = items[0]->pixels.h, w = items[0]->pixels.w;
  Tensor<float> batch = Tensor<float>::zeros({n, 1, h, w});
  for (int i = 0; i < n; ++i)
    std::copy(items[i]->pixels.v.begin(), items[i]->pixels.v.end(),
              batch.data().begin() + static_cast<long long>(i) * h * w);
  return batch;
}

}  // namespace

MilNet<float> train_model(const Dataset& train_set, const TrainOptions& opts,
                          std::vector<EpochStats>* log,
                          const EpochCallback& callback) {
  if (train_set.items.empty()) throw InputError("train_model: empty train set");
  for (const auto& it : train_set.items)
    if (it.pixels.h != opts.model.input_size || it.pixels.w != opts.model.input_size)
      throw DimensionError("train_model: image " + it.id +
                           " does not match the model input size");

  ModelConfig cfg = opts.model;
  cfg.seed = opts.seed;
  MilNet<float> net = build<float>(cfg);
  auto params = net.parameters();
  Adam<float> adam(opts.alpha, opts.beta1, opts.beta2, opts.epsilon,
                   opts.weight_decay);

  // Epoch sample pool: every augmentation variant of every train image.
  std::vector<LabeledImage> pool;
  if (opts.augment) {
    for (const auto& it : train_set.items)
      for (auto& v : augment(it)) pool.push_back(std::move(v));
  } else {
    pool = train_set.items;
  }

  std::mt19937_64 order_rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<size_t> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  // Fail-fast shape check before any optimizer state exists.
  {
    std::vector<const LabeledImage*> probe{&pool[0]};
    net.forward(make_batch(probe), Mode::kInference);
  }

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    long long batches = 0, correct = 0, seen = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(opts.batch_size)) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(opts.batch_size));
      std::vector<const LabeledImage*> items;
      std::vector<int> classes;
      for (size_t i = start; i < end; ++i) {
        items.push_back(&pool[order[i]]);
        classes.push_back(label_to_class(pool[order[i]].bag_label));
      }
      Tensor<float> batch = make_batch(items);
      auto result = net.forward(batch, Mode::kTrain);
      Tensor<float> loss = softmax_cross_entropy(result.logits, classes);
      zero_grads(params);
      backward(loss);
      adam.step(params, &opts.schedule);

      loss_sum += loss.data()[0];
      ++batches;
      const int ncls = net.config.num_classes;
      for (size_t i = 0; i < items.size(); ++i) {
        const float* row =
            result.logits.data().data() + static_cast<long long>(i) * ncls;
        int arg = 0;
        for (int c = 1; c < ncls; ++c)
          if (row[c] > row[arg]) arg = c;
        if (arg == classes[i]) ++correct;
        ++seen;
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.iteration = adam.iterations();
    stats.lr = opts.schedule.rate_at(opts.alpha, stats.iteration);
    stats.train_loss = loss_sum / static_cast<double>(batches);
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (log) log->push_back(stats);
    if (callback && !callback(stats, net)) break;
  }
  return net;
}

std::pair<std::vector<double>, std::vector<int>> score_dataset(
    MilNet<float>& net, const Dataset& dataset) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& it : dataset.items) {
    std::vector<const LabeledImage*> one{&it};
    auto result = net.forward(make_batch(one), Mode::kInference);
    const auto probs = softmax_rows(result.logits);
    scores.push_back(static_cast<double>(probs[label_to_class(kLabelGood)]));
    labels.push_back(it.bag_label);
  }
  return {std::move(scores), std::move(labels)};
}

void write_train_log_csv(const std::string& path,
                         const std::vector<EpochStats>& log) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << "epoch,iteration,lr,train_loss,train_acc\n";
  for (const auto& s : log) {
    std::ostringstream row;
    row.precision(8);
    row << s.epoch << "," << s.iteration << "," << s.lr << "," << s.train_loss
        << "," << s.train_acc << "\n";
    f << row.str();
  }
  if (!f) throw IoError("failed writing " + path);
}

}  // namespace milseg
