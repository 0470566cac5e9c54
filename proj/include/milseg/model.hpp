#pragma once

// The MIL-net: a U-net-like encoder/decoder classifier assembled from
// tensor ops, with an average-pool head or a fully-connected baseline
// head. Also owns the checkpoint format.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "milseg/tensor.hpp"

namespace milseg {

enum class HeadKind { kAvgPoolFc, kFcBaseline };

inline std::string head_name(HeadKind h) {
  return h == HeadKind::kAvgPoolFc ? "avg_pool_fc" : "fc_baseline";
}
inline HeadKind head_from_name(const std::string& s) {
  if (s == "avg_pool_fc") return HeadKind::kAvgPoolFc;
  if (s == "fc_baseline") return HeadKind::kFcBaseline;
  throw ConfigError("unknown head kind: " + s);
}

struct ModelConfig {
  int input_size = 64;
  int input_channels = 1;
  int base_channels = 8;
  int max_channels = 32;
  int depth = 6;
  HeadKind head = HeadKind::kAvgPoolFc;
  std::vector<int> fc_baseline_widths = {5000, 1000, 2};
  int dropout_layers = 3;
  double dropout_rate = 0.5;
  double leaky_slope = 0.2;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
  int num_classes = 2;
  std::uint64_t seed = 0;

  // Paper-scale profile: 250x250 inputs, 64..512 channels, depth 8.
  static ModelConfig paper_profile() {
    ModelConfig c;
    c.input_size = 250;
    c.base_channels = 64;
    c.max_channels = 512;
    c.depth = 8;
    return c;
  }

  // Encoder output channels per layer: base doubling, capped at max.
  std::vector<int> encoder_channels() const {
    std::vector<int> chs(depth);
    int c = base_channels;
    for (int i = 0; i < depth; ++i) {
      chs[i] = std::min(c, max_channels);
      if (c < max_channels) c *= 2;
    }
    return chs;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_size", c.input_size},
                     {"input_channels", c.input_channels},
                     {"base_channels", c.base_channels},
                     {"max_channels", c.max_channels},
                     {"depth", c.depth},
                     {"head", head_name(c.head)},
                     {"fc_baseline_widths", c.fc_baseline_widths},
                     {"dropout_layers", c.dropout_layers},
                     {"dropout_rate", c.dropout_rate},
                     {"leaky_slope", c.leaky_slope},
                     {"bn_momentum", c.bn_momentum},
                     {"bn_epsilon", c.bn_epsilon},
                     {"num_classes", c.num_classes},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("input_size").get_to(c.input_size);
  j.at("input_channels").get_to(c.input_channels);
  j.at("base_channels").get_to(c.base_channels);
  j.at("max_channels").get_to(c.max_channels);
  j.at("depth").get_to(c.depth);
  c.head = head_from_name(j.at("head").get<std::string>());
  j.at("fc_baseline_widths").get_to(c.fc_baseline_widths);
  j.at("dropout_layers").get_to(c.dropout_layers);
  j.at("dropout_rate").get_to(c.dropout_rate);
  j.at("leaky_slope").get_to(c.leaky_slope);
  j.at("bn_momentum").get_to(c.bn_momentum);
  j.at("bn_epsilon").get_to(c.bn_epsilon);
  j.at("num_classes").get_to(c.num_classes);
  j.at("seed").get_to(c.seed);
}

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct EncoderLayer {
  ConvParams<T> conv;
  BatchNormState<T> bn;
  int in_size = 0;   // spatial size entering the layer
  int out_size = 0;  // spatial size leaving the layer
};

template <typename T>
struct DecoderLayer {
  ConvParams<T> deconv;  // padding 0; output center-cropped to target_size
  std::optional<BatchNormState<T>> bn;  // absent on the reconstruction layer
  bool has_dropout = false;
  int skip_index = -1;  // encoder layer whose output is concatenated, -1 = none
  int target_size = 0;
  int crop_top = 0;
  int crop_left = 0;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;           // batch x num_classes
  Tensor<T> last_activation;  // batch x base_channels x input x input
};

template <typename T>
class MilNet {
 public:
  ModelConfig config;
  std::vector<EncoderLayer<T>> encoder;
  std::vector<DecoderLayer<T>> decoder;
  std::vector<std::pair<Tensor<T>, Tensor<T>>> head;  // (weight, bias) chain

  // Dropout noise source. Training draws from it sequentially, so a run
  // is deterministic given the seed; reseed_dropout pins masks for tests.
  std::mt19937_64 dropout_rng;

  void reseed_dropout(std::uint64_t seed) { dropout_rng.seed(seed); }

  ForwardResult<T> forward(const Tensor<T>& batch, Mode mode) {
    if (batch.ndim() != 4 || batch.dim(1) != config.input_channels ||
        batch.dim(2) != config.input_size || batch.dim(3) != config.input_size)
      throw DimensionError(
          "forward: expected batch x " + std::to_string(config.input_channels) +
          " x " + std::to_string(config.input_size) + " x " +
          std::to_string(config.input_size) + ", got " + shape_str(batch.shape()));

    std::vector<Tensor<T>> skips;
    Tensor<T> x = batch;
    for (auto& layer : encoder) {
      x = conv2d(x, layer.conv);
      x = batch_norm(x, layer.bn, mode);
      x = leaky_relu(x, T(config.leaky_slope));
      skips.push_back(x);
    }

    Tensor<T> d = skips.back();
    for (size_t i = 0; i < decoder.size(); ++i) {
      auto& layer = decoder[i];
      if (layer.skip_index >= 0)
        d = concat_channels(d, skips[static_cast<size_t>(layer.skip_index)]);
      d = deconv2d(d, layer.deconv);
      if (d.dim(2) != layer.target_size || d.dim(3) != layer.target_size)
        d = crop2d(d, layer.crop_top, layer.crop_left, layer.target_size,
                   layer.target_size);
      if (layer.bn) d = batch_norm(d, *layer.bn, mode);
      d = relu(d);
      if (layer.has_dropout)
        d = dropout(d, config.dropout_rate, mode, dropout_rng);
    }
    Tensor<T> last_activation = d;

    Tensor<T> h;
    if (config.head == HeadKind::kAvgPoolFc) {
      h = global_average_pool(d);
      h = linear(h, head[0].first, head[0].second);
    } else {
      h = flatten(d);
      for (size_t i = 0; i < head.size(); ++i) {
        h = linear(h, head[i].first, head[i].second);
        if (i + 1 < head.size()) h = relu(h);
      }
    }
    return {h, last_activation};
  }

  // Learnable parameters in a stable order (conv/deconv weights and
  // biases, batch-norm scale and shift, head weights and biases).
  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> ps;
    for (size_t i = 0; i < encoder.size(); ++i) {
      const std::string base = "enc" + std::to_string(i + 1);
      ps.push_back({base + ".weight", encoder[i].conv.weight});
      ps.push_back({base + ".bias", encoder[i].conv.bias});
      ps.push_back({base + ".bn.scale", encoder[i].bn.scale});
      ps.push_back({base + ".bn.shift", encoder[i].bn.shift});
    }
    for (size_t i = 0; i < decoder.size(); ++i) {
      const std::string base = "dec" + std::to_string(i + 1);
      ps.push_back({base + ".weight", decoder[i].deconv.weight});
      ps.push_back({base + ".bias", decoder[i].deconv.bias});
      if (decoder[i].bn) {
        ps.push_back({base + ".bn.scale", decoder[i].bn->scale});
        ps.push_back({base + ".bn.shift", decoder[i].bn->shift});
      }
    }
    for (size_t i = 0; i < head.size(); ++i) {
      const std::string base = "head" + std::to_string(i + 1);
      ps.push_back({base + ".weight", head[i].first});
      ps.push_back({base + ".bias", head[i].second});
    }
    return ps;
  }

  long long parameter_count() {
    long long n = 0;
    for (auto& p : parameters()) n += p.tensor.size();
    return n;
  }

  // Encoder/decoder-only count (head excluded); used to compare heads.
  long long backbone_parameter_count() {
    long long n = 0;
    for (auto& p : parameters())
      if (p.name.rfind("head", 0) != 0) n += p.tensor.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }
};

// ---------------------------------------------------------------------------
// build
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> gaussian_init(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace detail

// Deterministic construction from config.seed. Convolutions are 4x4
// stride 2; encoder halves the spatial size (floor for odd sizes, a 1x1
// bottleneck keeps size with padding 2 on the final layer only), the
// decoder mirrors each size exactly via deconv + center crop.
template <typename T>
MilNet<T> build(const ModelConfig& config) {
  if (config.input_size < 2) throw ConfigError("build: input_size must be >= 2");
  if (config.depth < 1) throw ConfigError("build: depth must be >= 1");
  if (config.base_channels < 1 || config.max_channels < config.base_channels)
    throw ConfigError("build: invalid channel bounds");
  if (config.num_classes < 2) throw ConfigError("build: num_classes must be >= 2");
  if (config.dropout_rate < 0.0 || config.dropout_rate >= 1.0)
    throw ConfigError("build: dropout_rate must be in [0, 1)");
  if (config.head == HeadKind::kFcBaseline && config.fc_baseline_widths.empty())
    throw ConfigError("build: fc_baseline_widths must be non-empty");

  constexpr int kKernel = 4;
  constexpr int kStride = 2;

  MilNet<T> net;
  net.config = config;
  net.reseed_dropout(config.seed + 1);
  std::mt19937_64 rng(config.seed);

  const std::vector<int> enc_ch = config.encoder_channels();

  // Encoder spatial plan.
  std::vector<int> in_sizes(config.depth), out_sizes(config.depth),
      paddings(config.depth);
  int size = config.input_size;
  for (int i = 0; i < config.depth; ++i) {
    in_sizes[i] = size;
    if (size >= 2) {
      paddings[i] = 1;
      size = (size + 2 - kKernel) / kStride + 1;  // floor(size/2)
    } else {
      // 1x1 bottleneck: legal only as the final encoder layer.
      if (i != config.depth - 1)
        throw ConfigError(
            "build: spatial size collapsed to 1 before the last encoder "
            "layer; reduce depth or enlarge input_size");
      paddings[i] = 2;
      size = 1;
    }
    out_sizes[i] = size;
  }

  for (int i = 0; i < config.depth; ++i) {
    const int cin = i == 0 ? config.input_channels : enc_ch[i - 1];
    EncoderLayer<T> layer;
    layer.conv.weight =
        detail::gaussian_init<T>({enc_ch[i], cin, kKernel, kKernel}, rng, 0.02);
    layer.conv.bias = Tensor<T>::zeros({enc_ch[i]}, true);
    layer.conv.stride = kStride;
    layer.conv.padding = paddings[i];
    layer.bn = BatchNormState<T>::make(enc_ch[i], T(config.bn_momentum),
                                       T(config.bn_epsilon));
    layer.in_size = in_sizes[i];
    layer.out_size = out_sizes[i];
    net.encoder.push_back(std::move(layer));
  }

  // Decoder layer i (1-based) inverts encoder layer depth+1-i and, for
  // i >= 2, first concatenates the matching encoder output.
  int prev_ch = enc_ch[config.depth - 1];
  int prev_size = out_sizes[config.depth - 1];
  for (int i = 1; i <= config.depth; ++i) {
    const int inv = config.depth - i;  // encoder layer index being inverted
    const bool is_reconstruction = (i == config.depth);
    DecoderLayer<T> layer;
    layer.skip_index = i >= 2 ? inv : -1;
    const int cin = prev_ch + (layer.skip_index >= 0 ? enc_ch[inv] : 0);
    const int cout = is_reconstruction ? config.base_channels : enc_ch[inv - 1];
    layer.deconv.weight =
        detail::gaussian_init<T>({cout, cin, kKernel, kKernel}, rng, 0.02);
    layer.deconv.bias = Tensor<T>::zeros({cout}, true);
    layer.deconv.stride = kStride;
    layer.deconv.padding = 0;
    layer.target_size = in_sizes[inv];
    const int full = (prev_size - 1) * kStride + kKernel;
    if (full < layer.target_size)
      throw ConfigError("build: decoder cannot reach target spatial size");
    layer.crop_top = (full - layer.target_size) / 2;
    layer.crop_left = layer.crop_top;
    if (!is_reconstruction)
      layer.bn = BatchNormState<T>::make(cout, T(config.bn_momentum),
                                         T(config.bn_epsilon));
    layer.has_dropout = i <= config.dropout_layers;
    prev_ch = cout;
    prev_size = layer.target_size;
    net.decoder.push_back(std::move(layer));
  }

  if (config.head == HeadKind::kAvgPoolFc) {
    net.head.emplace_back(
        detail::gaussian_init<T>({config.num_classes, config.base_channels}, rng, 0.02),
        Tensor<T>::zeros({config.num_classes}, true));
  } else {
    long long feat = static_cast<long long>(config.base_channels) *
                     config.input_size * config.input_size;
    for (int width : config.fc_baseline_widths) {
      net.head.emplace_back(
          detail::gaussian_init<T>({width, static_cast<int>(feat)}, rng, 0.02),
          Tensor<T>::zeros({width}, true));
      feat = width;
    }
    if (config.fc_baseline_widths.back() != config.num_classes)
      throw ConfigError("build: last fc_baseline width must equal num_classes");
  }
  return net;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------
//
// Layout: magic "MILSEG01", u32-LE header length, UTF-8 JSON header
// (config + ordered tensor manifest), tensors as f32-LE in manifest
// order, u64-LE CRC-64/ECMA of the tensor payload.

namespace detail {

inline std::uint64_t crc64(const std::uint8_t* data, size_t len) {
  static const std::uint64_t kPoly = 0x42F0E1EBA9EA3693ULL;
  static std::uint64_t table[256];
  static bool init = [] {
    for (int i = 0; i < 256; ++i) {
      std::uint64_t c = static_cast<std::uint64_t>(i) << 56;
      for (int b = 0; b < 8; ++b) c = (c & (1ULL << 63)) ? (c << 1) ^ kPoly : c << 1;
      table[i] = c;
    }
    return true;
  }();
  (void)init;
  std::uint64_t crc = 0;
  for (size_t i = 0; i < len; ++i)
    crc = table[static_cast<std::uint8_t>(crc >> 56) ^ data[i]] << 8 ^ (crc << 8);
  return crc;
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32le(out, bits);
}

// All persisted tensors: learnable parameters plus batch-norm running
// statistics (needed to reproduce inference bitwise).
template <typename T>
std::vector<std::pair<std::string, std::vector<T>*>> checkpoint_entries(
    MilNet<T>& net, std::vector<std::vector<T>>& scratch) {
  std::vector<std::pair<std::string, std::vector<T>*>> entries;
  for (auto& p : net.parameters()) entries.emplace_back(p.name, &p.tensor.data());
  auto add_running = [&](const std::string& base, BatchNormState<T>& bn) {
    entries.emplace_back(base + ".bn.running_mean", &bn.running_mean);
    entries.emplace_back(base + ".bn.running_var", &bn.running_var);
  };
  for (size_t i = 0; i < net.encoder.size(); ++i)
    add_running("enc" + std::to_string(i + 1), net.encoder[i].bn);
  for (size_t i = 0; i < net.decoder.size(); ++i)
    if (net.decoder[i].bn)
      add_running("dec" + std::to_string(i + 1), *net.decoder[i].bn);
  (void)scratch;
  return entries;
}

template <typename T>
Shape entry_shape(MilNet<T>& net, const std::string& name) {
  for (auto& p : net.parameters())
    if (p.name == name) return p.tensor.shape();
  // running stats are flat per-channel vectors
  auto find_bn = [&](const std::string& base) -> BatchNormState<T>* {
    for (size_t i = 0; i < net.encoder.size(); ++i)
      if (base == "enc" + std::to_string(i + 1)) return &net.encoder[i].bn;
    for (size_t i = 0; i < net.decoder.size(); ++i)
      if (base == "dec" + std::to_string(i + 1))
        return net.decoder[i].bn ? &*net.decoder[i].bn : nullptr;
    return nullptr;
  };
  auto pos = name.find(".bn.running_");
  if (pos != std::string::npos) {
    BatchNormState<T>* bn = find_bn(name.substr(0, pos));
    if (bn) return {static_cast<int>(bn->running_mean.size())};
  }
  throw CheckpointCorruptError("unknown tensor in manifest: " + name);
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'M', 'I', 'L', 'S', 'E', 'G', '0', '1'};

template <typename T>
void save_checkpoint(MilNet<T>& net, const std::string& path) {
  std::vector<std::vector<T>> scratch;
  auto entries = detail::checkpoint_entries(net, scratch);

  nlohmann::json manifest = nlohmann::json::array();
  for (auto& [name, vec] : entries) {
    Shape shape = detail::entry_shape(net, name);
    manifest.push_back({{"name", name}, {"shape", shape}});
  }
  nlohmann::json header = {{"config", net.config}, {"manifest", manifest}};
  const std::string header_str = header.dump();

  std::string payload;
  for (auto& [name, vec] : entries)
    for (T v : *vec) detail::put_f32le(payload, static_cast<float>(v));

  std::string out;
  out.append(kCheckpointMagic, 8);
  detail::put_u32le(out, static_cast<std::uint32_t>(header_str.size()));
  out += header_str;
  out += payload;
  detail::put_u64le(out, detail::crc64(
                             reinterpret_cast<const std::uint8_t*>(payload.data()),
                             payload.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

template <typename T>
MilNet<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointMagicError("bad checkpoint magic in " + path);
  std::uint32_t header_len = 0;
  for (int i = 0; i < 4; ++i)
    header_len |= static_cast<std::uint32_t>(
                      static_cast<std::uint8_t>(bytes[8 + i]))
                  << (8 * i);
  if (bytes.size() < 12 + static_cast<size_t>(header_len) + 8)
    throw CheckpointTruncatedError("checkpoint truncated in header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointCorruptError(std::string("bad checkpoint header: ") + e.what());
  }
  MilNet<T> net = build<T>(header.at("config").get<ModelConfig>());

  std::vector<std::vector<T>> scratch;
  auto entries = detail::checkpoint_entries(net, scratch);
  const auto& manifest = header.at("manifest");
  if (manifest.size() != entries.size())
    throw CheckpointCorruptError("manifest entry count mismatch");

  const size_t payload_off = 12 + header_len;
  const size_t payload_len = bytes.size() - payload_off - 8;
  size_t off = payload_off;
  for (size_t e = 0; e < entries.size(); ++e) {
    auto& [name, vec] = entries[e];
    if (manifest[e].at("name").get<std::string>() != name)
      throw CheckpointCorruptError("manifest order mismatch at " + name);
    const Shape stored = manifest[e].at("shape").get<Shape>();
    if (shape_numel(stored) != static_cast<long long>(vec->size()))
      throw DimensionError("checkpoint tensor " + name + " has shape " +
                           shape_str(stored) + " incompatible with model");
    if (off + vec->size() * 4 > payload_off + payload_len)
      throw CheckpointTruncatedError("checkpoint truncated in tensor " + name);
    for (size_t i = 0; i < vec->size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(
                    static_cast<std::uint8_t>(bytes[off + 4 * i + b]))
                << (8 * b);
      float v;
      std::memcpy(&v, &bits, 4);
      (*vec)[i] = static_cast<T>(v);
    }
    off += vec->size() * 4;
  }
  if (off != payload_off + payload_len)
    throw CheckpointCorruptError("checkpoint has trailing payload bytes");

  std::uint64_t stored_crc = 0;
  for (int i = 0; i < 8; ++i)
    stored_crc |= static_cast<std::uint64_t>(
                      static_cast<std::uint8_t>(bytes[bytes.size() - 8 + i]))
                  << (8 * i);
  const std::uint64_t actual = detail::crc64(
      reinterpret_cast<const std::uint8_t*>(bytes.data()) + payload_off,
      payload_len);
  if (stored_crc != actual)
    throw CheckpointCorruptError("checkpoint CRC mismatch: " + path);
  return net;
}

}  // namespace milseg
