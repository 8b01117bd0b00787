#include "bitlab/sdn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "bitlab/checkpoint.hpp"
#include "bitlab/errors.hpp"
#include "bitlab/rng.hpp"

namespace bitlab {

Family family_from_string(const std::string& s) {
  if (s == "mini-resnet") return Family::MiniResNet;
  if (s == "mini-vgg") return Family::MiniVgg;
  throw ConfigError("unknown model family '" + s + "' (expected mini-resnet or mini-vgg)");
}

std::string family_to_string(Family f) {
  return f == Family::MiniResNet ? "mini-resnet" : "mini-vgg";
}

namespace {

constexpr int kMaxAttachPoints = 6;  // backbone units 1..6 feed ICs; unit 7 feeds the final head

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const float bound = std::sqrt(6.f / static_cast<float>(fan_in));
  for (auto& v : t.v) v = rng.uniform(-bound, bound);
  return t;
}

struct Builder {
  const ModelConfig& cfg;
  ShallowDeepNet& net;
  Rng& rng;

  void conv_param(const std::string& name, int cout, int cin, int k, bool zero_init,
                  bool bias = true) {
    Tensor w = zero_init ? Tensor::zeros({cout, cin, k, k})
                         : kaiming_uniform({cout, cin, k, k}, cin * k * k, rng);
    net.graph.add_param(name + ".w", std::move(w));
    net.groups.emplace(name + ".w", ParamGroup::Backbone);
    if (bias) {
      net.graph.add_param(name + ".b", Tensor::zeros({cout}));
      net.groups.emplace(name + ".b", ParamGroup::Backbone);
    }
  }

  int conv(int x, const std::string& name, int stride, int pad, bool bias = true) {
    return net.graph.add_conv2d(x, name + ".w", bias ? name + ".b" : "", stride, pad, name);
  }

  // conv3x3 -> relu -> conv3x3 (zero-init) + skip -> relu
  int residual_block(int x, const std::string& name, int cin, int cout, int stride) {
    conv_param(name + ".conv1", cout, cin, 3, false);
    conv_param(name + ".conv2", cout, cout, 3, true);
    int main = conv(x, name + ".conv1", stride, 1);
    main = net.graph.add_relu(main, name + ".relu1");
    main = conv(main, name + ".conv2", 1, 1);
    int skip = x;
    if (cin != cout || stride != 1) {
      conv_param(name + ".proj", cout, cin, 1, false, /*bias=*/false);
      skip = conv(x, name + ".proj", stride, 0, /*bias=*/false);
    }
    int sum = net.graph.add_add(main, skip, name + ".add");
    return net.graph.add_relu(sum, name + ".relu2");
  }

  int vgg_block(int x, const std::string& name, int cin, int cout, bool pool) {
    conv_param(name + ".conv", cout, cin, 3, false);
    int y = conv(x, name + ".conv", 1, 1);
    y = net.graph.add_relu(y, name + ".relu");
    if (pool) y = net.graph.add_maxpool2(y, name + ".pool");
    return y;
  }

  int ic_head(int x, int channels, int index) {
    const std::string name = "ic" + std::to_string(index);
    net.graph.add_param(name + ".fc.w",
                        kaiming_uniform({cfg.classes, channels}, channels, rng));
    net.graph.add_param(name + ".fc.b", Tensor::zeros({cfg.classes}));
    net.groups.emplace(name + ".fc.w", ParamGroup::Ics);
    net.groups.emplace(name + ".fc.b", ParamGroup::Ics);
    int gap = net.graph.add_global_avg_pool(x, name + ".gap");
    return net.graph.add_linear(gap, name + ".fc.w", name + ".fc.b", name + ".fc");
  }
};

}  // namespace

ShallowDeepNet build_model(const ModelConfig& cfg, uint64_t seed) {
  if (cfg.ic_count < 2)
    throw ConfigError("ic-count must be at least 2, got " + std::to_string(cfg.ic_count));
  if (cfg.ic_count > kMaxAttachPoints)
    throw ConfigError("ic-count " + std::to_string(cfg.ic_count) + " exceeds the " +
                      std::to_string(kMaxAttachPoints) + " available attachment points");
  if (cfg.width < 1) throw ConfigError("width multiplier must be positive");
  if (cfg.classes < 2) throw ConfigError("classes must be at least 2");

  ShallowDeepNet net;
  net.cfg = cfg;
  Rng rng(Rng::mix(seed, 0x5d4e));
  Builder b{cfg, net, rng};

  const int c1 = 8 * cfg.width, c2 = 16 * cfg.width, c3 = 32 * cfg.width;
  int x = net.graph.add_input({cfg.in_channels, cfg.in_h, cfg.in_w}, "input");

  // backbone units 1..7; ICs may attach after units 1..6
  std::vector<int> unit_out;     // activation node per unit
  std::vector<int> unit_chan;    // channels per unit
  b.conv_param("stem.conv", c1, cfg.in_channels, 3, false);
  int y = b.conv(x, "stem.conv", 1, 1);
  y = net.graph.add_relu(y, "stem.relu");
  unit_out.push_back(y);
  unit_chan.push_back(c1);

  if (cfg.family == Family::MiniResNet) {
    y = b.residual_block(y, "u1", c1, c1, 1);
    unit_out.push_back(y); unit_chan.push_back(c1);
    y = b.residual_block(y, "u2", c1, c1, 1);
    unit_out.push_back(y); unit_chan.push_back(c1);
    y = b.residual_block(y, "u3", c1, c2, 2);
    unit_out.push_back(y); unit_chan.push_back(c2);
    y = b.residual_block(y, "u4", c2, c2, 1);
    unit_out.push_back(y); unit_chan.push_back(c2);
    y = b.residual_block(y, "u5", c2, c3, 2);
    unit_out.push_back(y); unit_chan.push_back(c3);
    y = b.residual_block(y, "u6", c3, c3, 1);
    unit_out.push_back(y); unit_chan.push_back(c3);
  } else {
    y = b.vgg_block(y, "u1", c1, c1, false);
    unit_out.push_back(y); unit_chan.push_back(c1);
    y = b.vgg_block(y, "u2", c1, c2, true);
    unit_out.push_back(y); unit_chan.push_back(c2);
    y = b.vgg_block(y, "u3", c2, c2, false);
    unit_out.push_back(y); unit_chan.push_back(c2);
    y = b.vgg_block(y, "u4", c2, c3, true);
    unit_out.push_back(y); unit_chan.push_back(c3);
    y = b.vgg_block(y, "u5", c3, c3, false);
    unit_out.push_back(y); unit_chan.push_back(c3);
    y = b.vgg_block(y, "u6", c3, c3, true);
    unit_out.push_back(y); unit_chan.push_back(c3);
  }

  // evenly spaced attachment depths over units 1..6, strictly shallower than
  // the final head (which reads unit 7)
  for (int i = 1; i <= cfg.ic_count; ++i) {
    const int unit = static_cast<int>(std::lround(
        static_cast<double>(i) * kMaxAttachPoints / cfg.ic_count));
    net.attach_units.push_back(unit);
    net.attach_nodes.push_back(unit_out[static_cast<size_t>(unit - 1)]);
    net.ic_logits.push_back(
        b.ic_head(unit_out[static_cast<size_t>(unit - 1)], unit_chan[static_cast<size_t>(unit - 1)], i));
  }
  net.final_unit_node = unit_out.back();

  net.graph.add_param("final.fc.w", kaiming_uniform({cfg.classes, c3}, c3, rng));
  net.graph.add_param("final.fc.b", Tensor::zeros({cfg.classes}));
  net.groups.emplace("final.fc.w", ParamGroup::FinalHead);
  net.groups.emplace("final.fc.b", ParamGroup::FinalHead);
  int gap = net.graph.add_global_avg_pool(unit_out.back(), "final.gap");
  net.final_logits = net.graph.add_linear(gap, "final.fc.w", "final.fc.b", "final.fc");

  for (int i = 0; i < cfg.ic_count; ++i)
    net.ic_xents.push_back(
        net.graph.add_softmax_xent(net.ic_logits[static_cast<size_t>(i)],
                                   "ic" + std::to_string(i + 1) + ".xent"));
  net.final_xent = net.graph.add_softmax_xent(net.final_logits, "final.xent");
  std::vector<int> all = net.ic_xents;
  all.push_back(net.final_xent);
  net.loss_node = net.graph.add_loss_sum(std::move(all), "loss");
  return net;
}

std::vector<float> head_weights_final_only(const ShallowDeepNet& net) {
  std::vector<float> w(static_cast<size_t>(net.ic_count()) + 1, 0.f);
  w.back() = 1.f;
  return w;
}

std::vector<float> head_weights_all_ics(const ShallowDeepNet& net, float weight) {
  std::vector<float> w(static_cast<size_t>(net.ic_count()) + 1, weight);
  w.back() = 0.f;
  return w;
}

Tensor adapt_batch(const ShallowDeepNet& net, const Tensor& batch) {
  if (!net.adapter) return batch;
  const AdapterSpec& a = *net.adapter;
  if (batch.rank() != 4 || batch.dim(1) != a.in_channels || batch.dim(2) != a.in_h ||
      batch.dim(3) != a.in_w)
    return batch;  // already in backbone shape
  const ModelConfig& cfg = net.cfg;
  if (a.in_h > cfg.in_h || a.in_w > cfg.in_w || a.in_channels > cfg.in_channels)
    throw ConfigError("adapter source " + shape_str({a.in_channels, a.in_h, a.in_w}) +
                      " larger than backbone input");
  const int n = batch.dim(0);
  const int py = (cfg.in_h - a.in_h) / 2, px = (cfg.in_w - a.in_w) / 2;
  Tensor out({n, cfg.in_channels, cfg.in_h, cfg.in_w});
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < cfg.in_channels; ++c) {
      const int sc = c % a.in_channels;  // channel replication
      for (int yy = 0; yy < a.in_h; ++yy)
        for (int xx = 0; xx < a.in_w; ++xx)
          out.v[((static_cast<size_t>(s) * cfg.in_channels + c) * cfg.in_h + py + yy) *
                    cfg.in_w +
                px + xx] =
              batch.v[((static_cast<size_t>(s) * a.in_channels + sc) * a.in_h + yy) * a.in_w + xx];
    }
  return out;
}

Tensor adapt_pullback(const ShallowDeepNet& net, const Tensor& grad) {
  if (!net.adapter) return grad;
  const AdapterSpec& a = *net.adapter;
  const ModelConfig& cfg = net.cfg;
  if (grad.rank() != 4 || grad.dim(1) != cfg.in_channels) return grad;
  const int n = grad.dim(0);
  const int py = (cfg.in_h - a.in_h) / 2, px = (cfg.in_w - a.in_w) / 2;
  Tensor out({n, a.in_channels, a.in_h, a.in_w});
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < cfg.in_channels; ++c) {
      const int sc = c % a.in_channels;
      for (int yy = 0; yy < a.in_h; ++yy)
        for (int xx = 0; xx < a.in_w; ++xx)
          out.v[((static_cast<size_t>(s) * a.in_channels + sc) * a.in_h + yy) * a.in_w + xx] +=
              grad.v[((static_cast<size_t>(s) * cfg.in_channels + c) * cfg.in_h + py + yy) *
                         cfg.in_w +
                     px + xx];
    }
  return out;
}

std::vector<Tensor> forward_all_heads(const ShallowDeepNet& net, Workspace& ws,
                                      const Tensor& batch) {
  std::vector<int> heads = net.ic_logits;
  heads.push_back(net.final_logits);
  return forward_heads(net.graph, ws, adapt_batch(net, batch), heads);
}

Tensor forward_final(const ShallowDeepNet& net, Workspace& ws, const Tensor& batch) {
  net.graph.start(ws, adapt_batch(net, batch));
  return net.graph.eval(ws, net.final_logits);
}

void set_freeze(ShallowDeepNet& net, ParamGroup group, bool frozen) {
  for (const auto& [name, g] : net.groups)
    if (g == group) net.graph.param(name).trainable = !frozen;
}

bool group_frozen(const ShallowDeepNet& net, ParamGroup group) {
  for (const auto& [name, g] : net.groups)
    if (g == group) return !net.graph.param(name).trainable;
  return false;
}

std::vector<std::string> flippable_param_names(const ShallowDeepNet& net) {
  std::vector<std::string> names;
  for (const auto& [name, g] : net.groups) {
    if (g == ParamGroup::Ics) continue;
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0) names.push_back(name);
  }
  return names;
}

void quantize_model(ShallowDeepNet& net) {
  net.qstate = quantize_params(net.graph, flippable_param_names(net));
}

int64_t param_count(const ShallowDeepNet& net) {
  int64_t n = 0;
  for (const auto& [name, p] : net.graph.params()) n += p.value->numel();
  return n;
}

int64_t param_count(const ShallowDeepNet& net, ParamGroup group) {
  int64_t n = 0;
  for (const auto& [name, g] : net.groups)
    if (g == group) n += net.graph.param(name).value->numel();
  return n;
}

ShallowDeepNet clone_sharing_ics(const ShallowDeepNet& net) {
  ShallowDeepNet out;
  out.cfg = net.cfg;
  out.attach_units = net.attach_units;
  out.attach_nodes = net.attach_nodes;
  out.final_unit_node = net.final_unit_node;
  out.ic_logits = net.ic_logits;
  out.final_logits = net.final_logits;
  out.ic_xents = net.ic_xents;
  out.final_xent = net.final_xent;
  out.loss_node = net.loss_node;
  out.groups = net.groups;
  out.qstate = net.qstate;  // deep copy of the quantized view
  out.adapter = net.adapter;
  out.graph = net.graph.clone([&](const std::string& name) {
    return net.groups.at(name) == ParamGroup::Ics;
  });
  return out;
}

namespace {

constexpr char kModelMagic[8] = {'B', 'L', 'M', 'O', 'D', 'E', 'L', '1'};

nlohmann::json config_json(const ShallowDeepNet& net) {
  nlohmann::json j;
  j["family"] = family_to_string(net.cfg.family);
  j["in_channels"] = net.cfg.in_channels;
  j["in_h"] = net.cfg.in_h;
  j["in_w"] = net.cfg.in_w;
  j["classes"] = net.cfg.classes;
  j["ic_count"] = net.cfg.ic_count;
  j["width"] = net.cfg.width;
  if (net.adapter) {
    j["adapter"] = {{"in_channels", net.adapter->in_channels},
                    {"in_h", net.adapter->in_h},
                    {"in_w", net.adapter->in_w}};
  }
  return j;
}

}  // namespace

void save_model(const ShallowDeepNet& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  put_bytes(f, kModelMagic, 8);
  put_u32(f, 1);
  const std::string header = config_json(net).dump();
  put_u32(f, static_cast<uint32_t>(header.size()));
  put_bytes(f, header.data(), header.size());

  std::map<std::string, Tensor> tensors;
  for (const auto& [name, p] : net.graph.params()) tensors.emplace(name, *p.value);
  write_tensor_block(f, tensors);

  put_u32(f, static_cast<uint32_t>(net.qstate.size()));
  for (const auto& [name, qt] : net.qstate) {
    put_u32(f, static_cast<uint32_t>(name.size()));
    put_bytes(f, name.data(), name.size());
    put_f32(f, qt.scale);
    put_u64(f, static_cast<uint64_t>(qt.ints.size()));
    put_bytes(f, qt.ints.data(), qt.ints.size());
  }
  if (!f) throw DataError("write failed for '" + path + "'");
}

ShallowDeepNet load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  char magic[8];
  get_bytes(f, magic, 8, path);
  if (std::memcmp(magic, kModelMagic, 8) != 0)
    throw DataError(path + ": bad magic (not a model checkpoint)");
  const uint32_t version = get_u32(f, path);
  if (version != 1) throw DataError(path + ": unsupported model version " + std::to_string(version));
  const uint32_t hlen = get_u32(f, path);
  std::string header(hlen, '\0');
  get_bytes(f, header.data(), hlen, path);
  nlohmann::json j = nlohmann::json::parse(header, nullptr, false);
  if (j.is_discarded()) throw DataError(path + ": corrupt model header");

  ModelConfig cfg;
  cfg.family = family_from_string(j.at("family").get<std::string>());
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.in_h = j.at("in_h").get<int>();
  cfg.in_w = j.at("in_w").get<int>();
  cfg.classes = j.at("classes").get<int>();
  cfg.ic_count = j.at("ic_count").get<int>();
  cfg.width = j.at("width").get<int>();

  ShallowDeepNet net = build_model(cfg, 0);
  if (j.contains("adapter")) {
    AdapterSpec a;
    a.in_channels = j["adapter"].at("in_channels").get<int>();
    a.in_h = j["adapter"].at("in_h").get<int>();
    a.in_w = j["adapter"].at("in_w").get<int>();
    net.adapter = a;
  }

  auto tensors = read_tensor_block(f, path);
  for (auto& [name, t] : tensors) {
    if (!net.graph.has_param(name))
      throw DataError(path + ": checkpoint tensor '" + name + "' not in model (config mismatch)");
    Param& p = net.graph.param(name);
    if (p.value->shape != t.shape)
      throw DataError(path + ": tensor '" + name + "' shape " + shape_str(t.shape) +
                      " does not match model " + shape_str(p.value->shape));
    *p.value = std::move(t);
  }

  const uint32_t qcount = get_u32(f, path);
  for (uint32_t i = 0; i < qcount; ++i) {
    const uint32_t nlen = get_u32(f, path);
    std::string name(nlen, '\0');
    get_bytes(f, name.data(), nlen, path);
    QuantizedTensor qt;
    qt.scale = get_f32(f, path);
    const uint64_t count = get_u64(f, path);
    qt.ints.resize(count);
    get_bytes(f, qt.ints.data(), count, path);
    if (!net.graph.has_param(name))
      throw DataError(path + ": quantized tensor '" + name + "' not in model");
    qt.source_shape = net.graph.param(name).value->shape;
    if (static_cast<int64_t>(count) != net.graph.param(name).value->numel())
      throw DataError(path + ": quantized tensor '" + name + "' size mismatch");
    net.qstate.emplace(std::move(name), std::move(qt));
  }
  return net;
}

}  // namespace bitlab
