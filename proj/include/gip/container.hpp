#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gip/network.hpp"

namespace gip {

// Weight container: 8-byte magic, u64 LE manifest length, JSON manifest,
// then one length-prefixed little-endian IEEE-754 array per manifest entry,
// in manifest order. See docs/container-format.md for the full layout and a
// conformance vector.
inline constexpr char kContainerMagic[8] = {'G', 'I', 'P', 'M', 'D', 'L', '0', '1'};

struct BatchNormParams {
  Vec gamma, beta, running_mean, running_var;
  double eps = 1e-5;
};

namespace detail {

inline Vec bn_scale(const BatchNormParams& bn, std::size_t channels) {
  if (bn.gamma.size() != channels || bn.beta.size() != channels || bn.running_mean.size() != channels ||
      bn.running_var.size() != channels) {
    throw ShapeError("batch-norm parameter arrays must have one entry per channel");
  }
  Vec scale(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const double denom = bn.running_var[c] + bn.eps;
    if (!(denom > 0.0)) {
      throw InvalidStatisticsError("batch-norm channel " + std::to_string(c) + " has var + eps = " +
                                   std::to_string(denom));
    }
    scale[c] = bn.gamma[c] / std::sqrt(denom);
  }
  return scale;
}

}  // namespace detail

// Inference-time fold: W' = diag(gamma/sqrt(var+eps)) W,
// b' = gamma (b - mean)/sqrt(var+eps) + beta.
inline Affine fold_batchnorm(const Affine& a, const BatchNormParams& bn) {
  const Vec scale = detail::bn_scale(bn, a.out);
  Affine out = a;
  for (int r = 0; r < a.out; ++r) {
    for (int c = 0; c < a.in; ++c) out.weight[static_cast<std::size_t>(r) * a.in + c] *= scale[r];
    out.bias[r] = scale[r] * (a.bias[r] - bn.running_mean[r]) + bn.beta[r];
  }
  return out;
}

inline Conv2d fold_batchnorm(const Conv2d& cv, const BatchNormParams& bn) {
  const Vec scale = detail::bn_scale(bn, cv.out_channels);
  Conv2d out = cv;
  const std::size_t per_channel = out.weight.size() / cv.out_channels;
  for (int co = 0; co < cv.out_channels; ++co) {
    for (std::size_t k = 0; k < per_channel; ++k) out.weight[co * per_channel + k] *= scale[co];
    out.bias[co] = scale[co] * (cv.bias[co] - bn.running_mean[co]) + bn.beta[co];
  }
  return out;
}

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xff));
}

inline std::uint64_t get_u64(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(in[at + b]) << (8 * b);
  return v;
}

inline void put_f64(std::vector<std::uint8_t>& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((bits >> (8 * b)) & 0xff));
}

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  const Vec* data;
};

inline nlohmann::json stage_manifest(const Stage& s) {
  nlohmann::json j;
  if (const auto* a = std::get_if<Affine>(&s)) {
    j["kind"] = "affine";
    j["in"] = a->in;
    j["out"] = a->out;
    if (a->linear_output) j["linear_output"] = true;
    if (!a->output_dims.empty()) j["out_shape"] = a->output_dims;
  } else if (const auto* c = std::get_if<Conv2d>(&s)) {
    j["kind"] = "conv";
    j["in_channels"] = c->in_channels;
    j["out_channels"] = c->out_channels;
    j["kernel"] = {c->kh, c->kw};
    j["stride"] = {c->sh, c->sw};
    j["padding"] = {c->ph, c->pw};
    if (c->linear_output) j["linear_output"] = true;
  } else if (const auto* p = std::get_if<MaxPool2d>(&s)) {
    j["kind"] = "maxpool";
    j["kernel"] = {p->kh, p->kw};
    j["stride"] = {p->sh, p->sw};
    j["padding"] = {p->ph, p->pw};
  } else {
    j["kind"] = "gate";
  }
  return j;
}

inline std::vector<NamedArray> canonical_arrays(const Network& net) {
  std::vector<NamedArray> arrays;
  for (std::size_t i = 0; i < net.stages.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i) + ".";
    if (const auto* a = std::get_if<Affine>(&net.stages[i])) {
      arrays.push_back({prefix + "weight", {a->out, a->in}, &a->weight});
      arrays.push_back({prefix + "bias", {a->out}, &a->bias});
    } else if (const auto* c = std::get_if<Conv2d>(&net.stages[i])) {
      arrays.push_back({prefix + "weight", {c->out_channels, c->in_channels, c->kh, c->kw}, &c->weight});
      arrays.push_back({prefix + "bias", {c->out_channels}, &c->bias});
    }
  }
  for (std::size_t c = 0; c < net.heads.size(); ++c) {
    arrays.push_back({"head" + std::to_string(c), {static_cast<int>(net.heads[c].size())}, &net.heads[c]});
  }
  return arrays;
}

}  // namespace detail

// Serializes the network as a container byte buffer. dtype is "f64"
// (lossless) or "f32" (quantizing).
inline std::vector<std::uint8_t> save_model_bytes(const Network& net, const std::string& dtype = "f64") {
  if (dtype != "f64" && dtype != "f32") throw DomainError("container dtype must be f64 or f32");
  const auto arrays = detail::canonical_arrays(net);

  nlohmann::json manifest;
  manifest["dtype"] = dtype;
  manifest["input_shape"] = net.input_shape.dims;
  if (!net.normalization.empty()) {
    manifest["normalization"] = {{"mean", net.normalization.mean}, {"std", net.normalization.std}};
  }
  nlohmann::json stages = nlohmann::json::array();
  for (const Stage& s : net.stages) stages.push_back(detail::stage_manifest(s));
  manifest["stages"] = std::move(stages);
  manifest["heads"] = net.heads.size();
  nlohmann::json jarrays = nlohmann::json::array();
  for (const auto& a : arrays) jarrays.push_back({{"name", a.name}, {"shape", a.shape}});
  manifest["arrays"] = std::move(jarrays);

  const std::string mtext = manifest.dump();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kContainerMagic, kContainerMagic + 8);
  detail::put_u64(out, mtext.size());
  out.insert(out.end(), mtext.begin(), mtext.end());
  const std::size_t esize = dtype == "f64" ? 8 : 4;
  for (const auto& a : arrays) {
    detail::put_u64(out, a.data->size() * esize);
    for (double v : *a.data) {
      if (esize == 8) {
        detail::put_f64(out, v);
      } else {
        detail::put_f32(out, static_cast<float>(v));
      }
    }
  }
  return out;
}

inline void save_model(const Network& net, const std::string& path, const std::string& dtype = "f64") {
  const auto bytes = save_model_bytes(net, dtype);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace detail {

struct ArrayReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t at;
  std::size_t esize;

  Vec next(const std::string& name, std::size_t expected_elems) {
    if (at + 8 > bytes.size()) {
      throw ParseError("container truncated before the length of array '" + name + "'", at);
    }
    const std::uint64_t len = get_u64(bytes, at);
    at += 8;
    if (len != expected_elems * esize) {
      throw ParseError("array '" + name + "': declared " + std::to_string(len) + " bytes, expected " +
                           std::to_string(expected_elems * esize),
                       at - 8);
    }
    if (at + len > bytes.size()) {
      throw ParseError("container truncated inside array '" + name + "'", at);
    }
    Vec out(expected_elems);
    for (std::size_t i = 0; i < expected_elems; ++i) {
      if (esize == 8) {
        std::uint64_t bits = get_u64(bytes, at + i * 8);
        double d;
        std::memcpy(&d, &bits, 8);
        out[i] = d;
      } else {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[at + i * 4 + b]) << (8 * b);
        float f;
        std::memcpy(&f, &bits, 4);
        out[i] = static_cast<double>(f);
      }
    }
    at += len;
    return out;
  }
};

inline std::size_t shape_product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace detail

// Parses a container buffer into a validated Network. Batch-norm stages are
// folded into the preceding affine/conv at load; the in-memory network
// carries only affine/conv/pool/gate stages.
inline Network load_model_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
    throw ParseError("not a weight container (bad magic)", 0);
  }
  const std::uint64_t mlen = detail::get_u64(bytes, 8);
  if (16 + mlen > bytes.size()) throw ParseError("container truncated inside the manifest", 16);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::size_t>(mlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("manifest: ") + e.what(), 16 + e.byte);
  }

  const std::string dtype = manifest.value("dtype", "f64");
  if (dtype != "f64" && dtype != "f32") throw ParseError("unsupported dtype '" + dtype + "'", 16);
  detail::ArrayReader reader{bytes, 16 + static_cast<std::size_t>(mlen), dtype == "f64" ? std::size_t{8} : std::size_t{4}};

  // Manifest-declared array list, consumed in order.
  std::vector<std::pair<std::string, std::vector<int>>> declared;
  for (const auto& ja : manifest.at("arrays")) {
    declared.emplace_back(ja.at("name").get<std::string>(), ja.at("shape").get<std::vector<int>>());
  }
  std::size_t next_array = 0;
  auto take = [&](const std::string& name, const std::vector<int>& shape) -> Vec {
    if (next_array >= declared.size()) {
      throw ParseError("manifest is missing array '" + name + "'", reader.at);
    }
    const auto& [dname, dshape] = declared[next_array];
    if (dname != name) {
      throw ParseError("expected array '" + name + "', manifest declares '" + dname + "'", reader.at);
    }
    if (dshape != shape) {
      throw ParseError("array '" + name + "' has an unexpected shape", reader.at);
    }
    ++next_array;
    return reader.next(name, detail::shape_product(shape));
  };

  Network net;
  net.input_shape = Shape{manifest.at("input_shape").get<std::vector<int>>()};
  if (manifest.contains("normalization")) {
    net.normalization.mean = manifest["normalization"].at("mean").get<Vec>();
    net.normalization.std = manifest["normalization"].at("std").get<Vec>();
  }

  int gate_layer = 1;
  const auto& jstages = manifest.at("stages");
  for (std::size_t i = 0; i < jstages.size(); ++i) {
    const auto& js = jstages[i];
    const std::string kind = js.at("kind").get<std::string>();
    const std::string prefix = "stage" + std::to_string(i) + ".";
    if (kind == "affine") {
      Affine a;
      a.in = js.at("in").get<int>();
      a.out = js.at("out").get<int>();
      a.linear_output = js.value("linear_output", false);
      a.output_dims = js.value("out_shape", std::vector<int>{});
      a.weight = take(prefix + "weight", {a.out, a.in});
      a.bias = take(prefix + "bias", {a.out});
      net.stages.push_back(std::move(a));
    } else if (kind == "conv") {
      Conv2d c;
      c.in_channels = js.at("in_channels").get<int>();
      c.out_channels = js.at("out_channels").get<int>();
      const auto k = js.at("kernel").get<std::vector<int>>();
      const auto st = js.at("stride").get<std::vector<int>>();
      const auto pd = js.at("padding").get<std::vector<int>>();
      if (k.size() != 2 || st.size() != 2 || pd.size() != 2) {
        throw ParseError("conv stage " + std::to_string(i) + " needs 2-element kernel/stride/padding", 16);
      }
      c.kh = k[0];
      c.kw = k[1];
      c.sh = st[0];
      c.sw = st[1];
      c.ph = pd[0];
      c.pw = pd[1];
      c.linear_output = js.value("linear_output", false);
      c.weight = take(prefix + "weight", {c.out_channels, c.in_channels, c.kh, c.kw});
      c.bias = take(prefix + "bias", {c.out_channels});
      net.stages.push_back(std::move(c));
    } else if (kind == "maxpool") {
      MaxPool2d p;
      const auto k = js.at("kernel").get<std::vector<int>>();
      const auto st = js.at("stride").get<std::vector<int>>();
      const auto pd = js.at("padding").get<std::vector<int>>();
      if (k.size() != 2 || st.size() != 2 || pd.size() != 2) {
        throw ParseError("maxpool stage " + std::to_string(i) + " needs 2-element kernel/stride/padding", 16);
      }
      p.kh = k[0];
      p.kw = k[1];
      p.sh = st[0];
      p.sw = st[1];
      p.ph = pd[0];
      p.pw = pd[1];
      net.stages.push_back(p);
    } else if (kind == "gate") {
      net.stages.push_back(GatePoint{gate_layer++});
    } else if (kind == "batchnorm") {
      const int channels = js.at("channels").get<int>();
      BatchNormParams bn;
      bn.eps = js.value("eps", 1e-5);
      bn.gamma = take(prefix + "gamma", {channels});
      bn.beta = take(prefix + "beta", {channels});
      bn.running_mean = take(prefix + "running_mean", {channels});
      bn.running_var = take(prefix + "running_var", {channels});
      if (net.stages.empty()) throw StructureError("batch-norm stage has no preceding affine/conv to fold into");
      Stage& prev = net.stages.back();
      if (auto* a = std::get_if<Affine>(&prev)) {
        if (a->out != channels) throw ShapeError("batch-norm channels do not match the preceding affine");
        prev = fold_batchnorm(*a, bn);
      } else if (auto* cv = std::get_if<Conv2d>(&prev)) {
        if (cv->out_channels != channels) throw ShapeError("batch-norm channels do not match the preceding conv");
        prev = fold_batchnorm(*cv, bn);
      } else {
        throw StructureError("batch-norm stage must immediately follow an affine/conv stage");
      }
    } else {
      throw ParseError("unsupported stage kind '" + kind + "' at stage " + std::to_string(i), 16);
    }
  }

  const std::size_t head_count = manifest.at("heads").get<std::size_t>();
  const int out_dim = net.output_dim();
  for (std::size_t c = 0; c < head_count; ++c) {
    net.heads.push_back(take("head" + std::to_string(c), {out_dim}));
  }
  if (next_array != declared.size()) {
    throw ParseError("manifest declares " + std::to_string(declared.size() - next_array) + " unused arrays",
                     reader.at);
  }
  require_valid(net);
  return net;
}

inline Network load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return load_model_bytes(bytes);
}

}  // namespace gip
