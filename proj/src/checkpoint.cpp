#include "tracekit/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace tracekit {

using nlohmann::json;

size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 2; }

int64_t TensorRecord::numel() const {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

float f16_to_f32(uint16_t bits) {
  uint32_t sign = (bits & 0x8000u) << 16;
  uint32_t exp = (bits >> 10) & 0x1F;
  uint32_t frac = bits & 0x3FF;
  uint32_t out;
  if (exp == 0) {
    if (frac == 0) {
      out = sign;
    } else {
      // subnormal: renormalize
      int shift = 0;
      while ((frac & 0x400) == 0) {
        frac <<= 1;
        ++shift;
      }
      frac &= 0x3FF;
      out = sign | ((127 - 15 - shift + 1) << 23) | (frac << 13);
    }
  } else if (exp == 0x1F) {
    out = sign | 0x7F800000u | (frac << 13);
  } else {
    out = sign | ((exp - 15 + 127) << 23) | (frac << 13);
  }
  float f;
  std::memcpy(&f, &out, 4);
  return f;
}

Container Container::parse(std::string bytes) {
  Container c;
  c.bytes_ = std::move(bytes);
  const std::string& b = c.bytes_;
  if (b.size() < 8) throw MalformedHeader("container shorter than length field");
  uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= uint64_t(uint8_t(b[i])) << (8 * i);
  if (header_len > b.size() - 8) throw MalformedHeader("header length exceeds file size");
  c.data_begin_ = 8 + header_len;
  const uint64_t data_size = b.size() - c.data_begin_;

  json header = json::parse(b.begin() + 8, b.begin() + 8 + header_len, nullptr, false);
  if (header.is_discarded() || !header.is_object())
    throw MalformedHeader("header is not a JSON object");

  for (auto& [name, val] : header.items()) {
    if (name == "__metadata__") continue;
    if (!val.is_object()) throw MalformedHeader("entry for '" + name + "' is not an object");
    TensorRecord rec;
    rec.name = name;
    std::string dt = val.value("dtype", "");
    if (dt == "F32")
      rec.dtype = Dtype::F32;
    else if (dt == "F16")
      rec.dtype = Dtype::F16;
    else
      throw MalformedHeader("unsupported dtype '" + dt + "' for '" + name + "'");
    if (!val.contains("shape") || !val["shape"].is_array())
      throw MalformedHeader("missing shape for '" + name + "'");
    for (auto& d : val["shape"]) {
      if (!d.is_number_unsigned()) throw MalformedHeader("bad shape entry for '" + name + "'");
      rec.shape.push_back(d.get<int64_t>());
    }
    auto off = val.find("data_offsets");
    if (off == val.end() || !off->is_array() || off->size() != 2)
      throw MalformedHeader("missing data_offsets for '" + name + "'");
    rec.begin = (*off)[0].get<uint64_t>();
    rec.end = (*off)[1].get<uint64_t>();
    if (rec.end < rec.begin) throw BoundsError("inverted data_offsets for '" + name + "'");
    if (rec.end > data_size) throw BoundsError("data_offsets beyond file end for '" + name + "'");
    if (rec.end - rec.begin != uint64_t(rec.numel()) * dtype_size(rec.dtype))
      throw MalformedHeader("byte range does not match shape for '" + name + "'");
    c.records_.push_back(std::move(rec));
  }

  std::vector<size_t> order(c.records_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b2) {
    return c.records_[a].begin < c.records_[b2].begin;
  });
  for (size_t i = 1; i < order.size(); ++i) {
    const auto& prev = c.records_[order[i - 1]];
    const auto& cur = c.records_[order[i]];
    if (cur.begin < prev.end)
      throw OverlapError("'" + prev.name + "' and '" + cur.name + "' overlap");
  }

  for (size_t i = 0; i < c.records_.size(); ++i) c.index_.emplace(c.records_[i].name, i);
  return c;
}

Container Container::open(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(std::move(ss).str());
}

const TensorRecord* Container::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &records_[it->second];
}

std::string_view Container::raw(const TensorRecord& rec) const {
  return std::string_view(bytes_).substr(data_begin_ + rec.begin, rec.end - rec.begin);
}

std::vector<float> Container::read_f32(const TensorRecord& rec) const {
  std::string_view src = raw(rec);
  std::vector<float> out(size_t(rec.numel()));
  if (rec.dtype == Dtype::F32) {
    std::memcpy(out.data(), src.data(), src.size());
  } else {
    for (size_t i = 0; i < out.size(); ++i) {
      uint16_t bits;
      std::memcpy(&bits, src.data() + 2 * i, 2);
      out[i] = f16_to_f32(bits);
    }
  }
  return out;
}

std::string write_container(const std::vector<TensorInit>& tensors) {
  json header = json::object();
  uint64_t offset = 0;
  for (const auto& t : tensors) {
    int64_t n = 1;
    for (int64_t d : t.shape) n *= d;
    if (size_t(n) != t.values.size())
      throw error("shape/value count mismatch for '" + t.name + "'");
    uint64_t bytes = uint64_t(n) * 4;
    header[t.name] = {{"dtype", "F32"},
                      {"shape", t.shape},
                      {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string hs = header.dump();
  std::string out;
  out.reserve(8 + hs.size() + offset);
  uint64_t hl = hs.size();
  for (int i = 0; i < 8; ++i) out.push_back(char(uint8_t(hl >> (8 * i))));
  out += hs;
  for (const auto& t : tensors) {
    size_t pos = out.size();
    out.resize(pos + t.values.size() * 4);
    std::memcpy(out.data() + pos, t.values.data(), t.values.size() * 4);
  }
  return out;
}

ModelConfig ModelConfig::from_json_text(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("config is not a JSON object");
  ModelConfig c;
  auto pick = [&](std::initializer_list<const char*> keys) -> int {
    for (const char* k : keys)
      if (j.contains(k) && j[k].is_number_integer()) return j[k].get<int>();
    throw ConfigError(std::string("config missing key '") + *keys.begin() + "'");
  };
  c.n_layer = pick({"n_layer"});
  c.n_head = pick({"n_head"});
  c.d_model = pick({"d_model", "n_embd"});
  c.n_ctx = pick({"n_ctx", "n_positions"});
  c.vocab_size = pick({"vocab_size"});
  if (j.contains("layer_norm_epsilon")) c.layer_norm_epsilon = j["layer_norm_epsilon"].get<double>();
  if (c.n_layer <= 0 || c.n_head <= 0 || c.d_model <= 0 || c.n_ctx <= 0 || c.vocab_size <= 0)
    throw ConfigError("config dimensions must be positive");
  if (c.d_model % c.n_head != 0) throw ConfigError("d_model not divisible by n_head");
  return c;
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_json_text(ss.str());
}

namespace {

std::vector<float> fetch(const Container& c, const std::string& name,
                         const std::vector<int64_t>& shape) {
  const TensorRecord* rec = c.find(name);
  if (!rec) rec = c.find("transformer." + name);
  if (!rec) throw MissingTensor("'" + name + "' not in container");
  if (rec->shape != shape) {
    auto fmt = [](const std::vector<int64_t>& s) {
      std::string r = "[";
      for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
      return r + "]";
    };
    throw ShapeMismatch("'" + name + "' expected " + fmt(shape) + " found " + fmt(rec->shape));
  }
  std::vector<float> vals = c.read_f32(*rec);
  for (float v : vals)
    if (!std::isfinite(v)) throw error("non-finite value in '" + name + "'");
  return vals;
}

MatrixRM fetch_mat(const Container& c, const std::string& name, int64_t rows, int64_t cols) {
  std::vector<float> v = fetch(c, name, {rows, cols});
  return Eigen::Map<const MatrixRM>(v.data(), rows, cols);
}

VectorF fetch_vec(const Container& c, const std::string& name, int64_t n) {
  std::vector<float> v = fetch(c, name, {n});
  return Eigen::Map<const VectorF>(v.data(), n);
}

}  // namespace

ModelWeights load_model(const std::string& container_path, const ModelConfig& config) {
  Container c = Container::open(container_path);
  const int64_t d = config.d_model;
  ModelWeights w;
  w.config = config;
  w.wte = fetch_mat(c, "wte.weight", config.vocab_size, d);
  w.wpe = fetch_mat(c, "wpe.weight", config.n_ctx, d);
  w.layers.resize(config.n_layer);
  for (int l = 0; l < config.n_layer; ++l) {
    std::string p = "h." + std::to_string(l) + ".";
    LayerWeights& lw = w.layers[l];
    lw.ln1_g = fetch_vec(c, p + "ln_1.weight", d);
    lw.ln1_b = fetch_vec(c, p + "ln_1.bias", d);
    lw.qkv_w = fetch_mat(c, p + "attn.c_attn.weight", d, 3 * d);
    lw.qkv_b = fetch_vec(c, p + "attn.c_attn.bias", 3 * d);
    lw.attn_out_w = fetch_mat(c, p + "attn.c_proj.weight", d, d);
    lw.attn_out_b = fetch_vec(c, p + "attn.c_proj.bias", d);
    lw.ln2_g = fetch_vec(c, p + "ln_2.weight", d);
    lw.ln2_b = fetch_vec(c, p + "ln_2.bias", d);
    lw.mlp_up_w = fetch_mat(c, p + "mlp.c_fc.weight", d, 4 * d);
    lw.mlp_up_b = fetch_vec(c, p + "mlp.c_fc.bias", 4 * d);
    lw.mlp_down_w = fetch_mat(c, p + "mlp.c_proj.weight", 4 * d, d);
    lw.mlp_down_b = fetch_vec(c, p + "mlp.c_proj.bias", d);
  }
  w.lnf_g = fetch_vec(c, "ln_f.weight", d);
  w.lnf_b = fetch_vec(c, "ln_f.bias", d);
  return w;
}

}  // namespace tracekit
