#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "tracekit/errors.hpp"

namespace tracekit {

// row-major so safetensors data maps in without transposition
using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorF = Eigen::VectorXf;

class MalformedHeader : public error {
  using error::error;
};
class BoundsError : public error {
  using error::error;
};
class OverlapError : public error {
  using error::error;
};
class MissingTensor : public error {
  using error::error;
};
class ShapeMismatch : public error {
  using error::error;
};
class ConfigError : public error {
  using error::error;
};

enum class Dtype : uint8_t { F32, F16 };

size_t dtype_size(Dtype d);

struct TensorRecord {
  std::string name;
  Dtype dtype = Dtype::F32;
  std::vector<int64_t> shape;
  uint64_t begin = 0;  // offsets into the data section, not the file
  uint64_t end = 0;
  int64_t numel() const;
};

class Container {
 public:
  static Container parse(std::string bytes);
  static Container open(const std::string& path);

  const std::vector<TensorRecord>& records() const { return records_; }
  const TensorRecord* find(std::string_view name) const;

  std::string_view raw(const TensorRecord& rec) const;
  // F16 records are upcast
  std::vector<float> read_f32(const TensorRecord& rec) const;

 private:
  std::string bytes_;
  size_t data_begin_ = 0;
  std::vector<TensorRecord> records_;
  std::unordered_map<std::string, size_t> index_;
};

struct TensorInit {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> values;
};

std::string write_container(const std::vector<TensorInit>& tensors);

float f16_to_f32(uint16_t bits);

struct ModelConfig {
  int n_layer = 0;
  int n_head = 0;
  int d_model = 0;
  int n_ctx = 0;
  int vocab_size = 0;
  double layer_norm_epsilon = 1e-5;

  static ModelConfig from_json_file(const std::string& path);
  static ModelConfig from_json_text(std::string_view text);
};

struct LayerWeights {
  VectorF ln1_g, ln1_b;
  MatrixRM qkv_w;  // [d_model, 3*d_model], column blocks q|k|v
  VectorF qkv_b;
  MatrixRM attn_out_w;  // [d_model, d_model]
  VectorF attn_out_b;
  VectorF ln2_g, ln2_b;
  MatrixRM mlp_up_w;  // [d_model, 4*d_model]
  VectorF mlp_up_b;
  MatrixRM mlp_down_w;  // [4*d_model, d_model]
  VectorF mlp_down_b;
};

struct ModelWeights {
  ModelConfig config;
  MatrixRM wte;  // [vocab_size, d_model]; unembedding is its transpose
  MatrixRM wpe;  // [n_ctx, d_model]
  std::vector<LayerWeights> layers;
  VectorF lnf_g, lnf_b;
};

// Resolves published tensor names with or without the "transformer." prefix.
ModelWeights load_model(const std::string& container_path, const ModelConfig& config);

}  // namespace tracekit
