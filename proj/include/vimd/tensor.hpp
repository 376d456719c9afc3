#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vimd/common.hpp"

namespace vimd {

using Shape = std::vector<int>;

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using ArrMap = Eigen::Map<Eigen::ArrayXf>;
using CArrMap = Eigen::Map<const Eigen::ArrayXf>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using CVecMap = Eigen::Map<const Eigen::VectorXf>;

int64_t shape_numel(const Shape& dims);
std::string shape_str(const Shape& dims);

// Dense row-major f32 tensor. Copies share storage; ops never mutate their
// inputs. `grad` is allocated up front for trainable parameters and stays
// null for activations (their gradients live on the recording tape).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, float fill = 0.0f);

  static Tensor zeros(Shape dims) { return Tensor(std::move(dims), 0.0f); }
  static Tensor full(Shape dims, float v) { return Tensor(std::move(dims), v); }
  static Tensor scalar(float v) { return Tensor({1}, v); }
  static Tensor from(Shape dims, std::vector<float> values);
  // Trainable leaf: requires_grad set and a zeroed gradient buffer attached.
  static Tensor param(Shape dims, float fill = 0.0f);

  const Shape& shape() const { return dims_; }
  int dim(int i) const { return dims_[size_t(i)]; }
  int rank() const { return int(dims_.size()); }
  int64_t size() const { return data_ ? int64_t(data_->size()) : 0; }
  bool defined() const { return bool(data_); }

  float* data() { return data_->data(); }
  const float* data() const { return data_->data(); }
  const std::shared_ptr<std::vector<float>>& storage() const { return data_; }

  bool has_grad() const { return bool(grad_); }
  float* grad_data() { return grad_->data(); }
  const float* grad_data() const { return grad_->data(); }
  const std::shared_ptr<std::vector<float>>& grad_storage() const { return grad_; }
  void ensure_grad();
  void zero_grad();

  float value() const;  // scalar tensors only
  float& at(std::initializer_list<int> idx);
  float at(std::initializer_list<int> idx) const;

  // Same storage, detached from autodiff.
  Tensor detached() const;
  // Same storage and autodiff node, different dims (caller checks numel).
  Tensor with_dims(Shape dims) const;

  bool requires_grad = false;
  // Tape-local node id; -1 when this value was not produced by a recorded op.
  int32_t node = -1;

  // Eigen views over the flat buffer.
  MatMap mat(int rows, int cols);
  CMatMap mat(int rows, int cols) const;
  MatMap mat2d();          // rank-2 tensors
  CMatMap mat2d() const;
  ArrMap arr();
  CArrMap arr() const;
  ArrMap grad_arr();

 private:
  Shape dims_;
  std::shared_ptr<std::vector<float>> data_;
  std::shared_ptr<std::vector<float>> grad_;
};

bool all_finite(const Tensor& t);

// Canonical (name, tensor) listing used by optimizers, checkpoints, and the
// parameter audit. Registration order is the checkpoint order.
struct NamedParam {
  std::string name;
  Tensor* tensor;
};

// Reverse-mode tape. Nodes are appended in forward order, so inputs always
// precede their consumers; backward() walks the list once in reverse.
// One tape per forward pass per thread; parameters encountered during
// recording become leaf nodes whose gradients are harvested afterwards.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // What an op's backward closure gets to work with.
  struct Ctx {
    Tape& tape;
    int32_t self;
    const float* gout() const;
    int64_t gout_size() const;
    // Accumulates into input node `id`; no-op for id < 0 (constants).
    void add_grad(int32_t id, const std::function<void(float*)>& accum);
    float* grad_buf(int32_t id);  // nullptr for id < 0
  };
  using BackFn = std::function<void(Ctx&)>;

  static Tape* current();

  // RAII recording scope: ops executed inside record onto `t`.
  struct Recording {
    explicit Recording(Tape& t);
    ~Recording();
    Tape* prev;
  };
  // RAII scope that suspends recording (frozen submodules, oracles).
  struct NoGrad {
    NoGrad();
    ~NoGrad();
    Tape* prev;
  };

  // Node id for `t` as an op input: its producing node, a (possibly new)
  // leaf if it is a trainable parameter, or -1 for plain constants.
  int32_t input_id(const Tensor& t);
  int32_t push(const char* op, std::initializer_list<int32_t> inputs,
               int64_t out_size, BackFn back);

  size_t node_count() const { return nodes_.size(); }
  const char* op_tag(int32_t id) const { return nodes_[size_t(id)].op; }

  // Seeds d(loss)/d(loss) = 1 and pulls gradients through every node that
  // the loss depends on, in reverse append order.
  void backward(const Tensor& loss);

  // After backward(): adds each leaf's gradient into its parameter's own
  // grad buffer. Single-threaded use; parallel callers harvest instead.
  void add_leaf_grads_to_params();

  // After backward(): copies leaf gradients of `params` (in order) into one
  // flat vector laid out by param offsets. Parameters the loss never touched
  // contribute zeros. Used for the deterministic ordered batch reduction.
  void harvest(const std::vector<Tensor*>& params, std::vector<float>& flat) const;

  // Gradient of a leaf parameter recorded on this tape (nullptr if unused).
  const std::vector<float>* leaf_grad(const Tensor& param) const;

 private:
  struct Node {
    const char* op;
    int32_t in[6];
    int nin = 0;
    std::vector<float> grad;
    BackFn back;
  };
  struct Leaf {
    int32_t id;
    std::shared_ptr<std::vector<float>> param_grad;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const void*, Leaf> leaves_;
  bool ran_backward_ = false;
  friend struct Ctx;
};

// Convenience wrapper implementing the one-shot contract: loss must be a
// scalar recorded on `tape`; afterwards every trainable leaf has .grad
// accumulated.
void backward(Tape& tape, const Tensor& loss);

// Central-difference gradient checker. Evaluates f (a scalar-valued function
// of x) at x +- step*e_i per coordinate and compares against the gradient
// reported by the tape. Returns the maximum relative error, where the
// denominator is max(1, |analytic|, |numeric|) so near-zero coordinates are
// judged absolutely.
float grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, float step);

// Same check across a set of parameters (f closes over them). `max_coords`
// caps the number of coordinates probed per tensor (0 = all), chosen by a
// seeded draw so runs are reproducible.
float grad_check_params(const std::function<Tensor()>& f, const std::vector<Tensor*>& params,
                        float step, int max_coords = 0, uint64_t seed = 0);

}  // namespace vimd
