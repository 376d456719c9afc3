#include "vimd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

namespace vimd {

int64_t shape_numel(const Shape& dims) {
  int64_t n = 1;
  for (int d : dims) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(dims));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape dims, float fill) : dims_(std::move(dims)) {
  int64_t n = shape_numel(dims_);
  data_ = std::make_shared<std::vector<float>>(size_t(n), fill);
}

Tensor Tensor::from(Shape dims, std::vector<float> values) {
  Tensor t;
  t.dims_ = std::move(dims);
  if (shape_numel(t.dims_) != int64_t(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not fill " +
                     shape_str(t.dims_));
  t.data_ = std::make_shared<std::vector<float>>(std::move(values));
  return t;
}

Tensor Tensor::param(Shape dims, float fill) {
  Tensor t(std::move(dims), fill);
  t.requires_grad = true;
  t.ensure_grad();
  return t;
}

void Tensor::ensure_grad() {
  if (!grad_) grad_ = std::make_shared<std::vector<float>>(data_->size(), 0.0f);
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
}

float Tensor::value() const {
  if (size() != 1) throw ContractError("value() requires a scalar, got " + shape_str(dims_));
  return (*data_)[0];
}

static size_t flat_index(const Shape& dims, std::initializer_list<int> idx) {
  if (idx.size() != dims.size())
    throw ShapeError("index rank mismatch for " + shape_str(dims));
  size_t flat = 0;
  size_t k = 0;
  for (int i : idx) {
    flat = flat * size_t(dims[k]) + size_t(i);
    ++k;
  }
  return flat;
}

float& Tensor::at(std::initializer_list<int> idx) { return (*data_)[flat_index(dims_, idx)]; }
float Tensor::at(std::initializer_list<int> idx) const { return (*data_)[flat_index(dims_, idx)]; }

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.requires_grad = false;
  t.node = -1;
  t.grad_.reset();
  return t;
}

Tensor Tensor::with_dims(Shape dims) const {
  Tensor t = *this;
  t.dims_ = std::move(dims);
  return t;
}

MatMap Tensor::mat(int rows, int cols) {
  assert(int64_t(rows) * cols == size());
  return MatMap(data(), rows, cols);
}
CMatMap Tensor::mat(int rows, int cols) const {
  assert(int64_t(rows) * cols == size());
  return CMatMap(data(), rows, cols);
}
MatMap Tensor::mat2d() {
  assert(rank() == 2);
  return MatMap(data(), dims_[0], dims_[1]);
}
CMatMap Tensor::mat2d() const {
  assert(rank() == 2);
  return CMatMap(data(), dims_[0], dims_[1]);
}
ArrMap Tensor::arr() { return ArrMap(data(), size()); }
CArrMap Tensor::arr() const { return CArrMap(data(), size()); }
ArrMap Tensor::grad_arr() {
  ensure_grad();
  return ArrMap(grad_->data(), size());
}

bool all_finite(const Tensor& t) {
  return t.arr().isFinite().all();
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape* Tape::current() { return g_current_tape; }

Tape::Recording::Recording(Tape& t) : prev(g_current_tape) { g_current_tape = &t; }
Tape::Recording::~Recording() { g_current_tape = prev; }
Tape::NoGrad::NoGrad() : prev(g_current_tape) { g_current_tape = nullptr; }
Tape::NoGrad::~NoGrad() { g_current_tape = prev; }

const float* Tape::Ctx::gout() const { return tape.nodes_[size_t(self)].grad.data(); }
int64_t Tape::Ctx::gout_size() const { return int64_t(tape.nodes_[size_t(self)].grad.size()); }

void Tape::Ctx::add_grad(int32_t id, const std::function<void(float*)>& accum) {
  if (id < 0) return;
  accum(tape.nodes_[size_t(id)].grad.data());
}

float* Tape::Ctx::grad_buf(int32_t id) {
  if (id < 0) return nullptr;
  return tape.nodes_[size_t(id)].grad.data();
}

int32_t Tape::input_id(const Tensor& t) {
  if (t.node >= 0) return t.node;
  if (!t.requires_grad) return -1;
  const void* key = t.storage().get();
  auto it = leaves_.find(key);
  if (it != leaves_.end()) return it->second.id;
  Node n;
  n.op = "leaf";
  n.grad.assign(size_t(t.size()), 0.0f);
  nodes_.push_back(std::move(n));
  int32_t id = int32_t(nodes_.size() - 1);
  leaves_.emplace(key, Leaf{id, t.grad_storage()});
  return id;
}

int32_t Tape::push(const char* op, std::initializer_list<int32_t> inputs, int64_t out_size,
                   BackFn back) {
  Node n;
  n.op = op;
  n.nin = 0;
  for (int32_t id : inputs) {
    assert(n.nin < 6);
    n.in[n.nin++] = id;
  }
  n.grad.assign(size_t(out_size), 0.0f);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return int32_t(nodes_.size() - 1);
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ContractError("backward() requires a scalar loss");
  if (loss.node < 0)
    throw ContractError("backward() requires a loss recorded on this tape");
  if (ran_backward_) throw ContractError("tape already ran backward");
  ran_backward_ = true;

  // Mark the subgraph the loss depends on; inputs always precede consumers,
  // so one descending pass suffices.
  std::vector<char> needed(nodes_.size(), 0);
  needed[size_t(loss.node)] = 1;
  for (int32_t i = loss.node; i >= 0; --i) {
    if (!needed[size_t(i)]) continue;
    const Node& n = nodes_[size_t(i)];
    for (int k = 0; k < n.nin; ++k)
      if (n.in[k] >= 0) needed[size_t(n.in[k])] = 1;
  }

  nodes_[size_t(loss.node)].grad[0] = 1.0f;
  for (int32_t i = loss.node; i >= 0; --i) {
    if (!needed[size_t(i)]) continue;
    Node& n = nodes_[size_t(i)];
    if (n.back) {
      Ctx ctx{*this, i};
      n.back(ctx);
    }
  }
}

void Tape::add_leaf_grads_to_params() {
  for (auto& [key, leaf] : leaves_) {
    (void)key;
    if (!leaf.param_grad) continue;
    const auto& g = nodes_[size_t(leaf.id)].grad;
    float* dst = leaf.param_grad->data();
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

void Tape::harvest(const std::vector<Tensor*>& params, std::vector<float>& flat) const {
  int64_t total = 0;
  for (const Tensor* p : params) total += p->size();
  flat.assign(size_t(total), 0.0f);
  int64_t ofs = 0;
  for (const Tensor* p : params) {
    auto it = leaves_.find(p->storage().get());
    if (it != leaves_.end()) {
      const auto& g = nodes_[size_t(it->second.id)].grad;
      std::copy(g.begin(), g.end(), flat.begin() + ofs);
    }
    ofs += p->size();
  }
}

const std::vector<float>* Tape::leaf_grad(const Tensor& param) const {
  auto it = leaves_.find(param.storage().get());
  if (it == leaves_.end()) return nullptr;
  return &nodes_[size_t(it->second.id)].grad;
}

void backward(Tape& tape, const Tensor& loss) {
  tape.backward(loss);
  tape.add_leaf_grads_to_params();
}

// ---------------------------------------------------------------------------
// Gradient checking

float grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, float step) {
  if (step <= 0) throw DomainError("grad_check step must be positive");
  x.requires_grad = true;
  x.ensure_grad();
  x.zero_grad();
  x.node = -1;

  Tape tape;
  {
    Tape::Recording rec(tape);
    Tensor loss = f(x);
    backward(tape, loss);
  }

  float max_rel = 0.0f;
  Tape::NoGrad ng;
  float* xv = x.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    float keep = xv[i];
    xv[i] = keep + step;
    double fp = double(f(x).value());
    xv[i] = keep - step;
    double fm = double(f(x).value());
    xv[i] = keep;
    double numeric = (fp - fm) / (2.0 * double(step));
    double analytic = double(x.grad_data()[i]);
    double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    max_rel = std::max(max_rel, float(std::abs(analytic - numeric) / denom));
  }
  return max_rel;
}

float grad_check_params(const std::function<Tensor()>& f, const std::vector<Tensor*>& params,
                        float step, int max_coords, uint64_t seed) {
  if (step <= 0) throw DomainError("grad_check step must be positive");
  for (Tensor* p : params) {
    p->ensure_grad();
    p->zero_grad();
  }
  Tape tape;
  {
    Tape::Recording rec(tape);
    Tensor loss = f();
    backward(tape, loss);
  }

  Rng rng(mix_seed(seed, 0x6dcf));
  float max_rel = 0.0f;
  Tape::NoGrad ng;
  for (Tensor* p : params) {
    std::vector<int64_t> coords;
    if (max_coords <= 0 || p->size() <= max_coords) {
      coords.resize(size_t(p->size()));
      for (int64_t i = 0; i < p->size(); ++i) coords[size_t(i)] = i;
    } else {
      for (int i = 0; i < max_coords; ++i) coords.push_back(int64_t(rng.below(uint64_t(p->size()))));
    }
    float* pv = p->data();
    for (int64_t i : coords) {
      float keep = pv[i];
      pv[i] = keep + step;
      double fp = double(f().value());
      pv[i] = keep - step;
      double fm = double(f().value());
      pv[i] = keep;
      double numeric = (fp - fm) / (2.0 * double(step));
      double analytic = double(p->grad_data()[i]);
      double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      max_rel = std::max(max_rel, float(std::abs(analytic - numeric) / denom));
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Worker pool (declared in common.hpp)

namespace {

int resolve_worker_count() {
  if (const char* det = std::getenv("VIMD_DETERMINISTIC"); det && std::string(det) == "1")
    return 1;
  int n = int(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* cap = std::getenv("VIMD_THREADS")) {
    int c = std::atoi(cap);
    if (c >= 1) n = std::min(n, c);
  }
  return n;
}

class Pool {
 public:
  explicit Pool(int workers) {
    for (int w = 0; w < workers; ++w)
      threads_.emplace_back([this] { run(); });
  }
  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void map(int n, const std::function<void(int)>& fn) {
    std::unique_lock<std::mutex> lk(mu_);
    fn_ = &fn;
    next_ = 0;
    end_ = n;
    pending_ = n;
    cv_.notify_all();
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    fn_ = nullptr;
  }

 private:
  void run() {
    std::unique_lock<std::mutex> lk(mu_);
    for (;;) {
      cv_.wait(lk, [this] { return stop_ || (fn_ && next_ < end_); });
      if (stop_) return;
      while (fn_ && next_ < end_) {
        int i = next_++;
        const auto* fn = fn_;
        lk.unlock();
        (*fn)(i);
        lk.lock();
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int)>* fn_ = nullptr;
  int next_ = 0, end_ = 0, pending_ = 0;
  bool stop_ = false;
};

}  // namespace

int worker_count() {
  static int n = resolve_worker_count();
  return n;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  int workers = worker_count();
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  static Pool pool(workers);
  pool.map(n, fn);
}

std::string version_string() {
#ifdef VIMD_VERSION
  return VIMD_VERSION;
#else
  return "unversioned";
#endif
}

}  // namespace vimd
