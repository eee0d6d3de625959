#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace lpt {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

struct TensorData {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;   // empty until backward touches it
    bool requires_grad = false;
    bool leaf = false;
    std::int64_t id = 0;
};

/// Dense float64 tensor handle. Copies share storage; math lives in ops.hpp.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
    // truncated normal: redraw outside +-2 stddev
    static Tensor trunc_normal(Shape shape, std::mt19937_64& rng, double stddev);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::size_t size() const { return d_->data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::vector<double>& data() { return d_->data; }
    const std::vector<double>& data() const { return d_->data; }
    double& operator[](std::size_t i) { return d_->data[i]; }
    double operator[](std::size_t i) const { return d_->data[i]; }
    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    double value() const;  // scalar tensors only

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool rg);
    bool is_leaf() const { return d_->leaf; }

    const std::vector<double>& grad() const { return d_->grad; }
    bool has_grad() const { return !d_->grad.empty(); }
    void zero_grad() { d_->grad.clear(); }

    std::int64_t id() const { return d_->id; }

    /// Deep copy with fresh id; never shares storage, never requires grad.
    Tensor clone() const;

    std::shared_ptr<TensorData> d_;
};

/// Define-by-run tape. One tape per training step; construct to activate,
/// destruct to deactivate. Ops record backward closures onto the active tape.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::function<void()> backward_fn);
    void touch(const Tensor& t);

    /// Runs reverse-mode accumulation from a scalar loss. Returns gradients
    /// for every leaf tensor with requires_grad that the tape consumed;
    /// frozen tensors never appear.
    std::unordered_map<std::int64_t, Tensor> backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> nodes_;
    std::vector<Tensor> touched_;
    Tape* prev_ = nullptr;
    static thread_local Tape* active_;
};

// accumulation helper shared by op backward closures
void accumulate_grad(Tensor& t, const std::vector<double>& g);
std::vector<double>& ensure_grad(Tensor& t);

/// Central-difference gradient check. f must map inputs to a scalar.
/// Returns the max relative error between backward() and (f(x+h)-f(x-h))/2h
/// over all elements of all inputs flagged requires_grad.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double h = 1e-5);

}  // namespace lpt
