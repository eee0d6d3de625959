#include "lpt/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace lpt {

namespace {
std::atomic<std::int64_t> next_id{1};

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}
}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) {
    d_ = std::make_shared<TensorData>();
    d_->shape = std::move(shape);
    d_->data.assign(shape_numel(d_->shape), fill);
    d_->id = next_id.fetch_add(1);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    d_ = std::make_shared<TensorData>();
    d_->shape = std::move(shape);
    d_->data = std::move(data);
    d_->id = next_id.fetch_add(1);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.d_->data) v = dist(rng);
    return t;
}

Tensor Tensor::trunc_normal(Shape shape, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.d_->data) {
        double x = dist(rng);
        while (std::abs(x) > 2.0 * stddev) x = dist(rng);
        v = x;
    }
    return t;
}

std::size_t Tensor::rows() const {
    if (d_->shape.size() != 2) throw std::invalid_argument("rows(): tensor is not 2-d");
    return d_->shape[0];
}

std::size_t Tensor::cols() const {
    if (d_->shape.size() != 2) throw std::invalid_argument("cols(): tensor is not 2-d");
    return d_->shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return d_->data[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return d_->data[r * cols() + c]; }

double Tensor::value() const {
    if (d_->data.size() != 1)
        throw std::invalid_argument("value(): tensor with shape " + shape_str(d_->shape) +
                                    " is not a scalar");
    return d_->data[0];
}

Tensor& Tensor::set_requires_grad(bool rg) {
    d_->requires_grad = rg;
    d_->leaf = rg;
    return *this;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = d_->shape;
    t.d_->data = d_->data;
    t.d_->id = next_id.fetch_add(1);
    return t;
}

thread_local Tape* Tape::active_ = nullptr;

Tape::Tape() {
    prev_ = active_;
    active_ = this;
}

Tape::~Tape() { active_ = prev_; }

void Tape::record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

void Tape::touch(const Tensor& t) { touched_.push_back(t); }

std::unordered_map<std::int64_t, Tensor> Tape::backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward(): loss must be scalar, got shape " +
                                    shape_str(loss.shape()));
    for (auto& t : touched_) t.d_->grad.clear();
    loss.d_->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();

    std::unordered_map<std::int64_t, Tensor> grads;
    for (auto& t : touched_) {
        if (t.is_leaf() && t.requires_grad() && t.has_grad() && !grads.count(t.id())) {
            Tensor g(t.shape());
            g.d_->data = t.d_->grad;
            grads.emplace(t.id(), g);
        }
    }
    return grads;
}

std::vector<double>& ensure_grad(Tensor& t) {
    if (t.d_->grad.empty()) t.d_->grad.assign(t.size(), 0.0);
    return t.d_->grad;
}

void accumulate_grad(Tensor& t, const std::vector<double>& g) {
    auto& dst = ensure_grad(t);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double h) {
    if (h <= 0.0 || h > 1e-2) throw std::invalid_argument("grad_check: h out of (0, 1e-2]");

    std::unordered_map<std::int64_t, Tensor> grads;
    {
        Tape tape;
        Tensor loss = f(inputs);
        grads = tape.backward(loss);
    }

    double max_rel = 0.0;
    for (auto& x : inputs) {
        if (!x.requires_grad()) continue;
        auto it = grads.find(x.id());
        for (std::size_t i = 0; i < x.size(); ++i) {
            double orig = x[i];
            x[i] = orig + h;
            double fp = f(inputs).value();
            x[i] = orig - h;
            double fm = f(inputs).value();
            x[i] = orig;
            double fd = (fp - fm) / (2.0 * h);
            double ad = (it == grads.end()) ? 0.0 : it->second[i];
            double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1.0});
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace lpt
