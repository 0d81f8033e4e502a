#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dat {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> value;  // row-major
    std::vector<T> grad;   // empty until needed; same length as value when present
    bool requires_grad = false;

    long size() const { return long(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using Tensor = std::shared_ptr<TensorData<T>>;

template <typename T>
Tensor<T> make_tensor(Shape shape, bool requires_grad = false) {
    for (int d : shape)
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
    auto t = std::make_shared<TensorData<T>>();
    t->value.assign(size_t(numel(shape)), T(0));
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

template <typename T>
Tensor<T> make_tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (long(data.size()) != numel(shape))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    auto t = make_tensor<T>(std::move(shape), requires_grad);
    t->value = std::move(data);
    return t;
}

template <typename T>
Tensor<T> make_tensor(Shape shape, std::initializer_list<T> data, bool requires_grad = false) {
    return make_tensor<T>(std::move(shape), std::vector<T>(data), requires_grad);
}

template <typename T>
Tensor<T> scalar_tensor(T v, bool requires_grad = false) {
    return make_tensor<T>({1}, std::vector<T>{v}, requires_grad);
}

// Record of executed primitives; replaying in reverse propagates gradients.
// One tape serves one backward pass; a second backward without re-recording
// is rejected.
template <typename T>
class Tape {
  public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    void backward(const Tensor<T>& loss) {
        if (spent_) throw std::runtime_error("backward called twice on the same tape");
        if (loss->size() != 1) throw std::invalid_argument("backward requires a scalar loss");
        loss->ensure_grad();
        loss->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        spent_ = true;
    }

    size_t size() const { return nodes_.size(); }
    bool spent() const { return spent_; }

    void reset() {
        nodes_.clear();
        spent_ = false;
    }

  private:
    std::vector<std::function<void()>> nodes_;
    bool spent_ = false;
};

// True when the op should be recorded: a live tape and at least one input
// that wants gradients.
template <typename T>
inline bool tracked(Tape<T>* tape, std::initializer_list<const TensorData<T>*> inputs) {
    if (!tape) return false;
    for (auto* t : inputs)
        if (t->requires_grad) return true;
    return false;
}

}  // namespace dat
