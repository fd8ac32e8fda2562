#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace fimlab {

/// Dense cubic 3D tensor (all dimensions equal).
class Tensor3 {
public:
    Tensor3() = default;
    explicit Tensor3(int n) : n_(n), v_(static_cast<std::size_t>(n) * n * n, 0.0) {}

    int dim() const { return n_; }
    double& operator()(int a, int b, int c) { return v_[idx(a, b, c)]; }
    double operator()(int a, int b, int c) const { return v_[idx(a, b, c)]; }

    const std::vector<double>& data() const { return v_; }
    std::vector<double>& data() { return v_; }

private:
    std::size_t idx(int a, int b, int c) const {
        return (static_cast<std::size_t>(a) * n_ + b) * n_ + c;
    }
    int n_ = 0;
    std::vector<double> v_;
};

/// Dense quartic 4D tensor (all dimensions equal).
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(int n)
        : n_(n), v_(static_cast<std::size_t>(n) * n * n * n, 0.0) {}

    int dim() const { return n_; }
    double& operator()(int a, int b, int c, int d) { return v_[idx(a, b, c, d)]; }
    double operator()(int a, int b, int c, int d) const { return v_[idx(a, b, c, d)]; }

    const std::vector<double>& data() const { return v_; }
    std::vector<double>& data() { return v_; }

    double frobenius() const {
        double s = 0.0;
        for (double x : v_) s += x * x;
        return std::sqrt(s);
    }
    double l1() const {
        double s = 0.0;
        for (double x : v_) s += std::abs(x);
        return s;
    }
    double max_abs() const {
        double m = 0.0;
        for (double x : v_) m = std::max(m, std::abs(x));
        return m;
    }

    Tensor4& operator*=(double c) {
        for (double& x : v_) x *= c;
        return *this;
    }
    Tensor4& operator+=(const Tensor4& o) {
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
        return *this;
    }
    Tensor4& operator-=(const Tensor4& o) {
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
        return *this;
    }

private:
    std::size_t idx(int a, int b, int c, int d) const {
        return ((static_cast<std::size_t>(a) * n_ + b) * n_ + c) * n_ + d;
    }
    int n_ = 0;
    std::vector<double> v_;
};

}  // namespace fimlab
