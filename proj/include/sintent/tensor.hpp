#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sintent/error.hpp"

namespace sintent {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// A trainable tensor and its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    Mat<T> value;
    Mat<T> grad;

    Parameter() = default;
    Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)) {}

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
    void zero_grad() { grad.setZero(); }
};

// Draws in double so float and double models built from one seed agree up to rounding.
template <typename T, typename Rng>
void init_uniform(Parameter<T>& p, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (Eigen::Index i = 0; i < p.value.size(); ++i)
        p.value.data()[i] = static_cast<T>(dist(rng));
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
    if (!m.allFinite())
        throw NumericError(std::string("non-finite values in ") + what);
}

template <typename T, typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
    return (T(1) / (T(1) + (-x.array()).exp())).matrix();
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Max-subtracted softmax.
template <typename T>
Vec<T> softmax(const Vec<T>& logits) {
    Vec<T> e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

// Row-wise softmax over a batch of logits.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& logits) {
    Mat<T> out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        auto e = (row.array() - row.maxCoeff()).exp();
        out.row(r) = e / e.sum();
    }
    return out;
}

// Index of the largest element; ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::DenseBase<Derived>& v, Eigen::Index begin = 0, Eigen::Index end = -1) {
    if (end < 0)
        end = v.size();
    Eigen::Index best = begin;
    for (Eigen::Index i = begin + 1; i < end; ++i)
        if (v(i) > v(best))
            best = i;
    return best;
}

} // namespace sintent
