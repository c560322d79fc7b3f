#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace facediff {

// Dense row-major 2D tensor. Everything in this project is a matrix: scalars
// are 1x1 and row vectors are 1xN.
template <typename Real>
struct Tensor {
    int64_t n_rows = 0;
    int64_t n_cols = 0;
    std::vector<Real> v;

    Tensor() = default;
    Tensor(int64_t r, int64_t c) : n_rows(r), n_cols(c), v(size_t(r) * size_t(c), Real(0)) {
        if (r < 0 || c < 0) throw std::invalid_argument("Tensor: negative dimension");
    }

    static Tensor zeros(int64_t r, int64_t c) { return Tensor(r, c); }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.n_rows, o.n_cols); }

    static Tensor full(int64_t r, int64_t c, Real x) {
        Tensor t(r, c);
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }

    static Tensor scalar(Real x) {
        Tensor t(1, 1);
        t.v[0] = x;
        return t;
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
        Tensor t(int64_t(rows.size()), rows.size() ? int64_t(rows.begin()->size()) : 0);
        int64_t i = 0;
        for (const auto& row : rows) {
            if (int64_t(row.size()) != t.n_cols) throw std::invalid_argument("from_rows: ragged rows");
            int64_t j = 0;
            for (Real x : row) t.at(i, j++) = x;
            ++i;
        }
        return t;
    }

    int64_t rows() const { return n_rows; }
    int64_t cols() const { return n_cols; }
    int64_t size() const { return int64_t(v.size()); }

    Real& at(int64_t i, int64_t j) { return v[size_t(i * n_cols + j)]; }
    Real at(int64_t i, int64_t j) const { return v[size_t(i * n_cols + j)]; }

    Real* row_ptr(int64_t i) { return v.data() + i * n_cols; }
    const Real* row_ptr(int64_t i) const { return v.data() + i * n_cols; }

    bool same_shape(const Tensor& o) const { return n_rows == o.n_rows && n_cols == o.n_cols; }

    bool all_finite() const {
        for (Real x : v)
            if (!std::isfinite(double(x))) return false;
        return true;
    }

    void fill(Real x) { std::fill(v.begin(), v.end(), x); }

    void add_inplace(const Tensor& o) {
        require_same_shape(o, "add_inplace");
        for (size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    }

    void require_same_shape(const Tensor& o, const char* what) const {
        if (!same_shape(o))
            throw std::invalid_argument(std::string(what) + ": shape mismatch (" + shape_str() +
                                        " vs " + o.shape_str() + ")");
    }

    std::string shape_str() const {
        return std::to_string(n_rows) + "x" + std::to_string(n_cols);
    }

    bool operator==(const Tensor& o) const {
        return same_shape(o) && v == o.v;
    }
};

// C (+)= op(A) * op(B), row-major, via Eigen.
template <typename Real>
void gemm(const Tensor<Real>& A, bool trans_a, const Tensor<Real>& B, bool trans_b,
          Tensor<Real>& C, bool accumulate) {
    using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const int64_t m = trans_a ? A.cols() : A.rows();
    const int64_t k = trans_a ? A.rows() : A.cols();
    const int64_t k2 = trans_b ? B.cols() : B.rows();
    const int64_t n = trans_b ? B.rows() : B.cols();
    if (k != k2)
        throw std::invalid_argument("gemm: inner dimensions differ (" + A.shape_str() + " vs " +
                                    B.shape_str() + ")");
    if (C.rows() != m || C.cols() != n)
        throw std::invalid_argument("gemm: output shape mismatch");
    Eigen::Map<const EMat> ea(A.v.data(), A.rows(), A.cols());
    Eigen::Map<const EMat> eb(B.v.data(), B.rows(), B.cols());
    Eigen::Map<EMat> ec(C.v.data(), C.rows(), C.cols());
    if (!trans_a && !trans_b) {
        if (accumulate) ec.noalias() += ea * eb;
        else ec.noalias() = ea * eb;
    } else if (trans_a && !trans_b) {
        if (accumulate) ec.noalias() += ea.transpose() * eb;
        else ec.noalias() = ea.transpose() * eb;
    } else if (!trans_a && trans_b) {
        if (accumulate) ec.noalias() += ea * eb.transpose();
        else ec.noalias() = ea * eb.transpose();
    } else {
        if (accumulate) ec.noalias() += ea.transpose() * eb.transpose();
        else ec.noalias() = ea.transpose() * eb.transpose();
    }
}

using DTensor = Tensor<double>;

}  // namespace facediff
