#pragma once

// Minimal reverse-mode differentiation over batched matrices.
//
// Every value is a (batch x features) matrix. Spatial tensors are stored
// channel-major per row (c * H * W + y * W + x). A Tape records the forward
// computation; backward() walks it in reverse creation order.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mghand/tensor.hpp"

namespace mghand::ad {

class Tape;

class Var {
public:
    Var() = default;

    const Mat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Mat&)>;

    /// With recording disabled no backward closures are kept (inference mode).
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Mat value);
    Var parameter(Mat value);

    /// Seeds d(loss)/d(loss) = 1; loss must be 1x1.
    void backward(const Var& loss);
    void backward(const Var& output, const Mat& seed);

    /// Gradient accumulated for v; zero matrix of v's shape if none flowed.
    Mat grad(const Var& v) const;

    bool recording() const { return record_; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    const Mat& value(int id) const { return nodes_[id].value; }
    void accumulate(int id, const Mat& g);

    Var push(Mat value, std::initializer_list<Var> parents, Backward backward);
    Var push(Mat value, std::span<const Var> parents, Backward backward);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        Backward backward;
    };

    bool record_;
    std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
/// a (n x k) plus a broadcast row vector b (1 x k).
Var add_row(const Var& a, const Var& b);
/// Affine layer x W + b.
Var linear(const Var& x, const Var& w, const Var& b);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var concat_cols(std::span<const Var> parts);
/// Rows of table selected by ids (embedding lookup).
Var gather_rows(const Var& table, std::span<const int> ids);
/// Elementwise product with a constant matrix of the same shape.
Var mul_const(const Var& a, const Mat& c);

// Reductions.
Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// mean((a - target)^2) over all entries; 1x1.
Var mse(const Var& a, const Mat& target);

// Spatial ops. Geometry refers to one row.
struct Geometry {
    int channels;
    int height;
    int width;
    int size() const { return channels * height * width; }
};

/// 3x3 convolution, stride 1, zero padding 1. weight: (in_c * 9) x out_c, bias: 1 x out_c.
Var conv3x3(const Var& x, const Geometry& in, const Var& weight, const Var& bias);
/// Adds a per-channel offset (rows x C) broadcast over the spatial grid.
Var add_channel_bias(const Var& x, const Geometry& g, const Var& offsets);
Var upsample_nearest2x(const Var& x, const Geometry& in);
Var avgpool2x(const Var& x, const Geometry& in);

}  // namespace mghand::ad
