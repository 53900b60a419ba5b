#include "mghand/autodiff.hpp"

#include <cmath>

#include "mghand/error.hpp"

namespace mghand::ad {

const Mat& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Mat value) {
    nodes_.push_back(Node{std::move(value), Mat(), false, nullptr});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(Mat value) {
    nodes_.push_back(Node{std::move(value), Mat(), record_, nullptr});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Mat value, std::initializer_list<Var> parents, Backward backward) {
    return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::push(Mat value, std::span<const Var> parents, Backward backward) {
    bool needs = false;
    if (record_) {
        for (const auto& p : parents) {
            if (p.tape() != this) {
                fail(ErrorCode::kInternal, "autodiff: operands recorded on different tapes");
            }
            needs = needs || nodes_[p.id()].requires_grad;
        }
    }
    nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(backward) : nullptr});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(int id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) {
        return;
    }
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::backward(const Var& loss) {
    require(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be a 1x1 value");
    backward(loss, Mat::Ones(1, 1));
}

void Tape::backward(const Var& output, const Mat& seed) {
    if (!record_) {
        fail(ErrorCode::kInternal, "backward called on a non-recording tape");
    }
    for (auto& n : nodes_) {
        n.grad.resize(0, 0);
    }
    accumulate(output.id(), seed);
    for (int i = output.id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.size() == 0) {
            continue;
        }
        // The closure may accumulate into earlier nodes only; n.grad stays valid.
        n.backward(*this, n.grad);
    }
}

Mat Tape::grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) {
        return Mat::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        fail(ErrorCode::kInvalidArgument, std::string(op) + ": shape mismatch");
    }
}

}  // namespace

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    const int ia = a.id(), ib = b.id();
    return a.tape()->push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Mat& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    const int ia = a.id(), ib = b.id();
    return a.tape()->push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Mat& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, -g);
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    const int ia = a.id(), ib = b.id();
    return a.tape()->push(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, const Mat& g) {
        t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        t.accumulate(ib, g.cwiseProduct(t.value(ia)));
    });
}

Var mul_const(const Var& a, const Mat& c) {
    if (a.rows() != c.rows() || a.cols() != c.cols()) {
        fail(ErrorCode::kInvalidArgument, "mul_const: shape mismatch");
    }
    const int ia = a.id();
    return a.tape()->push(a.value().cwiseProduct(c), {a}, [ia, c](Tape& t, const Mat& g) {
        t.accumulate(ia, g.cwiseProduct(c));
    });
}

Var scale(const Var& a, double s) {
    const int ia = a.id();
    return a.tape()->push(a.value() * s, {a}, [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s); });
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) {
        fail(ErrorCode::kInvalidArgument, "matmul: inner dimension mismatch");
    }
    const int ia = a.id(), ib = b.id();
    return a.tape()->push(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, const Mat& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
        if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
    });
}

Var add_row(const Var& a, const Var& b) {
    if (b.rows() != 1 || b.cols() != a.cols()) {
        fail(ErrorCode::kInvalidArgument, "add_row: bias must be 1 x cols");
    }
    const int ia = a.id(), ib = b.id();
    Mat out = a.value();
    out.rowwise() += b.value().row(0);
    return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape& t, const Mat& g) {
        t.accumulate(ia, g);
        if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
    });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

Var silu(const Var& a) {
    const int ia = a.id();
    const Mat& x = a.value();
    Mat sig = (1.0 + (-x.array()).exp()).inverse().matrix();
    Mat out = x.cwiseProduct(sig);
    return a.tape()->push(std::move(out), {a}, [ia, sig](Tape& t, const Mat& g) {
        const Mat& x = t.value(ia);
        // d/dx x*s(x) = s(x) * (1 + x * (1 - s(x)))
        Mat d = sig.array() * (1.0 + x.array() * (1.0 - sig.array()));
        t.accumulate(ia, g.cwiseProduct(d));
    });
}

Var sigmoid(const Var& a) {
    const int ia = a.id();
    Mat out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
    Mat s = out;
    return a.tape()->push(std::move(out), {a}, [ia, s](Tape& t, const Mat& g) {
        t.accumulate(ia, (g.array() * s.array() * (1.0 - s.array())).matrix());
    });
}

Var concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const Eigen::Index rows = parts[0].rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        require(p.rows() == rows, "concat_cols: row mismatch");
        cols += p.cols();
    }
    Mat out(rows, cols);
    std::vector<std::pair<int, Eigen::Index>> spans;
    Eigen::Index offset = 0;
    for (const auto& p : parts) {
        out.middleCols(offset, p.cols()) = p.value();
        spans.emplace_back(p.id(), offset);
        offset += p.cols();
    }
    return parts[0].tape()->push(std::move(out), parts, [spans](Tape& t, const Mat& g) {
        for (const auto& [id, off] : spans) {
            if (t.requires_grad(id)) t.accumulate(id, g.middleCols(off, t.value(id).cols()));
        }
    });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
    const Mat& tab = table.value();
    Mat out(static_cast<Eigen::Index>(ids.size()), tab.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && ids[i] < tab.rows(), "gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
    }
    const int it = table.id();
    std::vector<int> idx(ids.begin(), ids.end());
    return table.tape()->push(std::move(out), {table}, [it, idx](Tape& t, const Mat& g) {
        Mat d = Mat::Zero(t.value(it).rows(), t.value(it).cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
        }
        t.accumulate(it, d);
    });
}

Var sum_all(const Var& a) {
    const int ia = a.id();
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape()->push(std::move(out), {a}, [ia](Tape& t, const Mat& g) {
        const Mat& v = t.value(ia);
        t.accumulate(ia, Mat::Constant(v.rows(), v.cols(), g(0, 0)));
    });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

Var mse(const Var& a, const Mat& target) {
    if (a.rows() != target.rows() || a.cols() != target.cols()) {
        fail(ErrorCode::kInvalidArgument, "mse: shape mismatch");
    }
    const int ia = a.id();
    Mat diff = a.value() - target;
    const double n = static_cast<double>(diff.size());
    Mat out(1, 1);
    out(0, 0) = diff.squaredNorm() / n;
    return a.tape()->push(std::move(out), {a}, [ia, diff, n](Tape& t, const Mat& g) {
        t.accumulate(ia, diff * (2.0 * g(0, 0) / n));
    });
}

namespace {

// Rows: b * H * W + p. Columns: ic * 9 + ky * 3 + kx.
Mat im2col(const Mat& x, const Geometry& in) {
    const int hw = in.height * in.width;
    Mat patches = Mat::Zero(x.rows() * hw, in.channels * 9);
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
        for (int c = 0; c < in.channels; ++c) {
            for (int y = 0; y < in.height; ++y) {
                for (int xx = 0; xx < in.width; ++xx) {
                    const Eigen::Index row = b * hw + y * in.width + xx;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int sy = y + ky - 1;
                        if (sy < 0 || sy >= in.height) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sx = xx + kx - 1;
                            if (sx < 0 || sx >= in.width) continue;
                            patches(row, c * 9 + ky * 3 + kx) = x(b, c * hw + sy * in.width + sx);
                        }
                    }
                }
            }
        }
    }
    return patches;
}

Mat col2im(const Mat& dpatches, Eigen::Index batch, const Geometry& in) {
    const int hw = in.height * in.width;
    Mat dx = Mat::Zero(batch, in.size());
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (int c = 0; c < in.channels; ++c) {
            for (int y = 0; y < in.height; ++y) {
                for (int xx = 0; xx < in.width; ++xx) {
                    const Eigen::Index row = b * hw + y * in.width + xx;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int sy = y + ky - 1;
                        if (sy < 0 || sy >= in.height) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sx = xx + kx - 1;
                            if (sx < 0 || sx >= in.width) continue;
                            dx(b, c * hw + sy * in.width + sx) += dpatches(row, c * 9 + ky * 3 + kx);
                        }
                    }
                }
            }
        }
    }
    return dx;
}

}  // namespace

Var conv3x3(const Var& x, const Geometry& in, const Var& weight, const Var& bias) {
    require(x.cols() == in.size(), "conv3x3: input does not match geometry");
    require(weight.rows() == in.channels * 9, "conv3x3: weight rows must be in_channels * 9");
    const Eigen::Index out_c = weight.cols();
    require(bias.rows() == 1 && bias.cols() == out_c, "conv3x3: bias must be 1 x out_channels");
    const int hw = in.height * in.width;
    const Eigen::Index batch = x.rows();

    auto patches = std::make_shared<Mat>(im2col(x.value(), in));
    Mat m = (*patches) * weight.value();
    m.rowwise() += bias.value().row(0);
    Mat out(batch, out_c * hw);
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (Eigen::Index oc = 0; oc < out_c; ++oc) {
            out.block(b, oc * hw, 1, hw) = m.block(b * hw, oc, hw, 1).transpose();
        }
    }
    const int ix = x.id(), iw = weight.id(), ib = bias.id();
    return x.tape()->push(std::move(out), {x, weight, bias},
                          [ix, iw, ib, in, patches, batch, out_c, hw](Tape& t, const Mat& g) {
                              Mat gm(batch * hw, out_c);
                              for (Eigen::Index b = 0; b < batch; ++b) {
                                  for (Eigen::Index oc = 0; oc < out_c; ++oc) {
                                      gm.block(b * hw, oc, hw, 1) = g.block(b, oc * hw, 1, hw).transpose();
                                  }
                              }
                              if (t.requires_grad(iw)) t.accumulate(iw, patches->transpose() * gm);
                              if (t.requires_grad(ib)) t.accumulate(ib, gm.colwise().sum());
                              if (t.requires_grad(ix)) {
                                  Mat dp = gm * t.value(iw).transpose();
                                  t.accumulate(ix, col2im(dp, batch, in));
                              }
                          });
}

Var add_channel_bias(const Var& x, const Geometry& g, const Var& offsets) {
    require(x.cols() == g.size(), "add_channel_bias: input does not match geometry");
    require(offsets.rows() == x.rows() && offsets.cols() == g.channels, "add_channel_bias: offsets must be rows x C");
    const int hw = g.height * g.width;
    Mat out = x.value();
    for (int c = 0; c < g.channels; ++c) {
        out.middleCols(c * hw, hw).colwise() += offsets.value().col(c);
    }
    const int ix = x.id(), io = offsets.id();
    const int channels = g.channels;
    return x.tape()->push(std::move(out), {x, offsets}, [ix, io, channels, hw](Tape& t, const Mat& gr) {
        t.accumulate(ix, gr);
        if (t.requires_grad(io)) {
            Mat d(gr.rows(), channels);
            for (int c = 0; c < channels; ++c) {
                d.col(c) = gr.middleCols(c * hw, hw).rowwise().sum();
            }
            t.accumulate(io, d);
        }
    });
}

Var upsample_nearest2x(const Var& x, const Geometry& in) {
    require(x.cols() == in.size(), "upsample: input does not match geometry");
    const int oh = in.height * 2, ow = in.width * 2;
    Mat out(x.rows(), in.channels * oh * ow);
    const Mat& v = x.value();
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
        for (int c = 0; c < in.channels; ++c) {
            for (int y = 0; y < oh; ++y) {
                for (int xx = 0; xx < ow; ++xx) {
                    out(b, (c * oh + y) * ow + xx) = v(b, (c * in.height + y / 2) * in.width + xx / 2);
                }
            }
        }
    }
    const int ix = x.id();
    return x.tape()->push(std::move(out), {x}, [ix, in, oh, ow](Tape& t, const Mat& g) {
        Mat d = Mat::Zero(g.rows(), in.size());
        for (Eigen::Index b = 0; b < g.rows(); ++b) {
            for (int c = 0; c < in.channels; ++c) {
                for (int y = 0; y < oh; ++y) {
                    for (int xx = 0; xx < ow; ++xx) {
                        d(b, (c * in.height + y / 2) * in.width + xx / 2) += g(b, (c * oh + y) * ow + xx);
                    }
                }
            }
        }
        t.accumulate(ix, d);
    });
}

Var avgpool2x(const Var& x, const Geometry& in) {
    require(x.cols() == in.size(), "avgpool: input does not match geometry");
    require(in.height % 2 == 0 && in.width % 2 == 0, "avgpool: spatial dims must be even");
    const int oh = in.height / 2, ow = in.width / 2;
    Mat out = Mat::Zero(x.rows(), in.channels * oh * ow);
    const Mat& v = x.value();
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
        for (int c = 0; c < in.channels; ++c) {
            for (int y = 0; y < in.height; ++y) {
                for (int xx = 0; xx < in.width; ++xx) {
                    out(b, (c * oh + y / 2) * ow + xx / 2) += 0.25 * v(b, (c * in.height + y) * in.width + xx);
                }
            }
        }
    }
    const int ix = x.id();
    return x.tape()->push(std::move(out), {x}, [ix, in, oh, ow](Tape& t, const Mat& g) {
        Mat d(g.rows(), in.size());
        for (Eigen::Index b = 0; b < g.rows(); ++b) {
            for (int c = 0; c < in.channels; ++c) {
                for (int y = 0; y < in.height; ++y) {
                    for (int xx = 0; xx < in.width; ++xx) {
                        d(b, (c * in.height + y) * in.width + xx) = 0.25 * g(b, (c * oh + y / 2) * ow + xx / 2);
                    }
                }
            }
        }
        t.accumulate(ix, d);
    });
}

}  // namespace mghand::ad
