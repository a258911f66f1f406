#include "dosegnn/autodiff.hpp"

#include <memory>
#include <stdexcept>

namespace dosegnn::ad {

namespace {

std::string shape_str(const Matrix& m) { return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")"; }

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void check_same_tape(const char* op, const Tensor& a, const Tensor& b) {
    if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

}  // namespace

const Matrix& Tensor::value() const { return tape_->value(id_); }

Matrix Tensor::grad() const {
    const Matrix& g = tape_->grad(id_);
    if (g.size() == 0) return Matrix::Zero(rows(), cols());
    return g;
}

bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

Tensor Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, false, true, nullptr, {}, {}});
    return {this, nodes_.size() - 1};
}

Tensor Tape::variable(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, true, true, nullptr, {}, {}});
    return {this, nodes_.size() - 1};
}

Tensor Tape::parameter(Parameter& p) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
    nodes_.push_back(Node{p.value, {}, true, true, &p, {}, {}});
    return {this, nodes_.size() - 1};
}

Tensor Tape::record(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    for (auto i : inputs) needs = needs || nodes_[i].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, false, nullptr, std::move(inputs),
                          needs ? std::move(backward) : BackwardFn{}});
    return {this, nodes_.size() - 1};
}

Matrix& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(const Tensor& loss) {
    if (nodes_.empty()) throw std::invalid_argument("backward: tape is empty");
    if (&loss.tape() != this) throw std::invalid_argument("backward: loss was recorded on another tape");
    if (loss.rows() != 1 || loss.cols() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.value()));
    }
    // Plain variable leaves accumulate across passes; everything else is
    // per-pass scratch.
    for (auto& n : nodes_) {
        if (!(n.leaf && n.param == nullptr)) n.grad.resize(0, 0);
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())(0, 0) += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
    for (auto& n : nodes_) {
        if (n.param != nullptr && n.grad.size() != 0) n.param->grad += n.grad;
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_tape("add", a, b);
    if (a.shape() != b.shape()) shape_error("add", a.value(), b.value());
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.grad_buffer(ia) += t.grad(self);
        if (t.requires_grad(ib)) t.grad_buffer(ib) += t.grad(self);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_tape("mul", a, b);
    if (a.shape() != b.shape()) shape_error("mul", a.value(), b.value());
    const auto ia = a.id(), ib = b.id();
    Matrix out = a.value().cwiseProduct(b.value());
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.grad_buffer(ia) += t.grad(self).cwiseProduct(t.value(ib));
        if (t.requires_grad(ib)) t.grad_buffer(ib) += t.grad(self).cwiseProduct(t.value(ia));
    });
}

Tensor scale(const Tensor& a, double factor) {
    const auto ia = a.id();
    return a.tape().record(a.value() * factor, {ia}, [ia, factor](Tape& t, std::size_t self) {
        t.grad_buffer(ia) += t.grad(self) * factor;
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_same_tape("matmul", a, b);
    if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
    const auto ia = a.id(), ib = b.id();
    Matrix out = a.value() * b.value();
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += t.grad(self) * t.value(ib).transpose();
        if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += t.value(ia).transpose() * t.grad(self);
    });
}

Tensor concat(const Tensor& a, const Tensor& b) {
    check_same_tape("concat", a, b);
    if (a.rows() != b.rows()) shape_error("concat", a.value(), b.value());
    const auto ia = a.id(), ib = b.id();
    const Index ca = a.cols(), cb = b.cols();
    Matrix out(a.rows(), ca + cb);
    out.leftCols(ca) = a.value();
    out.rightCols(cb) = b.value();
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib, ca, cb](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.grad_buffer(ia) += t.grad(self).leftCols(ca);
        if (t.requires_grad(ib)) t.grad_buffer(ib) += t.grad(self).rightCols(cb);
    });
}

Tensor mean_rows(const Tensor& a) {
    if (a.rows() < 1) throw std::invalid_argument("mean_rows: input has no rows");
    const auto ia = a.id();
    const double inv = 1.0 / static_cast<double>(a.rows());
    Matrix out = a.value().colwise().sum() * inv;
    return a.tape().record(std::move(out), {ia}, [ia, inv](Tape& t, std::size_t self) {
        t.grad_buffer(ia).rowwise() += t.grad(self).row(0) * inv;
    });
}

Tensor segment_mean(const Tensor& a, std::span<const std::size_t> offsets, std::span<const std::uint32_t> indices) {
    if (offsets.empty() || offsets.back() != indices.size()) {
        throw std::invalid_argument("segment_mean: offsets do not cover " + std::to_string(indices.size()) +
                                    " indices");
    }
    const Index n_out = static_cast<Index>(offsets.size() - 1);
    const Index d = a.cols();
    const Matrix& x = a.value();
    Matrix out = Matrix::Zero(n_out, d);
    for (Index v = 0; v < n_out; ++v) {
        const std::size_t begin = offsets[v], end = offsets[v + 1];
        if (end <= begin) throw std::invalid_argument("segment_mean: segment " + std::to_string(v) + " is empty");
        for (std::size_t j = begin; j < end; ++j) {
            if (indices[j] >= static_cast<std::size_t>(x.rows())) {
                throw std::invalid_argument("segment_mean: index " + std::to_string(indices[j]) +
                                            " out of range for " + shape_str(x));
            }
            out.row(v) += x.row(indices[j]);
        }
        out.row(v) /= static_cast<double>(end - begin);
    }
    const auto ia = a.id();
    std::vector<std::size_t> off(offsets.begin(), offsets.end());
    std::vector<std::uint32_t> idx(indices.begin(), indices.end());
    return a.tape().record(std::move(out), {ia},
                           [ia, off = std::move(off), idx = std::move(idx)](Tape& t, std::size_t self) {
                               Matrix& g = t.grad_buffer(ia);
                               const Matrix& up = t.grad(self);
                               for (std::size_t v = 0; v + 1 < off.size(); ++v) {
                                   const double inv = 1.0 / static_cast<double>(off[v + 1] - off[v]);
                                   for (std::size_t j = off[v]; j < off[v + 1]; ++j) {
                                       g.row(idx[j]) += up.row(static_cast<Index>(v)) * inv;
                                   }
                               }
                           });
}

Tensor relu(const Tensor& a) {
    const auto ia = a.id();
    Matrix out = a.value().cwiseMax(0.0);
    return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        t.grad_buffer(ia) += (t.value(ia).array() > 0.0).select(t.grad(self), 0.0).matrix();
    });
}

Tensor sum(const Tensor& a) {
    const auto ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        t.grad_buffer(ia).array() += t.grad(self)(0, 0);
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    check_same_tape("linear", x, weight);
    check_same_tape("linear", x, bias);
    if (x.cols() != weight.rows()) shape_error("linear", x.value(), weight.value());
    if (bias.rows() != 1 || bias.cols() != weight.cols()) shape_error("linear", weight.value(), bias.value());
    const auto ix = x.id(), iw = weight.id(), ib = bias.id();
    Matrix out = x.value() * weight.value();
    out.rowwise() += bias.value().row(0);
    return x.tape().record(std::move(out), {ix, iw, ib}, [ix, iw, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ix)) t.grad_buffer(ix).noalias() += g * t.value(iw).transpose();
        if (t.requires_grad(iw)) t.grad_buffer(iw).noalias() += t.value(ix).transpose() * g;
        if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
    });
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
    check_same_tape("mse_loss", prediction, target);
    if (prediction.shape() != target.shape()) shape_error("mse_loss", prediction.value(), target.value());
    if (prediction.value().size() == 0) throw std::invalid_argument("mse_loss: empty input");
    const auto ip = prediction.id(), it = target.id();
    const double n = static_cast<double>(prediction.value().size());
    Matrix out(1, 1);
    out(0, 0) = (prediction.value() - target.value()).squaredNorm() / n;
    return prediction.tape().record(std::move(out), {ip, it}, [ip, it, n](Tape& t, std::size_t self) {
        const Matrix diff = (t.value(ip) - t.value(it)) * (2.0 * t.grad(self)(0, 0) / n);
        if (t.requires_grad(ip)) t.grad_buffer(ip) += diff;
        if (t.requires_grad(it)) t.grad_buffer(it) -= diff;
    });
}

Tensor conv3d_valid(const Tensor& input, const Tensor& kernels, const Tensor& bias, int patch_size, int kernel_size) {
    check_same_tape("conv3d_valid", input, kernels);
    check_same_tape("conv3d_valid", input, bias);
    const int p = patch_size, q = kernel_size;
    if (q < 1 || p < 1 || q > p) {
        throw std::invalid_argument("conv3d_valid: kernel size " + std::to_string(q) + " does not fit patch size " +
                                    std::to_string(p));
    }
    const Index p3 = Index{p} * p * p, q3 = Index{q} * q * q;
    if (input.cols() != p3) shape_error("conv3d_valid(input)", input.value(), Matrix(1, p3));
    if (kernels.cols() != q3) shape_error("conv3d_valid(kernels)", kernels.value(), Matrix(1, q3));
    const Index n_k = kernels.rows();
    if (bias.rows() != 1 || bias.cols() != n_k) shape_error("conv3d_valid(bias)", kernels.value(), bias.value());

    const int o = p - q + 1;
    const Index o3 = Index{o} * o * o;
    // Input offset of every (output position, kernel tap) pair.
    auto taps = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(o3 * q3));
    for (int oz = 0; oz < o; ++oz)
        for (int oy = 0; oy < o; ++oy)
            for (int ox = 0; ox < o; ++ox) {
                const Index pos = ox + o * (oy + Index{o} * oz);
                for (int kz = 0; kz < q; ++kz)
                    for (int ky = 0; ky < q; ++ky)
                        for (int kx = 0; kx < q; ++kx) {
                            const Index tap = kx + q * (ky + Index{q} * kz);
                            (*taps)[static_cast<std::size_t>(pos * q3 + tap)] =
                                (ox + kx) + p * ((oy + ky) + Index{p} * (oz + kz));
                        }
            }

    const Matrix& x = input.value();
    const Matrix& w = kernels.value();
    const Index n = x.rows();
    Matrix out(n, n_k * o3);
    Matrix cols(o3, q3);
    for (Index s = 0; s < n; ++s) {
        for (Index pos = 0; pos < o3; ++pos)
            for (Index tap = 0; tap < q3; ++tap) cols(pos, tap) = x(s, (*taps)[static_cast<std::size_t>(pos * q3 + tap)]);
        const Matrix resp = w * cols.transpose();  // n_k x o3
        for (Index k = 0; k < n_k; ++k) {
            out.row(s).segment(k * o3, o3) = resp.row(k).array() + bias.value()(0, k);
        }
    }

    const auto ix = input.id(), iw = kernels.id(), ib = bias.id();
    return input.tape().record(
        std::move(out), {ix, iw, ib}, [ix, iw, ib, taps, o3, q3, n_k](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            const Matrix& xv = t.value(ix);
            const Matrix& wv = t.value(iw);
            const Index rows = xv.rows();
            const bool need_x = t.requires_grad(ix), need_w = t.requires_grad(iw), need_b = t.requires_grad(ib);
            Matrix cols(o3, q3);
            Matrix gs(n_k, o3);
            for (Index s = 0; s < rows; ++s) {
                for (Index k = 0; k < n_k; ++k) gs.row(k) = g.row(s).segment(k * o3, o3);
                if (need_b) t.grad_buffer(ib).row(0) += gs.rowwise().sum().transpose();
                if (need_w) {
                    for (Index pos = 0; pos < o3; ++pos)
                        for (Index tap = 0; tap < q3; ++tap)
                            cols(pos, tap) = xv(s, (*taps)[static_cast<std::size_t>(pos * q3 + tap)]);
                    t.grad_buffer(iw).noalias() += gs * cols;
                }
                if (need_x) {
                    const Matrix dcols = gs.transpose() * wv;  // o3 x q3
                    Matrix& gx = t.grad_buffer(ix);
                    for (Index pos = 0; pos < o3; ++pos)
                        for (Index tap = 0; tap < q3; ++tap)
                            gx(s, (*taps)[static_cast<std::size_t>(pos * q3 + tap)]) += dcols(pos, tap);
                }
            }
        });
}

}  // namespace dosegnn::ad
