#include "oen/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace oen {

namespace {

struct ConvDims {
    int in_ch, h, w;
    int out_ch, kh, kw;
    int out_h, out_w;
};

ConvDims conv2d_check(const Tensor& input, const Tensor& weights, const Tensor* bias, int stride, int padding) {
    if (input.rank() != 3) {
        throw std::invalid_argument("conv2d: input must be [C,H,W], got " + input.shape_str());
    }
    if (weights.rank() != 4) {
        throw std::invalid_argument("conv2d: weights must be [N,C,kh,kw], got " + weights.shape_str());
    }
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0, got " + std::to_string(padding));

    ConvDims d;
    d.in_ch = input.extent(0);
    d.h = input.extent(1);
    d.w = input.extent(2);
    d.out_ch = weights.extent(0);
    d.kh = weights.extent(2);
    d.kw = weights.extent(3);
    if (weights.extent(1) != d.in_ch) {
        throw std::invalid_argument("conv2d: input channels (" + std::to_string(d.in_ch) +
                                    ") do not match kernel channels (" + std::to_string(weights.extent(1)) + ")");
    }
    if (bias != nullptr && (bias->rank() != 1 || bias->extent(0) != d.out_ch)) {
        throw std::invalid_argument("conv2d: bias must be [" + std::to_string(d.out_ch) + "], got " +
                                    bias->shape_str());
    }
    if (d.kh > d.h + 2 * padding || d.kw > d.w + 2 * padding) {
        throw std::invalid_argument("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                                    " exceeds padded input " + std::to_string(d.h + 2 * padding) + "x" +
                                    std::to_string(d.w + 2 * padding));
    }
    d.out_h = (d.h + 2 * padding - d.kh) / stride + 1;
    d.out_w = (d.w + 2 * padding - d.kw) / stride + 1;
    return d;
}

// valid output range [lo,hi) for one kernel offset: lo <= o < hi implies
// 0 <= o*stride - padding + k < extent
void valid_range(int extent, int out_extent, int stride, int padding, int k, int& lo, int& hi) {
    const int a = padding - k;
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    const int b = extent - 1 + padding - k;
    hi = b < 0 ? 0 : std::min(out_extent, b / stride + 1);
    lo = std::min(lo, hi);
}

}  // namespace

Tensor conv2d_value(const Tensor& input, const Tensor& weights, const Tensor& bias, int stride, int padding) {
    const ConvDims d = conv2d_check(input, weights, &bias, stride, padding);
    Tensor out({d.out_ch, d.out_h, d.out_w});
    for (int n = 0; n < d.out_ch; ++n) {
        double* out_plane = out.data() + static_cast<std::size_t>(n) * d.out_h * d.out_w;
        std::fill(out_plane, out_plane + static_cast<std::size_t>(d.out_h) * d.out_w, bias[n]);
    }
    for (int n = 0; n < d.out_ch; ++n) {
        for (int c = 0; c < d.in_ch; ++c) {
            for (int ky = 0; ky < d.kh; ++ky) {
                int ylo, yhi;
                valid_range(d.h, d.out_h, stride, padding, ky, ylo, yhi);
                for (int kx = 0; kx < d.kw; ++kx) {
                    int xlo, xhi;
                    valid_range(d.w, d.out_w, stride, padding, kx, xlo, xhi);
                    const double wv = weights.at4(n, c, ky, kx);
                    if (wv == 0.0) continue;
                    for (int y = ylo; y < yhi; ++y) {
                        const int iy = y * stride - padding + ky;
                        double* orow = out.data() + (static_cast<std::size_t>(n) * d.out_h + y) * d.out_w;
                        const double* irow = input.data() + (static_cast<std::size_t>(c) * d.h + iy) * d.w;
                        for (int x = xlo; x < xhi; ++x) {
                            orow[x] += wv * irow[x * stride - padding + kx];
                        }
                    }
                }
            }
        }
    }
    return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weights, int stride, int padding, const Tensor& dout,
                     Tensor* dinput, Tensor* dweights, Tensor* dbias) {
    const ConvDims d = conv2d_check(input, weights, nullptr, stride, padding);

    if (dbias != nullptr) {
        for (int n = 0; n < d.out_ch; ++n) {
            const double* gplane = dout.data() + static_cast<std::size_t>(n) * d.out_h * d.out_w;
            double acc = 0.0;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(d.out_h) * d.out_w; ++i) acc += gplane[i];
            (*dbias)[n] += acc;
        }
    }

    for (int n = 0; n < d.out_ch; ++n) {
        for (int c = 0; c < d.in_ch; ++c) {
            for (int ky = 0; ky < d.kh; ++ky) {
                int ylo, yhi;
                valid_range(d.h, d.out_h, stride, padding, ky, ylo, yhi);
                for (int kx = 0; kx < d.kw; ++kx) {
                    int xlo, xhi;
                    valid_range(d.w, d.out_w, stride, padding, kx, xlo, xhi);
                    double wacc = 0.0;
                    const double wv = weights.at4(n, c, ky, kx);
                    for (int y = ylo; y < yhi; ++y) {
                        const int iy = y * stride - padding + ky;
                        const double* grow = dout.data() + (static_cast<std::size_t>(n) * d.out_h + y) * d.out_w;
                        const double* irow = input.data() + (static_cast<std::size_t>(c) * d.h + iy) * d.w;
                        double* drow = dinput ? dinput->data() + (static_cast<std::size_t>(c) * d.h + iy) * d.w
                                              : nullptr;
                        for (int x = xlo; x < xhi; ++x) {
                            const int ix = x * stride - padding + kx;
                            const double g = grow[x];
                            if (dweights != nullptr) wacc += g * irow[ix];
                            if (drow != nullptr) drow[ix] += g * wv;
                        }
                    }
                    if (dweights != nullptr) dweights->at4(n, c, ky, kx) += wacc;
                }
            }
        }
    }
}

Var conv2d(Var input, Var weights, Var bias, int stride, int padding) {
    GradTape& tape = *input.tape;
    Tensor out = conv2d_value(input.value(), weights.value(), bias.value(), stride, padding);
    const int in_id = input.id, w_id = weights.id, b_id = bias.id;
    return tape.node(std::move(out), {in_id, w_id, b_id},
                     [in_id, w_id, b_id, stride, padding](GradTape& t, const Tensor& up,
                                                          std::vector<Tensor>& grads) {
                         const Tensor& in_v = t.value_of(in_id);
                         const Tensor& w_v = t.value_of(w_id);
                         Tensor* din = t.requires_grad(in_id)
                                           ? &GradTape::grad_slot(grads, in_id, in_v.shape())
                                           : nullptr;
                         Tensor* dw = t.requires_grad(w_id)
                                          ? &GradTape::grad_slot(grads, w_id, w_v.shape())
                                          : nullptr;
                         Tensor* db = t.requires_grad(b_id)
                                          ? &GradTape::grad_slot(grads, b_id, t.value_of(b_id).shape())
                                          : nullptr;
                         conv2d_backward(in_v, w_v, stride, padding, up, din, dw, db);
                     });
}

Var relu(Var x) { return leaky_relu(x, 0.0); }

Var leaky_relu(Var x, double alpha) {
    GradTape& tape = *x.tape;
    const Tensor& v = x.value();
    Tensor out(v.shape());
    for (std::int64_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : alpha * v[i];
    const int x_id = x.id;
    return tape.node(std::move(out), {x_id},
                     [x_id, alpha](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         if (!t.requires_grad(x_id)) return;
                         const Tensor& v = t.value_of(x_id);
                         Tensor& dx = GradTape::grad_slot(grads, x_id, v.shape());
                         for (std::int64_t i = 0; i < v.size(); ++i) {
                             dx[i] += up[i] * (v[i] > 0.0 ? 1.0 : alpha);
                         }
                     });
}

Var sigmoid(Var x) {
    GradTape& tape = *x.tape;
    const Tensor& v = x.value();
    Tensor out(v.shape());
    for (std::int64_t i = 0; i < v.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-v[i]));
    const int x_id = x.id;
    const int out_id = tape.num_nodes();
    return tape.node(std::move(out), {x_id},
                     [x_id, out_id](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         if (!t.requires_grad(x_id)) return;
                         const Tensor& p = t.value_of(out_id);
                         Tensor& dx = GradTape::grad_slot(grads, x_id, p.shape());
                         for (std::int64_t i = 0; i < p.size(); ++i) {
                             dx[i] += up[i] * p[i] * (1.0 - p[i]);
                         }
                     });
}

Var softmax_channels(Var x) {
    GradTape& tape = *x.tape;
    const Tensor& v = x.value();
    if (v.rank() != 3) throw std::invalid_argument("softmax_channels: expected [K,H,W], got " + v.shape_str());
    const int k = v.extent(0), h = v.extent(1), w = v.extent(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor out(v.shape());
    for (std::int64_t px = 0; px < plane; ++px) {
        double m = v[px];
        for (int c = 1; c < k; ++c) m = std::max(m, v[c * plane + px]);
        double z = 0.0;
        for (int c = 0; c < k; ++c) {
            const double e = std::exp(v[c * plane + px] - m);
            out[c * plane + px] = e;
            z += e;
        }
        for (int c = 0; c < k; ++c) out[c * plane + px] /= z;
    }
    const int x_id = x.id;
    const int out_id = tape.num_nodes();
    return tape.node(std::move(out), {x_id},
                     [x_id, out_id, k, plane](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         if (!t.requires_grad(x_id)) return;
                         const Tensor& p = t.value_of(out_id);
                         Tensor& dx = GradTape::grad_slot(grads, x_id, p.shape());
                         for (std::int64_t px = 0; px < plane; ++px) {
                             double dot = 0.0;
                             for (int c = 0; c < k; ++c) dot += p[c * plane + px] * up[c * plane + px];
                             for (int c = 0; c < k; ++c) {
                                 dx[c * plane + px] += p[c * plane + px] * (up[c * plane + px] - dot);
                             }
                         }
                     });
}

Var add(Var a, Var b) {
    GradTape& tape = *a.tape;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) {
        throw std::invalid_argument("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    const int a_id = a.id, b_id = b.id;
    return tape.node(std::move(out), {a_id, b_id},
                     [a_id, b_id](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         for (int id : {a_id, b_id}) {
                             if (!t.requires_grad(id)) continue;
                             Tensor& d = GradTape::grad_slot(grads, id, up.shape());
                             for (std::int64_t i = 0; i < up.size(); ++i) d[i] += up[i];
                         }
                     });
}

Var mul(Var a, Var b) {
    GradTape& tape = *a.tape;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) {
        throw std::invalid_argument("mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    const int a_id = a.id, b_id = b.id;
    return tape.node(std::move(out), {a_id, b_id},
                     [a_id, b_id](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         const Tensor& av = t.value_of(a_id);
                         const Tensor& bv = t.value_of(b_id);
                         if (t.requires_grad(a_id)) {
                             Tensor& da = GradTape::grad_slot(grads, a_id, av.shape());
                             for (std::int64_t i = 0; i < up.size(); ++i) da[i] += up[i] * bv[i];
                         }
                         if (t.requires_grad(b_id)) {
                             Tensor& db = GradTape::grad_slot(grads, b_id, bv.shape());
                             for (std::int64_t i = 0; i < up.size(); ++i) db[i] += up[i] * av[i];
                         }
                     });
}

Var scale(Var a, double c) {
    GradTape& tape = *a.tape;
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    const int a_id = a.id;
    return tape.node(std::move(out), {a_id},
                     [a_id, c](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         if (!t.requires_grad(a_id)) return;
                         Tensor& da = GradTape::grad_slot(grads, a_id, up.shape());
                         for (std::int64_t i = 0; i < up.size(); ++i) da[i] += up[i] * c;
                     });
}

Var sum(Var x) {
    GradTape& tape = *x.tape;
    const Tensor& v = x.value();
    double acc = 0.0;
    for (std::int64_t i = 0; i < v.size(); ++i) acc += v[i];
    const int x_id = x.id;
    return tape.node(Tensor({1}, acc), {x_id},
                     [x_id](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         if (!t.requires_grad(x_id)) return;
                         const Tensor& v = t.value_of(x_id);
                         Tensor& dx = GradTape::grad_slot(grads, x_id, v.shape());
                         for (std::int64_t i = 0; i < v.size(); ++i) dx[i] += up[0];
                     });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var upsample2_nearest(Var x) {
    GradTape& tape = *x.tape;
    const Tensor& v = x.value();
    if (v.rank() != 3) throw std::invalid_argument("upsample2_nearest: expected [C,H,W], got " + v.shape_str());
    const int c = v.extent(0), h = v.extent(1), w = v.extent(2);
    Tensor out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            for (int x2 = 0; x2 < w; ++x2) {
                const double val = v.at3(ch, y, x2);
                out.at3(ch, 2 * y, 2 * x2) = val;
                out.at3(ch, 2 * y, 2 * x2 + 1) = val;
                out.at3(ch, 2 * y + 1, 2 * x2) = val;
                out.at3(ch, 2 * y + 1, 2 * x2 + 1) = val;
            }
        }
    }
    const int x_id = x.id;
    return tape.node(std::move(out), {x_id},
                     [x_id, c, h, w](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         if (!t.requires_grad(x_id)) return;
                         Tensor& dx = GradTape::grad_slot(grads, x_id, t.value_of(x_id).shape());
                         for (int ch = 0; ch < c; ++ch) {
                             for (int y = 0; y < h; ++y) {
                                 for (int x2 = 0; x2 < w; ++x2) {
                                     dx.at3(ch, y, x2) += up.at3(ch, 2 * y, 2 * x2) + up.at3(ch, 2 * y, 2 * x2 + 1) +
                                                          up.at3(ch, 2 * y + 1, 2 * x2) +
                                                          up.at3(ch, 2 * y + 1, 2 * x2 + 1);
                                 }
                             }
                         }
                     });
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& loss_fn, const Tensor& param, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
    Tensor grad(param.shape(), 0.0);
    Tensor probe = param;
    for (std::int64_t i = 0; i < param.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = loss_fn(probe);
        probe[i] = orig - h;
        const double down = loss_fn(probe);
        probe[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw std::runtime_error("finite_diff_grad: loss_fn returned a non-finite value at coordinate " +
                                     std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

}  // namespace oen
