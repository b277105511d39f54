#include "oen/ortho.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace oen {

namespace {

struct NormalizedBank {
    int n = 0;
    int d = 0;
    std::vector<double> rows;   // n*d, unit rows; zero rows where dead
    std::vector<double> norms;  // n
    std::vector<bool> live;     // norm >= epsilon
};

NormalizedBank normalize_bank(const Tensor& bank, double epsilon) {
    if (bank.rank() < 1 || bank.size() == 0) {
        throw std::invalid_argument("orthogonality loss: bank must be non-empty");
    }
    NormalizedBank nb;
    nb.n = bank.extent(0);
    nb.d = static_cast<int>(bank.size() / nb.n);
    nb.rows.assign(static_cast<std::size_t>(nb.n) * nb.d, 0.0);
    nb.norms.assign(static_cast<std::size_t>(nb.n), 0.0);
    nb.live.assign(static_cast<std::size_t>(nb.n), false);
    for (int i = 0; i < nb.n; ++i) {
        const double* src = bank.data() + static_cast<std::size_t>(i) * nb.d;
        double sq = 0.0;
        for (int k = 0; k < nb.d; ++k) sq += src[k] * src[k];
        const double norm = std::sqrt(sq);
        nb.norms[static_cast<std::size_t>(i)] = norm;
        if (norm >= epsilon) {
            nb.live[static_cast<std::size_t>(i)] = true;
            double* dst = nb.rows.data() + static_cast<std::size_t>(i) * nb.d;
            for (int k = 0; k < nb.d; ++k) dst[k] = src[k] / norm;
        }
    }
    return nb;
}

// d(loss)/d(bank) given d(loss)/d(normalized rows): per live row k,
// dw_k = (g_k - (g_k . u_k) u_k) / norm_k.
void denormalize_grad(const NormalizedBank& nb, const std::vector<double>& grad_rows, double scale_factor,
                      Tensor& out) {
    for (int i = 0; i < nb.n; ++i) {
        if (!nb.live[static_cast<std::size_t>(i)]) continue;
        const double* g = grad_rows.data() + static_cast<std::size_t>(i) * nb.d;
        const double* u = nb.rows.data() + static_cast<std::size_t>(i) * nb.d;
        double dot = 0.0;
        for (int k = 0; k < nb.d; ++k) dot += g[k] * u[k];
        const double inv_norm = 1.0 / nb.norms[static_cast<std::size_t>(i)];
        double* dst = out.data() + static_cast<std::size_t>(i) * nb.d;
        for (int k = 0; k < nb.d; ++k) {
            dst[k] += scale_factor * (g[k] - dot * u[k]) * inv_norm;
        }
    }
}

// Gram of the normalized rows, n x n
std::vector<double> gram(const NormalizedBank& nb) {
    std::vector<double> g(static_cast<std::size_t>(nb.n) * nb.n, 0.0);
    for (int i = 0; i < nb.n; ++i) {
        for (int j = i; j < nb.n; ++j) {
            const double* a = nb.rows.data() + static_cast<std::size_t>(i) * nb.d;
            const double* b = nb.rows.data() + static_cast<std::size_t>(j) * nb.d;
            double dot = 0.0;
            for (int k = 0; k < nb.d; ++k) dot += a[k] * b[k];
            g[static_cast<std::size_t>(i) * nb.n + j] = dot;
            g[static_cast<std::size_t>(j) * nb.n + i] = dot;
        }
    }
    return g;
}

double self_orth_from_normalized(const NormalizedBank& nb, std::vector<double>* grad_rows) {
    const std::vector<double> g = gram(nb);
    double loss = 0.0;
    for (int i = 0; i < nb.n; ++i) {
        for (int j = i + 1; j < nb.n; ++j) {
            const double s = g[static_cast<std::size_t>(i) * nb.n + j];
            loss += s * s;  // the ordered double sum counts each pair twice, halved
        }
    }
    if (grad_rows != nullptr) {
        // dL/dU = 2 H U with H = Gram, diagonal zeroed
        grad_rows->assign(nb.rows.size(), 0.0);
        for (int i = 0; i < nb.n; ++i) {
            double* dst = grad_rows->data() + static_cast<std::size_t>(i) * nb.d;
            for (int j = 0; j < nb.n; ++j) {
                if (j == i) continue;
                const double h = 2.0 * g[static_cast<std::size_t>(i) * nb.n + j];
                if (h == 0.0) continue;
                const double* row = nb.rows.data() + static_cast<std::size_t>(j) * nb.d;
                for (int k = 0; k < nb.d; ++k) dst[k] += h * row[k];
            }
        }
    }
    return loss;
}

double inter_orth_from_normalized(const NormalizedBank& cur, const std::vector<NormalizedBank>& prev,
                                  std::vector<double>* grad_rows) {
    if (prev.empty()) {
        if (grad_rows != nullptr) grad_rows->assign(cur.rows.size(), 0.0);
        return 0.0;
    }
    const double inv_ne = 1.0 / static_cast<double>(prev.size());
    if (grad_rows != nullptr) grad_rows->assign(cur.rows.size(), 0.0);
    double loss = 0.0;
    for (const NormalizedBank& pb : prev) {
        for (int i = 0; i < cur.n; ++i) {
            const double* a = cur.rows.data() + static_cast<std::size_t>(i) * cur.d;
            double* dst = grad_rows != nullptr ? grad_rows->data() + static_cast<std::size_t>(i) * cur.d : nullptr;
            for (int j = 0; j < pb.n; ++j) {
                const double* b = pb.rows.data() + static_cast<std::size_t>(j) * pb.d;
                double dot = 0.0;
                for (int k = 0; k < cur.d; ++k) dot += a[k] * b[k];
                loss += dot * dot;
                if (dst != nullptr && dot != 0.0) {
                    const double h = 2.0 * inv_ne * dot;
                    for (int k = 0; k < cur.d; ++k) dst[k] += h * b[k];
                }
            }
        }
    }
    return loss * inv_ne;
}

std::vector<NormalizedBank> normalize_prev(const Tensor& bank, const std::vector<const Tensor*>& prev,
                                           double epsilon) {
    const int d = static_cast<int>(bank.size() / bank.extent(0));
    std::vector<NormalizedBank> out;
    out.reserve(prev.size());
    for (std::size_t e = 0; e < prev.size(); ++e) {
        const Tensor& p = *prev[e];
        const int pd = static_cast<int>(p.size() / p.extent(0));
        if (pd != d) {
            throw std::invalid_argument("inter_orth_loss: previous bank " + std::to_string(e) +
                                        " has vector dim " + std::to_string(pd) + ", expected " + std::to_string(d));
        }
        out.push_back(normalize_bank(p, epsilon));
    }
    return out;
}

}  // namespace

double cosine_similarity(const Tensor& u, const Tensor& v, double epsilon) {
    if (u.size() == 0 || v.size() == 0) throw std::invalid_argument("cosine_similarity: empty vector");
    if (u.size() != v.size()) {
        throw std::invalid_argument("cosine_similarity: length mismatch " + std::to_string(u.size()) + " vs " +
                                    std::to_string(v.size()));
    }
    double dot = 0.0, uu = 0.0, vv = 0.0;
    for (std::int64_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    const double nu = std::sqrt(uu), nv = std::sqrt(vv);
    if (nu < epsilon || nv < epsilon) return 0.0;
    return dot / (nu * nv);
}

Var cosine_similarity(Var u, Var v, double epsilon) {
    GradTape& tape = *u.tape;
    const double s = cosine_similarity(u.value(), v.value(), epsilon);
    const int u_id = u.id, v_id = v.id;
    return tape.node(Tensor({1}, s), {u_id, v_id},
                     [u_id, v_id, epsilon, s](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         const Tensor& uv = t.value_of(u_id);
                         const Tensor& vv = t.value_of(v_id);
                         double uu = 0.0, ww = 0.0;
                         for (std::int64_t i = 0; i < uv.size(); ++i) {
                             uu += uv[i] * uv[i];
                             ww += vv[i] * vv[i];
                         }
                         const double nu = std::sqrt(uu), nv = std::sqrt(ww);
                         if (nu < epsilon || nv < epsilon) return;  // defined as 0, no gradient
                         const double g = up[0];
                         if (t.requires_grad(u_id)) {
                             Tensor& du = GradTape::grad_slot(grads, u_id, uv.shape());
                             for (std::int64_t i = 0; i < uv.size(); ++i) {
                                 du[i] += g * (vv[i] / (nu * nv) - s * uv[i] / uu);
                             }
                         }
                         if (t.requires_grad(v_id)) {
                             Tensor& dv = GradTape::grad_slot(grads, v_id, vv.shape());
                             for (std::int64_t i = 0; i < vv.size(); ++i) {
                                 dv[i] += g * (uv[i] / (nu * nv) - s * vv[i] / ww);
                             }
                         }
                     });
}

double self_orth_loss_value(const Tensor& bank, double epsilon) {
    const NormalizedBank nb = normalize_bank(bank, epsilon);
    return self_orth_from_normalized(nb, nullptr);
}

Var self_orth_loss(Var bank, double epsilon) {
    GradTape& tape = *bank.tape;
    const int bank_id = bank.id;
    const double value = self_orth_loss_value(bank.value(), epsilon);
    return tape.node(Tensor({1}, value), {bank_id},
                     [bank_id, epsilon](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         if (!t.requires_grad(bank_id)) return;
                         const Tensor& w = t.value_of(bank_id);
                         const NormalizedBank nb = normalize_bank(w, epsilon);
                         std::vector<double> grad_rows;
                         self_orth_from_normalized(nb, &grad_rows);
                         Tensor& dst = GradTape::grad_slot(grads, bank_id, w.shape());
                         denormalize_grad(nb, grad_rows, up[0], dst);
                     });
}

double inter_orth_loss_value(const Tensor& bank, const std::vector<const Tensor*>& prev, double epsilon) {
    if (prev.empty()) return 0.0;
    const NormalizedBank cur = normalize_bank(bank, epsilon);
    const std::vector<NormalizedBank> prevs = normalize_prev(bank, prev, epsilon);
    return inter_orth_from_normalized(cur, prevs, nullptr);
}

Var inter_orth_loss(Var bank, std::vector<Tensor> prev_banks, double epsilon) {
    GradTape& tape = *bank.tape;
    const int bank_id = bank.id;
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(prev_banks.size());
    for (const Tensor& p : prev_banks) ptrs.push_back(&p);
    const double value = inter_orth_loss_value(bank.value(), ptrs, epsilon);
    auto shared_prev = std::make_shared<std::vector<Tensor>>(std::move(prev_banks));
    return tape.node(Tensor({1}, value), {bank_id},
                     [bank_id, epsilon, shared_prev](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                         if (!t.requires_grad(bank_id) || shared_prev->empty()) return;
                         const Tensor& w = t.value_of(bank_id);
                         std::vector<const Tensor*> ptrs;
                         ptrs.reserve(shared_prev->size());
                         for (const Tensor& p : *shared_prev) ptrs.push_back(&p);
                         const NormalizedBank cur = normalize_bank(w, epsilon);
                         const std::vector<NormalizedBank> prevs = normalize_prev(w, ptrs, epsilon);
                         std::vector<double> grad_rows;
                         inter_orth_from_normalized(cur, prevs, &grad_rows);
                         Tensor& dst = GradTape::grad_slot(grads, bank_id, w.shape());
                         denormalize_grad(cur, grad_rows, up[0], dst);
                     });
}

namespace {

std::vector<int> selected_layers(const SegNet& net, const OrthoConfig& cfg) {
    if (!cfg.layer_selection.has_value()) {
        std::vector<int> all(static_cast<std::size_t>(net.num_conv_layers()));
        for (int i = 0; i < net.num_conv_layers(); ++i) all[static_cast<std::size_t>(i)] = i;
        return all;
    }
    for (int idx : *cfg.layer_selection) {
        if (idx < 0 || idx >= net.num_conv_layers()) {
            throw std::invalid_argument("OrthoConfig: layer index " + std::to_string(idx) +
                                        " out of range for net with " + std::to_string(net.num_conv_layers()) +
                                        " conv layers");
        }
    }
    return *cfg.layer_selection;
}

void check_fingerprints(const SegNet& net, const std::vector<const SegNet*>& prev) {
    for (std::size_t e = 0; e < prev.size(); ++e) {
        if (prev[e]->arch_fingerprint() != net.arch_fingerprint()) {
            throw std::invalid_argument("orthogonality penalty: previous model " + std::to_string(e) +
                                        " has a different architecture fingerprint");
        }
    }
}

}  // namespace

OrthoTerms ortho_penalty_terms(const SegNet& net, const std::vector<const SegNet*>& prev, const OrthoConfig& cfg) {
    check_fingerprints(net, prev);
    OrthoTerms terms;
    for (int l : selected_layers(net, cfg)) {
        const Tensor& w = net.layers()[static_cast<std::size_t>(l)].weights;
        terms.self_total += self_orth_loss_value(w, cfg.epsilon);
        std::vector<const Tensor*> prev_banks;
        prev_banks.reserve(prev.size());
        for (const SegNet* p : prev) prev_banks.push_back(&p->layers()[static_cast<std::size_t>(l)].weights);
        terms.inter_total += inter_orth_loss_value(w, prev_banks, cfg.epsilon);
    }
    return terms;
}

Var total_ortho_penalty(GradTape& tape, const SegNet& net, const NetVars& vars,
                        const std::vector<const SegNet*>& prev, const OrthoConfig& cfg) {
    if (cfg.lambda < 0.0) throw std::invalid_argument("OrthoConfig: lambda must be >= 0");
    if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("OrthoConfig: epsilon must be > 0");
    check_fingerprints(net, prev);
    const double ls = cfg.effective_lambda_self();
    const double li = cfg.effective_lambda_inter();
    if (ls == 0.0 && li == 0.0) return tape.constant(Tensor({1}, 0.0));

    Var self_sum, inter_sum;
    for (int l : selected_layers(net, cfg)) {
        Var w = vars.weights[static_cast<std::size_t>(l)];
        if (ls != 0.0) {
            Var s = self_orth_loss(w, cfg.epsilon);
            self_sum = self_sum.valid() ? add(self_sum, s) : s;
        }
        if (li != 0.0 && !prev.empty()) {
            std::vector<Tensor> prev_banks;
            prev_banks.reserve(prev.size());
            for (const SegNet* p : prev) prev_banks.push_back(p->layers()[static_cast<std::size_t>(l)].weights);
            Var s = inter_orth_loss(w, std::move(prev_banks), cfg.epsilon);
            inter_sum = inter_sum.valid() ? add(inter_sum, s) : s;
        }
    }

    Var total;
    if (self_sum.valid()) total = scale(self_sum, ls);
    if (inter_sum.valid()) {
        Var scaled = scale(inter_sum, li);
        total = total.valid() ? add(total, scaled) : scaled;
    }
    return total.valid() ? total : tape.constant(Tensor({1}, 0.0));
}

}  // namespace oen
