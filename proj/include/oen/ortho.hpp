#pragma once

#include <optional>
#include <vector>

#include "oen/net.hpp"
#include "oen/tape.hpp"
#include "oen/tensor.hpp"

namespace oen {

struct OrthoConfig {
    double lambda = 0.1;    // weight of the orthogonality terms in the objective
    double epsilon = 1e-12; // rows with norm below this contribute no similarity
    // nullopt selects every conv layer
    std::optional<std::vector<int>> layer_selection;
    // experimental per-term overrides; default both equal to lambda
    std::optional<double> lambda_self;
    std::optional<double> lambda_inter;

    double effective_lambda_self() const { return lambda_self.value_or(lambda); }
    double effective_lambda_inter() const { return lambda_inter.value_or(lambda); }
};

// ---------------------------------------------------------------------------
// cosine similarity
// ---------------------------------------------------------------------------

// <u,v>/(|u||v|), 0 if either norm < epsilon.
double cosine_similarity(const Tensor& u, const Tensor& v, double epsilon = 1e-12);
Var cosine_similarity(Var u, Var v, double epsilon = 1e-12);

// ---------------------------------------------------------------------------
// orthogonality losses over filter banks
//
// A bank is any tensor whose first axis indexes filters; remaining axes are
// flattened row-major into vectors, matching FilterBank. Values are computed
// with the Gram of the row-normalized bank; rows with norm < epsilon are
// treated as directionless (zero similarity, zero gradient).
// ---------------------------------------------------------------------------

// (1/2) sum_{i != j} SIM_C(w_i, w_j)^2
double self_orth_loss_value(const Tensor& bank, double epsilon = 1e-12);
Var self_orth_loss(Var bank, double epsilon = 1e-12);

// (1/N_e) sum_e sum_i sum_j SIM_C(w_i, v^e_j)^2, including i == j; 0 when
// prev is empty. Gradient flows to `bank` only.
double inter_orth_loss_value(const Tensor& bank, const std::vector<const Tensor*>& prev, double epsilon = 1e-12);
Var inter_orth_loss(Var bank, std::vector<Tensor> prev_banks, double epsilon = 1e-12);

// ---------------------------------------------------------------------------
// whole-net penalty (total objective's regularization term)
// ---------------------------------------------------------------------------

struct OrthoTerms {
    double self_total = 0.0;
    double inter_total = 0.0;
};

// Unscaled per-term sums over the selected layers; prev nets must share the
// arch fingerprint with net.
OrthoTerms ortho_penalty_terms(const SegNet& net, const std::vector<const SegNet*>& prev, const OrthoConfig& cfg);

// lambda_self * sum_l SelfOrth + lambda_inter * sum_l InterOrth as a tape
// node; gradient reaches only the current net's weights.
Var total_ortho_penalty(GradTape& tape, const SegNet& net, const NetVars& vars,
                        const std::vector<const SegNet*>& prev, const OrthoConfig& cfg);

}  // namespace oen
