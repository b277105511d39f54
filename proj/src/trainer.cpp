#include "oen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <thread>

namespace oen {

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::random: return "random";
        case Mode::self_orth: return "self_orth";
        case Mode::inter_orth: return "inter_orth";
    }
    return "random";
}

Mode mode_from_name(const std::string& name) {
    if (name == "random") return Mode::random;
    if (name == "self_orth") return Mode::self_orth;
    if (name == "inter_orth") return Mode::inter_orth;
    throw std::invalid_argument("unknown mode '" + name + "' (expected random, self_orth or inter_orth)");
}

std::string seg_loss_name(SegLossKind k) { return k == SegLossKind::soft_dice ? "soft_dice" : "cross_entropy"; }

SegLossKind seg_loss_from_name(const std::string& name) {
    if (name == "soft_dice") return SegLossKind::soft_dice;
    if (name == "cross_entropy") return SegLossKind::cross_entropy;
    throw std::invalid_argument("unknown seg_loss '" + name + "' (expected soft_dice or cross_entropy)");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (batches_per_epoch < 1) throw std::invalid_argument("TrainConfig: batches_per_epoch must be >= 1");
    if (patch_size < 2 || patch_size % 2 != 0) {
        throw std::invalid_argument("TrainConfig: patch_size must be even and >= 2");
    }
    if (foreground_sample_prob < 0.0 || foreground_sample_prob > 1.0) {
        throw std::invalid_argument("TrainConfig: foreground_sample_prob must lie in [0,1]");
    }
    if (ortho.lambda < 0.0) throw std::invalid_argument("TrainConfig: ortho.lambda must be >= 0");
    if (!(ortho.epsilon > 0.0)) throw std::invalid_argument("TrainConfig: ortho.epsilon must be > 0");
    if (lr_schedule.period_epochs < 1) throw std::invalid_argument("TrainConfig: lr period must be >= 1");
    if (!(lr_schedule.factor > 0.0)) throw std::invalid_argument("TrainConfig: lr factor must be > 0");
    if (jobs < 1) throw std::invalid_argument("TrainConfig: jobs must be >= 1");
}

double TrainConfig::effective_lambda_self() const {
    if (mode == Mode::random) return 0.0;
    return ortho.effective_lambda_self();
}

double TrainConfig::effective_lambda_inter() const {
    if (mode != Mode::inter_orth) return 0.0;
    return ortho.effective_lambda_inter();
}

void Adam::step(const std::vector<Tensor*>& params, const Gradients& grads, double lr) {
    if (grads.count() != static_cast<int>(params.size())) {
        throw std::invalid_argument("Adam::step: got " + std::to_string(grads.count()) + " gradients for " +
                                    std::to_string(params.size()) + " parameters");
    }
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->shape(), 0.0);
            v_.emplace_back(p->shape(), 0.0);
        }
    }
    t_ += 1;
    const double bc1 = 1.0 - std::pow(params_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(params_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads.for_param(static_cast<int>(i));
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::int64_t j = 0; j < p.size(); ++j) {
            m[j] = params_.beta1 * m[j] + (1.0 - params_.beta1) * g[j];
            v[j] = params_.beta2 * v[j] + (1.0 - params_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + params_.eps);
        }
    }
}

namespace {

std::vector<Tensor*> parameter_list(SegNet& net) {
    std::vector<Tensor*> out;
    out.reserve(2 * net.layers().size());
    for (ConvLayer& l : net.layers()) {
        out.push_back(&l.weights);
        out.push_back(&l.bias);
    }
    return out;
}

}  // namespace

TrainResult train_member(const TrainConfig& cfg, const ArchConfig& arch, const SynthDataset& ds,
                         const std::vector<const SegNet*>& prev, int member_index) {
    cfg.validate();
    if (!prev.empty() && cfg.mode != Mode::inter_orth) {
        throw std::invalid_argument("train_member: previous models are only valid in inter_orth mode");
    }

    SegNet net(arch);
    net.init_weights(cfg.seed);
    for (std::size_t e = 0; e < prev.size(); ++e) {
        if (prev[e]->arch_fingerprint() != net.arch_fingerprint()) {
            throw std::invalid_argument("train_member: previous model " + std::to_string(e) +
                                        " has a mismatched architecture fingerprint");
        }
    }

    const double lambda_self = cfg.effective_lambda_self();
    const double lambda_inter = cfg.effective_lambda_inter();
    OrthoConfig ocfg = cfg.ortho;
    ocfg.lambda_self = lambda_self;
    ocfg.lambda_inter = lambda_inter;
    const bool use_penalty = lambda_self != 0.0 || lambda_inter != 0.0;

    PatchSampler sampler(ds, "train", cfg.patch_size, cfg.foreground_sample_prob);
    Rng patch_rng(Rng::mix(cfg.seed, 0x70A7C8E5ULL));
    Adam adam(cfg.optimizer);

    TrainingLog log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr =
            cfg.optimizer.lr * std::pow(cfg.lr_schedule.factor, epoch / cfg.lr_schedule.period_epochs);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        if (use_penalty) {
            const OrthoTerms terms = ortho_penalty_terms(net, prev, ocfg);
            rec.self_orth_start = lambda_self != 0.0 ? terms.self_total : 0.0;
            rec.inter_orth_start = lambda_inter != 0.0 ? terms.inter_total : 0.0;
            rec.penalty_start = lambda_self * terms.self_total + lambda_inter * terms.inter_total;
        }

        double seg_sum = 0.0;
        for (int batch = 0; batch < cfg.batches_per_epoch; ++batch) {
            GradTape tape;
            NetVars vars = net.register_params(tape);
            Var seg_acc;
            for (int s = 0; s < cfg.batch_size; ++s) {
                Patch patch = sampler.draw(patch_rng);
                Var image = tape.constant(std::move(patch.image));
                Var probs = net.forward(tape, vars, image);
                LossValue lv = cfg.seg_loss == SegLossKind::soft_dice
                                   ? soft_dice_loss(probs, patch.mask, cfg.seg_loss_options)
                                   : cross_entropy_loss(probs, patch.mask, cfg.seg_loss_options);
                seg_acc = seg_acc.valid() ? add(seg_acc, lv.value) : lv.value;
            }
            Var seg = scale(seg_acc, 1.0 / static_cast<double>(cfg.batch_size));
            Var total = seg;
            if (use_penalty) total = add(seg, total_ortho_penalty(tape, net, vars, prev, ocfg));

            const double total_value = total.value()[0];
            if (!std::isfinite(total_value)) {
                throw TrainingError("train_member: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                        std::to_string(batch),
                                    epoch, batch);
            }
            const double seg_value = seg.value()[0];
            Gradients grads = tape.backward(total);
            adam.step(parameter_list(net), grads, lr);
            seg_sum += seg_value;
        }
        rec.seg_loss_mean = seg_sum / static_cast<double>(cfg.batches_per_epoch);
        log.epochs.push_back(rec);
    }

    (void)member_index;
    return TrainResult{std::move(net), std::move(log)};
}

std::uint64_t member_seed(std::uint64_t base_seed, int member_index) {
    return base_seed + static_cast<std::uint64_t>(member_index) * 10007ULL;
}

BuildResult build_ensemble(const TrainConfig& base_cfg, const ArchConfig& arch, const SynthDataset& ds,
                           int n_members) {
    base_cfg.validate();
    if (n_members < 1) throw std::invalid_argument("build_ensemble: n_members must be >= 1");

    Ensemble ens;
    ens.arch = arch;
    std::vector<TrainingLog> logs;

    auto member_cfg = [&](int k) {
        TrainConfig cfg = base_cfg;
        cfg.seed = member_seed(base_cfg.seed, k);
        return cfg;
    };

    if (base_cfg.mode == Mode::inter_orth || base_cfg.jobs <= 1) {
        for (int k = 0; k < n_members; ++k) {
            std::vector<const SegNet*> prev;
            if (base_cfg.mode == Mode::inter_orth) {
                for (const SegNet& m : ens.members) prev.push_back(&m);
            }
            TrainResult r = train_member(member_cfg(k), arch, ds, prev, k);
            ens.members.push_back(std::move(r.net));
            ens.meta.push_back(MemberMeta{base_cfg.mode, member_cfg(k).seed,
                                          base_cfg.mode == Mode::random ? 0.0 : base_cfg.ortho.lambda, k});
            logs.push_back(std::move(r.log));
        }
        return BuildResult{std::move(ens), std::move(logs)};
    }

    // random and self_orth members are independent; train them in parallel
    std::vector<std::optional<TrainResult>> results(static_cast<std::size_t>(n_members));
    std::vector<std::string> errors(static_cast<std::size_t>(n_members));
    std::vector<std::thread> workers;
    const int jobs = std::min(base_cfg.jobs, n_members);
    for (int w = 0; w < jobs; ++w) {
        workers.emplace_back([&, w]() {
            for (int k = w; k < n_members; k += jobs) {
                try {
                    results[static_cast<std::size_t>(k)] = train_member(member_cfg(k), arch, ds, {}, k);
                } catch (const std::exception& ex) {
                    errors[static_cast<std::size_t>(k)] = ex.what();
                }
            }
        });
    }
    for (std::thread& t : workers) t.join();
    for (int k = 0; k < n_members; ++k) {
        if (!errors[static_cast<std::size_t>(k)].empty()) {
            throw std::runtime_error("build_ensemble: member " + std::to_string(k) + " failed: " +
                                     errors[static_cast<std::size_t>(k)]);
        }
        ens.members.push_back(std::move(results[static_cast<std::size_t>(k)]->net));
        ens.meta.push_back(MemberMeta{base_cfg.mode, member_cfg(k).seed,
                                      base_cfg.mode == Mode::random ? 0.0 : base_cfg.ortho.lambda, k});
        logs.push_back(std::move(results[static_cast<std::size_t>(k)]->log));
    }
    return BuildResult{std::move(ens), std::move(logs)};
}

ProbMap ensemble_predict(const Ensemble& ens, const Tensor& image) {
    if (ens.members.empty()) throw std::invalid_argument("ensemble_predict: ensemble has no members");
    ProbMap acc = ens.members.front().predict(image);
    for (std::size_t m = 1; m < ens.members.size(); ++m) {
        const ProbMap pm = ens.members[m].predict(image);
        for (std::int64_t i = 0; i < acc.values.size(); ++i) acc.values[i] += pm.values[i];
    }
    const double inv = 1.0 / static_cast<double>(ens.members.size());
    for (std::int64_t i = 0; i < acc.values.size(); ++i) acc.values[i] *= inv;
    return acc;
}

std::uint64_t weight_hash(const SegNet& net) {
    std::uint64_t h = 14695981039346656037ULL;
    auto mix_bytes = [&h](const Tensor& t) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(t.data());
        const std::size_t n = static_cast<std::size_t>(t.size()) * sizeof(double);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const ConvLayer& l : net.layers()) {
        mix_bytes(l.weights);
        mix_bytes(l.bias);
    }
    return h;
}

std::vector<std::vector<int>> draw_member_subsets(int pool_size, int subset_size, int repeats, std::uint64_t seed) {
    if (pool_size < 1) throw std::invalid_argument("draw_member_subsets: pool_size must be >= 1");
    if (subset_size < 1 || subset_size > pool_size) {
        throw std::invalid_argument("draw_member_subsets: subset size " + std::to_string(subset_size) +
                                    " exceeds pool size " + std::to_string(pool_size));
    }
    if (repeats < 1) throw std::invalid_argument("draw_member_subsets: repeats must be >= 1");

    Rng rng(seed);
    std::set<std::vector<int>> seen;
    std::vector<std::vector<int>> out;
    std::vector<int> pool(static_cast<std::size_t>(pool_size));
    const int max_attempts = repeats * 64;
    for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < repeats; ++attempt) {
        for (int i = 0; i < pool_size; ++i) pool[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < subset_size; ++i) {
            const int j = i + rng.uniform_int(pool_size - i);
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        }
        std::vector<int> subset(pool.begin(), pool.begin() + subset_size);
        std::sort(subset.begin(), subset.end());
        if (seen.insert(subset).second) out.push_back(std::move(subset));
    }
    return out;
}

}  // namespace oen
