#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "oen/net.hpp"
#include "oen/ortho.hpp"
#include "oen/seg_loss.hpp"
#include "oen/synth.hpp"
#include "oen/tape.hpp"

namespace oen {

// Ensemble construction modes: random initialization only, per-model
// self-orthogonality, or the full sequential scheme with inter-model
// orthogonality against previously trained members.
enum class Mode { random, self_orth, inter_orth };
std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);

enum class SegLossKind { soft_dice, cross_entropy };
std::string seg_loss_name(SegLossKind k);
SegLossKind seg_loss_from_name(const std::string& name);

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct LrSchedule {
    double factor = 0.85;
    int period_epochs = 10;
};

struct TrainConfig {
    Mode mode = Mode::random;
    OrthoConfig ortho;
    SegLossKind seg_loss = SegLossKind::soft_dice;
    SegLossOptions seg_loss_options;
    AdamParams optimizer;
    LrSchedule lr_schedule;
    int epochs = 24;
    int batch_size = 8;
    int batches_per_epoch = 24;  // patches are sampled on the fly; this fixes the step count
    int patch_size = 16;
    double foreground_sample_prob = 0.9;
    std::uint64_t seed = 1;
    int jobs = 1;  // parallel member training (random/self_orth only)

    void validate() const;
    // mode contract: random => 0; self_orth => inter 0; inter_orth => both
    double effective_lambda_self() const;
    double effective_lambda_inter() const;
};

struct MemberMeta {
    Mode mode = Mode::random;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    int index = 0;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double seg_loss_mean = 0.0;      // mean over the epoch's batches
    double self_orth_start = 0.0;    // unscaled term values at epoch start
    double inter_orth_start = 0.0;
    double penalty_start = 0.0;      // lambda-weighted total at epoch start
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
};

// Ordered list of identically shaped members; member order equals training
// order and defines "previous models" for the inter-orthogonality term.
struct Ensemble {
    ArchConfig arch;
    std::vector<SegNet> members;
    std::vector<MemberMeta> meta;
};

class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& msg, int epoch, int batch)
        : std::runtime_error(msg), epoch(epoch), batch(batch) {}
    int epoch;
    int batch;
};

// Adam with bias correction; parameter order must be stable across steps.
class Adam {
public:
    explicit Adam(const AdamParams& params) : params_(params) {}
    void step(const std::vector<Tensor*>& params, const Gradients& grads, double lr);

private:
    AdamParams params_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

struct TrainResult {
    SegNet net;
    TrainingLog log;
};

// Trains one member against the frozen `prev` nets (inter_orth mode only;
// must be empty otherwise). Previous weights are never modified.
TrainResult train_member(const TrainConfig& cfg, const ArchConfig& arch, const SynthDataset& ds,
                         const std::vector<const SegNet*>& prev, int member_index);

struct BuildResult {
    Ensemble ensemble;
    std::vector<TrainingLog> logs;
};

// Sequentially trains n_members nets; member k uses seed base_seed + k*10007
// and, in inter_orth mode, members 0..k-1 as its previous models.
BuildResult build_ensemble(const TrainConfig& base_cfg, const ArchConfig& arch, const SynthDataset& ds,
                           int n_members);

std::uint64_t member_seed(std::uint64_t base_seed, int member_index);

// Arithmetic mean of the members' probability outputs.
ProbMap ensemble_predict(const Ensemble& ens, const Tensor& image);

// FNV-1a over all weight and bias bytes, for frozen-predecessor checks.
std::uint64_t weight_hash(const SegNet& net);

// Seeded distinct subsets of {0..pool_size-1} for evaluation-time ensemble
// subsampling; fewer than `repeats` subsets are returned when the pool does
// not admit enough distinct draws.
std::vector<std::vector<int>> draw_member_subsets(int pool_size, int subset_size, int repeats, std::uint64_t seed);

}  // namespace oen
