#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oen/ops.hpp"
#include "oen/tape.hpp"
#include "oen/tensor.hpp"
#include "oen/types.hpp"

namespace oen {

enum class Head { softmax, sigmoid };
enum class Act { linear, lrelu };

std::string head_name(Head h);
Head head_from_name(const std::string& name);

struct ArchConfig {
    int in_channels = 2;
    int num_classes = 2;
    Head head = Head::sigmoid;
    int base_channels = 8;
};

struct ConvLayer {
    Tensor weights;  // [N,C,kh,kw]
    Tensor bias;     // [N]
    int stride = 1;
    int padding = 1;
    Act act = Act::lrelu;
};

// Row-major flattening of one conv layer's kernels: row i of `vectors` is
// kernel i as a length C*kh*kw vector.
struct FilterBank {
    int layer_index = 0;
    Tensor vectors;  // [n,d]
};

// Weight/bias handles of one net registered on a tape, aligned with layers.
struct NetVars {
    std::vector<Var> weights;
    std::vector<Var> biases;
};

// Small encoder-decoder segmentation network with residual skips. Fixed
// desk-scale topology parameterized by base_channels F:
//
//   l0 stem  3x3 in->F          lrelu
//   l1       3x3 F->F           lrelu
//   l2       3x3 F->F           linear, t = lrelu(l2 + l0)
//   l3 down  3x3/s2 F->2F       lrelu
//   l4       3x3 2F->2F         lrelu
//   l5       3x3 2F->2F         linear, m = lrelu(l5 + l3)
//   up       nearest x2
//   l6       3x3 2F->F          lrelu, d = l6 + t
//   l7       3x3 F->F           lrelu
//   l8 head  1x1 F->K           softmax over classes / sigmoid (K=1)
//
// Spatial extents must be even (one down/up level).
class SegNet {
public:
    explicit SegNet(const ArchConfig& arch);

    const ArchConfig& arch() const { return arch_; }
    std::vector<ConvLayer>& layers() { return layers_; }
    const std::vector<ConvLayer>& layers() const { return layers_; }
    int num_conv_layers() const { return static_cast<int>(layers_.size()); }

    // Canonical description of all layer shapes and the head; equal for two
    // nets iff their layer shapes and head type are equal.
    std::string arch_fingerprint() const;

    // Fan-in-scaled init: weights ~ N(0, sqrt(2/fan_in)), biases 0, drawn
    // from a single seeded stream in layer order.
    void init_weights(std::uint64_t seed);

    NetVars register_params(GradTape& tape) const;
    NetVars as_constants(GradTape& tape) const;

    // Builds the forward pass on the tape; image is [in_channels,H,W] with
    // H, W even. Returns the probability output ([K,H,W] or [1,H,W]).
    Var forward(GradTape& tape, const NetVars& vars, Var image) const;

    // Convenience inference on a private tape.
    ProbMap predict(const Tensor& image) const;

    std::vector<FilterBank> extract_filter_banks() const;
    // Writes bank rows back into the layer's kernels (round-trip exact).
    void write_filter_bank(const FilterBank& bank);

private:
    ArchConfig arch_;
    std::vector<ConvLayer> layers_;
};

}  // namespace oen
