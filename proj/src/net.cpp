#include "oen/net.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "oen/rng.hpp"

namespace oen {

std::string head_name(Head h) { return h == Head::softmax ? "softmax" : "sigmoid"; }

Head head_from_name(const std::string& name) {
    if (name == "softmax") return Head::softmax;
    if (name == "sigmoid") return Head::sigmoid;
    throw std::invalid_argument("unknown head '" + name + "' (expected softmax or sigmoid)");
}

namespace {

ConvLayer make_layer(int out_ch, int in_ch, int k, int stride, int padding, Act act) {
    ConvLayer l;
    l.weights = Tensor({out_ch, in_ch, k, k});
    l.bias = Tensor({out_ch});
    l.stride = stride;
    l.padding = padding;
    l.act = act;
    return l;
}

}  // namespace

SegNet::SegNet(const ArchConfig& arch) : arch_(arch) {
    if (arch_.in_channels < 1) throw std::invalid_argument("SegNet: in_channels must be >= 1");
    if (arch_.num_classes < 2) throw std::invalid_argument("SegNet: num_classes must be >= 2");
    if (arch_.base_channels < 1) throw std::invalid_argument("SegNet: base_channels must be >= 1");
    if (arch_.head == Head::sigmoid && arch_.num_classes != 2) {
        throw std::invalid_argument("SegNet: sigmoid head requires num_classes == 2, got " +
                                    std::to_string(arch_.num_classes));
    }
    const int f = arch_.base_channels;
    const int out = arch_.head == Head::sigmoid ? 1 : arch_.num_classes;
    layers_.push_back(make_layer(f, arch_.in_channels, 3, 1, 1, Act::lrelu));  // l0 stem
    layers_.push_back(make_layer(f, f, 3, 1, 1, Act::lrelu));                  // l1
    layers_.push_back(make_layer(f, f, 3, 1, 1, Act::linear));                 // l2 (residual join)
    layers_.push_back(make_layer(2 * f, f, 3, 2, 1, Act::lrelu));              // l3 down
    layers_.push_back(make_layer(2 * f, 2 * f, 3, 1, 1, Act::lrelu));          // l4
    layers_.push_back(make_layer(2 * f, 2 * f, 3, 1, 1, Act::linear));         // l5 (residual join)
    layers_.push_back(make_layer(f, 2 * f, 3, 1, 1, Act::lrelu));              // l6 after upsample
    layers_.push_back(make_layer(f, f, 3, 1, 1, Act::lrelu));                  // l7
    layers_.push_back(make_layer(out, f, 1, 1, 0, Act::linear));               // l8 head
}

std::string SegNet::arch_fingerprint() const {
    std::ostringstream os;
    os << "in" << arch_.in_channels << ";";
    for (const ConvLayer& l : layers_) {
        os << "c" << l.weights.extent(0) << "x" << l.weights.extent(1) << "x" << l.weights.extent(2) << "x"
           << l.weights.extent(3) << "s" << l.stride << "p" << l.padding << ";";
    }
    os << "head:" << head_name(arch_.head);
    return os.str();
}

void SegNet::init_weights(std::uint64_t seed) {
    Rng rng(seed);
    for (ConvLayer& l : layers_) {
        const int fan_in = l.weights.extent(1) * l.weights.extent(2) * l.weights.extent(3);
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (std::int64_t i = 0; i < l.weights.size(); ++i) l.weights[i] = rng.normal(0.0, stddev);
        for (std::int64_t i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.0;
    }
}

NetVars SegNet::register_params(GradTape& tape) const {
    NetVars v;
    for (const ConvLayer& l : layers_) {
        v.weights.push_back(tape.param(l.weights));
        v.biases.push_back(tape.param(l.bias));
    }
    return v;
}

NetVars SegNet::as_constants(GradTape& tape) const {
    NetVars v;
    for (const ConvLayer& l : layers_) {
        v.weights.push_back(tape.constant(l.weights));
        v.biases.push_back(tape.constant(l.bias));
    }
    return v;
}

Var SegNet::forward(GradTape& tape, const NetVars& vars, Var image) const {
    (void)tape;  // ops dispatch through the vars' tape
    const Tensor& img = image.value();
    if (img.rank() != 3) throw std::invalid_argument("SegNet::forward: image must be [C,H,W], got " + img.shape_str());
    if (img.extent(0) != arch_.in_channels) {
        throw std::invalid_argument("SegNet::forward: image has " + std::to_string(img.extent(0)) +
                                    " channels, net expects " + std::to_string(arch_.in_channels));
    }
    if (img.extent(1) % 2 != 0 || img.extent(2) % 2 != 0 || img.extent(1) < 2 || img.extent(2) < 2) {
        throw std::invalid_argument("SegNet::forward: spatial extents must be even and >= 2, got " +
                                    std::to_string(img.extent(1)) + "x" + std::to_string(img.extent(2)));
    }

    auto conv = [&](int i, Var x) {
        Var y = conv2d(x, vars.weights[static_cast<std::size_t>(i)], vars.biases[static_cast<std::size_t>(i)],
                       layers_[static_cast<std::size_t>(i)].stride, layers_[static_cast<std::size_t>(i)].padding);
        if (layers_[static_cast<std::size_t>(i)].act == Act::lrelu) y = leaky_relu(y, 0.1);
        return y;
    };

    Var x0 = conv(0, image);
    Var x1 = conv(1, x0);
    Var t = leaky_relu(add(conv(2, x1), x0), 0.1);
    Var x3 = conv(3, t);
    Var x4 = conv(4, x3);
    Var m = leaky_relu(add(conv(5, x4), x3), 0.1);
    Var u = upsample2_nearest(m);
    Var d = add(conv(6, u), t);
    Var x7 = conv(7, d);
    Var logits = conv(8, x7);
    return arch_.head == Head::sigmoid ? sigmoid(logits) : softmax_channels(logits);
}

ProbMap SegNet::predict(const Tensor& image) const {
    GradTape tape;
    NetVars vars = as_constants(tape);
    Var img = tape.constant(image);
    Var probs = forward(tape, vars, img);
    return ProbMap(probs.value());
}

std::vector<FilterBank> SegNet::extract_filter_banks() const {
    std::vector<FilterBank> banks;
    banks.reserve(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Tensor& w = layers_[i].weights;
        const int n = w.extent(0);
        const int d = w.extent(1) * w.extent(2) * w.extent(3);
        FilterBank b;
        b.layer_index = static_cast<int>(i);
        b.vectors = Tensor({n, d}, std::vector<double>(w.values()));
        banks.push_back(std::move(b));
    }
    return banks;
}

void SegNet::write_filter_bank(const FilterBank& bank) {
    if (bank.layer_index < 0 || bank.layer_index >= num_conv_layers()) {
        throw std::invalid_argument("write_filter_bank: layer index " + std::to_string(bank.layer_index) +
                                    " out of range");
    }
    Tensor& w = layers_[static_cast<std::size_t>(bank.layer_index)].weights;
    const int n = w.extent(0);
    const int d = w.extent(1) * w.extent(2) * w.extent(3);
    if (bank.vectors.rank() != 2 || bank.vectors.extent(0) != n || bank.vectors.extent(1) != d) {
        throw std::invalid_argument("write_filter_bank: bank shape " + bank.vectors.shape_str() +
                                    " does not match layer weights " + w.shape_str());
    }
    w.values() = bank.vectors.values();
}

}  // namespace oen
