#include "oen/checkpoint.hpp"

#include <cstring>

#include "oen/fileio.hpp"

namespace oen {

namespace container {

namespace {

constexpr char kMagic[4] = {'O', 'E', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;

void check_little_endian() {
    const std::uint32_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    if (b != 1) throw std::runtime_error("container: little-endian hosts only");
}

void append_u32(std::string& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

void append_u64(std::string& out, std::uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

}  // namespace

void Writer::set_meta(nlohmann::json meta) { meta_ = std::move(meta); }

void Writer::add_f64(const std::string& name, const Tensor& tensor) {
    Blob b;
    b.name = name;
    b.dtype = "f64";
    b.shape = tensor.shape();
    b.bytes.resize(static_cast<std::size_t>(tensor.size()) * sizeof(double));
    std::memcpy(b.bytes.data(), tensor.data(), b.bytes.size());
    blobs_.push_back(std::move(b));
}

void Writer::add_i32(const std::string& name, const std::vector<int>& shape, const std::vector<int>& data) {
    if (Tensor::shape_size(shape) != static_cast<std::int64_t>(data.size())) {
        throw std::invalid_argument("container: i32 blob '" + name + "' shape does not match data length");
    }
    Blob b;
    b.name = name;
    b.dtype = "i32";
    b.shape = shape;
    b.bytes.resize(data.size() * sizeof(std::int32_t));
    std::vector<std::int32_t> narrow(data.begin(), data.end());
    std::memcpy(b.bytes.data(), narrow.data(), b.bytes.size());
    blobs_.push_back(std::move(b));
}

void Writer::write(const std::string& path) const {
    check_little_endian();
    nlohmann::json header;
    header["meta"] = meta_;
    nlohmann::json dir = nlohmann::json::array();
    for (const Blob& b : blobs_) {
        dir.push_back({{"name", b.name}, {"dtype", b.dtype}, {"shape", b.shape}});
    }
    header["blobs"] = dir;
    const std::string header_str = header.dump();

    std::string out;
    out.append(kMagic, 4);
    append_u32(out, kVersion);
    append_u64(out, header_str.size());
    out.append(header_str);
    for (const Blob& b : blobs_) {
        append_u64(out, b.bytes.size());
        out.append(b.bytes);
    }
    atomic_write_file(path, out);
}

Reader::Reader(const std::string& path) : path_(path), bytes_(read_file_bytes(path)) {
    check_little_endian();
    auto corrupt = [this](const std::string& what, std::size_t offset) {
        throw CorruptFileError("corrupt container " + path_ + ": " + what + " at offset " +
                               std::to_string(offset));
    };
    if (bytes_.size() < 16) corrupt("truncated preamble", bytes_.size());
    if (std::memcmp(bytes_.data(), kMagic, 4) != 0) corrupt("bad magic", 0);
    std::uint32_t version;
    std::memcpy(&version, bytes_.data() + 4, 4);
    if (version != kVersion) corrupt("unsupported version " + std::to_string(version), 4);
    std::uint64_t header_len;
    std::memcpy(&header_len, bytes_.data() + 8, 8);
    std::size_t pos = 16;
    if (pos + header_len > bytes_.size()) corrupt("truncated header", pos);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes_.substr(pos, header_len));
    } catch (const nlohmann::json::exception& ex) {
        corrupt(std::string("unparseable header: ") + ex.what(), pos);
    }
    pos += header_len;
    if (!header.contains("meta") || !header.contains("blobs") || !header["blobs"].is_array()) {
        corrupt("header missing meta/blobs", 16);
    }
    meta_ = header["meta"];
    for (const auto& entry : header["blobs"]) {
        BlobRef ref;
        const std::string name = entry.at("name").get<std::string>();
        ref.dtype = entry.at("dtype").get<std::string>();
        ref.shape = entry.at("shape").get<std::vector<int>>();
        if (pos + 8 > bytes_.size()) corrupt("truncated blob length for '" + name + "'", pos);
        std::uint64_t len;
        std::memcpy(&len, bytes_.data() + pos, 8);
        pos += 8;
        const std::size_t elem = ref.dtype == "f64" ? 8 : ref.dtype == "i32" ? 4 : 0;
        if (elem == 0) corrupt("unknown dtype '" + ref.dtype + "' for '" + name + "'", pos);
        if (len != static_cast<std::uint64_t>(Tensor::shape_size(ref.shape)) * elem) {
            corrupt("blob '" + name + "' length " + std::to_string(len) + " does not match shape", pos);
        }
        if (pos + len > bytes_.size()) corrupt("truncated blob '" + name + "'", pos);
        ref.offset = pos;
        ref.length = len;
        pos += len;
        blobs_.emplace(name, std::move(ref));
    }
    if (pos != bytes_.size()) corrupt("trailing bytes", pos);
}

bool Reader::has(const std::string& name) const { return blobs_.count(name) > 0; }

const Reader::BlobRef& Reader::find(const std::string& name) const {
    auto it = blobs_.find(name);
    if (it == blobs_.end()) {
        throw CorruptFileError("corrupt container " + path_ + ": missing blob '" + name + "'");
    }
    return it->second;
}

Tensor Reader::f64(const std::string& name) const {
    const BlobRef& ref = find(name);
    if (ref.dtype != "f64") {
        throw CorruptFileError("corrupt container " + path_ + ": blob '" + name + "' is not f64");
    }
    std::vector<double> data(ref.length / sizeof(double));
    std::memcpy(data.data(), bytes_.data() + ref.offset, ref.length);
    return Tensor(ref.shape, std::move(data));
}

std::pair<std::vector<int>, std::vector<int>> Reader::i32(const std::string& name) const {
    const BlobRef& ref = find(name);
    if (ref.dtype != "i32") {
        throw CorruptFileError("corrupt container " + path_ + ": blob '" + name + "' is not i32");
    }
    std::vector<std::int32_t> narrow(ref.length / sizeof(std::int32_t));
    std::memcpy(narrow.data(), bytes_.data() + ref.offset, ref.length);
    return {ref.shape, std::vector<int>(narrow.begin(), narrow.end())};
}

}  // namespace container

// ---------------------------------------------------------------------------
// json codecs for the small config structs
// ---------------------------------------------------------------------------

nlohmann::json arch_to_json(const ArchConfig& arch) {
    return {{"in_channels", arch.in_channels},
            {"num_classes", arch.num_classes},
            {"head", head_name(arch.head)},
            {"base_channels", arch.base_channels}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
    ArchConfig arch;
    arch.in_channels = j.at("in_channels").get<int>();
    arch.num_classes = j.at("num_classes").get<int>();
    arch.head = head_from_name(j.at("head").get<std::string>());
    arch.base_channels = j.at("base_channels").get<int>();
    return arch;
}

nlohmann::json gen_params_to_json(const GenParams& p) {
    return {{"profile", p.profile},
            {"num_images", p.num_images},
            {"height", p.height},
            {"width", p.width},
            {"channels", p.channels},
            {"num_classes", p.num_classes},
            {"lesion_frac_min", p.lesion_frac_min},
            {"lesion_frac_max", p.lesion_frac_max},
            {"distractor_frac_min", p.distractor_frac_min},
            {"distractor_frac_max", p.distractor_frac_max},
            {"field_scale", p.field_scale},
            {"background_amp", p.background_amp},
            {"contrast", p.contrast},
            {"secondary_contrast", p.secondary_contrast},
            {"edge_softness", p.edge_softness},
            {"noise_sigma", p.noise_sigma},
            {"train_frac", p.train_frac},
            {"val_frac", p.val_frac},
            {"seed", p.seed}};
}

GenParams gen_params_from_json(const nlohmann::json& j) {
    GenParams p;
    p.profile = j.at("profile").get<std::string>();
    p.num_images = j.at("num_images").get<int>();
    p.height = j.at("height").get<int>();
    p.width = j.at("width").get<int>();
    p.channels = j.at("channels").get<int>();
    p.num_classes = j.at("num_classes").get<int>();
    p.lesion_frac_min = j.at("lesion_frac_min").get<double>();
    p.lesion_frac_max = j.at("lesion_frac_max").get<double>();
    p.distractor_frac_min = j.at("distractor_frac_min").get<double>();
    p.distractor_frac_max = j.at("distractor_frac_max").get<double>();
    p.field_scale = j.at("field_scale").get<double>();
    p.background_amp = j.at("background_amp").get<double>();
    p.contrast = j.at("contrast").get<double>();
    p.secondary_contrast = j.at("secondary_contrast").get<double>();
    p.edge_softness = j.at("edge_softness").get<double>();
    p.noise_sigma = j.at("noise_sigma").get<double>();
    p.train_frac = j.at("train_frac").get<double>();
    p.val_frac = j.at("val_frac").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
}

namespace {

nlohmann::json member_meta_to_json(const MemberMeta& m) {
    return {{"mode", mode_name(m.mode)}, {"seed", m.seed}, {"lambda", m.lambda}, {"index", m.index}};
}

MemberMeta member_meta_from_json(const nlohmann::json& j) {
    MemberMeta m;
    m.mode = mode_from_name(j.at("mode").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.lambda = j.at("lambda").get<double>();
    m.index = j.at("index").get<int>();
    return m;
}

void add_net_blobs(container::Writer& w, const SegNet& net, const std::string& prefix) {
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        w.add_f64(prefix + "layer/" + std::to_string(l) + "/weights", net.layers()[l].weights);
        w.add_f64(prefix + "layer/" + std::to_string(l) + "/bias", net.layers()[l].bias);
    }
}

void read_net_blobs(const container::Reader& r, SegNet& net, const std::string& prefix, const std::string& path) {
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        Tensor w = r.f64(prefix + "layer/" + std::to_string(l) + "/weights");
        Tensor b = r.f64(prefix + "layer/" + std::to_string(l) + "/bias");
        if (!w.same_shape(net.layers()[l].weights) || !b.same_shape(net.layers()[l].bias)) {
            throw CorruptFileError("corrupt container " + path + ": layer " + std::to_string(l) +
                                   " blob shape does not match the architecture");
        }
        net.layers()[l].weights = std::move(w);
        net.layers()[l].bias = std::move(b);
    }
}

}  // namespace

void save_net(const SegNet& net, const MemberMeta& meta, const std::string& path) {
    container::Writer w;
    w.set_meta({{"kind", "checkpoint"},
                {"arch", arch_to_json(net.arch())},
                {"fingerprint", net.arch_fingerprint()},
                {"member", member_meta_to_json(meta)}});
    add_net_blobs(w, net, "");
    w.write(path);
}

std::pair<SegNet, MemberMeta> load_net(const std::string& path) {
    container::Reader r(path);
    if (r.meta().value("kind", "") != "checkpoint") {
        throw CorruptFileError("corrupt container " + path + ": not a checkpoint file");
    }
    SegNet net(arch_from_json(r.meta().at("arch")));
    if (r.meta().at("fingerprint").get<std::string>() != net.arch_fingerprint()) {
        throw std::runtime_error("load_net: fingerprint mismatch in " + path);
    }
    read_net_blobs(r, net, "", path);
    return {std::move(net), member_meta_from_json(r.meta().at("member"))};
}

void save_ensemble(const Ensemble& ens, const std::string& path) {
    if (ens.members.empty()) throw std::invalid_argument("save_ensemble: ensemble has no members");
    if (ens.members.size() != ens.meta.size()) {
        throw std::invalid_argument("save_ensemble: members and metadata are misaligned");
    }
    container::Writer w;
    nlohmann::json members = nlohmann::json::array();
    for (const MemberMeta& m : ens.meta) members.push_back(member_meta_to_json(m));
    w.set_meta({{"kind", "ensemble"},
                {"arch", arch_to_json(ens.arch)},
                {"fingerprint", ens.members.front().arch_fingerprint()},
                {"members", members}});
    for (std::size_t m = 0; m < ens.members.size(); ++m) {
        add_net_blobs(w, ens.members[m], "member/" + std::to_string(m) + "/");
    }
    w.write(path);
}

Ensemble load_ensemble(const std::string& path) {
    container::Reader r(path);
    if (r.meta().value("kind", "") != "ensemble") {
        throw CorruptFileError("corrupt container " + path + ": not an ensemble file");
    }
    Ensemble ens;
    ens.arch = arch_from_json(r.meta().at("arch"));
    const std::string fingerprint = r.meta().at("fingerprint").get<std::string>();
    for (const auto& mj : r.meta().at("members")) {
        const std::size_t m = ens.members.size();
        SegNet net(ens.arch);
        if (net.arch_fingerprint() != fingerprint) {
            throw std::runtime_error("load_ensemble: fingerprint mismatch on merge in " + path);
        }
        read_net_blobs(r, net, "member/" + std::to_string(m) + "/", path);
        ens.members.push_back(std::move(net));
        ens.meta.push_back(member_meta_from_json(mj));
    }
    return ens;
}

void save_dataset(const SynthDataset& ds, const std::string& path) {
    container::Writer w;
    nlohmann::json splits;
    for (const auto& [name, idx] : ds.splits) splits[name] = idx;
    w.set_meta({{"kind", "dataset"},
                {"gen", gen_params_to_json(ds.params)},
                {"splits", splits},
                {"num_images", static_cast<int>(ds.images.size())}});
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        w.add_f64("image/" + std::to_string(i), ds.images[i]);
        const LabelMap& m = ds.masks[i];
        w.add_i32("mask/" + std::to_string(i), {m.height, m.width}, m.labels);
    }
    w.write(path);
}

SynthDataset load_dataset(const std::string& path) {
    container::Reader r(path);
    if (r.meta().value("kind", "") != "dataset") {
        throw CorruptFileError("corrupt container " + path + ": not a dataset file");
    }
    SynthDataset ds;
    ds.params = gen_params_from_json(r.meta().at("gen"));
    for (const auto& [name, idx] : r.meta().at("splits").items()) {
        ds.splits[name] = idx.get<std::vector<int>>();
    }
    const int n = r.meta().at("num_images").get<int>();
    for (int i = 0; i < n; ++i) {
        ds.images.push_back(r.f64("image/" + std::to_string(i)));
        auto [shape, labels] = r.i32("mask/" + std::to_string(i));
        LabelMap mask(shape.at(0), shape.at(1), ds.params.num_classes);
        mask.labels = std::move(labels);
        ds.masks.push_back(std::move(mask));
    }
    return ds;
}

}  // namespace oen
