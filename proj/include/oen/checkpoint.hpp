#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "oen/synth.hpp"
#include "oen/tensor.hpp"
#include "oen/trainer.hpp"

namespace oen {

class CorruptFileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// container: the on-disk format shared by checkpoints, ensembles and datasets
//
//   "OENC" magic (4 bytes)
//   u32 version, little-endian
//   u64 header length, little-endian
//   header JSON (UTF-8): arbitrary "meta" plus a "blobs" directory
//   per blob, in directory order: u64 byte length + raw little-endian data
//
// f64 blobs are IEEE-754 doubles written byte-for-byte, so write-then-read is
// bit-exact. Little-endian hosts only (checked at runtime).
// ---------------------------------------------------------------------------
namespace container {

class Writer {
public:
    void set_meta(nlohmann::json meta);
    void add_f64(const std::string& name, const Tensor& tensor);
    void add_i32(const std::string& name, const std::vector<int>& shape, const std::vector<int>& data);
    // assembles the container and writes it atomically
    void write(const std::string& path) const;

private:
    struct Blob {
        std::string name;
        std::string dtype;
        std::vector<int> shape;
        std::string bytes;
    };
    nlohmann::json meta_;
    std::vector<Blob> blobs_;
};

class Reader {
public:
    explicit Reader(const std::string& path);
    const nlohmann::json& meta() const { return meta_; }
    bool has(const std::string& name) const;
    Tensor f64(const std::string& name) const;
    std::pair<std::vector<int>, std::vector<int>> i32(const std::string& name) const;

private:
    struct BlobRef {
        std::string dtype;
        std::vector<int> shape;
        std::size_t offset;  // into bytes_
        std::size_t length;
    };
    const BlobRef& find(const std::string& name) const;

    std::string path_;
    std::string bytes_;
    nlohmann::json meta_;
    std::map<std::string, BlobRef> blobs_;
};

}  // namespace container

// ---------------------------------------------------------------------------
// typed artifacts
// ---------------------------------------------------------------------------

// Single-member checkpoint: arch config, fingerprint, training metadata and
// all weight tensors.
void save_net(const SegNet& net, const MemberMeta& meta, const std::string& path);
std::pair<SegNet, MemberMeta> load_net(const std::string& path);

void save_ensemble(const Ensemble& ens, const std::string& path);
Ensemble load_ensemble(const std::string& path);

void save_dataset(const SynthDataset& ds, const std::string& path);
SynthDataset load_dataset(const std::string& path);

nlohmann::json arch_to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const nlohmann::json& j);
nlohmann::json gen_params_to_json(const GenParams& p);
GenParams gen_params_from_json(const nlohmann::json& j);

}  // namespace oen
