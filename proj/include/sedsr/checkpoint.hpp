#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace sedsr {

/// What a weight file is for. Recorded in the access log so callers can prove which
/// networks a command touched (e.g. inference reads generator weights only).
enum class WeightRole { generator, discriminator, extractor, perceptual, train_state };

std::string to_string(WeightRole role);

struct WeightAccess {
    std::filesystem::path path;
    WeightRole role;
};

/// Process-wide log of every weight file opened through this module.
std::vector<WeightAccess> weight_access_log();
void clear_weight_access_log();

using Metadata = std::map<std::string, std::string>;

/// A libtorch archive plus string metadata stored alongside the tensors.
class CheckpointWriter {
public:
    explicit CheckpointWriter(Metadata meta = {}) : meta_(std::move(meta)) {}
    torch::serialize::OutputArchive& archive() { return archive_; }
    void add_module(const std::string& key, const torch::nn::Module& module);
    void add_tensor(const std::string& key, const torch::Tensor& t);
    void save(const std::filesystem::path& path);

private:
    Metadata meta_;
    torch::serialize::OutputArchive archive_;
};

class CheckpointReader {
public:
    CheckpointReader(const std::filesystem::path& path, WeightRole role);
    const Metadata& metadata() const { return meta_; }
    std::string meta(const std::string& key) const;
    bool has_module(const std::string& key);
    void load_module(const std::string& key, torch::nn::Module& module);
    torch::Tensor read_tensor(const std::string& key);
    torch::serialize::InputArchive& archive() { return archive_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    Metadata meta_;
    torch::serialize::InputArchive archive_;
};

/// Saves a single module as a bare archive (parameters and buffers at the root).
void save_module_weights(const torch::nn::Module& module, const std::filesystem::path& path);
/// Loads a bare archive into `module`, logging the access under `role`.
void load_module_weights(torch::nn::Module& module, const std::filesystem::path& path,
                         WeightRole role);

/// Deep copy of parameters and buffers, for bitwise comparisons.
std::vector<torch::Tensor> snapshot_state(const torch::nn::Module& module);
bool states_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b);

} // namespace sedsr
