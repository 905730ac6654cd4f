#include "sedsr/checkpoint.hpp"

#include <mutex>
#include <sstream>

#include "sedsr/errors.hpp"

namespace sedsr {
namespace {

std::mutex g_log_mutex;
std::vector<WeightAccess> g_log;

void record(const std::filesystem::path& path, WeightRole role) {
    std::lock_guard lock(g_log_mutex);
    g_log.push_back({path, role});
}

constexpr const char* kMetaKeys = "meta.__keys__";

} // namespace

std::string to_string(WeightRole role) {
    switch (role) {
        case WeightRole::generator: return "generator";
        case WeightRole::discriminator: return "discriminator";
        case WeightRole::extractor: return "extractor";
        case WeightRole::perceptual: return "perceptual";
        case WeightRole::train_state: return "train_state";
    }
    return "unknown";
}

std::vector<WeightAccess> weight_access_log() {
    std::lock_guard lock(g_log_mutex);
    return g_log;
}

void clear_weight_access_log() {
    std::lock_guard lock(g_log_mutex);
    g_log.clear();
}

void CheckpointWriter::add_module(const std::string& key, const torch::nn::Module& module) {
    torch::serialize::OutputArchive sub;
    module.save(sub);
    archive_.write(key, sub);
}

void CheckpointWriter::add_tensor(const std::string& key, const torch::Tensor& t) {
    archive_.write(key, t, /*is_buffer=*/true);
}

void CheckpointWriter::save(const std::filesystem::path& path) {
    std::string keys;
    for (const auto& [k, v] : meta_) {
        if (k.find(',') != std::string::npos) throw ContractError("metadata key contains ','");
        archive_.write("meta." + k, c10::IValue(v));
        keys += (keys.empty() ? "" : ",") + k;
    }
    archive_.write(kMetaKeys, c10::IValue(keys));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    try {
        archive_.save_to(path.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
}

CheckpointReader::CheckpointReader(const std::filesystem::path& path, WeightRole role)
    : path_(path) {
    if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
    record(path, role);
    try {
        archive_.load_from(path.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    c10::IValue keys;
    if (archive_.try_read(kMetaKeys, keys)) {
        std::stringstream ss(keys.toStringRef());
        std::string k;
        while (std::getline(ss, k, ',')) {
            c10::IValue v;
            archive_.read("meta." + k, v);
            meta_[k] = v.toStringRef();
        }
    }
}

std::string CheckpointReader::meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end())
        throw ConfigError("checkpoint " + path_.string() + " lacks metadata `" + key + "`");
    return it->second;
}

bool CheckpointReader::has_module(const std::string& key) {
    torch::serialize::InputArchive sub;
    return archive_.try_read(key, sub);
}

void CheckpointReader::load_module(const std::string& key, torch::nn::Module& module) {
    torch::serialize::InputArchive sub;
    if (!archive_.try_read(key, sub))
        throw IoError("checkpoint " + path_.string() + " has no module `" + key + "`");
    try {
        module.load(sub);
    } catch (const c10::Error& e) {
        throw IoError("checkpoint " + path_.string() + " does not match module `" + key +
                      "`: " + e.what_without_backtrace());
    }
}

torch::Tensor CheckpointReader::read_tensor(const std::string& key) {
    torch::Tensor t;
    if (!archive_.try_read(key, t, /*is_buffer=*/true))
        throw IoError("checkpoint " + path_.string() + " has no tensor `" + key + "`");
    return t;
}

void save_module_weights(const torch::nn::Module& module, const std::filesystem::path& path) {
    torch::serialize::OutputArchive archive;
    module.save(archive);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    archive.save_to(path.string());
}

void load_module_weights(torch::nn::Module& module, const std::filesystem::path& path,
                         WeightRole role) {
    if (!std::filesystem::exists(path)) throw IoError("weights not found: " + path.string());
    record(path, role);
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
        module.load(archive);
    } catch (const c10::Error& e) {
        throw IoError("cannot load weights " + path.string() + ": " + e.what_without_backtrace());
    }
}

std::vector<torch::Tensor> snapshot_state(const torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> out;
    for (const auto& p : module.parameters()) out.push_back(p.detach().clone());
    for (const auto& b : module.buffers()) out.push_back(b.detach().clone());
    return out;
}

bool states_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].sizes() != b[i].sizes() || a[i].scalar_type() != b[i].scalar_type()) return false;
        if (!torch::equal(a[i], b[i])) return false;
    }
    return true;
}

} // namespace sedsr
