#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sedsr/discriminators.hpp"
#include "sedsr/generators.hpp"
#include "sedsr/metrics.hpp"

namespace sedsr {

/// Full-reference metric computed outside the core (e.g. LPIPS).
class FullReferenceAdapter {
public:
    virtual ~FullReferenceAdapter() = default;
    virtual double operator()(const torch::Tensor& a, const torch::Tensor& b) const = 0;
    virtual std::string name() const = 0;
};

/// No-reference metric computed outside the core (e.g. NIQE).
class NoReferenceAdapter {
public:
    virtual ~NoReferenceAdapter() = default;
    virtual double operator()(const torch::Tensor& image) const = 0;
    virtual std::string name() const = 0;
};

/// Runs `<command> <a.png> <b.png>` and parses the first number printed on stdout.
class CommandFullReferenceAdapter final : public FullReferenceAdapter {
public:
    CommandFullReferenceAdapter(std::string name, std::string command)
        : name_(std::move(name)), command_(std::move(command)) {}
    double operator()(const torch::Tensor& a, const torch::Tensor& b) const override;
    std::string name() const override { return name_; }

private:
    std::string name_;
    std::string command_;
};

/// Runs `<command> <image.png>` and parses the first number printed on stdout.
class CommandNoReferenceAdapter final : public NoReferenceAdapter {
public:
    CommandNoReferenceAdapter(std::string name, std::string command)
        : name_(std::move(name)), command_(std::move(command)) {}
    double operator()(const torch::Tensor& image) const override;
    std::string name() const override { return name_; }

private:
    std::string name_;
    std::string command_;
};

/// Executes a shell command and returns the first floating-point token on stdout.
/// Throws IoError on a non-zero exit status or when no number is printed.
double run_metric_command(const std::string& command_line);

struct MetricAdapters {
    std::shared_ptr<const FullReferenceAdapter> lpips;
    std::shared_ptr<const NoReferenceAdapter> niqe;
};

/// Per-image metric values; std::nullopt marks a metric whose adapter is absent.
struct ImageMetrics {
    std::string id;
    std::map<std::string, std::optional<double>> values;
};

struct MetricReport {
    std::string dataset_id;
    std::string checkpoint_id;
    MetricConvention convention;
    std::vector<std::string> metrics;  // column order
    std::vector<ImageMetrics> images;

    /// Arithmetic mean over images, std::nullopt for unavailable metrics.
    std::map<std::string, std::optional<double>> aggregate() const;
    /// Indented key/value text; unavailable metrics print as `unavailable`.
    std::string to_text() const;
    void write(const std::filesystem::path& path) const;
};

struct EvalPair {
    std::string id;
    torch::Tensor sr;  // 3 x H x W
    torch::Tensor hr;  // 3 x H x W
};

MetricReport build_report(const std::vector<EvalPair>& pairs, const MetricConvention& convention,
                          const MetricAdapters& adapters, std::string dataset_id, std::string checkpoint_id);

class PairedDataset;

/// Super-resolves every LR image of the dataset with `generator.infer` and scores it
/// against the HR counterpart.
MetricReport evaluate_generator(GeneratorImpl& generator, const PairedDataset& dataset,
                                const MetricConvention& convention, const MetricAdapters& adapters,
                                std::string dataset_id, std::string checkpoint_id);

struct FeatureMatrix {
    torch::Tensor rows;  // n x d, float64
    std::vector<std::string> labels;
};

/// Runs each image (3 x H x W) through the discriminator one at a time in eval mode,
/// captures activation `tap`, and global-average-pools it. Semantic families need
/// `semantics` (one map per image, 1 x C_s x Hs x Ws); vanilla ones ignore it.
/// Unknown taps raise ConfigError.
FeatureMatrix export_discriminator_features(DiscriminatorImpl& disc, const std::vector<torch::Tensor>& images,
                                            const std::vector<torch::Tensor>& semantics, const std::string& tap,
                                            std::vector<std::string> labels);

/// `<stem>.txt` holds one whitespace-separated row per image; `<stem>.labels.txt` one
/// label per line.
void write_feature_matrix(const FeatureMatrix& m, const std::filesystem::path& stem);

} // namespace sedsr
