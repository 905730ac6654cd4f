#include "sedsr/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "sedsr/data.hpp"
#include "sedsr/image_io.hpp"

namespace sedsr {

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("sedsr_metric_" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string quote(const fs::path& p) {
    std::string s = "'";
    for (char c : p.string()) s += (c == '\'') ? std::string("'\\''") : std::string(1, c);
    return s + "'";
}

std::string format_value(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

} // namespace

double run_metric_command(const std::string& command_line) {
    FILE* pipe = popen(command_line.c_str(), "r");
    if (!pipe) throw IoError("cannot run metric command: " + command_line);
    std::string out;
    char buf[256];
    while (std::fgets(buf, sizeof buf, pipe)) out += buf;
    const int status = pclose(pipe);
    if (status != 0) throw IoError("metric command failed (status " + std::to_string(status) + "): " + command_line);
    std::istringstream is(out);
    std::string tok;
    while (is >> tok) {
        try {
            std::size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used == tok.size()) return v;
        } catch (const std::logic_error&) {
        }
    }
    throw IoError("metric command printed no number: " + command_line);
}

double CommandFullReferenceAdapter::operator()(const torch::Tensor& a, const torch::Tensor& b) const {
    TempDir tmp;
    write_png(tmp.path / "a.png", a);
    write_png(tmp.path / "b.png", b);
    return run_metric_command(command_ + " " + quote(tmp.path / "a.png") + " " + quote(tmp.path / "b.png"));
}

double CommandNoReferenceAdapter::operator()(const torch::Tensor& image) const {
    TempDir tmp;
    write_png(tmp.path / "x.png", image);
    return run_metric_command(command_ + " " + quote(tmp.path / "x.png"));
}

std::map<std::string, std::optional<double>> MetricReport::aggregate() const {
    std::map<std::string, std::optional<double>> agg;
    for (const auto& m : metrics) {
        double sum = 0.0;
        bool available = !images.empty();
        for (const auto& img : images) {
            auto it = img.values.find(m);
            if (it == img.values.end() || !it->second) {
                available = false;
                break;
            }
            sum += *it->second;
        }
        agg[m] = available ? std::optional<double>(sum / static_cast<double>(images.size())) : std::nullopt;
    }
    return agg;
}

std::string MetricReport::to_text() const {
    std::ostringstream os;
    auto value = [](const std::optional<double>& v) { return v ? format_value(*v) : std::string("unavailable"); };
    os << "dataset: " << dataset_id << "\n";
    os << "checkpoint: " << checkpoint_id << "\n";
    os << "conventions:\n";
    os << "  color: " << (convention.y_channel ? "Y (BT.601)" : "RGB") << "\n";
    os << "  border_crop: " << convention.crop << "\n";
    os << "  psnr_cap_db: " << convention.psnr_cap << "\n";
    os << "  ssim: gaussian 11x11 sigma 1.5, K1 0.01, K2 0.03, range 1\n";
    os << "images:\n";
    for (const auto& img : images) {
        os << "  - id: " << img.id << "\n";
        for (const auto& m : metrics) {
            auto it = img.values.find(m);
            os << "    " << m << ": " << value(it == img.values.end() ? std::nullopt : it->second) << "\n";
        }
    }
    os << "aggregate:\n";
    const auto agg = aggregate();
    for (const auto& m : metrics) os << "  " << m << ": " << value(agg.at(m)) << "\n";
    return os.str();
}

void MetricReport::write(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report " + path.string());
    out << to_text();
}

MetricReport build_report(const std::vector<EvalPair>& pairs, const MetricConvention& convention,
                          const MetricAdapters& adapters, std::string dataset_id, std::string checkpoint_id) {
    MetricReport r;
    r.dataset_id = std::move(dataset_id);
    r.checkpoint_id = std::move(checkpoint_id);
    r.convention = convention;
    r.metrics = {"psnr", "ssim", "lpips", "niqe"};
    for (const auto& p : pairs) {
        ImageMetrics m;
        m.id = p.id;
        m.values["psnr"] = psnr(p.sr, p.hr, convention);
        m.values["ssim"] = ssim(p.sr, p.hr, convention);
        m.values["lpips"] = adapters.lpips ? std::optional<double>((*adapters.lpips)(p.sr, p.hr)) : std::nullopt;
        m.values["niqe"] = adapters.niqe ? std::optional<double>((*adapters.niqe)(p.sr)) : std::nullopt;
        r.images.push_back(std::move(m));
    }
    return r;
}

MetricReport evaluate_generator(GeneratorImpl& generator, const PairedDataset& dataset,
                                const MetricConvention& convention, const MetricAdapters& adapters,
                                std::string dataset_id, std::string checkpoint_id) {
    std::vector<EvalPair> pairs;
    for (int64_t i = 0; i < dataset.size(); ++i) {
        auto sr = quantize_8bit(generator.infer(dataset.lr(i).unsqueeze(0)))[0];
        pairs.push_back({dataset.id(i), sr, dataset.hr(i)});
    }
    return build_report(pairs, convention, adapters, std::move(dataset_id), std::move(checkpoint_id));
}

FeatureMatrix export_discriminator_features(DiscriminatorImpl& disc, const std::vector<torch::Tensor>& images,
                                            const std::vector<torch::Tensor>& semantics, const std::string& tap,
                                            std::vector<std::string> labels) {
    disc.set_tap(tap);
    const bool sed = is_semantic(disc.spec().family);
    if (sed && semantics.size() != images.size())
        throw ContractError("feature export: one semantic map per image is required");
    if (labels.empty())
        for (std::size_t i = 0; i < images.size(); ++i) labels.push_back(std::to_string(i));
    if (labels.size() != images.size()) throw ContractError("feature export: label count differs from image count");

    const bool was_training = disc.is_training();
    disc.eval();
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> rows;
    for (std::size_t i = 0; i < images.size(); ++i) {
        auto x = images[i].dim() == 3 ? images[i].unsqueeze(0) : images[i];
        if (sed) disc.forward(x, semantics[i]);
        else disc.forward(x);
        const auto& act = disc.captured();
        if (!act.defined()) throw ContractError("feature export: tap `" + tap + "` was not reached");
        rows.push_back(act.mean({2, 3}).squeeze(0).to(torch::kDouble));
    }
    disc.train(was_training);
    disc.set_tap("");
    return FeatureMatrix{rows.empty() ? torch::empty({0, 0}, torch::kDouble) : torch::stack(rows),
                         std::move(labels)};
}

void write_feature_matrix(const FeatureMatrix& m, const fs::path& stem) {
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
    std::ofstream rows(stem.string() + ".txt"), labels(stem.string() + ".labels.txt");
    if (!rows || !labels) throw IoError("cannot write feature files at " + stem.string());
    rows << std::setprecision(9);
    auto acc = m.rows.accessor<double, 2>();
    for (int64_t i = 0; i < m.rows.size(0); ++i) {
        for (int64_t j = 0; j < m.rows.size(1); ++j) rows << (j ? " " : "") << acc[i][j];
        rows << "\n";
    }
    for (const auto& l : m.labels) labels << l << "\n";
}

} // namespace sedsr
