#include <CLI11.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "samam/manifest.hpp"
#include "samam/samam.hpp"

namespace fs = std::filesystem;
using namespace samam;

namespace {

std::uint64_t effective_seed(std::uint64_t flag) {
    const char* env = std::getenv("SAMAM_SEED");
    if (!env) return flag;
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*env == '\0' || *end != '\0' || errno == ERANGE || *env == '-')
        fail("SAMAM_SEED must be a non-negative integer, got '", env, "'");
    return v;
}

std::vector<Image> load_image_dir(const fs::path& dir, const char* role) {
    if (!fs::is_directory(dir)) fail(role, " directory ", dir.string(), " does not exist");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".ppm") files.push_back(entry.path());
    }
    if (files.empty()) fail(role, " directory ", dir.string(), " contains no .ppm images");
    std::sort(files.begin(), files.end());
    std::vector<Image> out;
    for (const auto& f : files) out.push_back(read_ppm(f));
    return out;
}

ModelConfig load_config(const std::string& path) {
    return path.empty() ? ModelConfig::desk() : ModelConfig::parse(read_file(path));
}

SaMamModel model_or_fresh(const std::string& weights, const ModelConfig& fresh) {
    return weights.empty() ? SaMamModel(fresh) : load_checkpoint(weights);
}

// Reflect-pads to a multiple of 4 for patch embedding.
Tensor padded_tensor(const Image& img) { return image_to_tensor(pad_to_multiple(img, 4)); }

struct TrainArgs {
    std::string content_dir, style_dir, config, out, scan_mode;
    std::size_t iters = 300, batch = 2, size = 32;
    double lr = 1e-4;
    std::uint64_t seed = 0, extractor_seed = 7;
};

void cmd_train(const TrainArgs& a) {
    ModelConfig cfg = load_config(a.config);
    if (!a.scan_mode.empty()) cfg.scan_mode = parse_scan_mode(a.scan_mode);
    const std::uint64_t seed = effective_seed(a.seed);
    cfg.seed = seed;
    if (a.size == 0 || a.size % 4 != 0) fail("--size must be a positive multiple of 4, got ", a.size);
    const auto contents = load_image_dir(a.content_dir, "content");
    const auto styles = load_image_dir(a.style_dir, "style");

    SaMamModel model(cfg);
    const auto fx = FeatureExtractor::random(a.extractor_seed);
    TrainOptions opt;
    opt.iters = a.iters;
    opt.batch = a.batch;
    opt.lr = a.lr;
    opt.crop = a.size;
    opt.seed = seed;
    const std::size_t every = std::max<std::size_t>(1, a.iters / 10);
    const auto records = train(model, fx, contents, styles, opt, [&](const LossRecord& r) {
        if (r.iter % every == 0 || r.iter == a.iters)
            std::printf("iter %zu  total %.6g  L_c %.6g  L_s %.6g  L_id1 %.6g  L_id2 %.6g\n", r.iter, r.total,
                        r.content, r.style, r.identity_pixel, r.identity_feature);
    });

    const fs::path out(a.out);
    fs::create_directories(out);
    const std::string ckpt = encode_checkpoint(model);
    write_file_atomic(out / "checkpoint.bin", ckpt);
    write_file_atomic(out / "losses.csv", format_loss_csv(records));
    RunManifest m;
    m.config = cfg.serialize();
    m.seed = seed;
    m.checkpoint_hash = git_blob_hash(ckpt);
    m.losses_file = "losses.csv";
    m.losses = records;
    write_file_atomic(out / "manifest.json", m.to_json());
    std::printf("wrote %s (%zu parameters, sha1 %s)\n", (out / "checkpoint.bin").string().c_str(),
                model.parameter_total(), m.checkpoint_hash.c_str());
}

struct StylizeArgs {
    std::string content, style, weights, config, out;
    std::uint64_t seed = 0;
};

void cmd_stylize(const StylizeArgs& a) {
    ModelConfig cfg = load_config(a.config);
    cfg.seed = effective_seed(a.seed);
    const SaMamModel model = model_or_fresh(a.weights, cfg);
    const Image content = read_ppm(a.content);
    const Image style = read_ppm(a.style);
    Tensor out;
    {
        NoGradGuard ng;
        out = model.stylize(padded_tensor(content), padded_tensor(style));
    }
    write_ppm(a.out, crop(tensor_to_image(out), 0, 0, content.height, content.width));
}

struct ScanVizArgs {
    std::size_t height = 16, width = 16, path = 0;
    std::string mode = "zigzag", out;
};

void cmd_scan_viz(const ScanVizArgs& a) {
    if (a.height == 0 || a.width == 0 || a.height > 256 || a.width > 256)
        fail("scan-viz: dimensions must be in 1..256, got ", a.height, "x", a.width);
    const ScanPath p = make_scan_path(parse_scan_mode(a.mode), a.height, a.width, a.path);
    const std::size_t n = p.length();
    std::vector<double> v(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) v[p.perm[t]] = n > 1 ? static_cast<double>(t) / static_cast<double>(n - 1) : 0.0;
    write_ppm(a.out, tensor_to_image(Tensor({a.height, a.width}, std::move(v))));
}

struct ErfArgs {
    std::string weights, config, out;
    std::size_t size = 64;
    bool conv_only = false;
    std::uint64_t seed = 0;
};

void cmd_erf(const ErfArgs& a) {
    if (!a.weights.empty() && a.conv_only) fail("--conv-only applies to a fresh model; omit --weights");
    ModelConfig cfg = load_config(a.config);
    cfg.seed = effective_seed(a.seed);
    cfg.conv_only = cfg.conv_only || a.conv_only;
    const SaMamModel model = model_or_fresh(a.weights, cfg);
    const Heatmap map = erf_map(model, a.size, cfg.seed);
    // Darkness ceil(255 * heat): any nonzero gradient is off-white, exact zero stays white.
    Image img(map.width, map.height);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const auto dark = static_cast<int>(std::ceil(255.0 * std::clamp(map.values[i], 0.0, 1.0)));
        std::fill_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i), 3, static_cast<std::uint8_t>(255 - dark));
    }
    write_ppm(a.out, img);
}

void cmd_inspect(const std::string& weights) {
    const CheckpointData data = [&] {
        try {
            return decode_checkpoint(read_file(weights));
        } catch (const Error& e) {
            fail(weights, ": ", e.what());
        }
    }();
    const ModelConfig cfg = ModelConfig::parse(data.config_text);
    (void)model_from_checkpoint(data);
    std::printf("magic %s ok\n", std::string(checkpoint_magic).c_str());
    std::printf("tensors %zu\n", data.tensors.size());
    for (const auto& t : data.tensors) std::printf("  %s %s %zu\n", t.name.c_str(), shape_str(t.shape).c_str(), t.values.size());
    std::printf("total_parameters %zu\n", data.parameter_total());
    std::printf("model_summary_parameters %zu\n", parameter_count(cfg));
    std::printf("config\n");
    std::istringstream cs(data.config_text);
    for (std::string line; std::getline(cs, line);) std::printf("  %s\n", line.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Style-aware state space style transfer at desk scale"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train a model on directories of PPM images");
    train_cmd->add_option("--content-dir", ta.content_dir, "Directory of content .ppm images")->required();
    train_cmd->add_option("--style-dir", ta.style_dir, "Directory of style .ppm images")->required();
    train_cmd->add_option("--out", ta.out, "Output directory for checkpoint and manifest")->required();
    train_cmd->add_option("--iters", ta.iters, "Adam iterations")->capture_default_str();
    train_cmd->add_option("--batch", ta.batch, "Pairs per step")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", ta.lr, "Initial learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--size", ta.size, "Crop size, a multiple of 4")->capture_default_str();
    train_cmd->add_option("--config", ta.config, "key=value model config file")->check(CLI::ExistingFile);
    train_cmd->add_option("--scan-mode", ta.scan_mode, "zigzag or cross")->check(CLI::IsMember({"zigzag", "cross"}));
    train_cmd->add_option("--seed", ta.seed, "Seed for weights and sampling (SAMAM_SEED overrides)")
        ->capture_default_str();
    train_cmd->add_option("--extractor-seed", ta.extractor_seed, "Seed of the frozen loss network")
        ->capture_default_str();

    StylizeArgs sa;
    auto* stylize_cmd = app.add_subcommand("stylize", "Stylize one content image with one style image");
    stylize_cmd->add_option("--content", sa.content, "Content .ppm")->required();
    stylize_cmd->add_option("--style", sa.style, "Style .ppm")->required();
    stylize_cmd->add_option("--out", sa.out, "Output .ppm")->required();
    stylize_cmd->add_option("--weights", sa.weights, "Checkpoint; a fresh model is used when omitted");
    stylize_cmd->add_option("--config", sa.config, "Config for a fresh model")->check(CLI::ExistingFile);
    stylize_cmd->add_option("--seed", sa.seed, "Seed for a fresh model")->capture_default_str();

    ScanVizArgs va;
    auto* viz_cmd = app.add_subcommand("scan-viz", "Render a scan path as a visit-order ramp");
    viz_cmd->add_option("--height", va.height)->capture_default_str();
    viz_cmd->add_option("--width", va.width)->capture_default_str();
    viz_cmd->add_option("--mode", va.mode, "zigzag or cross")->capture_default_str();
    viz_cmd->add_option("--path", va.path, "Path index 0..3")->capture_default_str();
    viz_cmd->add_option("--out", va.out, "Output .ppm")->required();

    ErfArgs ea;
    auto* erf_cmd = app.add_subcommand("erf", "Render the effective receptive field of the centre pixel");
    erf_cmd->add_option("--weights", ea.weights, "Checkpoint; a fresh model is used when omitted");
    erf_cmd->add_option("--config", ea.config, "Config for a fresh model")->check(CLI::ExistingFile);
    erf_cmd->add_option("--size", ea.size, "Square input size, a multiple of 4")->capture_default_str();
    erf_cmd->add_flag("--conv-only", ea.conv_only, "Fresh model without scan blocks or global attention");
    erf_cmd->add_option("--seed", ea.seed, "Seed for a fresh model and the probe images")->capture_default_str();
    erf_cmd->add_option("--out", ea.out, "Output .ppm")->required();

    std::string inspect_weights;
    auto* inspect_cmd = app.add_subcommand("inspect", "Verify a checkpoint and list its tensors");
    inspect_cmd->add_option("--weights", inspect_weights, "Checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) cmd_train(ta);
        else if (*stylize_cmd) cmd_stylize(sa);
        else if (*viz_cmd) cmd_scan_viz(va);
        else if (*erf_cmd) cmd_erf(ea);
        else if (*inspect_cmd) cmd_inspect(inspect_weights);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::fprintf(stderr, "samam: error: %s\n", msg.c_str());
        return 1;
    }
    return 0;
}
