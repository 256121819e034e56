#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "samam/adam.hpp"
#include "samam/image.hpp"
#include "samam/loss.hpp"

namespace samam {

struct TrainOptions {
    std::size_t iters = 300;
    std::size_t batch = 2;
    double lr = 1e-4;
    std::size_t crop = 32;
    std::uint64_t seed = 0;
    LossWeights weights{};
    SpreadStat spread = SpreadStat::std_dev;
};

/// Batch-averaged loss terms of one optimizer step.
struct LossRecord {
    std::size_t iter = 0;  // 1-based
    double content = 0, style = 0, identity_pixel = 0, identity_feature = 0, total = 0;

    bool operator==(const LossRecord&) const = default;
};

/// Learning rate at 0-based step `step`: halves every iters/4 steps.
inline double scheduled_lr(double base, std::size_t step, std::size_t iters) {
    const std::size_t period = std::max<std::size_t>(1, iters / 4);
    return base * std::ldexp(1.0, -static_cast<int>(step / period));
}

/// Random crop of side `size`; images smaller than that are reflect-padded first.
template <class Rng>
Image random_crop(const Image& img, std::size_t size, Rng& rng) {
    if (size == 0 || size % 4 != 0) fail("crop size must be a positive multiple of 4, got ", size);
    const Image src = (img.height < size || img.width < size)
                          ? reflect_pad(img, std::max(img.height, size), std::max(img.width, size))
                          : img;
    const std::size_t top = std::uniform_int_distribution<std::size_t>(0, src.height - size)(rng);
    const std::size_t left = std::uniform_int_distribution<std::size_t>(0, src.width - size)(rng);
    return crop(src, top, left, size, size);
}

/// Deterministic training loop: Adam on the total loss, gradients averaged
/// over the batch. `on_step` is called after every step.
inline std::vector<LossRecord> train(SaMamModel& model, const FeatureExtractor& fx, const std::vector<Image>& contents,
                                     const std::vector<Image>& styles, const TrainOptions& opt,
                                     const std::function<void(const LossRecord&)>& on_step = {}) {
    if (contents.empty()) fail("train: no content images");
    if (styles.empty()) fail("train: no style images");
    if (opt.batch == 0) fail("train: batch must be positive");
    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<std::size_t> pick_c(0, contents.size() - 1), pick_s(0, styles.size() - 1);

    auto params = model.parameters();
    AdamState adam;
    adam.lr = opt.lr;
    std::vector<LossRecord> records;
    records.reserve(opt.iters);
    const double inv_batch = 1.0 / static_cast<double>(opt.batch);

    for (std::size_t step = 0; step < opt.iters; ++step) {
        zero_grads(params);
        LossRecord rec{step + 1};
        for (std::size_t b = 0; b < opt.batch; ++b) {
            const Tensor c = image_to_tensor(random_crop(contents[pick_c(rng)], opt.crop, rng));
            const Tensor s = image_to_tensor(random_crop(styles[pick_s(rng)], opt.crop, rng));
            const LossParts parts = compute_losses(model, fx, c, s, opt.weights, opt.spread);
            (parts.total * inv_batch).backward();
            rec.content += parts.content.item() * inv_batch;
            rec.style += parts.style.item() * inv_batch;
            rec.identity_pixel += parts.identity_pixel.item() * inv_batch;
            rec.identity_feature += parts.identity_feature.item() * inv_batch;
            rec.total += parts.total.item() * inv_batch;
        }
        adam.lr = scheduled_lr(opt.lr, step, opt.iters);
        adam_step(params, adam);
        records.push_back(rec);
        if (on_step) on_step(rec);
    }
    zero_grads(params);
    return records;
}

inline std::string format_loss_csv(const std::vector<LossRecord>& records) {
    std::string out = "iter,L_c,L_s,L_id1,L_id2,total\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iter, r.content, r.style,
                      r.identity_pixel, r.identity_feature, r.total);
        out += buf;
    }
    return out;
}

/// Inverse of format_loss_csv; iteration numbers must increase strictly.
inline std::vector<LossRecord> parse_loss_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "iter,L_c,L_s,L_id1,L_id2,total") fail("loss csv: missing header");
    std::vector<LossRecord> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        LossRecord r;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
        if (cells.size() != 6) fail("loss csv line ", lineno, ": expected 6 fields, got ", cells.size());
        auto num = [&](const std::string& s) {
            char* end = nullptr;
            const double v = std::strtod(s.c_str(), &end);
            if (s.empty() || *end != '\0') fail("loss csv line ", lineno, ": bad number '", s, "'");
            return v;
        };
        const double it = num(cells[0]);
        r.iter = static_cast<std::size_t>(it);
        if (static_cast<double>(r.iter) != it) fail("loss csv line ", lineno, ": bad iteration '", cells[0], "'");
        r.content = num(cells[1]);
        r.style = num(cells[2]);
        r.identity_pixel = num(cells[3]);
        r.identity_feature = num(cells[4]);
        r.total = num(cells[5]);
        if (!out.empty() && r.iter <= out.back().iter) fail("loss csv line ", lineno, ": iteration not increasing");
        out.push_back(r);
    }
    return out;
}

}  // namespace samam
