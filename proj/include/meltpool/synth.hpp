#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "meltpool/dataset.hpp"

namespace meltpool {

/// Synthetic co-registered melt-pool record. Lengths are in raw-frame pixels.
struct SynthConfig {
    std::size_t n_frames = 200;
    std::uint64_t seed = 0;
    std::size_t laser_on = 10;
    std::size_t laser_off = 185;

    // ratio trajectory (melt-pool width / depth)
    double mp_ratio = 2.0;
    double transient_amplitude = 0.8;
    double transient_decay = 10.0;   // frames
    double transient_period = 12.0;  // frames
    double fluctuation_std = 0.12;   // slow component shared with the keyhole
    double fluctuation_corr = 0.9;   // AR(1) coefficient per frame
    double mp_noise_std = 0.03;      // melt-pool-only component, invisible to absorptivity
    double off_rise = 0.5;           // ratio gain while the pool freezes after laser-off
    double off_decay = 4.0;          // frames

    // keyhole: depth/width = kh_aspect - kh_coupling * (ratio - mp_ratio) + noise
    double kh_aspect = 1.2;
    double kh_coupling = 0.5;
    double kh_noise_std = 0.01;
    double kh_width_fraction = 0.22;  // keyhole width / melt-pool width

    // absorptivity = alpha + beta * kh_depth / kh_width + noise
    double absorptivity_alpha = 0.35;
    double absorptivity_beta = 0.25;
    double absorptivity_noise = 0.012;

    // rendering
    std::size_t image_size = 128;
    double tilt_deg = 7.0;  // frames are rendered rotated clockwise by this much
    double interface_row = 44.0;
    double mp_width = 56.0;
    double mp_width_std = 0.0;
    double background_level = 0.75;
    double substrate_level = 0.25;
    double melt_level = 0.55;
    double keyhole_level = 0.95;
    double image_noise = 0.02;

    void validate() const {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigError("synth: " + what);
        };
        need(n_frames >= 1, "n_frames must be positive");
        need(laser_off > laser_on, "laser_off must follow laser_on");
        for (double v : {fluctuation_std, mp_noise_std, kh_noise_std, absorptivity_noise, image_noise, mp_width_std})
            need(v >= 0.0, "noise levels must be non-negative");
        need(mp_ratio > 0.0, "mp_ratio must be positive");
        need(fluctuation_corr >= 0.0 && fluctuation_corr < 1.0, "fluctuation_corr must lie in [0, 1)");
        need(transient_decay > 0.0 && transient_period > 0.0 && off_decay > 0.0, "time constants must be positive");
        need(kh_width_fraction > 0.0 && kh_width_fraction < 1.0, "kh_width_fraction must lie in (0, 1)");
        need(image_size >= 8, "image_size must be at least 8");
        need(interface_row > 0.0 && interface_row < static_cast<double>(image_size), "interface_row outside the frame");
        need(mp_width > 0.0, "mp_width must be positive");
    }
};

inline nlohmann::json to_json_value(const SynthConfig& c) {
    return {{"n_frames", c.n_frames},
            {"seed", c.seed},
            {"laser_on", c.laser_on},
            {"laser_off", c.laser_off},
            {"mp_ratio", c.mp_ratio},
            {"transient_amplitude", c.transient_amplitude},
            {"transient_decay", c.transient_decay},
            {"transient_period", c.transient_period},
            {"fluctuation_std", c.fluctuation_std},
            {"fluctuation_corr", c.fluctuation_corr},
            {"mp_noise_std", c.mp_noise_std},
            {"off_rise", c.off_rise},
            {"off_decay", c.off_decay},
            {"kh_aspect", c.kh_aspect},
            {"kh_coupling", c.kh_coupling},
            {"kh_noise_std", c.kh_noise_std},
            {"kh_width_fraction", c.kh_width_fraction},
            {"absorptivity_alpha", c.absorptivity_alpha},
            {"absorptivity_beta", c.absorptivity_beta},
            {"absorptivity_noise", c.absorptivity_noise},
            {"image_size", c.image_size},
            {"tilt_deg", c.tilt_deg},
            {"interface_row", c.interface_row},
            {"mp_width", c.mp_width},
            {"mp_width_std", c.mp_width_std},
            {"background_level", c.background_level},
            {"substrate_level", c.substrate_level},
            {"melt_level", c.melt_level},
            {"keyhole_level", c.keyhole_level},
            {"image_noise", c.image_noise}};
}

/// Renders one raw frame: aligned scene (bright region above the interface,
/// dark substrate below, semi-elliptical pool and keyhole hanging from the
/// interface), viewed rotated clockwise by `tilt_deg`, 4x4 supersampled.
/// Noise and quantization are applied by the caller.
inline GrayImage render_scene(const SynthConfig& cfg, const MeltPoolFeatures& f) {
    const std::size_t n = cfg.image_size;
    const double th = cfg.tilt_deg * std::numbers::pi / 180.0, c = std::cos(th), s = std::sin(th);
    const double centre = (static_cast<double>(n) - 1) / 2;
    const double y0 = cfg.interface_row - centre;  // interface in aligned offsets
    auto inside = [](double dx, double dy, double width, double depth) {
        if (width <= 0.0 || depth <= 0.0 || dy < 0.0) return false;
        const double u = dx / (width / 2), v = dy / depth;
        return u * u + v * v <= 1.0;
    };
    GrayImage img(n, n);
    constexpr int kSub = 4;
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            double acc = 0.0;
            for (int sy = 0; sy < kSub; ++sy) {
                for (int sx = 0; sx < kSub; ++sx) {
                    const double ex = static_cast<double>(x) - centre + (sx + 0.5) / kSub - 0.5;
                    const double ey = static_cast<double>(y) - centre + (sy + 0.5) / kSub - 0.5;
                    const double ax = c * ex + s * ey, ay = -s * ex + c * ey - y0;
                    if (ay < 0.0) acc += cfg.background_level;
                    else if (inside(ax, ay, f.kh_width, f.kh_depth)) acc += cfg.keyhole_level;
                    else if (inside(ax, ay, f.mp_width, f.mp_depth)) acc += cfg.melt_level;
                    else acc += cfg.substrate_level;
                }
            }
            img.at(x, y) = static_cast<float>(acc / (kSub * kSub));
        }
    }
    return img;
}

struct SynthTrajectory {
    std::vector<MeltPoolFeatures> features;
    std::vector<double> absorptivity;
};

/// Geometry and absorptivity per frame. Frames before laser-on carry no pool
/// (all lengths zero, ratio undefined).
inline SynthTrajectory synth_trajectory(const SynthConfig& cfg, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double phi = cfg.fluctuation_corr, innov = std::sqrt(1.0 - phi * phi);
    double slow = cfg.fluctuation_std * normal(rng);
    double mp_only = cfg.mp_noise_std * normal(rng);
    double kh_only = cfg.kh_noise_std * normal(rng);
    double width_dev = cfg.mp_width_std * normal(rng);

    SynthTrajectory tr;
    for (std::size_t t = 0; t < cfg.n_frames; ++t) {
        slow = phi * slow + innov * cfg.fluctuation_std * normal(rng);
        mp_only = 0.5 * mp_only + std::sqrt(0.75) * cfg.mp_noise_std * normal(rng);
        kh_only = 0.5 * kh_only + std::sqrt(0.75) * cfg.kh_noise_std * normal(rng);
        width_dev = phi * width_dev + innov * cfg.mp_width_std * normal(rng);
        const double a_noise = cfg.absorptivity_noise * normal(rng);

        MeltPoolFeatures f;
        double aspect = 0.0;
        if (t >= cfg.laser_on) {
            const double u = static_cast<double>(t - cfg.laser_on);
            double shared = cfg.transient_amplitude * std::exp(-u / cfg.transient_decay) *
                                std::cos(2 * std::numbers::pi * u / cfg.transient_period) +
                            slow;
            if (t >= cfg.laser_off) {
                const double v = static_cast<double>(t - cfg.laser_off) + 1.0;
                shared += cfg.off_rise * (1.0 - std::exp(-v / cfg.off_decay));
            }
            const double ratio = std::max(0.5, cfg.mp_ratio + shared + mp_only);
            f.mp_width = cfg.mp_width * (1.0 + width_dev);
            f.mp_depth = f.mp_width / ratio;
            aspect = std::max(0.05, cfg.kh_aspect - cfg.kh_coupling * shared + kh_only);
            f.kh_width = cfg.kh_width_fraction * f.mp_width;
            f.kh_depth = std::min(aspect * f.kh_width, 0.9 * f.mp_depth);
            aspect = f.kh_depth / f.kh_width;
        }
        tr.features.push_back(f);
        tr.absorptivity.push_back(cfg.absorptivity_alpha + cfg.absorptivity_beta * aspect + a_noise);
    }
    return tr;
}

/// Deterministic per seed. Pixel values are multiples of 1/255, so a save/load
/// round trip through 8-bit PGM is exact.
inline Dataset synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const SynthTrajectory tr = synth_trajectory(cfg, rng);
    std::normal_distribution<double> pixel_noise(0.0, 1.0);

    Dataset ds;
    std::vector<std::size_t> pre_laser;
    for (std::size_t t = 0; t < cfg.n_frames; ++t) {
        Sample s;
        s.time_index = t;
        s.labels = tr.features[t];
        s.absorptivity = tr.absorptivity[t];
        s.frame = render_scene(cfg, s.labels);
        for (auto& p : s.frame.pixels) {
            const double noisy = std::clamp(static_cast<double>(p) + cfg.image_noise * pixel_noise(rng), 0.0, 1.0);
            p = static_cast<float>(std::lround(noisy * 255.0)) / 255.0f;
        }
        if (t < cfg.laser_on) pre_laser.push_back(t);
        ds.samples.push_back(std::move(s));
    }
    ds.manifest = {{"format", "meltpool-dataset"},
                   {"version", 1},
                   {"synthetic", true},
                   {"seed", cfg.seed},
                   {"n_frames", cfg.n_frames},
                   {"laser_on", cfg.laser_on},
                   {"laser_off", cfg.laser_off},
                   {"tilt_deg", cfg.tilt_deg},
                   {"pre_laser_indices", pre_laser},
                   {"generator", to_json_value(cfg)}};
    return ds;
}

}  // namespace meltpool
