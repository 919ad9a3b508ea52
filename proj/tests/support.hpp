#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <unistd.h>

#include "avfp/cmapss.hpp"
#include "avfp/model.hpp"
#include "avfp/rng.hpp"
#include "avfp/tensor.hpp"

namespace avfp::test {

inline Tensor uniform_tensor(CounterRng& rng, Shape shape, double lo, double hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("avfp_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Small run-to-failure data set in the C-MAPSS layout: 3 settings (one
/// constant), 6 sensors (two constant), a noisy exponential health decay.
/// Test units are truncated copies; `truth` receives their remaining life.
inline Dataset tiny_dataset(int units, int min_len, int max_len, std::uint64_t seed, Split split = Split::train,
                            std::map<int, double>* truth = nullptr) {
    CounterRng rng(seed, 0x7e57);
    Dataset ds;
    ds.split = split;
    for (int u = 1; u <= units; ++u) {
        const int T = min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
        int keep = T;
        if (split == Split::test) {
            keep = std::max(2, T / 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T / 2))));
            if (truth) (*truth)[u] = T - keep;
        }
        const double rate = rng.uniform(2.0, 4.0) / T;
        std::vector<TrajectoryRecord> rows;
        for (int c = 1; c <= keep; ++c) {
            TrajectoryRecord r;
            r.unit_id = u;
            r.cycle = c;
            const double health = 1.0 - std::exp(rate * (c - T));
            r.op_settings = {rng.uniform(-1, 1), rng.uniform(-1, 1), 100.0};
            r.sensors = {518.67, 640 - 3 * health + 0.1 * rng.normal(), 1590 - 8 * health + 0.3 * rng.normal(),
                         14.62, 47 + 0.5 * (1 - health) + 0.05 * rng.normal(), 9000 + 5 * rng.normal()};
            rows.push_back(r);
        }
        ds.units.emplace(u, std::move(rows));
    }
    return ds;
}

inline NetworkSpec tiny_network() {
    NetworkSpec s;
    s.n_z = 2;
    s.n_h = 4;
    s.recognizer_hidden = 4;
    s.prior_hidden = 4;
    s.emitter_hidden = 4;
    s.discriminator_hidden = 4;
    s.rul_hidden = 4;
    return s;
}

}  // namespace avfp::test
