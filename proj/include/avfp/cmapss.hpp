#pragma once

// C-MAPSS run-to-failure text files: one row per (unit, cycle) with 26
// whitespace-separated numbers (unit, cycle, 3 operating settings, 21
// sensors).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "avfp/objectives.hpp"

namespace avfp {

struct TrajectoryRecord {
    int unit_id = 0;
    int cycle = 0;
    std::vector<double> op_settings;
    std::vector<double> sensors;

    friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

enum class Split { train, test };

struct Dataset {
    std::map<int, std::vector<TrajectoryRecord>> units;
    Split split = Split::train;

    std::size_t row_count() const;
    std::size_t sensor_count() const;
    std::size_t setting_count() const;
    /// Subset holding only the given unit ids (split tag preserved).
    Dataset subset(const std::vector<int>& unit_ids) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr std::size_t kCmapssSettings = 3;
inline constexpr std::size_t kCmapssSensors = 21;
inline constexpr double kDefaultRulCap = 125.0;

Dataset parse_cmapss(std::istream& in, Split split = Split::train);
Dataset parse_cmapss(const std::filesystem::path& path, Split split = Split::train);
/// Writes rows in the input format with shortest round-trip number formatting.
void write_cmapss(std::ostream& out, const Dataset& ds);

struct NormalizationStats {
    std::vector<double> setting_mean, setting_std;  // retained channels only
    std::vector<double> sensor_mean, sensor_std;
    std::vector<std::size_t> kept_settings, kept_sensors;  // raw column indices
    std::vector<std::size_t> dropped_settings, dropped_sensors;
    std::size_t raw_settings = 0, raw_sensors = 0;
    double rul_cap = kDefaultRulCap;

    friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

inline constexpr double kConstantChannelStd = 1e-8;

/// Z-scores every retained channel. Without stats (train split) the stats are
/// computed here and channels with std < 1e-8 are dropped; a test split must
/// be normalized with the train stats.
std::pair<Dataset, NormalizationStats> normalize(const Dataset& ds, const NormalizationStats* stats = nullptr);

/// (unit_id, cycle) -> min(last_cycle - cycle, cap). Training split only.
using RulTargets = std::map<int, std::vector<double>>;
RulTargets build_rul_targets(const Dataset& ds, double cap = kDefaultRulCap);

/// One non-negative integer per line; line i is test unit i.
std::map<int, double> load_test_rul(std::istream& in);
std::map<int, double> load_test_rul(const std::filesystem::path& path, const Dataset* test = nullptr);
/// Throws DataError unless the map has exactly one entry per unit of `test`.
void check_test_rul(const std::map<int, double>& truth, const Dataset& test);

/// Model input view of one unit.
Sequence to_sequence(const std::vector<TrajectoryRecord>& unit);

/// Normalized-cache CSV: header `unit_id,cycle,<setting names>,<sensor names>`
/// naming the retained raw channels (setting_1.., sensor_1..).
void write_normalized_csv(std::ostream& out, const Dataset& ds, const NormalizationStats& stats);
std::string stats_to_json(const NormalizationStats& stats);
NormalizationStats stats_from_json(const std::string& text);

/// FNV-1a 64 over the bytes of a file.
std::uint64_t file_checksum(const std::filesystem::path& path);

/// Files of one C-MAPSS subset inside a directory.
struct CmapssFiles {
    std::filesystem::path train, test, rul;
    static CmapssFiles in(const std::filesystem::path& dir, const std::string& subset = "FD001");
    bool complete() const;
};

struct RawSubset {
    Dataset train;
    Dataset test;
    std::map<int, double> test_rul;
};

/// Parses all three files; throws DataError naming the first missing one.
RawSubset load_subset(const CmapssFiles& files);

/// Writes a synthetic data set in the C-MAPSS layout (train, test, RUL files)
/// for smoke and integration tests: a latent health index decays
/// exponentially per unit and 14 of the 21 sensors follow it with noise,
/// the rest are constant.
void write_surrogate_cmapss(const std::filesystem::path& dir, std::uint64_t seed, int train_units = 30,
                            int test_units = 20, const std::string& subset = "FD001");

}  // namespace avfp
