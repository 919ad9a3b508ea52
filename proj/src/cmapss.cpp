#include "avfp/cmapss.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "avfp/error.hpp"
#include "avfp/rng.hpp"

namespace avfp {

namespace {

constexpr std::size_t kFields = 2 + kCmapssSettings + kCmapssSensors;

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

bool parse_double(const std::string& token, double& out) {
    const char* first = token.data();
    const char* last = first + token.size();
    if (first != last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, out);
    return res.ec == std::errc{} && res.ptr == last && std::isfinite(out);
}

int as_positive_int(double v, std::size_t line, const char* what) {
    if (v < 1.0 || v != std::floor(v) || v > 1e9) {
        throw DataError("line " + std::to_string(line) + ": " + what + " must be a positive integer");
    }
    return static_cast<int>(v);
}

}  // namespace

std::size_t Dataset::row_count() const {
    std::size_t n = 0;
    for (const auto& [id, rows] : units) n += rows.size();
    return n;
}

std::size_t Dataset::sensor_count() const {
    return units.empty() ? 0 : units.begin()->second.front().sensors.size();
}

std::size_t Dataset::setting_count() const {
    return units.empty() ? 0 : units.begin()->second.front().op_settings.size();
}

Dataset Dataset::subset(const std::vector<int>& unit_ids) const {
    Dataset out;
    out.split = split;
    for (int id : unit_ids) {
        const auto it = units.find(id);
        if (it == units.end()) throw DataError("unit " + std::to_string(id) + " not in data set");
        out.units.emplace(id, it->second);
    }
    return out;
}

Dataset parse_cmapss(std::istream& in, Split split) {
    Dataset ds;
    ds.split = split;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> tokens;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        tokens.assign(std::istream_iterator<std::string>(ls), std::istream_iterator<std::string>());
        if (tokens.empty()) continue;
        if (tokens.size() != kFields) {
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(kFields) +
                            " fields, got " + std::to_string(tokens.size()));
        }
        std::vector<double> v(kFields);
        for (std::size_t i = 0; i < kFields; ++i) {
            if (!parse_double(tokens[i], v[i])) {
                throw DataError("line " + std::to_string(line_no) + ": field " + std::to_string(i + 1) +
                                " is not a finite number: '" + tokens[i] + "'");
            }
        }
        TrajectoryRecord rec;
        rec.unit_id = as_positive_int(v[0], line_no, "unit id");
        rec.cycle = as_positive_int(v[1], line_no, "cycle");
        rec.op_settings.assign(v.begin() + 2, v.begin() + 2 + kCmapssSettings);
        rec.sensors.assign(v.begin() + 2 + kCmapssSettings, v.end());

        auto& rows = ds.units[rec.unit_id];
        const int expected = rows.empty() ? 1 : rows.back().cycle + 1;
        if (rec.cycle != expected) {
            throw DataError("line " + std::to_string(line_no) + ": unit " + std::to_string(rec.unit_id) +
                            " cycle " + std::to_string(rec.cycle) + " is not consecutive (expected " +
                            std::to_string(expected) + ")");
        }
        rows.push_back(std::move(rec));
    }
    if (ds.units.empty()) throw DataError("no data rows");
    return ds;
}

Dataset parse_cmapss(const std::filesystem::path& path, Split split) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return parse_cmapss(in, split);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_cmapss(std::ostream& out, const Dataset& ds) {
    for (const auto& [id, rows] : ds.units) {
        for (const auto& r : rows) {
            out << r.unit_id << ' ' << r.cycle;
            for (double v : r.op_settings) out << ' ' << format_double(v);
            for (double v : r.sensors) out << ' ' << format_double(v);
            out << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

struct Moments {
    std::vector<double> mean, std;
};

Moments channel_moments(const Dataset& ds, bool settings) {
    const std::size_t n = settings ? ds.setting_count() : ds.sensor_count();
    Moments m{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    const auto rows = static_cast<double>(ds.row_count());
    for (const auto& [id, unit] : ds.units) {
        for (const auto& r : unit) {
            const auto& v = settings ? r.op_settings : r.sensors;
            for (std::size_t c = 0; c < n; ++c) m.mean[c] += v[c];
        }
    }
    for (double& v : m.mean) v /= rows;
    for (const auto& [id, unit] : ds.units) {
        for (const auto& r : unit) {
            const auto& v = settings ? r.op_settings : r.sensors;
            for (std::size_t c = 0; c < n; ++c) m.std[c] += (v[c] - m.mean[c]) * (v[c] - m.mean[c]);
        }
    }
    for (double& v : m.std) v = std::sqrt(v / rows);
    return m;
}

void select_channels(const Moments& m, std::vector<double>& mean, std::vector<double>& stdev,
                     std::vector<std::size_t>& kept, std::vector<std::size_t>& dropped) {
    for (std::size_t c = 0; c < m.mean.size(); ++c) {
        if (m.std[c] < kConstantChannelStd) {
            dropped.push_back(c);
        } else {
            kept.push_back(c);
            mean.push_back(m.mean[c]);
            stdev.push_back(m.std[c]);
        }
    }
}

std::vector<double> zscore(const std::vector<double>& raw, const std::vector<std::size_t>& kept,
                           const std::vector<double>& mean, const std::vector<double>& stdev) {
    std::vector<double> out(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) out[i] = (raw[kept[i]] - mean[i]) / stdev[i];
    return out;
}

}  // namespace

std::pair<Dataset, NormalizationStats> normalize(const Dataset& ds, const NormalizationStats* given) {
    if (ds.units.empty()) throw DataError("normalize: empty data set");
    NormalizationStats stats;
    if (given) {
        stats = *given;
        if (stats.raw_settings != ds.setting_count() || stats.raw_sensors != ds.sensor_count()) {
            throw DataError("normalize: statistics describe " + std::to_string(stats.raw_settings) + "+" +
                            std::to_string(stats.raw_sensors) + " channels, data has " +
                            std::to_string(ds.setting_count()) + "+" + std::to_string(ds.sensor_count()));
        }
    } else {
        if (ds.split != Split::train) throw DataError("normalize: test split requires training statistics");
        stats.raw_settings = ds.setting_count();
        stats.raw_sensors = ds.sensor_count();
        select_channels(channel_moments(ds, true), stats.setting_mean, stats.setting_std, stats.kept_settings,
                        stats.dropped_settings);
        select_channels(channel_moments(ds, false), stats.sensor_mean, stats.sensor_std, stats.kept_sensors,
                        stats.dropped_sensors);
        if (stats.kept_sensors.empty()) throw DataError("normalize: every sensor channel is constant");
        if (stats.kept_settings.empty()) throw DataError("normalize: every operating-setting channel is constant");
    }

    Dataset out;
    out.split = ds.split;
    for (const auto& [id, unit] : ds.units) {
        auto& rows = out.units[id];
        rows.reserve(unit.size());
        for (const auto& r : unit) {
            if (r.op_settings.size() != stats.raw_settings || r.sensors.size() != stats.raw_sensors) {
                throw DataError("normalize: ragged rows in unit " + std::to_string(id));
            }
            rows.push_back({r.unit_id, r.cycle, zscore(r.op_settings, stats.kept_settings, stats.setting_mean, stats.setting_std),
                            zscore(r.sensors, stats.kept_sensors, stats.sensor_mean, stats.sensor_std)});
        }
    }
    return {std::move(out), std::move(stats)};
}

RulTargets build_rul_targets(const Dataset& ds, double cap) {
    if (ds.split != Split::train) {
        throw DataError("build_rul_targets: test units are truncated before failure; use the ground-truth file");
    }
    if (!(cap > 0.0)) throw DomainError("build_rul_targets: cap must be positive");
    RulTargets targets;
    for (const auto& [id, unit] : ds.units) {
        const int last = unit.back().cycle;
        auto& t = targets[id];
        t.reserve(unit.size());
        for (const auto& r : unit) t.push_back(std::min(static_cast<double>(last - r.cycle), cap));
    }
    return targets;
}

std::map<int, double> load_test_rul(std::istream& in) {
    std::map<int, double> truth;
    std::string line;
    std::size_t line_no = 0;
    int unit = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string token, extra;
        if (!(ls >> token)) continue;
        if (ls >> extra) throw DataError("RUL line " + std::to_string(line_no) + ": expected one value");
        double v = 0.0;
        if (!parse_double(token, v) || v != std::floor(v)) {
            throw DataError("RUL line " + std::to_string(line_no) + ": not an integer: '" + token + "'");
        }
        if (v < 0.0) throw DataError("RUL line " + std::to_string(line_no) + ": negative value");
        truth[++unit] = v;
    }
    if (truth.empty()) throw DataError("RUL file has no values");
    return truth;
}

std::map<int, double> load_test_rul(const std::filesystem::path& path, const Dataset* test) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    auto truth = load_test_rul(in);
    if (test) check_test_rul(truth, *test);
    return truth;
}

void check_test_rul(const std::map<int, double>& truth, const Dataset& test) {
    if (truth.size() != test.units.size()) {
        throw DataError("RUL file has " + std::to_string(truth.size()) + " entries, test set has " +
                        std::to_string(test.units.size()) + " units");
    }
    for (const auto& [id, rows] : test.units) {
        if (!truth.contains(id)) throw DataError("no ground-truth RUL for test unit " + std::to_string(id));
    }
}

Sequence to_sequence(const std::vector<TrajectoryRecord>& unit) {
    Sequence s;
    s.x.reserve(unit.size());
    s.u.reserve(unit.size());
    for (const auto& r : unit) {
        s.x.push_back(Tensor::vector(r.sensors));
        s.u.push_back(Tensor::vector(r.op_settings));
    }
    return s;
}

void write_normalized_csv(std::ostream& out, const Dataset& ds, const NormalizationStats& stats) {
    out << "unit_id,cycle";
    for (auto c : stats.kept_settings) out << ",setting_" << c + 1;
    for (auto c : stats.kept_sensors) out << ",sensor_" << c + 1;
    out << '\n';
    for (const auto& [id, unit] : ds.units) {
        for (const auto& r : unit) {
            out << r.unit_id << ',' << r.cycle;
            for (double v : r.op_settings) out << ',' << format_double(v);
            for (double v : r.sensors) out << ',' << format_double(v);
            out << '\n';
        }
    }
}

std::string stats_to_json(const NormalizationStats& s) {
    nlohmann::ordered_json j;
    j["setting_mean"] = s.setting_mean;
    j["setting_std"] = s.setting_std;
    j["sensor_mean"] = s.sensor_mean;
    j["sensor_std"] = s.sensor_std;
    j["kept_settings"] = s.kept_settings;
    j["kept_sensors"] = s.kept_sensors;
    j["dropped_settings"] = s.dropped_settings;
    j["dropped_sensors"] = s.dropped_sensors;
    j["raw_settings"] = s.raw_settings;
    j["raw_sensors"] = s.raw_sensors;
    j["rul_cap"] = s.rul_cap;
    return j.dump(2);
}

NormalizationStats stats_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        NormalizationStats s;
        j.at("setting_mean").get_to(s.setting_mean);
        j.at("setting_std").get_to(s.setting_std);
        j.at("sensor_mean").get_to(s.sensor_mean);
        j.at("sensor_std").get_to(s.sensor_std);
        j.at("kept_settings").get_to(s.kept_settings);
        j.at("kept_sensors").get_to(s.kept_sensors);
        j.at("dropped_settings").get_to(s.dropped_settings);
        j.at("dropped_sensors").get_to(s.dropped_sensors);
        j.at("raw_settings").get_to(s.raw_settings);
        j.at("raw_sensors").get_to(s.raw_sensors);
        j.at("rul_cap").get_to(s.rul_cap);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("normalization stats: ") + e.what());
    }
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

CmapssFiles CmapssFiles::in(const std::filesystem::path& dir, const std::string& subset) {
    return {dir / ("train_" + subset + ".txt"), dir / ("test_" + subset + ".txt"), dir / ("RUL_" + subset + ".txt")};
}

bool CmapssFiles::complete() const {
    return std::filesystem::is_regular_file(train) && std::filesystem::is_regular_file(test) &&
           std::filesystem::is_regular_file(rul);
}

RawSubset load_subset(const CmapssFiles& files) {
    for (const auto* p : {&files.train, &files.test, &files.rul}) {
        if (!std::filesystem::is_regular_file(*p)) throw DataError("missing data file " + p->string());
    }
    RawSubset raw;
    raw.train = parse_cmapss(files.train, Split::train);
    raw.test = parse_cmapss(files.test, Split::test);
    raw.test_rul = load_test_rul(files.rul, &raw.test);
    return raw;
}

// ---------------------------------------------------------------------------
// Surrogate data

namespace {

struct SurrogateUnit {
    std::vector<TrajectoryRecord> rows;
};

SurrogateUnit surrogate_unit(CounterRng& rng, int unit_id, int life) {
    // Sensor k responds to health loss with gain[k]; 7 channels stay constant.
    static constexpr std::array<double, kCmapssSensors> kBase = {
        518.67, 642.5, 1590.0, 1408.0, 14.62, 21.61, 553.4, 2388.0, 9050.0, 1.3, 47.5,
        521.7, 2388.0, 8140.0, 8.44, 0.03, 392.0, 2388.0, 100.0, 38.8, 23.3};
    static constexpr std::array<double, kCmapssSensors> kGain = {
        0.0, 1.2, 9.0, 12.0, 0.0, 0.0, -1.8, 0.08, 6.0, 0.0, 0.5,
        -1.5, 0.08, 5.0, 0.05, 0.0, 2.5, 0.0, 0.0, -0.4, -0.25};
    static constexpr std::array<double, kCmapssSensors> kNoise = {
        0.0, 0.5, 6.0, 9.0, 0.0, 0.0, 0.9, 0.07, 20.0, 0.0, 0.27,
        0.7, 0.07, 19.0, 0.04, 0.0, 1.5, 0.0, 0.0, 0.18, 0.1};

    SurrogateUnit u;
    const double onset = rng.uniform(0.3, 0.6) * life;
    const double rate = rng.uniform(3.0, 5.0) / (life - onset);
    const double offset = rng.uniform(-0.5, 0.5);
    for (int c = 1; c <= life; ++c) {
        const double wear = c <= onset ? 0.0 : std::expm1(rate * (c - onset)) / std::expm1(rate * (life - onset));
        TrajectoryRecord r;
        r.unit_id = unit_id;
        r.cycle = c;
        r.op_settings = {0.002 * rng.normal(), 0.0003 * rng.normal(), 100.0};
        r.sensors.resize(kCmapssSensors);
        for (std::size_t k = 0; k < kCmapssSensors; ++k) {
            r.sensors[k] = kBase[k] + kGain[k] * (4.0 * wear + 0.3 * offset) + kNoise[k] * rng.normal();
        }
        u.rows.push_back(std::move(r));
    }
    return u;
}

}  // namespace

void write_surrogate_cmapss(const std::filesystem::path& dir, std::uint64_t seed, int train_units, int test_units,
                            const std::string& subset) {
    std::filesystem::create_directories(dir);
    const auto files = CmapssFiles::in(dir, subset);
    CounterRng rng(seed, 0x5u);

    Dataset train;
    for (int id = 1; id <= train_units; ++id) {
        const int life = 128 + static_cast<int>(rng.below(235));
        train.units[id] = surrogate_unit(rng, id, life).rows;
    }
    Dataset test;
    test.split = Split::test;
    std::ofstream rul(files.rul);
    for (int id = 1; id <= test_units; ++id) {
        const int life = 128 + static_cast<int>(rng.below(235));
        auto rows = surrogate_unit(rng, id, life).rows;
        const int keep = 31 + static_cast<int>(rng.below(static_cast<std::uint64_t>(life - 40)));
        rows.resize(static_cast<std::size_t>(keep));
        test.units[id] = std::move(rows);
        rul << (life - keep) << '\n';
    }
    std::ofstream tr(files.train);
    write_cmapss(tr, train);
    std::ofstream te(files.test);
    write_cmapss(te, test);
}

}  // namespace avfp
