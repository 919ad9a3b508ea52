#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "avfp/checkpoint.hpp"
#include "avfp/error.hpp"
#include "support.hpp"

using namespace avfp;

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
}

Checkpoint trained_checkpoint() {
    std::map<int, double> truth;
    static const Dataset train = test::tiny_dataset(8, 12, 18, 3);
    static const Dataset test_split = test::tiny_dataset(3, 12, 18, 4, Split::test, &truth);
    static const PreparedData data = prepare_data(train, &test_split, &truth);
    TrainConfig c;
    c.epochs = 2;
    c.trajectories_per_batch = 4;
    c.eval_every = 2;
    Trainer t(data, network_for(data, test::tiny_network()), c);
    t.run_to_end();
    return t.checkpoint();
}

}  // namespace

TEST_CASE("array encoding round trip") {
    const std::vector<NamedArray> arrays{
        {"scalar", {}, {3.5}},
        {"empty", {0, 4}, {}},
        {"matrix", {2, 2}, {1.0, -0.0, std::nextafter(1.0, 2.0), -1e300}},
        {"ünïcode", {1}, {std::numeric_limits<double>::denorm_min()}},
    };
    const std::string bytes = encode_arrays(arrays);
    CHECK(bytes.substr(0, 4) == "AVFP");
    const auto back = decode_arrays(bytes);
    REQUIRE(back.size() == arrays.size());
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        CHECK(back[i].name == arrays[i].name);
        CHECK(back[i].shape == arrays[i].shape);
        REQUIRE(back[i].data.size() == arrays[i].data.size());
        for (std::size_t k = 0; k < back[i].data.size(); ++k) {
            CHECK(std::signbit(back[i].data[k]) == std::signbit(arrays[i].data[k]));
            CHECK(back[i].data[k] == arrays[i].data[k]);
        }
    }
}

TEST_CASE("encoded layout is little-endian") {
    const std::string bytes = encode_arrays({{"a", {1}, {1.0}}});
    CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);
    CHECK(bytes[5] == 0);
    // payload length u64 follows the version
    const std::size_t payload = bytes.size() - 4 - 4 - 8 - 8;
    CHECK(static_cast<unsigned char>(bytes[8]) == payload);
    // f64 1.0 = 0x3ff0000000000000, low byte first; it ends right before the checksum
    const std::size_t at = bytes.size() - 8 - 8;
    CHECK(static_cast<unsigned char>(bytes[at + 7]) == 0x3f);
    CHECK(static_cast<unsigned char>(bytes[at + 6]) == 0xf0);
    CHECK(bytes[at] == 0);
}

TEST_CASE("checkpoint save and load are lossless") {
    const Checkpoint ckpt = trained_checkpoint();
    CHECK(ckpt.step == 4);
    CHECK_FALSE(ckpt.trace.empty());
    test::TempDir dir("ckpt");
    save_checkpoint(dir / "a.avfp", ckpt);
    const Checkpoint back = load_checkpoint(dir / "a.avfp");
    CHECK(back == ckpt);
    CHECK(back.params == ckpt.params);
    CHECK(back.gen_opt == ckpt.gen_opt);
    CHECK(back.disc_opt == ckpt.disc_opt);
    CHECK(back.rul_opt == ckpt.rul_opt);
    CHECK(back.stats == ckpt.stats);
    CHECK(back.config == ckpt.config);
    CHECK(back.spec == ckpt.spec);
    CHECK(back.rng_seed == ckpt.rng_seed);
    CHECK(back.rng_position == ckpt.rng_position);
    CHECK(back.trace == ckpt.trace);
    CHECK(back.steps == ckpt.steps);

    save_checkpoint(dir / "b.avfp", back);
    CHECK(read_file(dir / "a.avfp") == read_file(dir / "b.avfp"));
}

TEST_CASE("large counters survive the round trip") {
    Checkpoint ckpt = trained_checkpoint();
    ckpt.config.seed = 0xfedcba9876543210ULL;
    ckpt.rng_seed = ckpt.config.seed;
    ckpt.gen_opt.t = (1ULL << 60) + 3;
    const Checkpoint back = from_arrays(to_arrays(ckpt));
    CHECK(back.config.seed == ckpt.config.seed);
    CHECK(back.gen_opt.t == ckpt.gen_opt.t);
}

TEST_CASE("corrupted checkpoints are rejected") {
    const Checkpoint ckpt = trained_checkpoint();
    test::TempDir dir("corrupt");
    save_checkpoint(dir / "good.avfp", ckpt);
    const std::string good = read_file(dir / "good.avfp");

    SUBCASE("flipped payload byte") {
        std::string bad = good;
        bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x10);
        write_file(dir / "bad.avfp", bad);
        CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.avfp"), doctest::Contains("checksum"), CheckpointError);
    }
    SUBCASE("truncated file") {
        write_file(dir / "bad.avfp", good.substr(0, good.size() - 20));
        CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.avfp"), doctest::Contains("truncated"), CheckpointError);
        write_file(dir / "bad.avfp", good.substr(0, 6));
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.avfp"), CheckpointError);
    }
    SUBCASE("version mismatch") {
        std::string bad = good;
        bad[4] = 2;
        write_file(dir / "bad.avfp", bad);
        CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.avfp"), doctest::Contains("version"), CheckpointError);
    }
    SUBCASE("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        write_file(dir / "bad.avfp", bad);
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.avfp"), CheckpointError);
    }
    SUBCASE("trailing bytes") {
        write_file(dir / "bad.avfp", good + "x");
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.avfp"), CheckpointError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(dir / "none.avfp"), CheckpointError); }
}

TEST_CASE("checkpoints with missing entries are rejected") {
    auto arrays = to_arrays(trained_checkpoint());
    arrays.erase(arrays.begin());
    CHECK_THROWS_AS(from_arrays(arrays), CheckpointError);
}
