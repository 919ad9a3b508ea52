#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "avfp/checkpoint.hpp"
#include "avfp/cmapss.hpp"
#include "support.hpp"

#ifdef AVFP_CLI_PATH

using namespace avfp;

namespace {

struct CliResult {
    int code = -1;
    std::string out, err;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

CliResult cli(const test::TempDir& dir, const std::string& args) {
    const auto out = dir / "stdout.txt";
    const auto err = dir / "stderr.txt";
    const std::string cmd = std::string("env -u AVFP_DATA_DIR ") + AVFP_CLI_PATH + " " + args + " >" + out.string() +
                            " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

struct Workspace {
    test::TempDir dir{"cli"};
    std::filesystem::path data = dir / "data";
    std::filesystem::path config = dir / "c.json";

    Workspace() {
        std::filesystem::create_directories(data);
        write_surrogate_cmapss(data, 3, 6, 3);
        std::ofstream(config) << R"({"epochs": 1, "trajectories_per_batch": 3, "eval_every": 1,
            "network": {"n_z": 2, "n_h": 4, "recognizer_hidden": 4, "prior_hidden": 4, "emitter_hidden": 4,
                        "discriminator_hidden": 4, "rul_hidden": 4}})";
    }
};

}  // namespace

TEST_CASE("experiment smoke run writes its summary files") {
    Workspace w;
    const auto out = w.dir / "exp";
    const CliResult r = cli(w.dir, "experiment --data " + w.data.string() + " --config " + w.config.string() +
                                       " --runs 1 --out " + out.string());
    INFO(r.out, r.err);
    CHECK(r.code == 0);
    for (const char* f : {"curves.csv", "runs.csv", "summary.json", "manifest.json"}) {
        CHECK(std::filesystem::is_regular_file(out / f));
    }
}

TEST_CASE("usage errors exit with 1") {
    test::TempDir dir("cli_usage");
    const CliResult unknown = cli(dir, "frobnicate");
    CHECK(unknown.code == 1);
    CHECK((unknown.out + unknown.err).find("Usage") != std::string::npos);
    CHECK(cli(dir, "").code == 1);
    CHECK(cli(dir, "eval").code == 1);
    CHECK(cli(dir, "--help").code == 0);
}

TEST_CASE("missing data exits with 2") {
    test::TempDir dir("cli_nodata");
    const CliResult r = cli(dir, "ingest --out " + (dir / "x").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("AVFP_DATA_DIR") != std::string::npos);
    CHECK(cli(dir, "ingest --data " + (dir / "none").string()).code == 2);
}

TEST_CASE("train, eval and predict") {
    Workspace w;
    const auto run = w.dir / "run";
    const std::string data = " --data " + w.data.string();
    const CliResult t = cli(w.dir, "train" + data + " --config " + w.config.string() + " --out " + run.string());
    INFO(t.out, t.err);
    REQUIRE(t.code == 0);
    const auto ckpt = run / "checkpoint.avfp";
    REQUIRE(std::filesystem::is_regular_file(ckpt));

    const CliResult e = cli(w.dir, "eval" + data + " --checkpoint " + ckpt.string());
    CHECK(e.code == 0);
    CHECK(e.out.find("RMSE") != std::string::npos);
    CHECK(cli(w.dir, "eval" + data + " --checkpoint " + ckpt.string() + " --mode health_index --best").code == 0);
    CHECK(cli(w.dir, "eval" + data + " --checkpoint " + ckpt.string() + " --mode nonsense").code == 1);

    const auto preds = w.dir / "preds.csv";
    CHECK(cli(w.dir, "predict" + data + " --checkpoint " + ckpt.string() + " --out " + preds.string()).code == 0);
    std::ifstream in(preds);
    std::string line;
    std::getline(in, line);
    CHECK(line == "unit_id,predicted_rul,true_rul");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);

    // A network that does not match its own parameters and statistics.
    Checkpoint c = load_checkpoint(ckpt);
    c.spec.n_x += 1;
    const auto bad = w.dir / "bad.avfp";
    save_checkpoint(bad, c);
    const CliResult m = cli(w.dir, "eval" + data + " --checkpoint " + bad.string());
    CHECK(m.code == 2);
    CHECK(m.err.find("n_x") != std::string::npos);
}

TEST_CASE("ingest writes normalized files") {
    Workspace w;
    const auto out = w.dir / "ingest";
    const CliResult r = cli(w.dir, "ingest --data " + w.data.string() + " --out " + out.string());
    CHECK(r.code == 0);
    for (const char* f : {"train_normalized.csv", "test_normalized.csv", "stats.json", "rul_targets.csv"}) {
        CHECK(std::filesystem::is_regular_file(out / f));
    }
    CHECK(r.out.find("train: 6 units") != std::string::npos);
}

TEST_CASE("bad configuration exits with 1") {
    Workspace w;
    std::ofstream(w.dir / "bad.json") << R"({"epoch": 1})";
    const CliResult r = cli(w.dir, "train --data " + w.data.string() + " --config " + (w.dir / "bad.json").string());
    CHECK(r.code == 1);
    CHECK(r.err.find("epoch") != std::string::npos);
}

#endif
