// Integration tests driving the installed CLI binary (path from the CBD_CLI
// environment variable, wired up by ctest). Skipped when the variable is
// absent so the unit binary still runs standalone.

#include "cbd/eval.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return std::getenv("CBD_CLI"); }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path fresh_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / "cbd_cli_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

const char* kTinyProfileConfig = R"(
method = "cbd"
seed = 1
epochs_stage1 = 3
epochs_stage2 = 3
batch_size = 8
[profile]
classes = 4
head = 20
tail = 2
feature_dim = 4
separation = 1.5
noise = 0.3
test_per_class = 5
seed = 7
)";

} // namespace

#define REQUIRE_CLI() \
    if (!cli_path()) { MESSAGE("CBD_CLI not set; skipping"); return; }

TEST_CASE("cli synth: deterministic files, usage error on bad profile") {
    REQUIRE_CLI();
    const auto dir = fresh_dir("synth");
    const std::string args = "synth --classes 5 --head 20 --tail 2 --dim 3 --seed 4 --out " +
                             (dir / "a").string();
    CHECK(run_cli(args) == 0);
    CHECK(fs::exists(dir / "a" / "train.csv"));
    CHECK(fs::exists(dir / "a" / "test.csv"));

    CHECK(run_cli("synth --classes 5 --head 20 --tail 2 --dim 3 --seed 4 --out " +
                  (dir / "b").string()) == 0);
    CHECK(slurp(dir / "a" / "train.csv") == slurp(dir / "b" / "train.csv")); // byte-identical
    CHECK(slurp(dir / "a" / "test.csv") == slurp(dir / "b" / "test.csv"));

    CHECK(run_cli("synth --classes 1 --out " + (dir / "c").string()) == 2);
}

TEST_CASE("cli train: reports, checkpoints, exit codes, determinism") {
    REQUIRE_CLI();
    const auto dir = fresh_dir("train");
    write_file(dir / "run.cfg", kTinyProfileConfig);

    SUBCASE("successful run writes report and checkpoints") {
        CHECK(run_cli("train --config " + (dir / "run.cfg").string() + " --out " +
                      (dir / "out").string()) == 0);
        CHECK(fs::exists(dir / "out" / "report.json"));
        CHECK(fs::exists(dir / "out" / "report.csv"));
        CHECK(fs::exists(dir / "out" / "model.ckpt"));
        CHECK(fs::exists(dir / "out" / "teacher_0.ckpt"));
        const auto report = cbd::parse_report_json(dir / "out" / "report.json");
        CHECK(report.method == "cbd");
        CHECK(report.seed == 1);
        const std::string csv = slurp(dir / "out" / "report.csv");
        CHECK(csv.rfind(cbd::report_csv_header() + "\n", 0) == 0);
        CHECK(csv.find("\ncbd,1,") != std::string::npos);
    }
    SUBCASE("identical (config, seed) produce identical report rows") {
        CHECK(run_cli("train --config " + (dir / "run.cfg").string() + " --out " +
                      (dir / "r1").string()) == 0);
        CHECK(run_cli("train --config " + (dir / "run.cfg").string() + " --out " +
                      (dir / "r2").string()) == 0);
        CHECK(slurp(dir / "r1" / "report.csv") == slurp(dir / "r2" / "report.csv"));
        CHECK(slurp(dir / "r1" / "model.ckpt") == slurp(dir / "r2" / "model.ckpt"));
    }
    SUBCASE("config validation failures exit 2") {
        CHECK(run_cli("train --config " + (dir / "run.cfg").string() + " --set alpha=1.5 --out " +
                      (dir / "bad").string()) == 2);
        CHECK(run_cli("train --config " + (dir / "run.cfg").string() +
                      " --set not_a_key=1 --out " + (dir / "bad").string()) == 2);
        CHECK(run_cli("train --config " + (dir / "missing.cfg").string() + " --out " +
                      (dir / "bad").string()) == 2);
        CHECK(run_cli("train") == 2); // missing required flags
    }
}

TEST_CASE("cli train: non-finite data aborts with exit 1") {
    REQUIRE_CLI();
    const auto dir = fresh_dir("abort");
    // poisoned training set: NaN features surface as a numerical abort
    write_file(dir / "train.csv", "label,f0\n0,nan\n0,nan\n1,nan\n1,nan\n");
    write_file(dir / "test.csv", "label,f0\n0,1.0\n1,2.0\n");
    write_file(dir / "run.cfg",
               "method = \"instance\"\nepochs_stage1 = 2\nbatch_size = 4\ndataset_path = \"" +
                   dir.string() + "\"\n");
    CHECK(run_cli("train --config " + (dir / "run.cfg").string() + " --out " +
                  (dir / "out").string()) == 1);
}

TEST_CASE("cli suite: per-run reports plus aggregate") {
    REQUIRE_CLI();
    const auto dir = fresh_dir("suite");
    write_file(dir / "run.cfg", kTinyProfileConfig);
    CHECK(run_cli("suite --config " + (dir / "run.cfg").string() +
                  " --seeds 1,2 --methods instance,cbd --jobs 2 --out " +
                  (dir / "out").string()) == 0);

    for (const char* stem : {"instance_seed1", "instance_seed2", "cbd_seed1", "cbd_seed2"}) {
        CHECK(fs::exists(dir / "out" / (std::string(stem) + ".report.json")));
        CHECK(fs::exists(dir / "out" / (std::string(stem) + ".report.csv")));
    }
    const std::string agg = slurp(dir / "out" / "aggregate.csv");
    REQUIRE_FALSE(agg.empty());

    // aggregate mean equals the arithmetic mean of the run reports
    const auto r1 = cbd::parse_report_json(dir / "out" / "instance_seed1.report.json");
    const auto r2 = cbd::parse_report_json(dir / "out" / "instance_seed2.report.json");
    const double mean = (r1.overall_acc + r2.overall_acc) / 2.0;
    std::istringstream lines(agg);
    std::string line;
    std::getline(lines, line); // header
    bool found = false;
    while (std::getline(lines, line)) {
        if (line.rfind("instance,2,", 0) == 0) {
            std::stringstream ss(line);
            std::string field;
            std::getline(ss, field, ','); // method
            std::getline(ss, field, ','); // n_seeds
            std::getline(ss, field, ','); // overall_mean
            CHECK(std::stod(field) == doctest::Approx(mean).epsilon(1e-9));
            found = true;
        }
    }
    CHECK(found);
    CHECK_FALSE(fs::exists(dir / "out" / "aggregate.csv.partial"));
}

TEST_CASE("cli suite: single-seed std serializes as zero") {
    REQUIRE_CLI();
    const auto dir = fresh_dir("suite1");
    write_file(dir / "run.cfg", kTinyProfileConfig);
    CHECK(run_cli("suite --config " + (dir / "run.cfg").string() +
                  " --seeds 5 --methods instance --out " + (dir / "out").string()) == 0);
    const std::string agg = slurp(dir / "out" / "aggregate.csv");
    std::istringstream lines(agg);
    std::string line;
    std::getline(lines, line);
    std::getline(lines, line);
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ','); // method
    std::getline(ss, field, ','); // n_seeds == 1
    CHECK(field == "1");
    std::getline(ss, field, ','); // overall_mean
    std::getline(ss, field, ','); // overall_std
    CHECK(std::stod(field) == 0.0);
}

TEST_CASE("cli ablate: alpha sweep rows = grid size x modes") {
    REQUIRE_CLI();
    const auto dir = fresh_dir("ablate");
    write_file(dir / "run.cfg", kTinyProfileConfig);
    CHECK(run_cli("ablate --config " + (dir / "run.cfg").string() +
                  " --axis alpha --grid 0,0.4 --modes feature,classifier --out " +
                  (dir / "out").string()) == 0);
    const std::string sweep = slurp(dir / "out" / "sweep_alpha.csv");
    std::size_t lines = 0;
    for (char ch : sweep) lines += ch == '\n';
    CHECK(lines == 5); // header + 2 grid points x 2 modes
    CHECK(sweep.rfind("axis,value,mode," + cbd::report_csv_header() + "\n", 0) == 0);

    CHECK(run_cli("ablate --config " + (dir / "run.cfg").string() +
                  " --axis bogus --out " + (dir / "out").string()) == 2);
}

TEST_CASE("cli ablate: K and ensemble_composition axes") {
    REQUIRE_CLI();
    const auto dir = fresh_dir("ablate_k");
    write_file(dir / "run.cfg", kTinyProfileConfig);

    CHECK(run_cli("ablate --config " + (dir / "run.cfg").string() +
                  " --axis K --grid 1,2 --out " + (dir / "out").string()) == 0);
    const std::string ksweep = slurp(dir / "out" / "sweep_K.csv");
    CHECK(ksweep.find("K,1,ensemble,cbd_k") != std::string::npos);
    CHECK(ksweep.find("K,2,ensemble,cbd_k") != std::string::npos);

    CHECK(run_cli("ablate --config " + (dir / "run.cfg").string() +
                  " --axis ensemble_composition --out " + (dir / "out").string()) == 0);
    const std::string comp = slurp(dir / "out" / "sweep_ensemble_composition.csv");
    // the teacher-mix grid for K = 1..4
    for (const char* label :
         {"standard", "data_aug", "standard+standard", "data_aug+data_aug",
          "standard+data_aug", "standard+data_aug+data_aug",
          "standard+standard+data_aug+data_aug"}) {
        CHECK(comp.find("ensemble_composition," + std::string(label) + ",") !=
              std::string::npos);
    }
}

TEST_CASE("cli ablate: default beta grid includes the default 100") {
    REQUIRE_CLI();
    const auto dir = fresh_dir("ablate_beta");
    write_file(dir / "run.cfg", kTinyProfileConfig);
    CHECK(run_cli("ablate --config " + (dir / "run.cfg").string() + " --axis beta --out " +
                  (dir / "out").string()) == 0);
    const std::string sweep = slurp(dir / "out" / "sweep_beta.csv");
    CHECK(sweep.find("beta,100") != std::string::npos);
}

TEST_CASE("cli report aggregates a directory of run reports") {
    REQUIRE_CLI();
    const auto dir = fresh_dir("report");
    write_file(dir / "run.cfg", kTinyProfileConfig);
    REQUIRE(run_cli("suite --config " + (dir / "run.cfg").string() +
                    " --seeds 1 --methods instance --out " + (dir / "out").string()) == 0);
    const std::string cmd = std::string(cli_path()) + " report --dir " + (dir / "out").string() +
                            " > " + (dir / "agg.csv").string() + " 2>/dev/null";
    CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    const std::string agg = slurp(dir / "agg.csv");
    CHECK(agg.rfind("method,n_seeds,", 0) == 0);
    CHECK(agg.find("instance,1,") != std::string::npos);

    CHECK(run_cli("report --dir " + (dir / "nonexistent").string()) == 2);
}
