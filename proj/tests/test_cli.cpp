#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "crcterm/io.hpp"

namespace fs = std::filesystem;
using crcterm::io::read_file;

namespace {

const fs::path kScenarios = CRCTERM_SCENARIO_DIR;

int run(const std::string& args) {
    const std::string cmd = std::string(CRCTERM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("crcterm_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string scenario(const std::string& name) { return (kScenarios / name).string(); }

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST(Cli, NegativeControlsExitWithCheckFailure) {
    const auto out = scratch("controls");
    EXPECT_EQ(run("verify --config " + scenario("heston_verify.ini") + " --out " + (out / "good").string()), 0);
    EXPECT_EQ(run("verify --config " + scenario("heston_bad_alpha.ini") + " --out " + (out / "alpha").string()), 4);
    EXPECT_EQ(run("verify --config " + scenario("heston_flip_rho.ini") + " --out " + (out / "flip").string()), 4);
    const auto m = nlohmann::json::parse(read_file(out / "alpha" / "manifest.json"));
    EXPECT_EQ(m["exit_code"], 4);
    bool drift_failed = false;
    for (const auto& c : m["checks"]) drift_failed |= c["name"] == "drift_condition" && c["pass"] == false;
    EXPECT_TRUE(drift_failed);
}

TEST(Cli, ConfigErrorsExitWithTwo) {
    const auto dir = scratch("config");
    write(dir / "bad.ini", "[model]\nfamily = nope\n");
    EXPECT_EQ(run("simulate --config " + (dir / "bad.ini").string()), 2);
    EXPECT_EQ(run("simulate --config " + (dir / "missing.ini").string()), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("simulate"), 2);
}

TEST(Cli, NumericFailureExitsWithThree) {
    // Flipping rho is only defined for the Heston family.
    const auto dir = scratch("numeric");
    write(dir / "v.ini",
          "[model]\nfamily = vasicek_short_rate\na = 0.1\nb = 0.002\nsigma = 0.006\n"
          "[run]\nseed = 1\n[verify]\nchecks = drift\nflip_rho = true\n");
    EXPECT_EQ(run("verify --config " + (dir / "v.ini").string() + " --out " + (dir / "o").string()), 3);
    EXPECT_TRUE(fs::exists(dir / "o" / "FAILED"));
    EXPECT_FALSE(fs::exists(dir / "o" / "manifest.json"));
}

TEST(Cli, SimulateIsDeterministicAcrossThreadCounts) {
    const auto dir = scratch("determinism");
    const auto base = read_file(scenario("simulate_two_state.ini"));
    // threads lives in [run]; splice it in after the section header
    auto threaded = base;
    threaded.insert(threaded.find("[run]\n") + 6, "threads = 3\n");
    write(dir / "t3.ini", threaded);
    ASSERT_EQ(run("simulate --config " + scenario("simulate_two_state.ini") + " --out " + (dir / "a").string()), 0);
    ASSERT_EQ(run("simulate --config " + scenario("simulate_two_state.ini") + " --out " + (dir / "b").string()), 0);
    ASSERT_EQ(run("simulate --config " + (dir / "t3.ini").string() + " --out " + (dir / "c").string()), 0);
    ASSERT_EQ(run("simulate --config " + scenario("simulate_two_state.ini") + " --seed 8 --out " + (dir / "d").string()),
              0);
    for (const char* f : {"paths.csv", "surfaces_0.csv", "surfaces_1.csv", "report.txt"}) {
        EXPECT_EQ(read_file(dir / "a" / f), read_file(dir / "b" / f)) << f;
        EXPECT_EQ(read_file(dir / "a" / f), read_file(dir / "c" / f)) << f;
    }
    EXPECT_NE(read_file(dir / "a" / "paths.csv"), read_file(dir / "d" / "paths.csv"));
    const auto ma = nlohmann::json::parse(read_file(dir / "a" / "manifest.json"));
    const auto mb = nlohmann::json::parse(read_file(dir / "b" / "manifest.json"));
    EXPECT_EQ(ma["outputs"], mb["outputs"]);
    EXPECT_EQ(ma["config_hash"], mb["config_hash"]);
    EXPECT_EQ(nlohmann::json::parse(read_file(dir / "d" / "manifest.json"))["seed"], 8);
}

TEST(Cli, SimulateThenCalibrate) {
    const auto dir = scratch("calibrate");
    auto sim = read_file(scenario("heston_simulate.ini"));
    sim.replace(sim.find("steps = 3000"), 12, "steps = 600");
    sim.replace(sim.find("horizon = 3021"), 14, "horizon = 621");
    write(dir / "sim.ini", sim);
    ASSERT_EQ(run("simulate --config " + (dir / "sim.ini").string() + " --out " + (dir / "sim").string()), 0);
    write(dir / "cal.ini", "[model]\nfamily = heston\ndt = 0.003968253968253968\n[io]\nx_in = " +
                               (dir / "sim" / "paths.csv").string() + "\ntheta_in = " +
                               (dir / "sim" / "surfaces_0.csv").string() + "\n");
    ASSERT_EQ(run("calibrate --config " + (dir / "cal.ini").string() + " --out " + (dir / "cal").string()), 0);
    const auto tab = crcterm::io::detail::read_numeric_csv(read_file(dir / "cal" / "a_hat.csv"));
    ASSERT_EQ(tab.rows.size(), 1u);
    EXPECT_NEAR(tab.rows[0][tab.column("a")], 1.5, 1e-6);
    EXPECT_NEAR(tab.rows[0][tab.column("c")], 0.35, 1e-6);
    EXPECT_NEAR(tab.rows[0][tab.column("rho")], -0.6, 1e-6);
    EXPECT_NEAR(tab.rows[0][tab.column("b")], 0.05, 1e-8);
    EXPECT_TRUE(fs::exists(dir / "cal" / "margins.csv"));
    EXPECT_TRUE(fs::exists(dir / "cal" / "y_hat.csv"));
}

TEST(Cli, RiccatiAndFitHw) {
    const auto dir = scratch("riccati");
    ASSERT_EQ(run("riccati --config " + scenario("riccati_vasicek.ini") + " --out " + (dir / "r").string()), 0);
    const auto tab = crcterm::io::detail::read_numeric_csv(
        // the model column is text; drop it before numeric parsing
        [&] {
            std::string s = read_file(dir / "r" / "riccati.csv"), out;
            std::istringstream in(s);
            for (std::string line; std::getline(in, line);) out += line.substr(line.find(',') + 1) + "\n";
            return out;
        }());
    EXPECT_EQ(tab.rows.size(), 7u * 11u);
    ASSERT_EQ(run("fit-hw --config " + scenario("fit_hw_self.ini") + " --out " + (dir / "f").string()), 0);
    EXPECT_NE(read_file(dir / "f" / "validity.txt").find("valid=true"), std::string::npos);
}
