#include "triepack/io.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const std::string kCli = TRIEPACK_CLI;
const std::string kFixtures = TRIEPACK_FIXTURES;

struct Scratch {
    fs::path dir;
    Scratch() {
        dir = fs::temp_directory_path() / ("triepack_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args) {
    const int status = std::system((kCli + " " + args + " 2>/dev/null").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string fixture(const std::string& name) { return kFixtures + "/" + name; }

}  // namespace

TEST_CASE("pack on the three-trajectory fixture") {
    Scratch s;
    REQUIRE(run("pack -i " + fixture("three_traj.jsonl") + " --budget 4 -o " + (s / "p.jsonl")) == 0);
    std::istringstream in(read(s / "p.jsonl"));
    auto f = triepack::parse_pack_file(in);
    CHECK(f.header.total_cost == 6);
    CHECK(f.header.n_packs == 2);

    REQUIRE(run("pack -i " + fixture("three_traj.jsonl") + " --budget 8 -o " + (s / "q.jsonl")) == 0);
    std::istringstream in8(read(s / "q.jsonl"));
    CHECK(triepack::parse_pack_file(in8).header.total_cost == 5);

    CHECK(run("pack -i " + fixture("three_traj.jsonl") + " --budget 2 -o " + (s / "r.jsonl")) == 3);
    CHECK_FALSE(fs::exists(s / "r.jsonl"));
}

TEST_CASE("verify reports agreement") {
    Scratch s;
    REQUIRE(run("verify -i " + fixture("three_traj.jsonl") + " --seed 7 --V 11 --d 4 -o " + (s / "v.json")) == 0);
    auto j = nlohmann::json::parse(read(s / "v.json"));
    CHECK(j["passed"].get<bool>());
    CHECK(j["max_rel_grad_err"].get<double>() <= 1e-6);
    CHECK(j["loss_rel_err"].get<double>() <= 1e-10);
    CHECK(run("verify -i " + fixture("three_traj.jsonl") + " --seed 7 --V 11 --d 4 --budget 4 --mode numeric -o " +
              (s / "n.json")) == 0);
}

TEST_CASE("outputs are byte-identical across runs") {
    Scratch s;
    for (const std::string cmd : {"pack -i " + fixture("sessions.jsonl") + " --budget 16 --tst",
                                  "verify -i " + fixture("three_traj.jsonl") + " --seed 3 --V 11 --d 4",
                                  "mask -i " + fixture("sessions.jsonl"), "decompose -i " + fixture("sessions.jsonl"),
                                  "stats -i " + fixture("sessions.jsonl"), "advantage -i " + fixture("groups.jsonl")}) {
        REQUIRE(run(cmd + " -o " + (s / "a")) == 0);
        REQUIRE(run(cmd + " -o " + (s / "b")) == 0);
        CHECK(!read(s / "a").empty());
        CHECK(read(s / "a") == read(s / "b"));
    }
}

TEST_CASE("mask and decompose outputs parse as trajectories") {
    Scratch s;
    REQUIRE(run("decompose -i " + fixture("sessions.jsonl") + " -o " + (s / "t.jsonl")) == 0);
    std::istringstream in(read(s / "t.jsonl"));
    auto ts = triepack::parse_trajectories(in);
    CHECK(ts.size() == 6);
    REQUIRE(run("stats -i " + (s / "t.jsonl") + " -o " + (s / "st.json")) == 0);
    auto st = nlohmann::json::parse(read(s / "st.json"));
    CHECK(st["n_trajectories"] == 6);
}

TEST_CASE("advantage output") {
    Scratch s;
    REQUIRE(run("advantage -i " + fixture("groups.jsonl") + " --lambda 0.4 --mu 0.2 -o " + (s / "a.jsonl")) == 0);
    std::istringstream in(read(s / "a.jsonl"));
    std::string line;
    std::getline(in, line);
    auto easy = nlohmann::json::parse(line);
    CHECK(easy["group_id"] == "easy");
    CHECK(easy["difficulty"].get<double>() == 0.25);
    CHECK(easy["mean_difficulty"].get<double>() == 0.5);
    CHECK(easy["alpha"].get<double>() == doctest::Approx(0.9));
    CHECK(std::abs(easy["shaped"][0].get<double>() - 0.571577) <= 1e-6);
    std::getline(in, line);
    auto hard = nlohmann::json::parse(line);
    CHECK(hard["deviation"][0].get<double>() == doctest::Approx(1.0 / 3.0));
    CHECK(hard["resample"][0] == false);
    CHECK(hard["resample"][1] == true);
}

TEST_CASE("exit codes") {
    Scratch s;
    CHECK(run("") == 1);
    CHECK(run("pack -i " + fixture("three_traj.jsonl")) == 1);  // missing --budget
    CHECK(run("frobnicate") == 1);
    CHECK(run("pack -i " + fixture("three_traj.jsonl") + " --budget 4 --normalization median") == 1);
    CHECK(run("pack -i " + (s / "missing.jsonl") + " --budget 4") == 2);

    std::ofstream(s / "bad.jsonl") << "{\"session_id\":\"x\",\"messages\":[{\"role\":\"user\",\"tokens\":[1],\"parent\":0}]}\n";
    CHECK(run("mask -i " + (s / "bad.jsonl")) == 2);
    std::ofstream(s / "garbage.jsonl") << "not json\n";
    CHECK(run("stats -i " + (s / "garbage.jsonl")) == 2);
    CHECK(run("verify -i " + fixture("three_traj.jsonl") + " --V 11 --d 3") == 1);
    CHECK(run("verify -i " + fixture("three_traj.jsonl") + " --V 11 --d 4 --grad-tol 0 -o " + (s / "v0.json")) == 4);
}
