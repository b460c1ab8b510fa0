#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "locsparse/io.hpp"

using namespace locsparse;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string output;
};

fs::path workdir() {
    const fs::path dir = fs::temp_directory_path() / "locsparse_cli_test";
    fs::create_directories(dir);
    return dir;
}

Run cli(const std::string& args) {
    const fs::path log = workdir() / "log.txt";
    const std::string cmd = std::string(LOCSPARSE_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    std::ifstream in(log);
    std::ostringstream s;
    s << in.rdbuf();
    return {WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, s.str()};
}

std::string write(const std::string& name, const std::string& text) {
    const fs::path p = workdir() / name;
    std::ofstream(p) << text;
    return p.string();
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 2") {
    CHECK(cli("").code == 2);
    CHECK(cli("frobnicate").code == 2);
    CHECK(cli("gen --no-such-flag 1").code == 2);
    CHECK(cli("check-theorem").code == 2);  // --trace is required
    CHECK(cli("check-theorem --trace " + (workdir() / "absent.json").string()).code == 2);
    CHECK(cli("gen --help").code == 0);
}

TEST_CASE("config errors name the file line or the flag") {
    const std::string bad = write("bad.json", "{\n  \"seed\": 1,\n  \"attention\": {\"k_q\": 100}\n}\n");
    const Run a = cli("gen --config " + bad + " --out " + (workdir() / "x").string());
    CHECK(a.code == 2);
    CHECK(a.output.find("bad.json:3: k_q") != std::string::npos);
    const std::string unknown = write("unknown.json", "{\n  \"seed\": 1,\n  \"bogus\": 2\n}\n");
    const Run b = cli("gen --config " + unknown);
    CHECK(b.code == 2);
    CHECK(b.output.find("unknown.json:3: unknown field 'bogus'") != std::string::npos);
    const Run c = cli("gen --k_q 100");
    CHECK(c.code == 2);
    CHECK(c.output.find("--k_q: k_q") != std::string::npos);
    const Run d = cli("simulate --element_width 3");
    CHECK(d.code == 2);
    CHECK(d.output.find("--element_width") != std::string::npos);
}

TEST_CASE("gen then check-theorem passes; a planted violation exits with 1") {
    const fs::path out = workdir() / "gen";
    REQUIRE(cli("gen --seed 2 --steps 200 --n 512 --out " + out.string()).code == 0);
    const fs::path trace = out / "trace_kv0.json";
    REQUIRE(fs::exists(trace));
    CHECK(fs::exists(out / "weights.json"));
    CHECK(fs::exists(out / "experiment.json"));
    const fs::path check = workdir() / "check";
    const Run ok = cli("check-theorem --trace " + trace.string() + " --out " + check.string());
    CHECK(ok.code == 0);
    const json doc = read_json_file(check / "locality.json");
    CHECK(doc.at("violations").empty());
    CHECK(doc.at("source").at("policy") == "nosa");
    CHECK(read_text_file(check / "locality.csv").rfind("step,gamma,bound\n", 0) == 0);

    // Swap one step's top-k blocks for blocks nobody attended a step earlier.
    json t = read_json_file(trace);
    auto& steps = t.at("steps");
    const std::size_t i = steps.size() - 1;
    const std::size_t first = steps[i].at("t").get<std::size_t>() / 32;  // past every attended block
    REQUIRE_FALSE(steps[i].at("q").empty());
    json fresh = json::array();
    for (std::size_t k = 0; k < steps[i].at("q").size(); ++k) fresh.push_back(first + 100 + k);
    steps[i]["q"] = fresh;
    const std::string planted = write("planted.json", dump(t));
    const Run bad = cli("check-theorem --trace " + planted);
    CHECK(bad.code == 1);
    CHECK(bad.output.find("first offending step " + std::to_string(steps[i].at("t").get<std::size_t>())) !=
          std::string::npos);
    CHECK(cli("check-theorem --no-bound --trace " + planted).code == 0);
}

TEST_CASE("eviction flag checks containment") {
    const fs::path out = workdir() / "gen_e";
    REQUIRE(cli("gen --seed 3 --steps 300 --n 512 --k_q 0 --k_e 512 --out " + out.string()).code == 0);
    CHECK(cli("check-theorem --eviction --trace " + (out / "trace_kv0.json").string()).code == 0);
}

TEST_CASE("report with no inputs writes a header-only csv") {
    const fs::path out = workdir() / "report";
    REQUIRE(cli("report --out " + out.string()).code == 0);
    const std::string csv = read_text_file(out / "report.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
    CHECK(cli("report --inputs " + write("junk.json", "{\"format\": \"x\"}") + " --out " + out.string()).code == 2);
}

}
