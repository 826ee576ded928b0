#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "asyncflow/config.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "asyncflow_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

struct Result {
    int code;
    std::string out;
};

Result run(const std::string& args) {
    const auto log = path("last_output.txt");
    const std::string cmd = "cd '" + workdir().string() + "' && '" ASYNCFLOW_CLI "' " + args +
                            " > '" + log + "' 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<nlohmann::json> read_lines(const std::string& p) {
    std::ifstream in(p);
    std::vector<nlohmann::json> out;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    return out;
}

void write(const std::string& name, const std::string& text) { std::ofstream(path(name)) << text; }

const char* kTinyConfig = R"(# tiny run
data.path = train.jsonl
vae.d_latent = 4
vae.steps = 30
vae.batch = 32
dm.d_model = 16
dm.layers = 1
dm.heads = 2
dm.steps = 20
dm.batch = 8
solver.substeps = 2
seed = 5
)";

// Trains a tiny VAE and diffusion model once for the prediction tests.
void ensure_models() {
    static bool done = false;
    if (done) return;
    REQUIRE(run("synth --kind hawkes --out train.jsonl --n-seqs 10 --T 20 --seed 1").code == 0);
    write("tiny.cfg", kTinyConfig);
    REQUIRE(run("train-vae --config tiny.cfg --out vae.ckpt").code == 0);
    REQUIRE(run("train-dm --config tiny.cfg --vae vae.ckpt --out dm.ckpt").code == 0);
    // One test sequence of 10 events and one of 16.
    std::string ten = R"({"taus":[0.5,0.2,1.0,0.3,0.7,0.1,0.4,0.9,0.2,0.6],"types":[0,1,0,0,1,1,0,1,0,1]})";
    std::string sixteen = R"({"taus":[)";
    std::string types;
    for (int i = 0; i < 16; ++i) {
        sixteen += (i ? "," : "") + std::to_string(0.1 + 0.05 * i);
        types += (i ? "," : "") + std::to_string(i % 2);
    }
    sixteen += R"(],"types":[)" + types + "]}";
    write("test.jsonl", "{\"num_types\":2,\"max_len\":16}\n" + ten + "\n" + sixteen + "\n");
    done = true;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("synth --kind bogus --out x.jsonl").code == 2);
    CHECK(run("synth --kind poisson").code == 2);
    CHECK(run("predict --task sideways --ckpt a --vae b --data c --out d").code == 2);
    CHECK(run("schedule dump --kind wobbly --n 3").code == 2);
    CHECK(run("--help").code == 0);
    CHECK(run("predict --help").code == 0);
}

TEST_CASE("synth writes one line per sequence and is reproducible") {
    const auto r = run("synth --kind poisson --rate 1 --T 100 --n-seqs 50 --out p1.jsonl --seed 3");
    REQUIRE(r.code == 0);
    CHECK(read_lines(path("p1.jsonl")).size() == 50);
    CHECK(fs::exists(path("p1.jsonl.meta.json")));
    REQUIRE(run("synth --kind poisson --rate 1 --T 100 --n-seqs 50 --out p2.jsonl --seed 3").code == 0);
    CHECK(slurp(path("p1.jsonl")) == slurp(path("p2.jsonl")));

    const auto bad = run("synth --kind hawkes --alpha 1.2,0,0,1.2 --out h.jsonl");
    CHECK(bad.code == 1);
    CHECK(bad.out.find("non-stationary") != std::string::npos);
}

TEST_CASE("config validation names every offending key") {
    write("bad.cfg", "vae.steps = many\nmystery = 3\n");
    const auto r = run("train-vae --config bad.cfg --out v.ckpt");
    CHECK(r.code == 1);
    CHECK(r.out.find("data.path") != std::string::npos);
    CHECK(r.out.find("vae.steps") != std::string::npos);
    CHECK(r.out.find("mystery") != std::string::npos);

    write("missing.cfg", "data.path = nowhere.jsonl\n");
    const auto m = run("train-vae --config missing.cfg --out v.ckpt");
    CHECK(m.code == 1);
    CHECK(m.out.find("data.path") != std::string::npos);
    CHECK(run("train-vae --config no_such.cfg --out v.ckpt").code == 1);
}

TEST_CASE("training is deterministic and logs key=value lines") {
    ensure_models();
    const auto r = run("train-vae --config tiny.cfg --out vae2.ckpt --log-every 10");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("event=vae_step step=10 loss=") != std::string::npos);
    CHECK(slurp(path("vae.ckpt")) == slurp(path("vae2.ckpt")));
    REQUIRE(run("train-dm --config tiny.cfg --vae vae.ckpt --out dm2.ckpt").code == 0);
    CHECK(slurp(path("dm.ckpt")) == slurp(path("dm2.ckpt")));
    CHECK(run("train-dm --config tiny.cfg --vae no_such.ckpt --out x.ckpt").code == 1);
}

TEST_CASE("predict and eval") {
    ensure_models();
    REQUIRE(run("predict --task next --ckpt dm.ckpt --vae vae.ckpt --data test.jsonl --out next.jsonl").code == 0);
    const auto next = read_lines(path("next.jsonl"));
    REQUIRE(next.size() == 2);
    CHECK(next[0]["taus"].size() == 9);
    CHECK(next[0]["true_taus"].size() == 9);
    CHECK(next[1]["taus"].size() == 15);
    for (const char* key : {"seq", "task", "h", "start", "taus", "types", "true_taus", "true_types", "seed"})
        CHECK(next[0].contains(key));

    REQUIRE(run("predict --task horizon --h 5 --ckpt dm.ckpt --vae vae.ckpt --data test.jsonl --out hz.jsonl").code == 0);
    const auto hz = read_lines(path("hz.jsonl"));
    REQUIRE(hz.size() == 2);
    for (const auto& j : hz) CHECK(j["taus"].size() == 5);
    CHECK(hz[0]["start"] == 5);

    // Threads do not change results.
    REQUIRE(run("predict --task horizon --h 5 --ckpt dm.ckpt --vae vae.ckpt --data test.jsonl --out hz2.jsonl --threads 2").code == 0);
    CHECK(slurp(path("hz.jsonl")) == slurp(path("hz2.jsonl")));

    CHECK(run("predict --task horizon --h 16 --ckpt dm.ckpt --vae vae.ckpt --data test.jsonl --out x.jsonl").code == 1);

    REQUIRE(run("eval --pred hz.jsonl --data hz.jsonl --out self.csv").code == 0);
    const auto csv = slurp(path("self.csv"));
    CHECK(csv.rfind("dataset,task,horizon,seed,rmse,error_rate,otd\n", 0) == 0);
    CHECK(csv.find(",horizon,5,0,0,0,0\n") != std::string::npos);

    REQUIRE(run("eval --pred next.jsonl --data test.jsonl --out scores.csv").code == 0);
    REQUIRE(run("eval --pred hz.jsonl --data test.jsonl --out scores.csv --append").code == 0);
    std::ifstream in(path("scores.csv"));
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);
}

TEST_CASE("dimension mismatch is reported") {
    ensure_models();
    write("short.jsonl", "{\"num_types\":2,\"max_len\":8}\n{\"taus\":[1,2,3],\"types\":[0,1,0]}\n");
    const auto r = run("predict --task next --ckpt dm.ckpt --vae vae.ckpt --data short.jsonl --out x.jsonl");
    CHECK(r.code == 1);
    CHECK(r.out.find("dimension mismatch") != std::string::npos);
    write("broken.ckpt", "not a checkpoint at all");
    CHECK(run("predict --task next --ckpt broken.ckpt --vae vae.ckpt --data test.jsonl --out x.jsonl").code == 1);
}

TEST_CASE("schedule dump and check") {
    REQUIRE(run("schedule dump --kind async --n 6 --grid 1001 --knots --out sched.csv").code == 0);
    std::ifstream in(path("sched.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "s,a_1,a_2,a_3,a_4,a_5,a_6");
    bool found = false;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::vector<double> v;
        for (std::string cell; std::getline(ss, cell, ',');) v.push_back(std::stod(cell));
        if (v[0] == 6.0 / 11.0) {
            found = true;
            CHECK(v[6] == 0.0);
        }
        if (v[0] == 5.0 / 11.0) CHECK(v[1] == 1.0);
    }
    CHECK(found);

    for (const char* kind : {"async", "disjoint", "sync"}) CHECK(run(std::string("schedule check --kind ") + kind + " --n 6").code == 0);
    const auto broken = run("schedule check --kind async --n 6 --inject-fault");
    CHECK(broken.code == 1);
    CHECK(broken.out.find("violation check=monotone") != std::string::npos);
}

TEST_CASE("run config parsing") {
    using namespace asyncflow;
    const auto c = parse_run_config(R"(
# full example
data.path = d.jsonl   # trailing comment
data.num_types = 2
data.max_len = 16
vae.d_latent = 8
vae.beta_min = 1e-5
vae.beta_max = 0.01
vae.steps = 100
dm.schedule = sync
dm.layers = 2
dm.heads = 2
dm.d_model = 32
dm.steps = 50
dm.batch = 4
solver.kind = rk4
solver.substeps = 3
seed = 9
dtype = f64
)");
    CHECK(c.data_path == "d.jsonl");
    CHECK(c.data_max_len == 16);
    CHECK(c.vae.d_latent == 8);
    CHECK(c.vae.beta_max == 0.01);
    CHECK(c.dm.schedule == ScheduleKind::Sync);
    CHECK(c.dm.total_steps == 50);
    CHECK(c.solver == SolverKind::RK4);
    CHECK(c.substeps == 3);
    CHECK(c.seed == 9);
    CHECK(c.dtype == DTypeChoice::F64);
    const auto dc = c.dit_config(16, 8);
    CHECK(dc.d_model == 32);
    CHECK(dc.num_layers == 2);

    const auto defaults = parse_run_config("");
    CHECK(defaults.dm.schedule == ScheduleKind::Async);
    CHECK(defaults.solver == SolverKind::Euler);
    CHECK(defaults.substeps == 8);

    try {
        parse_run_config("seed = 1\nseed = 2\nnonsense\ndm.schedule = wavy\ndtype = f16\ndm.heads = 3\n");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string m = e.what();
        CHECK(m.find("seed: given more than once") != std::string::npos);
        CHECK(m.find("line 3") != std::string::npos);
        CHECK(m.find("dm.schedule") != std::string::npos);
        CHECK(m.find("dtype") != std::string::npos);
        CHECK(m.find("dm.heads: must divide") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_run_config("vae.beta_min = 0.5\nvae.beta_max = 0.1\n"), ValidationError);
    CHECK_THROWS_AS(parse_run_config("vae.steps = 0\n"), ValidationError);
    CHECK(run_config_keys().size() == 20);
}
