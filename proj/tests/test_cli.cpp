#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "attrib/attribution.hpp"
#include "attrib/model.hpp"
#include "attrib/toy_corpus.hpp"
#include "attrib/util.hpp"

using namespace attrib;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "attrib_cli_tests";

int run(const std::string& args) {
    std::string cmd = std::string(ATTRIB_BIN) + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

void write_tsv(const fs::path& path, const Dataset& d) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& ex : d.examples) out << ex.label << "\t" << ex.text << "\n";
}

std::string slurp(const fs::path& path) { return read_file(path.string()); }

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
    std::istringstream in(slurp(path));
    std::vector<nlohmann::json> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    }
    return out;
}

// One trained model shared by the whole suite.
struct Fixture {
    fs::path train_tsv, dev_tsv, test_tsv, cfg_json, ckpt;
    Fixture() {
        fs::create_directories(kWork);
        train_tsv = kWork / "train.tsv";
        dev_tsv = kWork / "dev.tsv";
        test_tsv = kWork / "test.tsv";
        cfg_json = kWork / "cfg.json";
        write_tsv(train_tsv, make_cue_corpus({240, 31, 3, 6, "train"}));
        write_tsv(dev_tsv, make_cue_corpus({60, 32, 3, 6, "dev"}));
        write_tsv(test_tsv, make_cue_corpus({60, 33, 3, 6, "test"}));
        std::ofstream(cfg_json) << R"({"n_layers":1,"n_heads":2,"d_model":16,"d_ff":32,)"
                                << R"("max_seq_len":32,"seed":3,"lr":0.002,"batch_size":16,)"
                                << R"("epochs":5,"min_freq":1})";
        REQUIRE(run("train --train " + train_tsv.string() + " --dev " + dev_tsv.string() +
                    " --config " + cfg_json.string() + " --out " + (kWork / "model").string()) == 0);
        ckpt = kWork / "model" / "model.ckpt";
        REQUIRE(fs::exists(ckpt));
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

}  // namespace

TEST_CASE("train writes checkpoint, log, and a verifying manifest") {
    Fixture& f = fixture();
    CHECK(fs::exists(kWork / "model" / "dev_accuracy.log"));
    std::string log = slurp(kWork / "model" / "dev_accuracy.log");
    CHECK(log.find("dev_accuracy") != std::string::npos);

    auto man = nlohmann::json::parse(slurp(kWork / "model" / "manifest.json"));
    CHECK(man.at("command") == "train");
    for (const auto& in : man.at("inputs")) {
        std::string path = in.at("path");
        CHECK(in.at("fnv1a64") == hex64(fnv1a64_file(path)));
    }
    CHECK(man.at("artifacts").size() == 2);
    CHECK(man.at("duration_seconds").get<double>() >= 0.0);

    Checkpoint c = load_checkpoint(f.ckpt.string());
    CHECK(c.meta.dev_accuracy > 0.9);
}

TEST_CASE("train is deterministic and rejects missing flags") {
    Fixture& f = fixture();
    CHECK(run("train --train " + f.train_tsv.string() + " --dev " + f.dev_tsv.string() +
              " --config " + f.cfg_json.string() + " --out " + (kWork / "model_b").string()) == 0);
    CHECK(slurp(f.ckpt) == slurp(kWork / "model_b" / "model.ckpt"));

    CHECK(run("train --dev " + f.dev_tsv.string() + " --out x") == 2);
    CHECK(run("train --train /no/such/file.tsv --dev " + f.dev_tsv.string() + " --out " +
              (kWork / "model_c").string()) != 0);
}

TEST_CASE("attribute writes one line per sentence plus a heatmap") {
    Fixture& f = fixture();
    fs::path small = kWork / "three.tsv";
    Dataset d;
    d.examples = {{"a superb day", 1}, {"a dreadful day", 0}, {"film was superb", 1}};
    write_tsv(small, d);
    fs::path out = kWork / "maps_lat.jsonl";
    REQUIRE(run("attribute --ckpt " + f.ckpt.string() + " --data " + small.string() +
                " --method lat --out " + out.string()) == 0);
    auto lines = read_jsonl(out);
    REQUIRE(lines.size() == 3);
    for (const auto& j : lines) {
        double total = 0.0;
        for (double v : j.at("scores").get<std::vector<double>>()) total += v;
        CHECK(std::fabs(total - 1.0) <= 1e-6);
    }
    CHECK(fs::exists(kWork / "heatmap.html"));
    CHECK(slurp(kWork / "heatmap.html").find("<html>") != std::string::npos);
    CHECK(fs::exists(out.string() + ".manifest.json"));

    CHECK(run("attribute --ckpt " + f.ckpt.string() + " --data " + small.string() +
              " --method nope --out " + (kWork / "x.jsonl").string()) == 2);
}

TEST_CASE("attribute --dims: gi equals gs times the embedding") {
    Fixture& f = fixture();
    fs::path small = kWork / "one.tsv";
    Dataset d;
    d.examples = {{"the crew was marvelous today", 1}};
    write_tsv(small, d);
    fs::path gs_out = kWork / "one_gs.jsonl", gi_out = kWork / "one_gi.jsonl";
    REQUIRE(run("attribute --ckpt " + f.ckpt.string() + " --data " + small.string() +
                " --method gs --dims --out " + gs_out.string()) == 0);
    REQUIRE(run("attribute --ckpt " + f.ckpt.string() + " --data " + small.string() +
                " --method gi --dims --out " + gi_out.string()) == 0);
    auto gs = read_jsonl(gs_out)[0], gi = read_jsonl(gi_out)[0];

    Checkpoint c = load_checkpoint(f.ckpt.string());
    auto ids = encode(c.vocab, d.examples[0].text, c.config.max_seq_len);
    ForwardTrace t = forward(c.config, c.params, ids, Mode::Eval);
    auto gs_dims = gs.at("dims").get<std::vector<std::vector<double>>>();
    auto gi_dims = gi.at("dims").get<std::vector<std::vector<double>>>();
    REQUIRE(gs_dims.size() == ids.size());
    for (std::size_t i = 0; i < gs_dims.size(); ++i) {
        for (std::size_t j = 0; j < gs_dims[i].size(); ++j) {
            CHECK(gi_dims[i][j] == gs_dims[i][j] * t.embedded.at(i, j));
        }
    }
}

TEST_CASE("ablate emits one row per method and k, rerun is byte-identical") {
    Fixture& f = fixture();
    fs::path out = kWork / "curves.csv";
    REQUIRE(run("ablate --ckpt " + f.ckpt.string() + " --data " + f.test_tsv.string() +
                " --kmax 5 --random-repeats 3 --seed 4 --out " + out.string()) == 0);
    std::istringstream in(slurp(out));
    std::string line;
    std::getline(in, line);
    CHECK(line == "method,k,accuracy,n");
    int rows = 0, k0 = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++rows;
        if (line.find(",0,") != std::string::npos) {
            ++k0;
            CHECK(line.find(",0,1,") != std::string::npos);  // k=0 accuracy is 1
        }
    }
    CHECK(rows == 30);  // (4 methods + random) x k=0..5
    CHECK(k0 == 5);

    fs::path out2 = kWork / "curves2.csv";
    REQUIRE(run("ablate --ckpt " + f.ckpt.string() + " --data " + f.test_tsv.string() +
                " --kmax 5 --random-repeats 3 --seed 4 --out " + out2.string()) == 0);
    CHECK(slurp(out) == slurp(out2));
}

TEST_CASE("correlate seeds mode with equal seeds gives r=1") {
    Fixture& f = fixture();
    fs::path out = kWork / "seeds.json";
    REQUIRE(run("correlate --mode seeds --train " + f.train_tsv.string() + " --dev " +
                f.dev_tsv.string() + " --test " + f.test_tsv.string() + " --config " +
                f.cfg_json.string() + " --seed-a 5 --seed-b 5 --methods gs,gi --min-count 3 --out " +
                out.string()) == 0);
    auto j = nlohmann::json::parse(slurp(out));
    for (const auto& m : {"gs", "gi"}) {
        auto mat = j.at(m).at("pearson");
        CHECK(std::fabs(mat[0][1].get<double>() - 1.0) <= 1e-9);
        CHECK(mat[0][1] == mat[1][0]);
        CHECK(mat[0][0] == 1.0);
    }
    CHECK(run("correlate --mode nope --out x.json") == 2);
}

TEST_CASE("rank filters by count and punctuation, flags malformed lines") {
    fs::path maps = kWork / "rank_in.jsonl";
    {
        std::ofstream out(maps, std::ios::binary);
        // "often": 5 occurrences, "rare": 4, "...": 5 (punctuation)
        for (int i = 0; i < 4; ++i) {
            out << R"({"method":"gs","class":1,"tokens":["[CLS]","often","rare","..."],)"
                << R"("scores":[0.0,0.9,0.5,0.7]})" << "\n";
        }
        out << R"({"method":"gs","class":1,"tokens":["[CLS]","often","..."],)"
            << R"("scores":[0.0,0.9,0.7]})" << "\n";
    }
    fs::path out = kWork / "rank_out.json";
    REQUIRE(run("rank --maps " + maps.string() + " --min-count 5 --k 5 --out " + out.string()) == 0);
    auto j = nlohmann::json::parse(slurp(out));
    CHECK(j.at("top").size() <= 5);
    bool has_often = false;
    for (const auto& w : j.at("top")) {
        CHECK(w.at("word") != "rare");   // below min-count
        CHECK(w.at("word") != "...");    // punctuation
        if (w.at("word") == "often") {
            has_often = true;
            CHECK(w.at("count") == 5);
            CHECK(std::fabs(w.at("mean").get<double>() - 0.9) < 1e-12);
        }
    }
    CHECK(has_often);

    fs::path bad = kWork / "rank_bad.jsonl";
    std::ofstream(bad) << R"({"method":"gs","class":1,"tokens":["[CLS]"],"scores":[0.0]})" << "\n"
                       << "not json\n";
    std::string cmd = std::string(ATTRIB_BIN) + " rank --maps " + bad.string() +
                      " --min-count 1 --k 3 --out " + (kWork / "bad_out.json").string() + " 2>" +
                      (kWork / "rank_err.txt").string();
    CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 2);
    CHECK(slurp(kWork / "rank_err.txt").find(":2:") != std::string::npos);
}

TEST_CASE("gradcheck exit codes") {
    CHECK(run("gradcheck --trials 2 --seed 11") == 0);
    CHECK(run("gradcheck --trials 0") == 2);
    CHECK(run("gradcheck --trials 2 --corrupt-vjp") == 1);
}

TEST_CASE("toygen emits a parseable balanced corpus") {
    fs::path out = kWork / "toy.tsv";
    REQUIRE(run("toygen --n 50 --seed 7 --out " + out.string()) == 0);
    Dataset d = load_tsv(out.string());
    REQUIRE(d.size() == 50);
    int pos = 0;
    for (const auto& ex : d.examples) pos += ex.label;
    CHECK(pos == 25);
}
