#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dat/checkpoint.hpp"
#include "dat/config.hpp"
#include "dat/dataset.hpp"
#include "dat/metrics.hpp"
#include "dat/serialize.hpp"
#include "doctest.h"

using namespace dat;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("dat_test_" + std::to_string(uint64_t(::getpid())));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, uint32_t x) {
    v.push_back((unsigned char)(x >> 24));
    v.push_back((unsigned char)(x >> 16));
    v.push_back((unsigned char)(x >> 8));
    v.push_back((unsigned char)x);
}

// well-formed 2-image 2x3 IDX pair in `dir`
std::pair<std::string, std::string> small_idx(const TempDir& dir) {
    std::vector<unsigned char> img;
    push_be32(img, 0x00000803u);
    push_be32(img, 2);
    push_be32(img, 2);
    push_be32(img, 3);
    for (int i = 0; i < 12; ++i) img.push_back((unsigned char)(i * 20));
    std::vector<unsigned char> lab;
    push_be32(lab, 0x00000801u);
    push_be32(lab, 2);
    lab.push_back(1);
    lab.push_back(0);
    auto ip = dir.file("img.idx"), lp = dir.file("lab.idx");
    write_bytes(ip, img);
    write_bytes(lp, lab);
    return {ip, lp};
}

}  // namespace

TEST_CASE("load_idx parses a well-formed pair") {
    TempDir dir;
    auto [ip, lp] = small_idx(dir);
    auto ds = load_idx(ip, lp);
    CHECK(ds.n == 2);
    CHECK(ds.c == 1);
    CHECK(ds.h == 2);
    CHECK(ds.w == 3);
    CHECK(ds.labels == std::vector<int>{1, 0});
    CHECK(ds.num_classes == 2);
    CHECK(ds.images[0] == 0.0f);
    CHECK(ds.images[1] == doctest::Approx(20.0f / 255.0f));
}

TEST_CASE("load_idx rejects malformed containers with byte offsets") {
    TempDir dir;
    auto [ip, lp] = small_idx(dir);

    SUBCASE("bad image magic") {
        std::vector<unsigned char> img;
        push_be32(img, 0x00000804u);
        write_bytes(dir.file("bad.idx"), img);
        CHECK_THROWS_WITH_AS(load_idx(dir.file("bad.idx"), lp),
                             doctest::Contains("bad image magic 0x00000804"), std::runtime_error);
    }
    SUBCASE("truncated header") {
        write_bytes(dir.file("bad.idx"), {0x00, 0x00, 0x08, 0x03, 0x00});
        CHECK_THROWS_WITH_AS(load_idx(dir.file("bad.idx"), lp),
                             doctest::Contains("truncated at byte offset 4"), std::runtime_error);
    }
    SUBCASE("truncated pixel payload") {
        std::vector<unsigned char> img;
        push_be32(img, 0x00000803u);
        push_be32(img, 2);
        push_be32(img, 2);
        push_be32(img, 3);
        img.push_back(0);
        write_bytes(dir.file("bad.idx"), img);
        CHECK_THROWS_WITH_AS(load_idx(dir.file("bad.idx"), lp),
                             doctest::Contains("truncated pixel payload"), std::runtime_error);
    }
    SUBCASE("bad label magic") {
        std::vector<unsigned char> lab;
        push_be32(lab, 0x00000803u);
        write_bytes(dir.file("badlab.idx"), lab);
        CHECK_THROWS_WITH_AS(load_idx(ip, dir.file("badlab.idx")),
                             doctest::Contains("bad label magic"), std::runtime_error);
    }
    SUBCASE("label count mismatch") {
        std::vector<unsigned char> lab;
        push_be32(lab, 0x00000801u);
        push_be32(lab, 3);
        lab.insert(lab.end(), {0, 1, 0});
        write_bytes(dir.file("badlab.idx"), lab);
        CHECK_THROWS_WITH_AS(load_idx(ip, dir.file("badlab.idx")),
                             doctest::Contains("does not match image count"), std::runtime_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_WITH_AS(load_idx(dir.file("nope.idx"), lp), doctest::Contains("cannot open"),
                             std::runtime_error);
    }
    SUBCASE("implausible dims") {
        std::vector<unsigned char> img;
        push_be32(img, 0x00000803u);
        push_be32(img, 1);
        push_be32(img, 100000);
        push_be32(img, 3);
        write_bytes(dir.file("bad.idx"), img);
        CHECK_THROWS_WITH_AS(load_idx(dir.file("bad.idx"), lp),
                             doctest::Contains("implausible dims"), std::runtime_error);
    }
}

TEST_CASE("checkpoint round-trips bitwise and rejects garbage") {
    TempDir dir;
    NamedTensors ts;
    ts.emplace_back("a", make_tensor<float>({2, 3}, {1, -2, 3.5f, 0, 1e-20f, 7}));
    ts.emplace_back("b.w", make_tensor<float>({4}, {0.1f, 0.2f, 0.3f, 0.4f}));
    const auto path = dir.file("m.ckpt");
    save_checkpoint(path, ts);
    auto back = load_checkpoint(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].first == "a");
    CHECK(back[0].second->shape == Shape{2, 3});
    CHECK(back[0].second->value == ts[0].second->value);
    CHECK(back[1].first == "b.w");
    CHECK(back[1].second->value == ts[1].second->value);
    CHECK_THROWS_AS(checkpoint_tensor(back, "missing"), std::runtime_error);

    // header starts with the 8-byte magic "DATCKPT1"
    std::ifstream f(path, std::ios::binary);
    char magic[9] = {};
    f.read(magic, 8);
    CHECK(std::string(magic) == "DATCKPT1");

    write_bytes(dir.file("junk.ckpt"), {'N', 'O', 'P', 'E', '1', '2', '3', '4', 0});
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.file("junk.ckpt")),
                         doctest::Contains("magic mismatch"), std::runtime_error);

    // truncated payload
    std::vector<unsigned char> whole;
    {
        std::ifstream g(path, std::ios::binary);
        whole.assign(std::istreambuf_iterator<char>(g), {});
    }
    whole.resize(whole.size() - 3);
    write_bytes(dir.file("trunc.ckpt"), whole);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.file("trunc.ckpt")),
                         doctest::Contains("truncated payload"), std::runtime_error);
}

TEST_CASE("model checkpoints survive a disk round-trip") {
    TempDir dir;
    auto d = make_discretizer<float>(4, 8, 16, 3, 8, 61);
    save_checkpoint(dir.file("d.ckpt"), discretizer_state(d));
    auto d2 = discretizer_from_state(load_checkpoint(dir.file("d.ckpt")));
    auto pa = discretizer_params(d), pb = discretizer_params(d2);
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
}

TEST_CASE("config parse, canonical form, hash") {
    auto cfg = parse_config_text("# comment\nmode = dat\nalpha=0.2\n\nseed=9 # trailing\n");
    CHECK(cfg.mode == "dat");
    CHECK(cfg.alpha == doctest::Approx(0.2));
    CHECK(cfg.seed == 9);

    CHECK_THROWS_WITH_AS(parse_config_text("nonsense=1\n"), doctest::Contains("unknown key"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_config_text("just a line\n"), doctest::Contains("expected key=value"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_config_text("epochs=many\n"), doctest::Contains("bad value"),
                         std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("sign_grad=perhaps\n"), std::invalid_argument);

    // canonical form is sorted and insensitive to input ordering
    auto a = parse_config_text("alpha=0.2\nmode=dat\n");
    auto b = parse_config_text("mode=dat\nalpha=0.2\n");
    CHECK(canonical_config(a) == canonical_config(b));
    CHECK(config_hash(a) == config_hash(b));
    auto lines = canonical_config(a);
    CHECK(lines.find("alpha=") < lines.find("mode="));

    auto c = parse_config_text("alpha=0.3\nmode=dat\n");
    CHECK(config_hash(a) != config_hash(c));
    CHECK(config_hash(a).size() == 16);
}

TEST_CASE("synthetic dataset is balanced, bounded, deterministic") {
    auto ds = synthetic_dataset(200, 10, 77);
    CHECK(ds.n == 200);
    CHECK(ds.c == 3);
    CHECK(ds.h == 32);
    CHECK(ds.w == 32);
    std::vector<int> counts(10, 0);
    for (int l : ds.labels) ++counts[size_t(l)];
    for (int c : counts) CHECK(c == 20);
    for (float v : ds.images) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    auto ds2 = synthetic_dataset(200, 10, 77);
    CHECK(ds.images == ds2.images);
    CHECK(ds.labels == ds2.labels);
    auto ds3 = synthetic_dataset(200, 10, 78);
    CHECK(ds.images != ds3.images);
    CHECK_THROWS_AS(synthetic_dataset(0, 10, 1), std::invalid_argument);
}

TEST_CASE("metrics jsonl round-trip") {
    TempDir dir;
    MetricsRecord r;
    r.run_name = "t";
    r.config_hash = "deadbeefdeadbeef";
    r.epoch = 3;
    r.values["val_accuracy"] = 0.875;
    r.values["train_loss"] = 1.25;
    {
        MetricsWriter w(dir.file("m.jsonl"), dir.file("m.csv"));
        w.write(r);
    }
    auto recs = read_metrics_jsonl(dir.file("m.jsonl"));
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].run_name == "t");
    CHECK(recs[0].epoch == 3);
    CHECK(recs[0].values.at("val_accuracy") == 0.875);
    CHECK(recs[0].timestamp_ms == 0);  // wall clock off by default
    std::ifstream csv(dir.file("m.csv"));
    std::string header, row;
    std::getline(csv, header);
    CHECK(header == "epoch,metric,value");
    std::getline(csv, row);
    CHECK(row == "3,train_loss,1.25");
}
