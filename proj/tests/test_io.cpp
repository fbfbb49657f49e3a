#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "softarm/artifact_io.hpp"
#include "softarm/errors.hpp"
#include "softarm/models.hpp"

using namespace softarm;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Checkpoint make_small_checkpoint() {
    DataGenConfig dcfg;
    dcfg.total_frames = 200;
    dcfg.seed = 33;
    const RawDataset ds = generate_dataset(default_plant_params(), dcfg);
    TrainConfig cfg;
    cfg.seed = 33;
    cfg.epochs_forward = 2;
    return train_forward(ds, cfg).checkpoint;
}

// Header is allowed to differ in its timestamp; parameter blocks must be
// byte-identical.
std::string params_section(const std::string& text) {
    const auto pos = text.find("params:\n");
    REQUIRE(pos != std::string::npos);
    return text.substr(pos);
}

}  // namespace

TEST_CASE("double formatting round-trips exactly") {
    rng::Engine e(3);
    for (int i = 0; i < 2000; ++i) {
        double v;
        switch (i % 4) {
            case 0: v = rng::uniform(e, -1e6, 1e6); break;
            case 1: v = rng::uniform(e, -1e-6, 1e-6); break;
            case 2: v = rng::gaussian(e) * std::pow(10.0, static_cast<double>(e() % 40) - 20.0); break;
            default: v = static_cast<double>(e()) / 7.0; break;
        }
        CHECK(io::parse_double(io::fmt(v), "v") == v);
    }
    CHECK(io::fmt(0.1) == "0.1");
    CHECK_THROWS_AS(io::parse_double("1.2.3", "v"), std::invalid_argument);
    CHECK_THROWS_AS(io::parse_double("", "v"), std::invalid_argument);
}

TEST_CASE("kv blocks preserve order and parse back") {
    io::KvBlock kv;
    kv.set("b", std::string("two"));
    kv.set("a", 1.5);
    kv.set("c.nested", std::int64_t{42});
    const std::string text = kv.serialize();
    CHECK(text == "b = two\na = 1.5\nc.nested = 42\n");
    const io::KvBlock back = io::KvBlock::parse_string(text);
    CHECK(back.get("b") == "two");
    CHECK(back.get_double("a") == 1.5);
    CHECK(back.get_int("c.nested") == 42);
    CHECK_THROWS_AS(back.get("missing"), std::invalid_argument);
}

TEST_CASE("checkpoint save/load round-trips parameter blocks byte-identically") {
    const Checkpoint ckpt = make_small_checkpoint();
    const std::string p1 = temp_path("softarm_ckpt_1.ckpt");
    const std::string p2 = temp_path("softarm_ckpt_2.ckpt");
    save_checkpoint(p1, ckpt);
    const Checkpoint loaded = load_checkpoint(p1);
    save_checkpoint(p2, loaded);

    CHECK(params_section(io::read_file(p1)) == params_section(io::read_file(p2)));
    CHECK(loaded.model_kind == ckpt.model_kind);
    CHECK(loaded.plant_fp == ckpt.plant_fp);
    CHECK(same_stats(loaded.stats, ckpt.stats));
    REQUIRE(loaded.blocks.size() == ckpt.blocks.size());
    for (std::size_t b = 0; b < ckpt.blocks.size(); ++b) {
        CHECK(loaded.blocks[b].name == ckpt.blocks[b].name);
        CHECK(loaded.blocks[b].w.a == ckpt.blocks[b].w.a);
    }

    // The reloaded model predicts identically.
    ForwardModel m1 = forward_from_checkpoint(ckpt);
    ForwardModel m2 = forward_from_checkpoint(loaded);
    ForwardPass ws;
    ForwardWindow w{};
    rng::Engine e(5);
    for (auto& row : w) {
        for (auto& v : row) v = rng::gaussian(e);
    }
    const auto a = forward_predict(m1, w, ws);
    const auto b = forward_predict(m2, w, ws);
    CHECK(a == b);

    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("unknown format versions are rejected by name") {
    const Checkpoint ckpt = make_small_checkpoint();
    const std::string path = temp_path("softarm_ckpt_vers.ckpt");
    save_checkpoint(path, ckpt);
    std::string text = io::read_file(path);
    const auto pos = text.find("softarm/1");
    text.replace(pos, 9, "softarm/9");
    io::write_file(path, text);
    try {
        load_checkpoint(path);
        FAIL("expected a version error");
    } catch (const VersionError& e) {
        CHECK(std::string(e.what()).find("softarm/9") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("truncated artifacts fail with a located parse error") {
    const Checkpoint ckpt = make_small_checkpoint();
    const std::string path = temp_path("softarm_ckpt_trunc.ckpt");
    save_checkpoint(path, ckpt);
    std::string text = io::read_file(path);
    text.resize(text.size() * 2 / 3);
    io::write_file(path, text);
    try {
        load_checkpoint(path);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line_no > 0);
        CHECK(e.file_name == path);
    }
    std::filesystem::remove(path);

    // Same for datasets.
    DataGenConfig dcfg;
    dcfg.total_frames = 100;
    const RawDataset ds = generate_dataset(default_plant_params(), dcfg);
    const std::string dpath = temp_path("softarm_ds_trunc.csv");
    save_dataset(dpath, ds);
    std::string dtext = io::read_file(dpath);
    dtext.resize(dtext.size() - 120);
    io::write_file(dpath, dtext);
    CHECK_THROWS_AS(load_dataset(dpath), ParseError);
    std::filesystem::remove(dpath);
}

TEST_CASE("corrupt rows report their line number") {
    DataGenConfig dcfg;
    dcfg.total_frames = 50;
    const RawDataset ds = generate_dataset(default_plant_params(), dcfg);
    const std::string path = temp_path("softarm_ds_corrupt.csv");
    save_dataset(path, ds);
    std::string text = io::read_file(path);
    // Damage a field in the middle of the data section.
    const auto pos = text.find("\n", text.find("data:") + 200);
    text.replace(pos + 1, 4, "oops");
    io::write_file(path, text);
    try {
        load_dataset(path);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line_no > 10);
    }
    std::filesystem::remove(path);
}

TEST_CASE("fingerprints are stable and parameter-sensitive") {
    const PlantParams a = default_plant_params();
    PlantParams b = a;
    CHECK(plant_fingerprint(a) == plant_fingerprint(b));
    b.actuator.c0 += 1e-12;
    CHECK(plant_fingerprint(a) != plant_fingerprint(b));
    CHECK(plant_fingerprint(a).size() == 16);
}
