#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "gifdl/dataset.hpp"
#include "gifdl/errors.hpp"

using namespace gifdl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("gifdl_dataset_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ImageGray gradient_image(int h, int w) {
    ImageGray img(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            img.at(i, j) = static_cast<std::uint8_t>((i * 7 + j * 3) % 256);
    return img;
}

// Scripted backend: accepted cfg values get a one-pixel nudge off the base
// image, cfg keys listed in `wild` come back far outside any sane tau.
struct StubBackend : T2IBackend {
    ImageGray base = gradient_image(16, 16);
    std::set<long long> wild;
    int calls = 0;

    ImageGray generate(const GenerationRequest& req) override {
        ++calls;
        ImageGray img = base;
        long long key = cfg_key(req.cfg_scale);
        if (key == cfg_key(7.5)) return img;
        if (wild.count(key)) {
            for (int i = 0; i < img.height; ++i)
                for (int j = 0; j < img.width; ++j)
                    img.at(i, j) = static_cast<std::uint8_t>(255 - img.at(i, j));
            return img;
        }
        img.at(0, 0) = static_cast<std::uint8_t>((img.at(0, 0) + key % 13 + 1) % 256);
        return img;
    }
};

std::set<long long> key_set(const std::vector<double>& cfgs) {
    std::set<long long> out;
    for (double c : cfgs) out.insert(cfg_key(c));
    return out;
}

}  // namespace

TEST_CASE("default sweep brackets the base cfg and skips it") {
    auto sweep = default_cfg_sweep();
    CHECK(sweep.size() == 10);
    auto keys = key_set(sweep);
    CHECK(keys.size() == 10);
    CHECK(keys.count(cfg_key(kDefaultBaseCfg)) == 0);
    CHECK(*keys.begin() == cfg_key(7.4950));
    CHECK(*keys.rbegin() == cfg_key(7.5050));
    // contiguous 0.0010 lattice around the hole at 7.5000
    for (long long k = cfg_key(7.4950); k <= cfg_key(7.5050); k += 10)
        CHECK(keys.count(k) == (k == cfg_key(7.5000) ? 0u : 1u));
    CHECK(format_cfg(7.495) == "7.4950");
    CHECK(cfg_key(7.4950) != cfg_key(7.4960));
    CHECK(cfg_key(7.4950 + 1e-6) == cfg_key(7.4950));
}

TEST_CASE("build accepts a clean sweep in order") {
    StubBackend backend;
    auto sweep = default_cfg_sweep();
    auto set = build_fluctuation_set(backend, "a quiet lake", 7, 7.5, sweep, 25.0, 30);
    CHECK(set.fluctuations.size() == 10);
    CHECK(set.cfg_values.size() == 11);
    CHECK(set.cfg_values[0] == 7.5);
    for (std::size_t k = 0; k < sweep.size(); ++k)
        CHECK(cfg_key(set.cfg_values[k + 1]) == cfg_key(sweep[k]));
    CHECK(set.rejections == 0);
    CHECK(set.tau == 25.0);
    CHECK(backend.calls == 11);
    CHECK_NOTHROW(validate_fluctuation_set(set));
}

TEST_CASE("rejected cfg is replaced by the next value outward") {
    StubBackend backend;
    backend.wild.insert(cfg_key(7.4980));
    auto set = build_fluctuation_set(backend, "p", 1, 7.5, default_cfg_sweep(), 25.0, 30);
    CHECK(set.fluctuations.size() == 10);
    CHECK(set.rejections == 1);
    auto keys = key_set(set.cfg_values);
    CHECK(keys.count(cfg_key(7.4980)) == 0);
    CHECK(keys.count(cfg_key(7.5060)) == 1);  // first replacement extends above
    // replacement lands at the end of the generation order
    CHECK(cfg_key(set.cfg_values.back()) == cfg_key(7.5060));
}

TEST_CASE("replacements alternate above and below the sweep") {
    StubBackend backend;
    backend.wild.insert(cfg_key(7.4980));
    backend.wild.insert(cfg_key(7.5020));
    auto set = build_fluctuation_set(backend, "p", 1, 7.5, default_cfg_sweep(), 25.0, 30);
    CHECK(set.rejections == 2);
    auto keys = key_set(set.cfg_values);
    CHECK(keys.count(cfg_key(7.5060)) == 1);
    CHECK(keys.count(cfg_key(7.4940)) == 1);
}

TEST_CASE("exhausted retries report how many members were accepted") {
    StubBackend backend;
    for (double c : default_cfg_sweep())
        if (cfg_key(c) != cfg_key(7.4950) && cfg_key(c) != cfg_key(7.4960) &&
            cfg_key(c) != cfg_key(7.4970))
            backend.wild.insert(cfg_key(c));
    // every replacement cfg is wild too: nothing outside the original sweep works
    for (long long k = cfg_key(7.4900); k <= cfg_key(7.5200); k += 10)
        if (!key_set({7.4950, 7.4960, 7.4970, 7.5000}).count(k)) backend.wild.insert(k);

    try {
        build_fluctuation_set(backend, "p", 1, 7.5, default_cfg_sweep(), 25.0, 5);
        FAIL("expected GenerationExhausted");
    } catch (const GenerationExhausted& e) {
        CHECK(e.accepted == 3);
        CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
}

TEST_CASE("build rejects malformed sweeps up front") {
    StubBackend backend;
    CHECK_THROWS_AS(build_fluctuation_set(backend, "p", 1, 7.5, {}, 25.0, 0), ConfigError);
    CHECK_THROWS_AS(build_fluctuation_set(backend, "p", 1, 7.5, {7.5}, 25.0, 0), ConfigError);
    CHECK_THROWS_AS(build_fluctuation_set(backend, "p", 1, 7.5, {7.4, 7.4}, 25.0, 0),
                    ConfigError);
    CHECK_THROWS_AS(build_fluctuation_set(backend, "p", 1, 7.5, {-0.1}, 25.0, 0), ConfigError);
    CHECK_THROWS_AS(build_fluctuation_set(backend, "p", 1, 7.5, {7.4}, -1.0, 0), ConfigError);
    CHECK_THROWS_AS(build_fluctuation_set(backend, "p", 1, 7.5, {7.4}, 25.0, -1), ConfigError);
    CHECK(backend.calls == 0);
}

TEST_CASE("tau zero demands exact reproduction") {
    // a noisy backend never reproduces the cover bit for bit, so every
    // candidate is rejected and the build runs out of budget
    ProceduralBackend backend(16, 16);
    CHECK_THROWS_AS(
        build_fluctuation_set(backend, "strict", 4, 7.5, {7.4990, 7.5010}, 0.0, 6),
        GenerationExhausted);

    // an exact backend passes: every candidate equals the cover
    struct EchoBackend : T2IBackend {
        ImageGray generate(const GenerationRequest&) override {
            return gradient_image(16, 16);
        }
    } echo;
    auto set = build_fluctuation_set(echo, "strict", 4, 7.5, {7.4990, 7.5010}, 0.0, 0);
    CHECK(set.fluctuations.size() == 2);
    CHECK(set.tau == 0.0);
}

TEST_CASE("backend shape drift inside a build is an error") {
    struct DriftBackend : T2IBackend {
        ImageGray generate(const GenerationRequest& req) override {
            int side = cfg_key(req.cfg_scale) == cfg_key(7.5) ? 16 : 18;
            return gradient_image(side, side);
        }
    } backend;
    CHECK_THROWS_AS(build_fluctuation_set(backend, "p", 1, 7.5, {7.4990}, 25.0, 0),
                    ShapeError);
}

TEST_CASE("tiny covers are rejected at the source") {
    struct TinyBackend : T2IBackend {
        ImageGray generate(const GenerationRequest&) override { return ImageGray(8, 8); }
    } backend;
    CHECK_THROWS_AS(build_fluctuation_set(backend, "p", 1, 7.5, {7.4990}, 25.0, 0),
                    ShapeError);
}

TEST_CASE("procedural backend is deterministic and cfg-local") {
    ProceduralBackend pb(64, 64);
    GenerationRequest req{"a harbor at dawn", 42, 7.5};
    ImageGray a = pb.generate(req);
    ImageGray b = pb.generate(req);
    REQUIRE(a.same_shape(b));
    CHECK(a.pixels == b.pixels);

    ImageGray other_seed = pb.generate({"a harbor at dawn", 43, 7.5});
    CHECK(other_seed.pixels != a.pixels);
    ImageGray other_prompt = pb.generate({"a harbor at dusk", 42, 7.5});
    CHECK(other_prompt.pixels != a.pixels);

    // nearby cfg values share the content and differ only in fine noise
    ImageGray near = pb.generate({"a harbor at dawn", 42, 7.4990});
    CHECK(near.pixels != a.pixels);
    CHECK(mse(a, near) < 25.0);
    CHECK(mse(a, near) > 0.0);

    CHECK_THROWS_AS(pb.generate({"p", 1, 0.0}), DomainError);
    CHECK_THROWS_AS(pb.generate({"p", 1, -2.0}), DomainError);
    CHECK_THROWS_AS(ProceduralBackend(8, 64), ConfigError);
    CHECK_THROWS_AS(ProceduralBackend(64, 8), ConfigError);
}

TEST_CASE("procedural backend feeds a full default-sweep build") {
    ProceduralBackend pb(32, 32);
    auto set = build_fluctuation_set(pb, "hillside village", 9, kDefaultBaseCfg,
                                     default_cfg_sweep(), 25.0, 30);
    CHECK(set.fluctuations.size() == 10);
    CHECK(set.rejections == 0);
    auto keys = key_set(set.cfg_values);
    CHECK(keys.size() == 11);
}

TEST_CASE("recorded backend replays fixtures and names what is missing") {
    auto dir = fresh_dir("recorded");
    ProceduralBackend pb(32, 32);
    const std::string prompt = "stone bridge";
    const std::uint64_t seed = 11;
    std::vector<double> cfgs = default_cfg_sweep();
    cfgs.insert(cfgs.begin(), kDefaultBaseCfg);
    for (double c : cfgs) {
        GenerationRequest req{prompt, seed, c};
        save_image(pb.generate(req), RecordedBackend::recorded_path(dir, req));
    }

    RecordedBackend rb(dir);
    auto set = build_fluctuation_set(rb, prompt, seed, kDefaultBaseCfg,
                                     default_cfg_sweep(), 25.0, 0);
    CHECK(set.fluctuations.size() == 10);
    ImageGray direct = pb.generate({prompt, seed, kDefaultBaseCfg});
    CHECK(set.cover.pixels == direct.pixels);

    fs::remove(RecordedBackend::recorded_path(dir, {prompt, seed, 7.4980}));
    try {
        build_fluctuation_set(rb, prompt, seed, kDefaultBaseCfg, default_cfg_sweep(), 25.0, 0);
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        std::string msg = e.what();
        CHECK(msg.find("7.4980") != std::string::npos);
        CHECK(msg.find("11") != std::string::npos);
    }
    CHECK_THROWS_AS(RecordedBackend(dir / "nope"), ConfigError);
}

TEST_CASE("manifest survives a round trip with hostile prompts") {
    auto dir = fresh_dir("manifest");
    ProceduralBackend pb(32, 32);
    DatasetManifest m;
    m.name = "toy";
    m.role = "train";
    m.height = 32;
    m.width = 32;
    std::vector<std::string> prompts = {"plain prompt", "tab\there", "line\nbreak \\ slash"};
    for (int k = 0; k < 3; ++k) {
        auto set = build_fluctuation_set(pb, prompts[k], 100 + k, kDefaultBaseCfg,
                                         default_cfg_sweep(), 25.0, 30);
        m.entries.push_back(save_fluctuation_set(set, dir, "img" + std::to_string(k)));
    }

    auto path = dir / "train.tsv";
    save_manifest(m, path);
    auto back = load_manifest(path);
    CHECK(back.name == m.name);
    CHECK(back.role == m.role);
    CHECK(back.height == 32);
    CHECK(back.width == 32);
    REQUIRE(back.entries.size() == 3);
    for (int k = 0; k < 3; ++k) {
        CHECK(back.entries[k].cover_path == m.entries[k].cover_path);
        CHECK(back.entries[k].flu_paths == m.entries[k].flu_paths);
        CHECK(back.entries[k].prompt == prompts[k]);
        CHECK(back.entries[k].seed == m.entries[k].seed);
        CHECK(back.entries[k].tau == m.entries[k].tau);
        REQUIRE(back.entries[k].cfg_values.size() == m.entries[k].cfg_values.size());
        for (std::size_t i = 0; i < m.entries[k].cfg_values.size(); ++i)
            CHECK(cfg_key(back.entries[k].cfg_values[i]) ==
                  cfg_key(m.entries[k].cfg_values[i]));
    }

    CHECK_NOTHROW(verify_manifest(back, dir));

    auto set1 = load_entry(back, 1, dir);
    CHECK(set1.prompt == "tab\there");
    CHECK(set1.fluctuations.size() == 10);
    ImageGray direct = pb.generate({prompts[1], 101, kDefaultBaseCfg});
    CHECK(set1.cover.pixels == direct.pixels);
    CHECK_THROWS_AS(load_entry(back, 3, dir), DomainError);
}

TEST_CASE("manifest verification names broken files") {
    auto dir = fresh_dir("verify");
    ProceduralBackend pb(32, 32);
    DatasetManifest m;
    m.name = "v";
    m.role = "val";
    m.height = 32;
    m.width = 32;
    auto set = build_fluctuation_set(pb, "q", 5, kDefaultBaseCfg, {7.4990, 7.5010}, 25.0, 4);
    m.entries.push_back(save_fluctuation_set(set, dir, "e0"));
    CHECK_NOTHROW(verify_manifest(m, dir));

    SUBCASE("missing file") {
        fs::remove(dir / m.entries[0].flu_paths[1]);
        CHECK_THROWS_AS(verify_manifest(m, dir), IoError);
    }
    SUBCASE("truncated file") {
        std::ofstream(dir / m.entries[0].cover_path, std::ios::trunc) << "P5 garbage";
        CHECK_THROWS_AS(verify_manifest(m, dir), ParseError);
    }
    SUBCASE("wrong size") {
        save_image(gradient_image(16, 16), dir / m.entries[0].flu_paths[0]);
        try {
            verify_manifest(m, dir);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("entry 0") != std::string::npos);
        }
    }
}

TEST_CASE("manifest loader rejects garbage") {
    auto dir = fresh_dir("badmanifest");
    auto write = [&](const std::string& name, const std::string& body) {
        std::ofstream(dir / name) << body;
        return dir / name;
    };
    CHECK_THROWS_AS(load_manifest(dir / "missing.tsv"), IoError);
    CHECK_THROWS_AS(load_manifest(write("magic.tsv", "something else\n")), ParseError);
    CHECK_THROWS_AS(load_manifest(write("role.tsv",
                                        "gifdl-manifest\tv1\nname\tx\nrole\tbogus\n"
                                        "size\t32\t32\n")),
                    ParseError);
    CHECK_THROWS_AS(load_manifest(write("small.tsv",
                                        "gifdl-manifest\tv1\nname\tx\nrole\ttrain\n"
                                        "size\t8\t32\n")),
                    ParseError);
    CHECK_THROWS_AS(load_manifest(write("fields.tsv",
                                        "gifdl-manifest\tv1\nname\tx\nrole\ttrain\n"
                                        "size\t32\t32\nentry\tc.pgm\tf.pgm\n")),
                    ParseError);
    CHECK_THROWS_AS(load_manifest(write("counts.tsv",
                                        "gifdl-manifest\tv1\nname\tx\nrole\ttrain\n"
                                        "size\t32\t32\n"
                                        "entry\tc.pgm\tf.pgm\tp\t1\t7.5000\t25\n")),
                    ParseError);
    CHECK_THROWS_AS(load_manifest(write("number.tsv",
                                        "gifdl-manifest\tv1\nname\tx\nrole\ttrain\n"
                                        "size\t32\t32\n"
                                        "entry\tc.pgm\tf.pgm\tp\tnotanumber\t7.5000,7.4990\t25\n")),
                    ParseError);
}

TEST_CASE("splits are reproducible, disjoint and sized as asked") {
    DatasetManifest m;
    m.name = "pool";
    m.role = "train";
    m.height = 64;
    m.width = 64;
    for (int k = 0; k < 10; ++k) {
        ManifestEntry e;
        e.cover_path = "c" + std::to_string(k) + ".pgm";
        e.flu_paths = {"f" + std::to_string(k) + ".pgm"};
        e.prompt = "p";
        e.seed = static_cast<std::uint64_t>(k);
        e.cfg_values = {7.5, 7.4990};
        e.tau = 25.0;
        m.entries.push_back(e);
    }

    auto parts = split_manifest(m, 4, 1, 5, 77);
    CHECK(parts[0].entries.size() == 4);
    CHECK(parts[1].entries.size() == 1);
    CHECK(parts[2].entries.size() == 5);
    CHECK(parts[0].role == "train");
    CHECK(parts[1].role == "val");
    CHECK(parts[2].role == "test");
    CHECK(parts[0].name == "pool-train");
    CHECK(parts[0].height == 64);

    std::set<std::string> seen;
    for (const auto& part : parts)
        for (const auto& e : part.entries) CHECK(seen.insert(e.cover_path).second);
    CHECK(seen.size() == 10);

    auto again = split_manifest(m, 4, 1, 5, 77);
    for (int s = 0; s < 3; ++s) {
        REQUIRE(again[s].entries.size() == parts[s].entries.size());
        for (std::size_t i = 0; i < parts[s].entries.size(); ++i)
            CHECK(again[s].entries[i].cover_path == parts[s].entries[i].cover_path);
    }

    auto other = split_manifest(m, 4, 1, 5, 78);
    bool any_diff = false;
    for (int s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < parts[s].entries.size(); ++i)
            any_diff |= other[s].entries[i].cover_path != parts[s].entries[i].cover_path;
    CHECK(any_diff);

    CHECK_THROWS_AS(split_manifest(m, 5, 3, 3, 1), ConfigError);
    CHECK_THROWS_AS(split_manifest(m, -1, 1, 1, 1), ConfigError);
    auto partial = split_manifest(m, 2, 0, 3, 1);
    CHECK(partial[1].entries.empty());
}

TEST_CASE("split handles a full-scale pool") {
    DatasetManifest m;
    m.name = "big";
    m.role = "train";
    m.height = 64;
    m.width = 64;
    for (int k = 0; k < 10000; ++k) {
        ManifestEntry e;
        e.cover_path = std::to_string(k);
        e.cfg_values = {7.5, 7.4990};
        e.flu_paths = {"f"};
        e.tau = 25.0;
        m.entries.push_back(e);
    }
    auto parts = split_manifest(m, 4000, 1000, 5000, 3);
    CHECK(parts[0].entries.size() == 4000);
    CHECK(parts[1].entries.size() == 1000);
    CHECK(parts[2].entries.size() == 5000);
    std::set<std::string> seen;
    for (const auto& part : parts)
        for (const auto& e : part.entries) seen.insert(e.cover_path);
    CHECK(seen.size() == 10000);
}

TEST_CASE("http backend talks to a live server and retries") {
    httplib::Server srv;
    std::atomic<int> hits{0};
    std::atomic<int> fail_first{0};
    srv.Post("/generate", [&](const httplib::Request& rq, httplib::Response& rs) {
        int n = hits.fetch_add(1);
        if (n < fail_first.load()) {
            rs.status = 500;
            return;
        }
        auto j = nlohmann::json::parse(rq.body);
        ProceduralBackend pb(32, 32);
        GenerationRequest req{j.at("prompt").get<std::string>(),
                              j.at("seed").get<std::uint64_t>(),
                              j.at("cfg_scale").get<double>()};
        rs.set_content(encode_pgm(pb.generate(req)), "image/x-portable-graymap");
    });
    int port = srv.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();

    HttpBackendConfig cfg;
    cfg.port = port;
    cfg.timeout_s = 5.0;

    SUBCASE("success matches the procedural source") {
        HttpBackend hb(cfg);
        GenerationRequest req{"river bend", 21, 7.4990};
        ImageGray got = hb.generate(req);
        ImageGray want = ProceduralBackend(32, 32).generate(req);
        CHECK(got.pixels == want.pixels);
    }
    SUBCASE("persistent failure surfaces as a backend error") {
        fail_first = 1000;
        cfg.retries = 2;
        HttpBackend hb(cfg);
        int before = hits.load();
        try {
            hb.generate({"p", 1, 7.5});
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            std::string msg = e.what();
            CHECK(msg.find("3 attempt(s)") != std::string::npos);
            CHECK(msg.find("500") != std::string::npos);
        }
        CHECK(hits.load() - before == 3);
    }
    SUBCASE("transient failure is retried to success") {
        hits = 0;
        fail_first = 1;
        cfg.retries = 1;
        HttpBackend hb(cfg);
        ImageGray got = hb.generate({"p", 1, 7.5});
        CHECK(got.height == 32);
        CHECK(hits.load() == 2);
    }

    srv.stop();
    server.join();

    CHECK_THROWS_AS(HttpBackend(HttpBackendConfig{}), ConfigError);  // port 0
}

TEST_CASE("dead endpoint fails with a transport error after retries") {
    HttpBackendConfig cfg;
    cfg.port = 1;  // nothing listens there
    cfg.retries = 0;
    cfg.timeout_s = 0.5;
    HttpBackend hb(cfg);
    CHECK_THROWS_AS(hb.generate({"p", 1, 7.5}), BackendError);
}
