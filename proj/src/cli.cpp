#include "gifdl/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gifdl/dataset.hpp"
#include "gifdl/embedding.hpp"
#include "gifdl/errors.hpp"
#include "gifdl/evaluation.hpp"
#include "gifdl/rng.hpp"
#include "gifdl/stc.hpp"
#include "gifdl/training.hpp"
#include "gifdl/unet.hpp"
#include "gifdl/volatility.hpp"

namespace gifdl {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- run log

struct RunLog {
    std::string command;
    std::uint64_t seed = 0;
    bool dry_run = false;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::map<std::string, std::string> config;  // full effective value set
    std::map<std::string, std::string> stats;
};

std::string config_hash(const std::map<std::string, std::string>& kv) {
    std::string blob;
    for (const auto& [k, v] : kv) {
        blob += k;
        blob += '=';
        blob += v;
        blob += '\n';
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(blob)));
    return buf;
}

void echo_config(const RunLog& log) {
    std::cout << "gifdl " << log.command << " (v" << kToolVersion << ")\n";
    for (const auto& [k, v] : log.config) std::cout << "  " << k << " = " << v << "\n";
    std::cout << "  config_hash = " << config_hash(log.config) << "\n";
}

void write_run_manifest(const RunLog& log, const fs::path& path) {
    nlohmann::json j;
    j["tool"] = "gifdl";
    j["version"] = kToolVersion;
    j["command"] = log.command;
    j["seed"] = log.seed;
    j["dry_run"] = log.dry_run;
    j["inputs"] = log.inputs;
    j["outputs"] = log.outputs;
    j["config"] = log.config;
    j["config_hash"] = config_hash(log.config);
    if (!log.stats.empty()) j["stats"] = log.stats;

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot write run manifest: " + tmp.string());
        out << j.dump(2) << '\n';
        if (!out.flush()) throw IoError("short write on run manifest: " + tmp.string());
    }
    fs::rename(tmp, path);
    std::cout << "  run_manifest = " << path.string() << "\n";
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// --------------------------------------------------------------- backends

HttpBackendConfig parse_endpoint(std::string s) {
    const std::string orig = s;
    if (s.rfind("http://", 0) == 0) s = s.substr(7);
    HttpBackendConfig c;
    auto slash = s.find('/');
    if (slash != std::string::npos) {
        c.path = s.substr(slash);
        s = s.substr(0, slash);
    }
    auto colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
        throw ConfigError("endpoint must look like host:port[/path]: " + orig);
    c.host = s.substr(0, colon);
    try {
        std::size_t used = 0;
        c.port = std::stoi(s.substr(colon + 1), &used);
        if (used != s.size() - colon - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw ConfigError("endpoint port is not a number: " + orig);
    }
    return c;
}

// Symmetric cfg lattice around base in 0.0010 steps, base excluded. For the
// stock base 7.5 and n = 10 this reproduces the default sweep.
std::vector<double> make_sweep(double base, int n) {
    if (n < 1) throw ConfigError("fluctuation count must be >= 1");
    std::vector<double> sweep;
    const int down = n / 2;
    for (int k = down; k >= 1; --k) {
        double v = base - 0.0010 * k;
        if (v > 0.0) sweep.push_back(v);
    }
    int k_up = 0;
    while (static_cast<int>(sweep.size()) < n) sweep.push_back(base + 0.0010 * ++k_up);
    return sweep;
}

// --------------------------------------------------------------- messages

std::string read_binary(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_binary(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw IoError("short write on " + path.string());
}

// 32-bit big-endian bit-length header followed by the payload bytes,
// MSB-first. The syndrome coder zero-pads the tail.
std::vector<std::uint8_t> frame_message(const std::string& bytes, std::size_t capacity) {
    const std::size_t body_bits = bytes.size() * 8;
    if (32 + body_bits > capacity)
        throw PayloadError("message needs " + std::to_string(32 + body_bits) +
                           " bits (32-bit header + " + std::to_string(bytes.size()) +
                           " bytes) but this cover/payload carries only " +
                           std::to_string(capacity) +
                           "; shrink the message or raise --payload");
    std::vector<std::uint8_t> bits;
    bits.reserve(32 + body_bits);
    const auto n = static_cast<std::uint32_t>(body_bits);
    for (int b = 31; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((n >> b) & 1));
    for (unsigned char ch : bytes)
        for (int b = 7; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((ch >> b) & 1));
    return bits;
}

std::string deframe_message(const std::vector<std::uint8_t>& bits) {
    if (bits.size() < 32)
        throw PayloadError("carrier holds " + std::to_string(bits.size()) +
                           " bits, too few for the 32-bit length header");
    std::uint64_t n = 0;
    for (int b = 0; b < 32; ++b) n = (n << 1) | bits[static_cast<std::size_t>(b)];
    if (n % 8 != 0 || 32 + n > bits.size())
        throw ParseError("length header claims " + std::to_string(n) +
                         " message bits but the carrier holds " +
                         std::to_string(bits.size() - 32) +
                         "; check that --payload and --h match the embedding run");
    std::string out(n / 8, '\0');
    for (std::size_t i = 0; i < n; ++i)
        if (bits[32 + i])
            out[i / 8] = static_cast<char>(out[i / 8] | (0x80 >> (i % 8)));
    return out;
}

// ---------------------------------------------------------------- dataset

struct DatasetOpts {
    std::string prompts, out, backend = "procedural";
    std::string recorded_dir, endpoint, name = "dataset", split;
    std::uint64_t seed = 1;
    int seeds = 1, flus = 10, max_retries = 20, height = 64, width = 64;
    double tau = 25.0, base_cfg = kDefaultBaseCfg;
    bool dry_run = false;
    std::string run_manifest;
};

std::vector<std::string> read_prompts(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read prompts file: " + path.string());
    std::vector<std::string> prompts;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) prompts.push_back(line);
    }
    if (prompts.empty()) throw ConfigError("prompts file is empty: " + path.string());
    return prompts;
}

void cmd_dataset(const DatasetOpts& o, bool endpoint_from_env) {
    if (o.seeds < 1) throw ConfigError("--seeds must be >= 1");
    if (o.flus < 1) throw ConfigError("--flus must be >= 1");
    if (o.tau < 0.0) throw ConfigError("--tau must be >= 0");
    if (o.max_retries < 0) throw ConfigError("--max-retries must be >= 0");
    if (o.backend != "procedural" && o.backend != "recorded" && o.backend != "http")
        throw ConfigError("--backend must be procedural, recorded or http");
    if (o.backend == "recorded" && o.recorded_dir.empty())
        throw ConfigError("recorded backend needs --recorded-dir");
    if (o.backend == "http" && o.endpoint.empty())
        throw ConfigError("http backend needs --endpoint or GIFDL_ENDPOINT");

    int n_train = -1, n_val = -1, n_test = -1;
    if (!o.split.empty()) {
        if (std::sscanf(o.split.c_str(), "%d,%d,%d", &n_train, &n_val, &n_test) != 3)
            throw ConfigError("--split must look like train,val,test counts: " + o.split);
    }

    const auto prompts = read_prompts(o.prompts);
    const auto sweep = make_sweep(o.base_cfg, o.flus);
    const std::size_t planned = prompts.size() * static_cast<std::size_t>(o.seeds);

    RunLog log;
    log.command = "dataset";
    log.seed = o.seed;
    log.dry_run = o.dry_run;
    log.inputs = {o.prompts};
    log.config = {{"prompts", o.prompts},
                  {"out", o.out},
                  {"backend", o.backend},
                  {"name", o.name},
                  {"seeds_per_prompt", std::to_string(o.seeds)},
                  {"seed", std::to_string(o.seed)},
                  {"tau", fmt(o.tau)},
                  {"fluctuations", std::to_string(o.flus)},
                  {"base_cfg", fmt(o.base_cfg)},
                  {"max_retries", std::to_string(o.max_retries)},
                  {"dry_run", o.dry_run ? "true" : "false"}};
    if (o.backend == "procedural") {
        log.config["height"] = std::to_string(o.height);
        log.config["width"] = std::to_string(o.width);
    }
    if (o.backend == "recorded") log.config["recorded_dir"] = o.recorded_dir;
    if (o.backend == "http") {
        log.config["endpoint"] = o.endpoint;
        log.config["endpoint_source"] = endpoint_from_env ? "env" : "flag";
    }
    if (!o.split.empty()) log.config["split"] = o.split;
    echo_config(log);

    const fs::path out_dir = o.out;
    const fs::path manifest_path =
        o.run_manifest.empty() ? out_dir / "run_dataset.json" : fs::path(o.run_manifest);

    if (o.dry_run) {
        log.stats["planned_entries"] = std::to_string(planned);
        log.stats["prompts"] = std::to_string(prompts.size());
        std::cout << "  planned_entries = " << planned << " (dry run, nothing generated)\n";
        write_run_manifest(log, manifest_path);
        return;
    }

    std::unique_ptr<T2IBackend> backend;
    if (o.backend == "procedural") {
        backend = std::make_unique<ProceduralBackend>(o.height, o.width);
    } else if (o.backend == "recorded") {
        backend = std::make_unique<RecordedBackend>(o.recorded_dir);
    } else {
        backend = std::make_unique<HttpBackend>(parse_endpoint(o.endpoint));
    }

    fs::create_directories(out_dir);
    Rng rng(derive_seed(o.seed, "cli.dataset"));
    DatasetManifest m;
    m.name = o.name;
    m.role = "train";
    long long rejections = 0;
    std::size_t idx = 0;
    for (const auto& prompt : prompts) {
        for (int k = 0; k < o.seeds; ++k) {
            const auto gen_seed = static_cast<std::uint64_t>(rng.uniform_int(0, 0x7fffffff));
            auto set = build_fluctuation_set(*backend, prompt, gen_seed, o.base_cfg, sweep,
                                             o.tau, o.max_retries);
            rejections += set.rejections;
            char stem[16];
            std::snprintf(stem, sizeof stem, "e%05zu", idx++);
            auto entry = save_fluctuation_set(set, out_dir, stem);
            if (m.entries.empty()) {
                m.height = set.cover.height;
                m.width = set.cover.width;
            }
            m.entries.push_back(std::move(entry));
        }
    }
    save_manifest(m, out_dir / "manifest.tsv");
    log.outputs.push_back((out_dir / "manifest.tsv").string());

    if (!o.split.empty()) {
        auto parts = split_manifest(m, n_train, n_val, n_test,
                                    derive_seed(o.seed, "cli.dataset.split"));
        for (const auto& part : parts) {
            fs::path p = out_dir / ("manifest-" + part.role + ".tsv");
            save_manifest(part, p);
            log.outputs.push_back(p.string());
        }
    }

    log.stats["entries"] = std::to_string(m.entries.size());
    log.stats["rejections"] = std::to_string(rejections);
    std::cout << "  entries = " << m.entries.size() << ", rejections = " << rejections
              << "\n";
    write_run_manifest(log, manifest_path);
}

// ------------------------------------------------------------------ train

struct TrainOpts {
    std::string manifest, dir, out, config;
    std::vector<std::string> sets;  // key=value overrides
    std::map<std::string, std::string> flag_kv;
    std::string run_manifest;
};

void cmd_train(const TrainOpts& o) {
    TrainConfig cfg;
    if (!o.config.empty()) cfg = load_train_config(o.config, cfg);
    std::map<std::string, std::string> kv;
    for (const auto& s : o.sets) {
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got: " + s);
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    for (const auto& [k, v] : o.flag_kv) kv[k] = v;  // flags win over --set
    cfg = train_config_from_keys(kv, cfg);

    const fs::path out_dir = o.out;
    if (cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = out_dir;
    if (cfg.metrics_path.empty()) cfg.metrics_path = out_dir / "metrics.tsv";
    cfg.validate();

    const fs::path manifest_path = o.manifest;
    const fs::path base_dir = o.dir.empty() ? manifest_path.parent_path() : fs::path(o.dir);

    RunLog log;
    log.command = "train";
    log.seed = cfg.rng_seed;
    log.inputs = {o.manifest};
    if (!o.config.empty()) log.inputs.push_back(o.config);
    log.config = train_config_to_keys(cfg);
    log.config["manifest"] = o.manifest;
    log.config["images_dir"] = base_dir.string();
    log.config["out"] = o.out;
    echo_config(log);

    auto m = load_manifest(manifest_path);
    fs::create_directories(out_dir);
    auto result = train(m, base_dir, cfg);

    result.generator.save(out_dir / "gen.ckpt");
    result.d1.save(out_dir / "d1.ckpt");
    result.d2.save(out_dir / "d2.ckpt");
    log.outputs = {(out_dir / "gen.ckpt").string(), (out_dir / "d1.ckpt").string(),
                   (out_dir / "d2.ckpt").string(), cfg.metrics_path.string()};

    log.stats["iterations"] = std::to_string(result.iterations);
    log.stats["final_lr"] = fmt(result.final_lr);
    if (!result.history.l_g.empty()) {
        log.stats["final_l_g"] = fmt(result.history.l_g.back());
        log.stats["final_l_a"] = fmt(result.history.l_a.back());
        log.stats["final_capacity_bits"] = fmt(result.history.capacity.back());
    }
    std::cout << "  trained " << result.iterations << " iterations, final lr "
              << result.final_lr << "\n";
    const fs::path rm = o.run_manifest.empty() ? out_dir / "run_train.json"
                                               : fs::path(o.run_manifest);
    write_run_manifest(log, rm);
}

// ---------------------------------------------------------------- embed

struct EmbedOpts {
    std::string cover, gen, message, out, costs_out;
    double payload = 0.4;
    int h = 7;
    std::string run_manifest;
};

void cmd_embed(const EmbedOpts& o) {
    RunLog log;
    log.command = "embed";
    log.inputs = {o.cover, o.gen, o.message};
    log.config = {{"cover", o.cover},     {"generator", o.gen}, {"message", o.message},
                  {"out", o.out},         {"payload", fmt(o.payload)},
                  {"stc_h", std::to_string(o.h)}};
    if (!o.costs_out.empty()) log.config["costs_out"] = o.costs_out;
    echo_config(log);

    auto cover = load_image(o.cover);
    auto gen = UNetGenerator::load(o.gen);
    gen.set_training(false);
    auto probs = gen.forward(cover);
    auto costs = probs_to_costs(probs);

    StcParams params;
    params.h = o.h;
    params.payload_q = o.payload;
    const std::size_t capacity = stc_message_length(params, cover.size());
    const auto message = read_binary(o.message);
    const auto bits = frame_message(message, capacity);

    auto stego = stc_embed(cover, costs, bits, params);
    if (fs::path(o.out).has_parent_path())
        fs::create_directories(fs::path(o.out).parent_path());
    save_image(stego, o.out);
    log.outputs = {o.out};
    if (!o.costs_out.empty()) {
        save_cost_map(costs, o.costs_out);
        log.outputs.push_back(o.costs_out);
    }

    std::size_t changed = 0;
    for (std::size_t k = 0; k < cover.pixels.size(); ++k)
        changed += cover.pixels[k] != stego.pixels[k];
    log.stats["message_bits"] = std::to_string(bits.size());
    log.stats["carrier_bits"] = std::to_string(capacity);
    log.stats["changed_pixels"] = std::to_string(changed);
    std::cout << "  embedded " << bits.size() << " of " << capacity
              << " carrier bits, changed " << changed << " of " << cover.size()
              << " pixels\n";
    const fs::path rm =
        o.run_manifest.empty() ? fs::path(o.out + ".run.json") : fs::path(o.run_manifest);
    write_run_manifest(log, rm);
}

// --------------------------------------------------------------- extract

struct ExtractOpts {
    std::string stego, out;
    double payload = 0.4;
    int h = 7;
    std::string run_manifest;
};

void cmd_extract(const ExtractOpts& o) {
    RunLog log;
    log.command = "extract";
    log.inputs = {o.stego};
    log.config = {{"stego", o.stego},
                  {"out", o.out},
                  {"payload", fmt(o.payload)},
                  {"stc_h", std::to_string(o.h)}};
    echo_config(log);

    auto stego = load_image(o.stego);
    StcParams params;
    params.h = o.h;
    params.payload_q = o.payload;
    auto bits = stc_extract(stego, params);
    auto message = deframe_message(bits);
    write_binary(o.out, message);
    log.outputs = {o.out};
    log.stats["message_bytes"] = std::to_string(message.size());
    std::cout << "  extracted " << message.size() << " bytes\n";
    const fs::path rm =
        o.run_manifest.empty() ? fs::path(o.out + ".run.json") : fs::path(o.run_manifest);
    write_run_manifest(log, rm);
}

// --------------------------------------------------------------- combine

struct CombineOpts {
    std::string manifest, dir, costs, out;
    std::size_t index = 0;
    double beta = 0.15, sigma_min = 0.1;
    std::string run_manifest;
};

void cmd_combine(const CombineOpts& o) {
    RunLog log;
    log.command = "combine";
    log.inputs = {o.manifest, o.costs};
    log.config = {{"manifest", o.manifest},
                  {"index", std::to_string(o.index)},
                  {"costs", o.costs},
                  {"out", o.out},
                  {"vc_beta", fmt(o.beta)},
                  {"sigma_min", fmt(o.sigma_min)}};
    echo_config(log);

    auto m = load_manifest(o.manifest);
    const fs::path base_dir =
        o.dir.empty() ? fs::path(o.manifest).parent_path() : fs::path(o.dir);
    log.config["images_dir"] = base_dir.string();
    auto fset = load_entry(m, o.index, base_dir);
    auto vol = estimate_volatility_cost(fset, o.sigma_min);
    auto rho_o = load_cost_map(o.costs);

    CombineConfig cc;
    cc.vc_beta = o.beta;
    double alpha = 0.0;
    auto combined = combine_costs(rho_o, vol, cc, &alpha);
    if (fs::path(o.out).has_parent_path())
        fs::create_directories(fs::path(o.out).parent_path());
    save_cost_map(combined, o.out);
    log.outputs = {o.out};
    log.stats["vc_alpha"] = fmt(alpha);
    std::cout << "  vc_alpha = " << alpha << "\n";
    const fs::path rm =
        o.run_manifest.empty() ? fs::path(o.out + ".run.json") : fs::path(o.run_manifest);
    write_run_manifest(log, rm);
}

// ------------------------------------------------------------------ eval

struct EvalOpts {
    std::string covers, stegos, out, method, arch = "weak";
    int n_train = 200, n_val = 50, n_test = 250;
    int iterations = 300, batch_pairs = 4, val_every = 25;
    double lr = 1e-3, payload = 0.0;
    std::uint64_t seed = 1;
    bool append = false;
    std::string run_manifest;
};

std::vector<fs::path> list_pgms(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".pgm")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

void cmd_eval(const EvalOpts& o) {
    RunLog log;
    log.command = "eval";
    log.seed = o.seed;
    const bool covers_only = o.stegos.empty();
    const std::string method =
        !o.method.empty() ? o.method : (covers_only ? "covers-only" : "stego");
    log.inputs = {o.covers};
    if (!covers_only) log.inputs.push_back(o.stegos);
    log.config = {{"covers", o.covers},
                  {"stegos", covers_only ? "(covers only)" : o.stegos},
                  {"out", o.out},
                  {"method", method},
                  {"arch", o.arch},
                  {"n_train", std::to_string(o.n_train)},
                  {"n_val", std::to_string(o.n_val)},
                  {"n_test", std::to_string(o.n_test)},
                  {"iterations", std::to_string(o.iterations)},
                  {"batch_pairs", std::to_string(o.batch_pairs)},
                  {"val_every", std::to_string(o.val_every)},
                  {"lr", fmt(o.lr)},
                  {"payload", fmt(o.payload)},
                  {"seed", std::to_string(o.seed)},
                  {"append", o.append ? "true" : "false"}};
    echo_config(log);

    if (o.n_train < 1 || o.n_val < 1 || o.n_test < 1)
        throw ConfigError("--train/--val/--test must each be >= 1");
    auto cover_files = list_pgms(o.covers);
    const std::size_t need = static_cast<std::size_t>(o.n_train) +
                             static_cast<std::size_t>(o.n_val) +
                             static_cast<std::size_t>(o.n_test);
    if (cover_files.size() < need)
        throw ConfigError("split needs " + std::to_string(need) + " pairs but " +
                          o.covers + " holds " + std::to_string(cover_files.size()) +
                          " .pgm files");

    std::vector<PairSample> pairs;
    for (const auto& cp : cover_files) {
        PairSample p;
        p.cover = load_image(cp);
        if (covers_only) {
            p.stego = p.cover;
        } else {
            fs::path sp = fs::path(o.stegos) / cp.filename();
            if (!fs::exists(sp))
                throw IoError("no stego counterpart for " + cp.filename().string() +
                              " in " + o.stegos);
            p.stego = load_image(sp);
        }
        pairs.push_back(std::move(p));
    }

    Rng rng(derive_seed(o.seed, "cli.eval.split"));
    rng.shuffle(pairs);
    std::vector<PairSample> train_pairs(pairs.begin(), pairs.begin() + o.n_train);
    std::vector<PairSample> val_pairs(pairs.begin() + o.n_train,
                                      pairs.begin() + o.n_train + o.n_val);
    std::vector<PairSample> test_pairs(pairs.begin() + o.n_train + o.n_val,
                                       pairs.begin() + static_cast<long>(need));

    SteganalyzerConfig cfg;
    cfg.arch = o.arch == "strong" ? DiscArch::strong : DiscArch::weak;
    if (o.arch != "weak" && o.arch != "strong")
        throw ConfigError("--arch must be weak or strong");
    cfg.iterations = o.iterations;
    cfg.batch_pairs = o.batch_pairs;
    cfg.lr = o.lr;
    cfg.val_every = o.val_every;
    cfg.rng_seed = o.seed;
    cfg.method = method;
    cfg.payload = o.payload;

    auto result = train_steganalyzer(train_pairs, val_pairs, test_pairs, cfg);

    std::vector<EvalReport> reports;
    if (o.append && fs::exists(o.out)) reports = load_reports(o.out);
    reports.push_back(result.report);
    if (fs::path(o.out).has_parent_path())
        fs::create_directories(fs::path(o.out).parent_path());
    save_reports(reports, o.out);
    log.outputs = {o.out};
    log.stats["p_fa"] = fmt(result.report.p_fa);
    log.stats["p_md"] = fmt(result.report.p_md);
    log.stats["p_e"] = fmt(result.report.p_e);
    std::cout << "  p_fa = " << result.report.p_fa << ", p_md = " << result.report.p_md
              << ", p_e = " << result.report.p_e << "\n";
    const fs::path rm =
        o.run_manifest.empty() ? fs::path(o.out + ".run.json") : fs::path(o.run_manifest);
    write_run_manifest(log, rm);
}

// ---------------------------------------------------------------- report

struct ReportOpts {
    std::string reports, out;
    std::string run_manifest;
};

void cmd_report(const ReportOpts& o) {
    RunLog log;
    log.command = "report";
    log.inputs = {o.reports};
    log.config = {{"reports", o.reports}};
    if (!o.out.empty()) log.config["out"] = o.out;
    echo_config(log);

    auto reports = load_reports(o.reports);
    auto table = render_report_table(reports);
    std::cout << table;
    if (!o.out.empty()) {
        if (fs::path(o.out).has_parent_path())
            fs::create_directories(fs::path(o.out).parent_path());
        std::ofstream out(o.out, std::ios::trunc);
        if (!out) throw IoError("cannot write " + o.out);
        out << table;
        if (!out.flush()) throw IoError("short write on " + o.out);
        log.outputs = {o.out};
    }
    const fs::path rm = o.run_manifest.empty()
                            ? (o.out.empty() ? fs::path(o.reports + ".report.run.json")
                                             : fs::path(o.out + ".run.json"))
                            : fs::path(o.run_manifest);
    write_run_manifest(log, rm);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"fluctuation-image steganography pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    DatasetOpts ds;
    auto* dataset = app.add_subcommand("dataset", "build fluctuation sets and manifests");
    dataset->add_option("--prompts", ds.prompts, "text file, one prompt per line")
        ->required();
    dataset->add_option("--out", ds.out, "output directory")->required();
    dataset->add_option("--backend", ds.backend, "procedural, recorded or http");
    dataset->add_option("--recorded-dir", ds.recorded_dir, "directory of recorded replies");
    auto* ep = dataset->add_option("--endpoint", ds.endpoint, "host:port[/path]");
    dataset->add_option("--seeds", ds.seeds, "seeds per prompt");
    dataset->add_option("--seed", ds.seed, "root rng seed");
    dataset->add_option("--tau", ds.tau, "mse acceptance bound");
    dataset->add_option("--flus", ds.flus, "fluctuations per set");
    dataset->add_option("--base-cfg", ds.base_cfg, "cover cfg scale");
    dataset->add_option("--max-retries", ds.max_retries, "replacement budget per set");
    dataset->add_option("--height", ds.height, "procedural image height");
    dataset->add_option("--width", ds.width, "procedural image width");
    dataset->add_option("--name", ds.name, "manifest name");
    dataset->add_option("--split", ds.split, "train,val,test entry counts");
    dataset->add_flag("--dry-run", ds.dry_run, "validate and plan without generating");
    dataset->add_option("--run-manifest", ds.run_manifest, "run manifest path");
    dataset->callback([&] {
        bool from_env = false;
        if (ds.endpoint.empty() && ep->count() == 0) {
            if (const char* env = std::getenv("GIFDL_ENDPOINT")) {
                ds.endpoint = env;
                from_env = true;
            }
        }
        cmd_dataset(ds, from_env);
    });

    TrainOpts tr;
    auto* train_cmd = app.add_subcommand("train", "adversarial training loop");
    train_cmd->add_option("--manifest", tr.manifest, "dataset manifest")->required();
    train_cmd->add_option("--dir", tr.dir, "image directory (default: manifest's)");
    train_cmd->add_option("--out", tr.out, "checkpoint/metrics directory")->required();
    train_cmd->add_option("--config", tr.config, "key = value config file");
    train_cmd->add_option("--set", tr.sets, "config override key=value")
        ->take_all();
    std::string tr_iterations, tr_lr, tr_payload, tr_seed, tr_strategy, tr_arch, tr_batch;
    auto* o_it = train_cmd->add_option("--iterations", tr_iterations, "generator steps");
    auto* o_lr = train_cmd->add_option("--lr", tr_lr, "learning rate");
    auto* o_pl = train_cmd->add_option("--payload", tr_payload, "bits per pixel");
    auto* o_sd = train_cmd->add_option("--seed", tr_seed, "rng seed");
    auto* o_st = train_cmd->add_option("--strategy", tr_strategy, "assignment or shared_task");
    auto* o_ar = train_cmd->add_option("--arch", tr_arch, "weak or strong discriminators");
    auto* o_ba = train_cmd->add_option("--batch", tr_batch, "fluctuation sets per step");
    train_cmd->add_option("--run-manifest", tr.run_manifest, "run manifest path");
    train_cmd->callback([&] {
        if (o_it->count()) tr.flag_kv["iterations"] = tr_iterations;
        if (o_lr->count()) tr.flag_kv["lr"] = tr_lr;
        if (o_pl->count()) tr.flag_kv["payload"] = tr_payload;
        if (o_sd->count()) tr.flag_kv["rng_seed"] = tr_seed;
        if (o_st->count()) tr.flag_kv["strategy"] = tr_strategy;
        if (o_ar->count()) tr.flag_kv["disc_arch"] = tr_arch;
        if (o_ba->count()) tr.flag_kv["batch"] = tr_batch;
        cmd_train(tr);
    });

    EmbedOpts em;
    auto* embed = app.add_subcommand("embed", "hide a message in a cover image");
    embed->add_option("--cover", em.cover, "cover pgm")->required();
    embed->add_option("--gen", em.gen, "generator checkpoint")->required();
    embed->add_option("--message", em.message, "message file")->required();
    embed->add_option("--out", em.out, "stego pgm")->required();
    embed->add_option("--payload", em.payload, "bits per pixel");
    embed->add_option("--stc-h", em.h, "trellis constraint height");
    embed->add_option("--costs-out", em.costs_out, "also save the cost map");
    embed->add_option("--run-manifest", em.run_manifest, "run manifest path");
    embed->callback([&] { cmd_embed(em); });

    ExtractOpts ex;
    auto* extract = app.add_subcommand("extract", "recover a message from a stego image");
    extract->add_option("--stego", ex.stego, "stego pgm")->required();
    extract->add_option("--out", ex.out, "message file")->required();
    extract->add_option("--payload", ex.payload, "bits per pixel");
    extract->add_option("--stc-h", ex.h, "trellis constraint height");
    extract->add_option("--run-manifest", ex.run_manifest, "run manifest path");
    extract->callback([&] { cmd_extract(ex); });

    CombineOpts co;
    auto* combine = app.add_subcommand("combine", "blend volatility costs into a cost map");
    combine->add_option("--manifest", co.manifest, "dataset manifest")->required();
    combine->add_option("--dir", co.dir, "image directory (default: manifest's)");
    combine->add_option("--index", co.index, "entry index in the manifest");
    combine->add_option("--costs", co.costs, "original cost map file")->required();
    combine->add_option("--out", co.out, "combined cost map file")->required();
    combine->add_option("--beta", co.beta, "volatility blend weight in [0,1]");
    combine->add_option("--sigma-min", co.sigma_min, "wet-pixel deviation floor");
    combine->add_option("--run-manifest", co.run_manifest, "run manifest path");
    combine->callback([&] { cmd_combine(co); });

    EvalOpts ev;
    auto* eval = app.add_subcommand("eval", "steganalyzer detection error on image pairs");
    eval->add_option("--covers", ev.covers, "cover image directory")->required();
    eval->add_option("--stegos", ev.stegos, "stego directory (omit for covers-only)");
    eval->add_option("--out", ev.out, "report tsv")->required();
    eval->add_option("--method", ev.method, "method label in the report");
    eval->add_option("--arch", ev.arch, "weak or strong");
    eval->add_option("--train", ev.n_train, "training pairs");
    eval->add_option("--val", ev.n_val, "validation pairs");
    eval->add_option("--test", ev.n_test, "test pairs");
    eval->add_option("--iterations", ev.iterations, "optimizer steps");
    eval->add_option("--batch-pairs", ev.batch_pairs, "pairs per step");
    eval->add_option("--val-every", ev.val_every, "validation cadence");
    eval->add_option("--lr", ev.lr, "learning rate");
    eval->add_option("--payload", ev.payload, "payload label in the report");
    eval->add_option("--seed", ev.seed, "rng seed");
    eval->add_flag("--append", ev.append, "append to an existing report file");
    eval->add_option("--run-manifest", ev.run_manifest, "run manifest path");
    eval->callback([&] { cmd_eval(ev); });

    ReportOpts rp;
    auto* report = app.add_subcommand("report", "render a report tsv as a table");
    report->add_option("--reports", rp.reports, "report tsv")->required();
    report->add_option("--out", rp.out, "also write the table to a file");
    report->add_option("--run-manifest", rp.run_manifest, "run manifest path");
    report->callback([&] { cmd_report(rp); });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace gifdl
