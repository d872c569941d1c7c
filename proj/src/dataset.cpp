#include "gifdl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

#include "gifdl/errors.hpp"
#include "gifdl/rng.hpp"

namespace gifdl {
namespace {

std::string escape_field(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape_field(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out += s[i];
            continue;
        }
        if (i + 1 == s.size()) throw ParseError("dangling escape in manifest field: " + s);
        switch (s[++i]) {
            case '\\': out += '\\'; break;
            case 't': out += '\t'; break;
            case 'n': out += '\n'; break;
            case 'r': out += '\r'; break;
            default: throw ParseError(std::string("unknown escape \\") + s[i] + " in manifest");
        }
    }
    return out;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string request_str(const GenerationRequest& req) {
    return "prompt \"" + req.prompt + "\", seed " + std::to_string(req.seed) + ", cfg " +
           format_cfg(req.cfg_scale);
}

}  // namespace

long long cfg_key(double cfg) { return std::llround(cfg * 1e4); }

std::string format_cfg(double cfg) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", cfg);
    return buf;
}

ProceduralBackend::ProceduralBackend(int height, int width) : height_(height), width_(width) {
    if (height < 16 || width < 16)
        throw ConfigError("procedural backend size must be at least 16x16, got " +
                          std::to_string(height) + "x" + std::to_string(width));
}

ImageGray ProceduralBackend::generate(const GenerationRequest& req) {
    if (!(req.cfg_scale > 0.0))
        throw DomainError("cfg_scale must be positive, got " + format_cfg(req.cfg_scale));
    const std::uint64_t base =
        derive_seed(derive_seed(fnv1a64("procgen"), fnv1a64(req.prompt)), req.seed);

    const int L = 8;   // coarse content lattice
    const int T = 16;  // finer texture lattice
    std::vector<double> lat((L + 1) * (L + 1));
    Rng lr(derive_seed(base, "lattice"));
    for (auto& v : lat) v = 40.0 + lr.uniform01() * 176.0;
    std::vector<double> tex((T + 1) * (T + 1));
    Rng tr(derive_seed(base, "texture"));
    for (auto& v : tex) v = (tr.uniform01() * 2.0 - 1.0) * 24.0;
    Rng nr(derive_seed(base, static_cast<std::uint64_t>(cfg_key(req.cfg_scale))));

    auto bilerp = [](const std::vector<double>& g, int n, double y, double x) {
        int i0 = static_cast<int>(y), j0 = static_cast<int>(x);
        double fy = y - i0, fx = x - j0;
        int i1 = std::min(i0 + 1, n), j1 = std::min(j0 + 1, n);
        double top = g[i0 * (n + 1) + j0] * (1 - fx) + g[i0 * (n + 1) + j1] * fx;
        double bot = g[i1 * (n + 1) + j0] * (1 - fx) + g[i1 * (n + 1) + j1] * fx;
        return top * (1 - fy) + bot * fy;
    };

    ImageGray img(height_, width_);
    for (int i = 0; i < height_; ++i) {
        for (int j = 0; j < width_; ++j) {
            double y = static_cast<double>(i) / (height_ - 1);
            double x = static_cast<double>(j) / (width_ - 1);
            double v = bilerp(lat, L, y * L, x * L) + bilerp(tex, T, y * T, x * T) +
                       static_cast<double>(nr.uniform_int(-3, 3));
            img.at(i, j) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
    }
    return img;
}

RecordedBackend::RecordedBackend(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!std::filesystem::is_directory(dir_))
        throw ConfigError("recorded backend directory does not exist: " + dir_.string());
}

std::filesystem::path RecordedBackend::recorded_path(const std::filesystem::path& dir,
                                                     const GenerationRequest& req) {
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(req.prompt)));
    return dir / ("p" + std::string(hash) + "_s" + std::to_string(req.seed) + "_c" +
                  format_cfg(req.cfg_scale) + ".pgm");
}

ImageGray RecordedBackend::generate(const GenerationRequest& req) {
    if (!(req.cfg_scale > 0.0))
        throw DomainError("cfg_scale must be positive, got " + format_cfg(req.cfg_scale));
    auto path = recorded_path(dir_, req);
    if (!std::filesystem::exists(path))
        throw BackendError("no recorded image for " + request_str(req) + " at " +
                           path.string());
    return load_image(path);
}

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.port <= 0 || cfg_.port > 65535)
        throw ConfigError("http backend port out of range: " + std::to_string(cfg_.port));
    if (cfg_.retries < 0) throw ConfigError("http backend retries must be >= 0");
    if (cfg_.max_in_flight < 1) throw ConfigError("http backend in-flight cap must be >= 1");
}

ImageGray HttpBackend::generate(const GenerationRequest& req) {
    if (!(req.cfg_scale > 0.0))
        throw DomainError("cfg_scale must be positive, got " + format_cfg(req.cfg_scale));
    nlohmann::json body;
    body["prompt"] = req.prompt;
    body["seed"] = req.seed;
    body["cfg_scale"] = req.cfg_scale;
    const std::string payload = body.dump();

    httplib::Client cli(cfg_.host, cfg_.port);
    auto sec = static_cast<time_t>(cfg_.timeout_s);
    auto usec = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(sec)) * 1e6);
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    cli.set_write_timeout(sec, usec);

    std::string reason;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
        auto res = cli.Post(cfg_.path, payload, "application/json");
        if (res && res->status == 200) {
            return decode_image(res->body, "backend response for " + request_str(req));
        }
        reason = res ? "HTTP status " + std::to_string(res->status)
                     : "transport error " + std::string(httplib::to_string(res.error()));
    }
    throw BackendError("text-to-image request failed after " +
                       std::to_string(cfg_.retries + 1) + " attempt(s), last: " + reason +
                       ", for " + request_str(req));
}

void validate_fluctuation_set(const FluctuationSet& set) {
    if (set.fluctuations.empty()) throw DomainError("fluctuation set has no members");
    if (set.cfg_values.size() != set.fluctuations.size() + 1)
        throw DomainError("fluctuation set cfg list must hold base + one per member");
    if (set.tau < 0.0) throw DomainError("fluctuation set tau must be non-negative");
    std::set<long long> keys;
    for (double c : set.cfg_values)
        if (!keys.insert(cfg_key(c)).second)
            throw DomainError("duplicate cfg value in fluctuation set: " + format_cfg(c));
    for (std::size_t k = 0; k < set.fluctuations.size(); ++k) {
        if (!set.fluctuations[k].same_shape(set.cover))
            throw ShapeError("fluctuation " + std::to_string(k) + " size differs from cover");
        double d = mse(set.cover, set.fluctuations[k]);
        if (d > set.tau + 1e-9)
            throw DomainError("fluctuation " + std::to_string(k) + " exceeds tau: mse " +
                              std::to_string(d));
    }
}

FluctuationSet build_fluctuation_set(T2IBackend& backend, const std::string& prompt,
                                     std::uint64_t seed, double base_cfg,
                                     const std::vector<double>& sweep, double tau,
                                     int max_retries) {
    if (sweep.empty()) throw ConfigError("cfg sweep is empty");
    if (!(base_cfg > 0.0)) throw ConfigError("base cfg must be positive");
    if (tau < 0.0) throw ConfigError("tau must be non-negative");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");

    std::set<long long> used{cfg_key(base_cfg)};
    double lo = base_cfg, hi = base_cfg;
    for (double c : sweep) {
        if (!(c > 0.0)) throw ConfigError("sweep cfg must be positive: " + format_cfg(c));
        if (!used.insert(cfg_key(c)).second)
            throw ConfigError("cfg value repeated in sweep or equal to base: " +
                              format_cfg(c));
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }

    FluctuationSet set;
    set.prompt = prompt;
    set.seed = seed;
    set.tau = tau;
    set.cover = backend.generate({prompt, seed, base_cfg});
    if (set.cover.height < 16 || set.cover.width < 16)
        throw ShapeError("cover below the 16-pixel dataset minimum: " +
                         std::to_string(set.cover.height) + "x" +
                         std::to_string(set.cover.width));
    set.cfg_values.push_back(base_cfg);

    // Replacements extend the sweep outward, alternating above and below.
    int step_hi = 0, step_lo = 0;
    bool above = true;
    auto draw = [&]() {
        for (;;) {
            double cand = above ? hi + 0.0010 * (++step_hi) : lo - 0.0010 * (++step_lo);
            above = !above;
            if (cand > 0.0 && used.insert(cfg_key(cand)).second) return cand;
        }
    };

    const std::size_t want = sweep.size();
    std::deque<double> queue(sweep.begin(), sweep.end());
    int budget = max_retries;
    while (set.fluctuations.size() < want && !queue.empty()) {
        double cfg = queue.front();
        queue.pop_front();
        ImageGray img = backend.generate({prompt, seed, cfg});
        if (!img.same_shape(set.cover))
            throw ShapeError("backend image size changed at cfg " + format_cfg(cfg));
        if (mse(set.cover, img) <= set.tau) {
            set.fluctuations.push_back(std::move(img));
            set.cfg_values.push_back(cfg);
        } else {
            ++set.rejections;
            if (budget > 0) {
                --budget;
                queue.push_back(draw());
            }
        }
    }
    if (set.fluctuations.size() < want)
        throw GenerationExhausted(
            "fluctuation build exhausted its retries: accepted " +
                std::to_string(set.fluctuations.size()) + " of " + std::to_string(want) +
                " after " + std::to_string(set.rejections) + " rejection(s)",
            static_cast<int>(set.fluctuations.size()));
    validate_fluctuation_set(set);
    return set;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << "gifdl-manifest\tv1\n";
    out << "name\t" << escape_field(m.name) << '\n';
    out << "role\t" << m.role << '\n';
    out << "size\t" << m.height << '\t' << m.width << '\n';
    char tau_buf[32];
    for (const auto& e : m.entries) {
        std::string flus, cfgs;
        for (std::size_t i = 0; i < e.flu_paths.size(); ++i)
            flus += (i ? "," : "") + e.flu_paths[i];
        for (std::size_t i = 0; i < e.cfg_values.size(); ++i)
            cfgs += (i ? "," : "") + format_cfg(e.cfg_values[i]);
        std::snprintf(tau_buf, sizeof tau_buf, "%.17g", e.tau);
        out << "entry\t" << e.cover_path << '\t' << flus << '\t' << escape_field(e.prompt)
            << '\t' << e.seed << '\t' << cfgs << '\t' << tau_buf << '\n';
    }
    if (!out.flush()) throw IoError("short write on manifest: " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "gifdl-manifest\tv1")
        throw ParseError("not a manifest file (bad magic line): " + path.string());

    DatasetManifest m;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_on(line, '\t');
        const std::string& kind = fields[0];
        auto want = [&](std::size_t n) {
            if (fields.size() != n)
                throw ParseError("manifest line " + std::to_string(lineno) + ": expected " +
                                 std::to_string(n) + " fields, got " +
                                 std::to_string(fields.size()));
        };
        try {
            if (kind == "name") {
                want(2);
                m.name = unescape_field(fields[1]);
            } else if (kind == "role") {
                want(2);
                m.role = fields[1];
            } else if (kind == "size") {
                want(3);
                m.height = std::stoi(fields[1]);
                m.width = std::stoi(fields[2]);
            } else if (kind == "entry") {
                want(7);
                ManifestEntry e;
                e.cover_path = fields[1];
                e.flu_paths = split_on(fields[2], ',');
                e.prompt = unescape_field(fields[3]);
                e.seed = std::stoull(fields[4]);
                for (const auto& c : split_on(fields[5], ',')) e.cfg_values.push_back(std::stod(c));
                e.tau = std::stod(fields[6]);
                if (e.cfg_values.size() != e.flu_paths.size() + 1)
                    throw ParseError("cfg count must be fluctuation count + 1");
                m.entries.push_back(std::move(e));
            } else {
                throw ParseError("unknown record kind '" + kind + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ParseError("manifest line " + std::to_string(lineno) + ": bad number");
        } catch (const std::out_of_range&) {
            throw ParseError("manifest line " + std::to_string(lineno) + ": number out of range");
        }
    }
    if (m.role != "train" && m.role != "val" && m.role != "test")
        throw ParseError("manifest role must be train, val or test, got '" + m.role + "'");
    if (m.height < 16 || m.width < 16)
        throw ParseError("manifest image size below the 16-pixel minimum");
    return m;
}

void verify_manifest(const DatasetManifest& m, const std::filesystem::path& base_dir) {
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const auto& e = m.entries[i];
        auto check_one = [&](const std::string& rel) {
            ImageGray img = load_image(base_dir / rel);
            if (img.height != m.height || img.width != m.width)
                throw ShapeError("manifest entry " + std::to_string(i) + ": " + rel +
                                 " is " + std::to_string(img.height) + "x" +
                                 std::to_string(img.width) + ", manifest says " +
                                 std::to_string(m.height) + "x" + std::to_string(m.width));
        };
        check_one(e.cover_path);
        for (const auto& f : e.flu_paths) check_one(f);
    }
}

ManifestEntry save_fluctuation_set(const FluctuationSet& set,
                                   const std::filesystem::path& dir,
                                   const std::string& stem) {
    std::filesystem::create_directories(dir);
    ManifestEntry e;
    e.cover_path = stem + "_cover.pgm";
    save_image(set.cover, dir / e.cover_path);
    for (std::size_t k = 0; k < set.fluctuations.size(); ++k) {
        std::string name = stem + "_flu" + std::to_string(k) + ".pgm";
        save_image(set.fluctuations[k], dir / name);
        e.flu_paths.push_back(std::move(name));
    }
    e.prompt = set.prompt;
    e.seed = set.seed;
    e.cfg_values = set.cfg_values;
    e.tau = set.tau;
    return e;
}

FluctuationSet load_entry(const DatasetManifest& m, std::size_t index,
                          const std::filesystem::path& base_dir) {
    if (index >= m.entries.size())
        throw DomainError("manifest entry index " + std::to_string(index) +
                          " out of range (have " + std::to_string(m.entries.size()) + ")");
    const auto& e = m.entries[index];
    FluctuationSet set;
    set.cover = load_image(base_dir / e.cover_path);
    for (const auto& f : e.flu_paths) set.fluctuations.push_back(load_image(base_dir / f));
    set.cfg_values = e.cfg_values;
    set.prompt = e.prompt;
    set.seed = e.seed;
    set.tau = e.tau;
    validate_fluctuation_set(set);
    return set;
}

std::array<DatasetManifest, 3> split_manifest(const DatasetManifest& m, int n_train,
                                              int n_val, int n_test,
                                              std::uint64_t rng_seed) {
    if (n_train < 0 || n_val < 0 || n_test < 0)
        throw ConfigError("split sizes must be non-negative");
    const std::size_t total = static_cast<std::size_t>(n_train) + n_val + n_test;
    if (total > m.entries.size())
        throw ConfigError("split sizes " + std::to_string(n_train) + "+" +
                          std::to_string(n_val) + "+" + std::to_string(n_test) +
                          " oversubscribe " + std::to_string(m.entries.size()) + " entries");

    std::vector<std::size_t> order(m.entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(rng_seed, "manifest.split"));
    rng.shuffle(order);

    const char* roles[3] = {"train", "val", "test"};
    const int sizes[3] = {n_train, n_val, n_test};
    std::array<DatasetManifest, 3> out;
    std::size_t cursor = 0;
    for (int s = 0; s < 3; ++s) {
        out[s].name = m.name.empty() ? roles[s] : m.name + "-" + roles[s];
        out[s].role = roles[s];
        out[s].height = m.height;
        out[s].width = m.width;
        for (int k = 0; k < sizes[s]; ++k) out[s].entries.push_back(m.entries[order[cursor++]]);
    }
    return out;
}

std::vector<double> default_cfg_sweep() {
    std::vector<double> out;
    for (int k = 0; k <= 10; ++k) {
        double c = 7.4950 + 0.0010 * k;
        if (cfg_key(c) == cfg_key(kDefaultBaseCfg)) continue;
        out.push_back(c);
    }
    return out;
}

}  // namespace gifdl
