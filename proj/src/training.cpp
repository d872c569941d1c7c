#include "gifdl/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "gifdl/embedding.hpp"
#include "gifdl/errors.hpp"
#include "gifdl/rng.hpp"

namespace gifdl {
namespace {

double parse_double_kv(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
    }
}

std::int64_t parse_int_kv(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long long n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("bad integer value for " + key + ": '" + v + "'");
    }
}

std::uint64_t parse_uint_kv(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long n = std::stoull(v, &pos);
        if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("bad unsigned value for " + key + ": '" + v + "'");
    }
}

DiscArch disc_arch_from_string(const std::string& s) {
    if (s == "weak") return DiscArch::weak;
    if (s == "strong") return DiscArch::strong;
    throw ConfigError("unknown discriminator arch '" + s + "' (weak|strong)");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

const char* to_string(Strategy s) {
    return s == Strategy::assignment ? "assignment" : "shared_task";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "assignment") return Strategy::assignment;
    if (s == "shared_task") return Strategy::shared_task;
    throw ConfigError("unknown strategy '" + s + "' (assignment|shared_task)");
}

void TrainConfig::validate() const {
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr_decay must be in (0,1]");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (beta < 0.0) throw ConfigError("beta must be >= 0");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
    if (!(payload > 0.0) || payload >= 1.0) throw ConfigError("payload must be in (0,1)");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(lambda_prime > 0.0)) throw ConfigError("lambda_prime must be positive");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (checkpoint_every > 0 && checkpoint_dir.empty())
        throw ConfigError("checkpoint_every needs checkpoint_dir");
}

TrainConfig train_config_from_keys(const std::map<std::string, std::string>& kv,
                                   const TrainConfig& base) {
    TrainConfig cfg = base;
    for (const auto& [key, value] : kv) {
        if (key == "iterations") cfg.iterations = parse_int_kv(key, value);
        else if (key == "lr") cfg.lr = parse_double_kv(key, value);
        else if (key == "lr_decay") cfg.lr_decay = parse_double_kv(key, value);
        else if (key == "lr_decay_every") cfg.lr_decay_every = parse_int_kv(key, value);
        else if (key == "alpha") cfg.alpha = parse_double_kv(key, value);
        else if (key == "beta") cfg.beta = parse_double_kv(key, value);
        else if (key == "lambda") cfg.lambda = parse_double_kv(key, value);
        else if (key == "gamma") cfg.gamma = parse_double_kv(key, value);
        else if (key == "payload") cfg.payload = parse_double_kv(key, value);
        else if (key == "batch") cfg.batch = static_cast<int>(parse_int_kv(key, value));
        else if (key == "rng_seed") cfg.rng_seed = parse_uint_kv(key, value);
        else if (key == "strategy") cfg.strategy = strategy_from_string(value);
        else if (key == "lambda_prime") cfg.lambda_prime = parse_double_kv(key, value);
        else if (key == "disc_arch") cfg.disc_arch = disc_arch_from_string(value);
        else if (key == "checkpoint_every") cfg.checkpoint_every = parse_int_kv(key, value);
        else if (key == "checkpoint_dir") cfg.checkpoint_dir = value;
        else if (key == "metrics_path") cfg.metrics_path = value;
        else if (key == "fault_nan_at") cfg.fault_nan_at = parse_int_kv(key, value);
        else throw ConfigError("unknown training config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

std::map<std::string, std::string> train_config_to_keys(const TrainConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["iterations"] = std::to_string(cfg.iterations);
    kv["lr"] = format_double(cfg.lr);
    kv["lr_decay"] = format_double(cfg.lr_decay);
    kv["lr_decay_every"] = std::to_string(cfg.lr_decay_every);
    kv["alpha"] = format_double(cfg.alpha);
    kv["beta"] = format_double(cfg.beta);
    kv["lambda"] = format_double(cfg.lambda);
    kv["gamma"] = format_double(cfg.gamma);
    kv["payload"] = format_double(cfg.payload);
    kv["batch"] = std::to_string(cfg.batch);
    kv["rng_seed"] = std::to_string(cfg.rng_seed);
    kv["strategy"] = to_string(cfg.strategy);
    kv["lambda_prime"] = format_double(cfg.lambda_prime);
    kv["disc_arch"] = to_string(cfg.disc_arch);
    kv["checkpoint_every"] = std::to_string(cfg.checkpoint_every);
    kv["checkpoint_dir"] = cfg.checkpoint_dir.string();
    kv["metrics_path"] = cfg.metrics_path.string();
    kv["fault_nan_at"] = std::to_string(cfg.fault_nan_at);
    return kv;
}

TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read training config: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              " is not 'key = value': " + t);
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return train_config_from_keys(kv, base);
}

void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write training config: " + path.string());
    for (const auto& [key, value] : train_config_to_keys(cfg))
        out << key << " = " << value << '\n';
    if (!out.flush()) throw IoError("short write on training config: " + path.string());
}

double capacity_bits(const ProbabilityMap& p) {
    if (!p.p_plus.same_shape(p.p_minus)) throw ShapeError("probability planes differ in size");
    auto term = [](double v) { return v > 0.0 ? -v * std::log2(v) : 0.0; };
    double bits = 0.0;
    for (std::size_t k = 0; k < p.p_plus.v.size(); ++k) {
        const double pp = p.p_plus.v[k], pm = p.p_minus.v[k];
        if (pp < 0.0 || pm < 0.0 || pp + pm > 1.0 + 1e-12)
            throw DomainError("probability map leaves the simplex");
        bits += term(pp) + term(pm) + term(std::max(0.0, 1.0 - pp - pm));
    }
    return bits;
}

double entropy_loss(const ProbabilityMap& p, double q) {
    const double dev =
        capacity_bits(p) - static_cast<double>(p.height()) * p.width() * q;
    return dev * dev;
}

Grid entropy_loss_grad(const ProbabilityMap& p, double q) {
    const double scale =
        2.0 * (capacity_bits(p) - static_cast<double>(p.height()) * p.width() * q);
    Grid g(p.height(), p.width());
    for (std::size_t k = 0; k < g.v.size(); ++k) {
        const double pp = p.p_plus.v[k], pm = p.p_minus.v[k];
        const double p0 = 1.0 - pp - pm;
        if (!(pp > 0.0) || !(pm > 0.0) || !(p0 > 0.0))
            throw DomainError("entropy gradient undefined at the simplex boundary");
        g.v[k] = scale * 0.5 * (std::log2(p0 / pp) + std::log2(p0 / pm));
    }
    return g;
}

double generator_loss(double e1, double e2, double l_e, const TrainConfig& cfg) {
    return -cfg.alpha * (e1 + cfg.lambda * e2) + cfg.beta * l_e;
}

namespace {

void atomic_checkpoint(const std::function<void(const std::filesystem::path&)>& writer,
                       const std::filesystem::path& final_path) {
    std::filesystem::path tmp = final_path;
    tmp += ".tmp";
    writer(tmp);
    std::filesystem::rename(tmp, final_path);
}

struct Metrics {
    std::ofstream out;

    explicit Metrics(const std::filesystem::path& path) {
        if (path.empty()) return;
        out.open(path, std::ios::trunc);
        if (!out) throw IoError("cannot write metrics file: " + path.string());
        out << "iteration\tl_g\tl_a\tl_e\te1\te2\tcapacity\tlr\tupdated\n";
    }

    void row(std::int64_t it, double lg, double la, double le, double e1, double e2,
             double cap, double lr, DiscId updated) {
        if (!out.is_open()) return;
        out << it << '\t' << lg << '\t' << la << '\t' << le << '\t' << e1 << '\t' << e2
            << '\t' << cap << '\t' << lr << '\t' << to_string(updated) << '\n';
        out.flush();
    }
};

TrainResult train_impl(std::size_t count,
                       const std::function<FluctuationSet(std::size_t)>& fetch,
                       const TrainConfig& cfg) {
    cfg.validate();
    if (count == 0) throw ConfigError("training pool is empty");

    TrainResult res{
        UNetGenerator(GeneratorConfig{}, derive_seed(cfg.rng_seed, "train.gen")),
        Discriminator(cfg.disc_arch, derive_seed(cfg.rng_seed, "train.d1")),
        Discriminator(cfg.disc_arch, derive_seed(cfg.rng_seed, "train.d2")),
        {},
        0,
        cfg.lr};
    Adam opt_g, opt_1, opt_2;

    Rng order_rng(derive_seed(cfg.rng_seed, "train.order"));
    Rng flu_rng(derive_seed(cfg.rng_seed, "train.flu"));
    const std::uint64_t noise_base = derive_seed(cfg.rng_seed, "train.noise");
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = count;  // forces a shuffle before the first batch

    Metrics metrics(cfg.metrics_path);
    double lr = cfg.lr;
    const double inv_b = 1.0 / cfg.batch;
    int probe_h = 0, probe_w = 0;
    std::uint64_t sample_counter = 0;

    auto snapshot_and_abort = [&](std::int64_t iteration, const std::string& what) {
        std::string note;
        if (!cfg.checkpoint_dir.empty()) {
            try {
                std::filesystem::create_directories(cfg.checkpoint_dir);
                res.generator.save(cfg.checkpoint_dir / "abort_gen.ckpt");
                res.d1.save(cfg.checkpoint_dir / "abort_d1.ckpt");
                res.d2.save(cfg.checkpoint_dir / "abort_d2.ckpt");
                note = "; snapshot in " + cfg.checkpoint_dir.string();
            } catch (const std::exception& e) {
                note = std::string("; snapshot failed: ") + e.what();
            }
        }
        throw NumericError("training aborted at iteration " + std::to_string(iteration) +
                           ": " + what + note);
    };

    for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
        zero_grads(res.generator.params());
        zero_grads(res.d1.params());
        zero_grads(res.d2.params());

        double sum_e1 = 0.0, sum_e2 = 0.0, sum_la = 0.0, sum_le = 0.0, sum_cap = 0.0;
        double vote1 = 0.0, vote2 = 0.0;  // shared-task combined losses

        for (int b = 0; b < cfg.batch; ++b) {
            if (cursor == count) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            FluctuationSet set = fetch(order[cursor++]);
            validate_fluctuation_set(set);
            const ImageGray& cover = set.cover;
            const int h = cover.height, w = cover.width;
            if (probe_h == 0) {
                if (h < 32 || w < 32)
                    throw ShapeError("training images must be at least 32x32 for the "
                                     "discriminators, got " + std::to_string(h) + "x" +
                                     std::to_string(w));
                probe_h = h;
                probe_w = w;
            } else if (h != probe_h || w != probe_w) {
                throw ShapeError("training pool mixes image sizes");
            }
            const ImageGray& flu = set.fluctuations[static_cast<std::size_t>(
                flu_rng.uniform_int(0, static_cast<std::int64_t>(set.fluctuations.size()) - 1))];

            ProbabilityMap p = res.generator.forward(cover);
            NoiseField noise = make_noise(h, w, derive_seed(noise_base, sample_counter++));
            DoubleTanhGrad dt = double_tanh_modify_with_grad(p, noise, cfg.gamma);

            // continuous stego, clipped to pixel range; clipped entries block
            // the gradient
            Tensor stego(1, 1, h, w);
            Grid clip_mask(h, w, 1.0);
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    double s = static_cast<double>(cover.at(i, j)) + dt.m.m.at(i, j);
                    if (s < 0.0) {
                        s = 0.0;
                        clip_mask.at(i, j) = 0.0;
                    } else if (s > 255.0) {
                        s = 255.0;
                        clip_mask.at(i, j) = 0.0;
                    }
                    stego.at(0, 0, i, j) = s;
                }
            Tensor t_cover = image_to_tensor(cover);
            Tensor t_flu = image_to_tensor(flu);

            double e1 = 0.0, e2 = 0.0, la = 0.0;
            Grid d_la;  // d(batch-mean l_a)/d(stego), this sample's share
            if (cfg.strategy == Strategy::assignment) {
                PairLoss p1 = disc_pair_loss(res.d1, t_cover, stego, true, inv_b);
                PairLoss p2 = disc_pair_loss(res.d2, t_flu, stego, true, inv_b);
                e1 = p1.e;
                e2 = p2.e;
                la = e1 + cfg.lambda * e2;
                d_la = std::move(p1.d_stego);
                for (std::size_t k = 0; k < d_la.v.size(); ++k)
                    d_la.v[k] += cfg.lambda * p2.d_stego.v[k];
            } else {
                SharedTaskGrads st =
                    shared_task_step(res.d1, res.d2, t_cover, stego, t_flu, cfg.lambda_prime);
                e1 = st.losses.combined1;
                e2 = st.losses.combined2;
                la = st.losses.l_a;
                vote1 += e1;
                vote2 += e2;
                d_la = std::move(st.d_la_d_stego);
                for (auto& v : d_la.v) v *= inv_b;
            }

            const double cap = capacity_bits(p);
            const double dev = cap - static_cast<double>(h) * w * cfg.payload;
            const double le = dev * dev;

            // chain rule back to the total-probability map: the adversarial
            // term flows through stego -> modification -> p, the payload term
            // acts on p directly
            Grid dp(h, w);
            for (std::size_t k = 0; k < dp.v.size(); ++k) {
                const double dm_dp =
                    0.5 * (dt.dm_dp_plus.v[k] + dt.dm_dp_minus.v[k]);
                double g = -cfg.alpha * d_la.v[k] * clip_mask.v[k] * dm_dp;
                if (cfg.beta > 0.0) {
                    const double pp = p.p_plus.v[k], pm = p.p_minus.v[k];
                    const double p0 = 1.0 - pp - pm;
                    g += cfg.beta * inv_b * 2.0 * dev * 0.5 *
                         (std::log2(p0 / pp) + std::log2(p0 / pm));
                }
                dp.v[k] = g;
            }
            res.generator.backward(dp);

            sum_e1 += e1;
            sum_e2 += e2;
            sum_la += la;
            sum_le += le;
            sum_cap += cap;
        }

        double m_e1 = sum_e1 * inv_b, m_e2 = sum_e2 * inv_b, m_la = sum_la * inv_b;
        double m_le = sum_le * inv_b, m_cap = sum_cap * inv_b;
        double m_lg = -cfg.alpha * m_la + cfg.beta * m_le;

        if (it == cfg.fault_nan_at) m_la = std::numeric_limits<double>::quiet_NaN();
        for (double v : {m_e1, m_e2, m_la, m_le, m_lg})
            if (!std::isfinite(v)) snapshot_and_abort(it, "non-finite loss");

        opt_g.lr = opt_1.lr = opt_2.lr = lr;
        opt_g.step(res.generator.params());

        DiscId updated;
        if (cfg.strategy == Strategy::assignment) {
            updated = assignment_update(LossPair{m_e1, m_e2}, res.d1, res.d2, opt_1, opt_2,
                                        &res.history.updates, it);
        } else {
            updated = vote1 <= vote2 ? DiscId::D2 : DiscId::D1;
            Discriminator& chosen = updated == DiscId::D1 ? res.d1 : res.d2;
            Adam& opt = updated == DiscId::D1 ? opt_1 : opt_2;
            for (auto& block : chosen.params())
                for (auto& g : *block.grad) g *= inv_b;
            opt.step(chosen.params());
            res.history.updates.append(UpdateRecord{it, m_e1, m_e2, updated});
        }

        res.history.l_g.push_back(m_lg);
        res.history.l_a.push_back(m_la);
        res.history.l_e.push_back(m_le);
        res.history.e1.push_back(m_e1);
        res.history.e2.push_back(m_e2);
        res.history.capacity.push_back(m_cap);
        res.iterations = it;
        metrics.row(it, m_lg, m_la, m_le, m_e1, m_e2, m_cap, lr, updated);

        if (it % cfg.lr_decay_every == 0) lr *= cfg.lr_decay;

        if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            const std::string tag = "ckpt_" + std::to_string(it);
            atomic_checkpoint(
                [&](const std::filesystem::path& p) { res.generator.save(p); },
                cfg.checkpoint_dir / (tag + "_gen.ckpt"));
            atomic_checkpoint([&](const std::filesystem::path& p) { res.d1.save(p); },
                              cfg.checkpoint_dir / (tag + "_d1.ckpt"));
            atomic_checkpoint([&](const std::filesystem::path& p) { res.d2.save(p); },
                              cfg.checkpoint_dir / (tag + "_d2.ckpt"));
        }
    }
    res.final_lr = lr;
    return res;
}

}  // namespace

TrainResult train(const std::vector<FluctuationSet>& sets, const TrainConfig& cfg) {
    return train_impl(sets.size(), [&](std::size_t i) { return sets[i]; }, cfg);
}

TrainResult train(const DatasetManifest& m, const std::filesystem::path& base_dir,
                  const TrainConfig& cfg) {
    return train_impl(
        m.entries.size(), [&](std::size_t i) { return load_entry(m, i, base_dir); }, cfg);
}

}  // namespace gifdl
