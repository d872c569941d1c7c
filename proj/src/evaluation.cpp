#include "gifdl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "gifdl/errors.hpp"
#include "gifdl/rng.hpp"

namespace gifdl {

EvalReport compute_pe(const std::vector<int>& labels, const std::vector<int>& predictions) {
    if (labels.empty()) throw EvalError("no samples to score");
    if (labels.size() != predictions.size())
        throw EvalError("labels and predictions differ in length");
    std::size_t n0 = 0, n1 = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if ((labels[k] != 0 && labels[k] != 1) || (predictions[k] != 0 && predictions[k] != 1))
            throw EvalError("labels and predictions must be 0 or 1");
        if (labels[k] == 0) {
            ++n0;
            fp += predictions[k] == 1;
        } else {
            ++n1;
            fn += predictions[k] == 0;
        }
    }
    if (n0 == 0 || n1 == 0) throw EvalError("both classes must be present");
    EvalReport r;
    r.p_fa = static_cast<double>(fp) / static_cast<double>(n0);
    r.p_md = static_cast<double>(fn) / static_cast<double>(n1);
    r.p_e = 0.5 * (r.p_fa + r.p_md);
    return r;
}

void SteganalyzerConfig::validate() const {
    if (iterations < 1) throw ConfigError("steganalyzer iterations must be >= 1");
    if (batch_pairs < 1) throw ConfigError("batch_pairs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("steganalyzer lr must be positive");
    if (val_every < 1) throw ConfigError("val_every must be >= 1");
}

namespace {

void check_pairs(const std::vector<PairSample>& pairs, const char* which, int& h, int& w) {
    if (pairs.empty()) throw EvalError(std::string(which) + " split is empty");
    for (const auto& p : pairs) {
        if (!p.cover.same_shape(p.stego))
            throw ShapeError(std::string(which) + " pair mixes cover and stego sizes");
        if (h == 0) {
            h = p.cover.height;
            w = p.cover.width;
        } else if (p.cover.height != h || p.cover.width != w) {
            throw ShapeError(std::string(which) + " split mixes image sizes");
        }
    }
}

// predictions for a pair list under the model's running statistics
void predict_pairs(Discriminator& model, const std::vector<PairSample>& pairs,
                   std::vector<int>& labels, std::vector<int>& preds) {
    labels.clear();
    preds.clear();
    for (const auto& p : pairs) {
        auto pc = model.classify(p.cover);
        labels.push_back(0);
        preds.push_back(pc[1] > pc[0] ? 1 : 0);
        auto ps = model.classify(p.stego);
        labels.push_back(1);
        preds.push_back(ps[1] > ps[0] ? 1 : 0);
    }
}

std::map<std::string, std::vector<double>> snapshot_params(Discriminator& model) {
    std::map<std::string, std::vector<double>> snap;
    for (const auto& block : model.state_blocks()) snap[block.name] = *block.value;
    return snap;
}

void restore_snapshot(Discriminator& model,
                      const std::map<std::string, std::vector<double>>& snap) {
    for (auto& block : model.state_blocks()) {
        auto it = snap.find(block.name);
        if (it == snap.end()) throw ParseError("snapshot misses block " + block.name);
        *block.value = it->second;
    }
}

}  // namespace

SteganalyzerResult train_steganalyzer(const std::vector<PairSample>& train_pairs,
                                      const std::vector<PairSample>& val_pairs,
                                      const std::vector<PairSample>& test_pairs,
                                      const SteganalyzerConfig& cfg) {
    cfg.validate();
    int h = 0, w = 0;
    check_pairs(train_pairs, "train", h, w);
    check_pairs(val_pairs, "val", h, w);
    check_pairs(test_pairs, "test", h, w);

    SteganalyzerResult res{
        Discriminator(cfg.arch, derive_seed(cfg.rng_seed, "steganalyzer.init")), {}, {}};
    Adam opt;
    opt.lr = cfg.lr;
    Rng order_rng(derive_seed(cfg.rng_seed, "steganalyzer.order"));
    std::vector<std::size_t> order(train_pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();

    double best_pe = 2.0;
    std::map<std::string, std::vector<double>> best_snap;
    std::vector<int> labels, preds;

    auto run_validation = [&]() {
        res.model.set_training(false);
        predict_pairs(res.model, val_pairs, labels, preds);
        res.model.set_training(true);
        double pe = compute_pe(labels, preds).p_e;
        res.val_pe_history.push_back(pe);
        if (pe < best_pe) {
            best_pe = pe;
            best_snap = snapshot_params(res.model);
        }
    };

    const int n_batch = 2 * cfg.batch_pairs;
    for (int step = 1; step <= cfg.iterations; ++step) {
        Tensor x(n_batch, 1, h, w);
        std::vector<int> batch_labels(n_batch);
        for (int b = 0; b < cfg.batch_pairs; ++b) {
            if (cursor == order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            const PairSample& pair = train_pairs[order[cursor++]];
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    x.at(2 * b, 0, i, j) = static_cast<double>(pair.cover.at(i, j));
                    x.at(2 * b + 1, 0, i, j) = static_cast<double>(pair.stego.at(i, j));
                }
            batch_labels[2 * b] = 0;
            batch_labels[2 * b + 1] = 1;
        }

        zero_grads(res.model.params());
        Tensor z = res.model.logits(x);
        Tensor dz(n_batch, 2, 1, 1);
        const double inv_n = 1.0 / n_batch;
        for (int b = 0; b < n_batch; ++b) {
            double dzg = 0.0, dzs = 0.0;
            clamped_ce(z.at(b, 0, 0, 0), z.at(b, 1, 0, 0), batch_labels[b], &dzg, &dzs);
            dz.at(b, 0, 0, 0) = dzg * inv_n;
            dz.at(b, 1, 0, 0) = dzs * inv_n;
        }
        res.model.backward(dz);
        opt.step(res.model.params());

        if (step % cfg.val_every == 0 || step == cfg.iterations) run_validation();
    }

    if (!best_snap.empty()) restore_snapshot(res.model, best_snap);
    res.model.set_training(false);
    predict_pairs(res.model, test_pairs, labels, preds);
    res.report = compute_pe(labels, preds);
    res.report.method = cfg.method;
    res.report.payload = cfg.payload;
    res.report.n_train = static_cast<int>(train_pairs.size());
    res.report.n_val = static_cast<int>(val_pairs.size());
    res.report.n_test = static_cast<int>(test_pairs.size());
    return res;
}

namespace {

// mirror-padded read
double mpx(const Grid& g, int i, int j) {
    if (i < 0) i = -i - 1;
    if (i >= g.height) i = 2 * g.height - 1 - i;
    if (j < 0) j = -j - 1;
    if (j >= g.width) j = 2 * g.width - 1 - j;
    return g.at(i, j);
}

Grid box_filter(const Grid& g, int radius) {
    Grid tmp(g.height, g.width), out(g.height, g.width);
    const double inv = 1.0 / (2 * radius + 1);
    for (int i = 0; i < g.height; ++i)
        for (int j = 0; j < g.width; ++j) {
            double s = 0.0;
            for (int d = -radius; d <= radius; ++d) s += mpx(g, i, j + d);
            tmp.at(i, j) = s * inv;
        }
    for (int i = 0; i < g.height; ++i)
        for (int j = 0; j < g.width; ++j) {
            double s = 0.0;
            for (int d = -radius; d <= radius; ++d) s += mpx(tmp, i + d, j);
            out.at(i, j) = s * inv;
        }
    return out;
}

}  // namespace

CostMap baseline_costs(const ImageGray& cover, BaselineScheme scheme) {
    const int h = cover.height, w = cover.width;
    CostMap out;
    if (scheme == BaselineScheme::uniform) {
        out.rho_plus = Grid(h, w, 1.0);
        out.rho_minus = Grid(h, w, 1.0);
        return out;
    }

    // inverse local activity: high-pass magnitude, smoothed, inverted,
    // spread over a wide window so flat borders of texture stay cheap
    static const double kb[3][3] = {{-1, 2, -1}, {2, -4, 2}, {-1, 2, -1}};
    Grid img(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) img.at(i, j) = static_cast<double>(cover.at(i, j));
    Grid act(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double s = 0.0;
            for (int a = -1; a <= 1; ++a)
                for (int b = -1; b <= 1; ++b) s += kb[a + 1][b + 1] * mpx(img, i + a, j + b);
            act.at(i, j) = std::abs(s) * 0.25;
        }
    Grid smooth = box_filter(act, 1);
    Grid inv(h, w);
    for (std::size_t k = 0; k < inv.v.size(); ++k) inv.v[k] = 1.0 / (smooth.v[k] + 1e-10);
    Grid cost = box_filter(inv, 7);
    out.rho_plus = cost;
    out.rho_minus = std::move(cost);
    return out;
}

void save_reports(const std::vector<EvalReport>& reports,
                  const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report file: " + path.string());
    out << "method\tpayload\tp_fa\tp_md\tp_e\tn_train\tn_val\tn_test\n";
    char buf[160];
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%s\t%.4f\t%.17g\t%.17g\t%.17g\t%d\t%d\t%d\n",
                      r.method.c_str(), r.payload, r.p_fa, r.p_md, r.p_e, r.n_train,
                      r.n_val, r.n_test);
        out << buf;
    }
    if (!out.flush()) throw IoError("short write on report file: " + path.string());
}

std::vector<EvalReport> load_reports(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read report file: " + path.string());
    std::string line;
    if (!std::getline(in, line) ||
        line != "method\tpayload\tp_fa\tp_md\tp_e\tn_train\tn_val\tn_test")
        throw ParseError("not a report file: " + path.string());
    std::vector<EvalReport> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        EvalReport r;
        std::string field;
        try {
            if (!std::getline(ss, r.method, '\t')) throw std::invalid_argument("method");
            auto next = [&]() {
                if (!std::getline(ss, field, '\t')) throw std::invalid_argument("field");
                return field;
            };
            r.payload = std::stod(next());
            r.p_fa = std::stod(next());
            r.p_md = std::stod(next());
            r.p_e = std::stod(next());
            r.n_train = std::stoi(next());
            r.n_val = std::stoi(next());
            r.n_test = std::stoi(next());
        } catch (const std::exception&) {
            throw ParseError("report line " + std::to_string(lineno) + " is malformed");
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string render_report_table(const std::vector<EvalReport>& reports) {
    std::set<double> payload_set;
    std::vector<std::string> methods;
    for (const auto& r : reports) {
        payload_set.insert(r.payload);
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
            methods.push_back(r.method);
    }
    std::vector<double> payloads(payload_set.begin(), payload_set.end());
    std::map<std::pair<std::string, double>, double> cell;
    for (const auto& r : reports) cell[{r.method, r.payload}] = r.p_e;

    std::size_t name_w = std::string("method").size();
    for (const auto& m : methods) name_w = std::max(name_w, m.size());

    std::ostringstream out;
    out << "detection error p_e (%) by payload (bpp)\n";
    out << std::string(name_w, ' ') << "  ";
    char buf[32];
    for (double q : payloads) {
        std::snprintf(buf, sizeof buf, "%7.2f", q);
        out << buf;
    }
    out << '\n';
    for (const auto& m : methods) {
        out << m << std::string(name_w - m.size(), ' ') << "  ";
        for (double q : payloads) {
            auto it = cell.find({m, q});
            if (it == cell.end()) {
                out << "      -";
            } else {
                std::snprintf(buf, sizeof buf, "%7.2f", 100.0 * it->second);
                out << buf;
            }
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace gifdl
