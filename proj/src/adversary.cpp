#include "gifdl/adversary.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "gifdl/errors.hpp"
#include "gifdl/rng.hpp"

namespace gifdl {
namespace {

using K5 = std::array<std::array<double, 5>, 5>;

K5 rot90(const K5& in) {
    K5 out{};
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) out[i][j] = in[4 - j][i];
    return out;
}

void push_filter(std::vector<double>& w, const K5& k, double q) {
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) w.push_back(k[i][j] / q);
}

const K5 kKv = {{{-1, 2, -2, 2, -1},
                 {2, -6, 8, -6, 2},
                 {-2, 8, -12, 8, -2},
                 {2, -6, 8, -6, 2},
                 {-1, 2, -2, 2, -1}}};

// Classic directional residual bank: 8 first-order, 4 second-order,
// 8 third-order differences, the two square predictors and 4+4 edge
// predictors, each scaled by its prediction weight. 30 filters total.
std::vector<double> residual_bank() {
    std::vector<double> w;
    w.reserve(30 * 25);
    const int dirs8[8][2] = {{0, 1},  {1, 1},   {1, 0},  {1, -1},
                             {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}};
    for (auto& d : dirs8) {
        K5 k{};
        k[2][2] = -1;
        k[2 + d[0]][2 + d[1]] = 1;
        push_filter(w, k, 1.0);
    }
    const int axes4[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
    for (auto& d : axes4) {
        K5 k{};
        k[2 - d[0]][2 - d[1]] = 1;
        k[2][2] = -2;
        k[2 + d[0]][2 + d[1]] = 1;
        push_filter(w, k, 2.0);
    }
    for (auto& d : dirs8) {
        K5 k{};
        k[2 - d[0]][2 - d[1]] = 1;
        k[2][2] = -3;
        k[2 + d[0]][2 + d[1]] = 3;
        k[2 + 2 * d[0]][2 + 2 * d[1]] = -1;
        push_filter(w, k, 3.0);
    }
    K5 kb{};
    const double kb3[3][3] = {{-1, 2, -1}, {2, -4, 2}, {-1, 2, -1}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) kb[i + 1][j + 1] = kb3[i][j];
    push_filter(w, kb, 4.0);
    push_filter(w, kKv, 12.0);

    K5 edge3{};
    const double e3[2][3] = {{-1, 2, -1}, {2, -4, 2}};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) edge3[i + 1][j + 1] = e3[i][j];
    K5 e = edge3;
    for (int r = 0; r < 4; ++r) {
        push_filter(w, e, 4.0);
        e = rot90(e);
    }
    K5 edge5{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) edge5[i][j] = kKv[i][j];
    e = edge5;
    for (int r = 0; r < 4; ++r) {
        push_filter(w, e, 12.0);
        e = rot90(e);
    }
    return w;
}

Tensor stack_pair(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b) || a.n != 1 || a.c != 1)
        throw ShapeError("pair images must both be (1,1,H,W), got " + a.shape_str() +
                         " and " + b.shape_str());
    Tensor out(2, 1, a.h, a.w);
    std::memcpy(&out.at(0, 0, 0, 0), a.v.data(), a.v.size() * sizeof(double));
    std::memcpy(&out.at(1, 0, 0, 0), b.v.data(), b.v.size() * sizeof(double));
    return out;
}

}  // namespace

const char* to_string(DiscArch arch) { return arch == DiscArch::weak ? "weak" : "strong"; }
const char* to_string(DiscId id) { return id == DiscId::D1 ? "D1" : "D2"; }

struct Discriminator::GroupImpl {
    enum class Act { abs_tanh, tanh, lrelu };

    Conv2d conv;
    BatchNorm2d bn;
    Act act;
    AbsLayer abs;
    TanhLayer th;
    LeakyReLU lrelu;
    std::unique_ptr<AvgPool2d> pool;  // absent on the last group (global pool follows)

    GroupImpl(int in_ch, int out_ch, int k, int pad, Act act, int pool_k, int pool_pad)
        : conv(in_ch, out_ch, k, 1, pad, false), bn(out_ch), act(act), lrelu(0.2) {
        if (pool_k > 0) pool = std::make_unique<AvgPool2d>(pool_k, 2, pool_pad);
    }

    Tensor forward(const Tensor& x) {
        Tensor t = conv.forward(x);
        switch (act) {
            case Act::abs_tanh: t = th.forward(bn.forward(abs.forward(t))); break;
            case Act::tanh: t = th.forward(bn.forward(t)); break;
            case Act::lrelu: t = lrelu.forward(bn.forward(t)); break;
        }
        if (pool) t = pool->forward(t);
        return t;
    }

    Tensor backward(const Tensor& dout) {
        Tensor d = pool ? pool->backward(dout) : dout;
        switch (act) {
            case Act::abs_tanh: d = abs.backward(bn.backward(th.backward(d))); break;
            case Act::tanh: d = bn.backward(th.backward(d)); break;
            case Act::lrelu: d = bn.backward(lrelu.backward(d)); break;
        }
        return conv.backward(d);
    }
};

Discriminator::Discriminator(Discriminator&&) noexcept = default;
Discriminator& Discriminator::operator=(Discriminator&&) noexcept = default;
Discriminator::~Discriminator() = default;

Discriminator::Discriminator(DiscArch arch, std::uint64_t seed)
    : arch_(arch),
      front_(1, arch == DiscArch::weak ? 1 : 30, 5, 1, 2, false),
      fc_(128, 2) {
    using Act = GroupImpl::Act;
    if (arch_ == DiscArch::weak) {
        front_.weight.clear();
        push_filter(front_.weight, kKv, 12.0);
        groups_.push_back(std::make_unique<GroupImpl>(1, 8, 5, 2, Act::abs_tanh, 5, 2));
        groups_.push_back(std::make_unique<GroupImpl>(8, 16, 5, 2, Act::tanh, 5, 2));
        groups_.push_back(std::make_unique<GroupImpl>(16, 32, 1, 0, Act::lrelu, 5, 2));
        groups_.push_back(std::make_unique<GroupImpl>(32, 64, 1, 0, Act::lrelu, 5, 2));
        groups_.push_back(std::make_unique<GroupImpl>(64, 128, 1, 0, Act::lrelu, 0, 0));
    } else {
        front_.weight = residual_bank();
        groups_.push_back(std::make_unique<GroupImpl>(30, 32, 3, 1, Act::lrelu, 3, 1));
        groups_.push_back(std::make_unique<GroupImpl>(32, 64, 3, 1, Act::lrelu, 3, 1));
        groups_.push_back(std::make_unique<GroupImpl>(64, 128, 3, 1, Act::lrelu, 3, 1));
        groups_.push_back(std::make_unique<GroupImpl>(128, 128, 3, 1, Act::lrelu, 0, 0));
    }
    Rng rng(derive_seed(seed, "disc.init"));
    for (auto& g : groups_) g->conv.init(rng);
    fc_.init(rng);
}

Tensor Discriminator::logits(const Tensor& x) {
    if (x.c != 1) throw ShapeError("discriminator expects one channel, got " + x.shape_str());
    if (x.h < 32 || x.w < 32)
        throw ShapeError("discriminator input below the 32-pixel minimum: " + x.shape_str());
    Tensor t = front_.forward(x);
    for (auto& g : groups_) t = g->forward(t);
    t = fc_.forward(gap_.forward(t));
    check_finite(t, std::string("discriminator(") + to_string(arch_) + ") logits");
    return t;
}

Tensor Discriminator::backward(const Tensor& dlogits) {
    Tensor d = gap_.backward(fc_.backward(dlogits));
    for (auto it = groups_.rbegin(); it != groups_.rend(); ++it) d = (*it)->backward(d);
    return front_.backward(d);
}

std::array<double, 2> Discriminator::classify(const ImageGray& img) {
    bool was = training_;
    set_training(false);
    Tensor lg = logits(image_to_tensor(img));
    set_training(was);
    double z0 = lg.at(0, 0, 0, 0), z1 = lg.at(0, 1, 0, 0);
    double m = std::max(z0, z1);
    double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

std::vector<ParamBlock> Discriminator::params() {
    std::vector<ParamBlock> out;
    for (std::size_t i = 0; i < groups_.size(); ++i) {
        std::string p = "g" + std::to_string(i + 1);
        groups_[i]->conv.collect(p + ".conv", out);
        groups_[i]->bn.collect(p + ".bn", out);
    }
    fc_.collect("fc", out);
    return out;
}

std::vector<ParamBlock> Discriminator::state_blocks() {
    std::vector<ParamBlock> out = params();
    for (std::size_t i = 0; i < groups_.size(); ++i)
        groups_[i]->bn.collect_state("g" + std::to_string(i + 1) + ".bn", out);
    return out;
}

void Discriminator::set_training(bool on) {
    training_ = on;
    for (auto& g : groups_) g->bn.training = on;
}

void Discriminator::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["arch"] = to_string(arch_);
    auto* self = const_cast<Discriminator*>(this);
    save_checkpoint(path, "discriminator", j.dump(), self->state_blocks());
}

Discriminator Discriminator::load(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "discriminator")
        throw ParseError("checkpoint kind '" + ck.kind + "' is not a discriminator");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ck.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("discriminator config: ") + e.what());
    }
    std::string arch = j.value("arch", "");
    if (arch != "weak" && arch != "strong")
        throw ParseError("discriminator config has unknown arch '" + arch + "'");
    Discriminator d(arch == "weak" ? DiscArch::weak : DiscArch::strong, 0);
    restore_params(ck, d.state_blocks());
    return d;
}

double clamped_ce(double z_genuine, double z_stego, int label, double* dz_genuine,
                  double* dz_stego) {
    if (!std::isfinite(z_genuine) || !std::isfinite(z_stego))
        throw NumericError("cross entropy got non-finite logits");
    if (dz_genuine) *dz_genuine = 0.0;
    if (dz_stego) *dz_stego = 0.0;
    double m = std::max(z_genuine, z_stego);
    double e0 = std::exp(z_genuine - m);
    double e1 = std::exp(z_stego - m);
    double p0 = e0 / (e0 + e1);
    double p1 = e1 / (e0 + e1);
    double p = label == 0 ? p0 : p1;
    if (p < kCeFloor) return -std::log(kCeFloor);
    if (p > 1.0 - kCeFloor) return -std::log(1.0 - kCeFloor);
    if (dz_genuine) {
        *dz_genuine = p0 - (label == 0 ? 1.0 : 0.0);
        *dz_stego = p1 - (label == 1 ? 1.0 : 0.0);
    }
    return -std::log(p);
}

Tensor image_to_tensor(const ImageGray& img) {
    Tensor t(1, 1, img.height, img.width);
    for (int i = 0; i < img.height; ++i)
        for (int j = 0; j < img.width; ++j) t.at(0, 0, i, j) = img.at(i, j);
    return t;
}

PairLoss disc_pair_loss(Discriminator& d, const Tensor& genuine, const Tensor& stego,
                        bool with_grads, double scale) {
    Tensor lg = d.logits(stack_pair(genuine, stego));
    double g0 = 0, g1 = 0, s0 = 0, s1 = 0;
    PairLoss out;
    out.e = clamped_ce(lg.at(0, 0, 0, 0), lg.at(0, 1, 0, 0), 0,
                       with_grads ? &g0 : nullptr, with_grads ? &g1 : nullptr) +
            clamped_ce(lg.at(1, 0, 0, 0), lg.at(1, 1, 0, 0), 1,
                       with_grads ? &s0 : nullptr, with_grads ? &s1 : nullptr);
    if (with_grads) {
        Tensor dl(2, 2, 1, 1, 0.0);
        dl.at(0, 0, 0, 0) = scale * g0;
        dl.at(0, 1, 0, 0) = scale * g1;
        dl.at(1, 0, 0, 0) = scale * s0;
        dl.at(1, 1, 0, 0) = scale * s1;
        Tensor dx = d.backward(dl);
        out.d_stego = Grid(stego.h, stego.w);
        for (int i = 0; i < stego.h; ++i)
            for (int j = 0; j < stego.w; ++j) out.d_stego.at(i, j) = dx.at(1, 0, i, j);
    }
    return out;
}

LossPair cross_entropy_pair(Discriminator& d1, Discriminator& d2, const ImageGray& cover,
                            const ImageGray& stego, const ImageGray& flu) {
    if (!cover.same_shape(stego) || !cover.same_shape(flu))
        throw ShapeError("cover, stego and fluctuation sizes differ");
    Tensor st = image_to_tensor(stego);
    LossPair lp;
    lp.e1 = disc_pair_loss(d1, image_to_tensor(cover), st).e;
    lp.e2 = disc_pair_loss(d2, image_to_tensor(flu), st).e;
    return lp;
}

void UpdateLog::save_tsv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write update log: " + path.string());
    out << "iteration\te1\te2\tupdated\n";
    for (const auto& r : records_)
        out << r.iteration << '\t' << r.e1 << '\t' << r.e2 << '\t' << to_string(r.updated)
            << '\n';
    if (!out.flush()) throw IoError("short write on update log: " + path.string());
}

UpdateLog UpdateLog::load_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read update log: " + path.string());
    UpdateLog log;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("update log is empty: " + path.string());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        UpdateRecord r;
        std::string id;
        if (!(ss >> r.iteration >> r.e1 >> r.e2 >> id))
            throw ParseError("bad update log line: " + line);
        if (id == "D1")
            r.updated = DiscId::D1;
        else if (id == "D2")
            r.updated = DiscId::D2;
        else
            throw ParseError("bad discriminator id in update log: " + id);
        log.append(r);
    }
    return log;
}

DiscId choose_assignment(double e1, double e2) {
    return e1 <= e2 ? DiscId::D2 : DiscId::D1;
}

DiscId assignment_update(const LossPair& lp, Discriminator& d1, Discriminator& d2,
                         Adam& opt1, Adam& opt2, UpdateLog* log, std::int64_t iteration) {
    DiscId which = choose_assignment(lp.e1, lp.e2);
    if (which == DiscId::D1)
        opt1.step(d1.params());
    else
        opt2.step(d2.params());
    if (log) log->append(UpdateRecord{iteration, lp.e1, lp.e2, which});
    return which;
}

SharedTaskLosses shared_task_losses(Discriminator& d1, Discriminator& d2,
                                    const ImageGray& cover, const ImageGray& stego,
                                    const ImageGray& flu, double lambda_prime) {
    if (!(lambda_prime > 0.0)) throw ConfigError("lambda_prime must be positive");
    Tensor ct = image_to_tensor(cover);
    Tensor st = image_to_tensor(stego);
    Tensor ft = image_to_tensor(flu);
    SharedTaskLosses out;
    out.combined1 = disc_pair_loss(d1, ft, st).e + lambda_prime * disc_pair_loss(d1, ct, st).e;
    out.combined2 = disc_pair_loss(d2, ft, st).e + lambda_prime * disc_pair_loss(d2, ct, st).e;
    out.l_d = std::max(out.combined1, out.combined2);
    out.l_a = std::min(out.combined1, out.combined2);
    out.updated = out.combined1 <= out.combined2 ? DiscId::D2 : DiscId::D1;
    out.generator_target = out.combined1 < out.combined2 ? DiscId::D1 : DiscId::D2;
    return out;
}

SharedTaskGrads shared_task_step(Discriminator& d1, Discriminator& d2, const Tensor& cover,
                                 const Tensor& stego, const Tensor& flu,
                                 double lambda_prime) {
    if (!(lambda_prime > 0.0)) throw ConfigError("lambda_prime must be positive");
    SharedTaskGrads out;
    PairLoss f1 = disc_pair_loss(d1, flu, stego, true, 1.0);
    PairLoss c1 = disc_pair_loss(d1, cover, stego, true, lambda_prime);
    PairLoss f2 = disc_pair_loss(d2, flu, stego, true, 1.0);
    PairLoss c2 = disc_pair_loss(d2, cover, stego, true, lambda_prime);
    out.losses.combined1 = f1.e + lambda_prime * c1.e;
    out.losses.combined2 = f2.e + lambda_prime * c2.e;
    out.losses.l_d = std::max(out.losses.combined1, out.losses.combined2);
    out.losses.l_a = std::min(out.losses.combined1, out.losses.combined2);
    out.losses.updated =
        out.losses.combined1 <= out.losses.combined2 ? DiscId::D2 : DiscId::D1;
    out.losses.generator_target =
        out.losses.combined1 < out.losses.combined2 ? DiscId::D1 : DiscId::D2;

    const PairLoss& fa = out.losses.generator_target == DiscId::D1 ? f1 : f2;
    const PairLoss& cb = out.losses.generator_target == DiscId::D1 ? c1 : c2;
    out.d_la_d_stego = Grid(stego.h, stego.w);
    for (int i = 0; i < stego.h; ++i)
        for (int j = 0; j < stego.w; ++j)
            out.d_la_d_stego.at(i, j) = fa.d_stego.at(i, j) + cb.d_stego.at(i, j);
    return out;
}

}  // namespace gifdl
