#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gifdl/image.hpp"
#include "gifdl/maps.hpp"
#include "gifdl/nn.hpp"
#include "gifdl/tensor.hpp"

namespace gifdl {

// Probabilities inside the cross-entropies are clamped to
// [kCeFloor, 1 - kCeFloor]; a clamped sample contributes zero gradient.
inline constexpr double kCeFloor = 1e-7;

enum class DiscArch { weak, strong };
enum class DiscId { D1, D2 };

const char* to_string(DiscArch arch);
const char* to_string(DiscId id);

// Binary steganalyzer: fixed high-pass residual front end, then trainable
// conv groups, global pooling and a 2-way head. "weak" runs a single 5x5
// all-pass-suppressing kernel in front; "strong" runs a bank of 30 classic
// residual filters and wider 3x3 groups. Inputs are raw pixel values so the
// +-1 embedding signal survives the front end at its native scale.
class Discriminator {
public:
    Discriminator(DiscArch arch, std::uint64_t seed);
    Discriminator(Discriminator&&) noexcept;
    Discriminator& operator=(Discriminator&&) noexcept;
    ~Discriminator();

    // x: (N, 1, H, W) raw pixels, H, W >= 32. Returns logits (N, 2, 1, 1)
    // ordered (genuine, stego).
    Tensor logits(const Tensor& x);
    Tensor backward(const Tensor& dlogits);

    // Softmax (genuine, stego) for one image, using running statistics.
    std::array<double, 2> classify(const ImageGray& img);

    std::vector<ParamBlock> params();        // trainable only; front end excluded
    std::vector<ParamBlock> state_blocks();  // + batch norm running stats
    void set_training(bool on);
    bool training() const { return training_; }
    DiscArch arch() const { return arch_; }

    void save(const std::filesystem::path& path) const;
    static Discriminator load(const std::filesystem::path& path);

private:
    struct GroupImpl;

    DiscArch arch_;
    bool training_ = true;
    Conv2d front_;  // fixed weights, never trained
    std::vector<std::unique_ptr<GroupImpl>> groups_;
    GlobalAvgPool gap_;
    Dense fc_;
};

// -log p(label) on a logit pair, probabilities clamped to the floor band.
// Optionally writes the gradient with respect to the two logits.
double clamped_ce(double z_genuine, double z_stego, int label,
                  double* dz_genuine = nullptr, double* dz_stego = nullptr);

Tensor image_to_tensor(const ImageGray& img);

// One discriminator, one (genuine, stego) pair: e = -log p(genuine on the
// genuine image) - log p(stego on the stego image). Both images go through a
// single concatenated batch so batch-norm statistics cover the pair. When
// with_grads is set, parameter gradients are accumulated scaled by `scale`
// and d(scale * e)/d(stego pixels) is returned.
struct PairLoss {
    double e = 0.0;
    Grid d_stego;
};
PairLoss disc_pair_loss(Discriminator& d, const Tensor& genuine, const Tensor& stego,
                        bool with_grads = false, double scale = 1.0);

struct LossPair {
    double e1 = 0.0;  // D1 on (cover, stego)
    double e2 = 0.0;  // D2 on (fluctuation, stego)
};
LossPair cross_entropy_pair(Discriminator& d1, Discriminator& d2, const ImageGray& cover,
                            const ImageGray& stego, const ImageGray& flu);

struct UpdateRecord {
    std::int64_t iteration = 0;
    double e1 = 0.0;
    double e2 = 0.0;
    DiscId updated = DiscId::D2;
};

class UpdateLog {
public:
    void append(const UpdateRecord& rec) { records_.push_back(rec); }
    const std::vector<UpdateRecord>& records() const { return records_; }
    void save_tsv(const std::filesystem::path& path) const;
    static UpdateLog load_tsv(const std::filesystem::path& path);

private:
    std::vector<UpdateRecord> records_;
};

// The loser updates: e1 <= e2 picks D2, otherwise D1.
DiscId choose_assignment(double e1, double e2);

// Steps exactly one discriminator (whose gradients must already be
// accumulated) and logs the choice.
DiscId assignment_update(const LossPair& lp, Discriminator& d1, Discriminator& d2,
                         Adam& opt1, Adam& opt2, UpdateLog* log, std::int64_t iteration);

// Shared-task variant: both discriminators see both pairs and the combined
// loss is E_i(flu, stego) + lambda' * E_i(cover, stego). The max combined
// loss drives the discriminator update, the min is the generator's
// adversarial term; ties resolve to D2.
struct SharedTaskLosses {
    double l_d = 0.0;
    double l_a = 0.0;
    DiscId updated = DiscId::D2;
    DiscId generator_target = DiscId::D2;
    double combined1 = 0.0;
    double combined2 = 0.0;
};
SharedTaskLosses shared_task_losses(Discriminator& d1, Discriminator& d2,
                                    const ImageGray& cover, const ImageGray& stego,
                                    const ImageGray& flu, double lambda_prime);

// Training-path version on tensors: accumulates parameter gradients in both
// discriminators and returns d(l_a)/d(stego pixels) taken through the
// min-loss discriminator.
struct SharedTaskGrads {
    SharedTaskLosses losses;
    Grid d_la_d_stego;
};
SharedTaskGrads shared_task_step(Discriminator& d1, Discriminator& d2, const Tensor& cover,
                                 const Tensor& stego, const Tensor& flu, double lambda_prime);

}  // namespace gifdl
