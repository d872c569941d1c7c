#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gifdl/adversary.hpp"
#include "gifdl/dataset.hpp"
#include "gifdl/maps.hpp"
#include "gifdl/unet.hpp"

namespace gifdl {

// How the two discriminators share the work each iteration: "assignment"
// updates whichever lost its own pairing (tie goes to D2), "shared_task"
// scores both on both pairings and updates the worse combined loss.
enum class Strategy { assignment, shared_task };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

// Every field is also a key in the text config format (see
// train_config_from_keys); field name == key name.
struct TrainConfig {
    std::int64_t iterations = 200;  // generator steps
    double lr = 1e-4;
    double lr_decay = 0.9;          // multiplier applied every lr_decay_every steps
    std::int64_t lr_decay_every = 5000;
    double alpha = 1.0;             // weight on the adversarial term
    double beta = 1e-7;             // weight on the payload term; 0 disables it
    double lambda = 1.0;            // weight of the second discriminator's loss
    double gamma = 60.0;            // double-tanh sharpness
    double payload = 0.4;           // target embedding rate, bits per pixel
    int batch = 1;                  // fluctuation sets per iteration
    std::uint64_t rng_seed = 1;
    Strategy strategy = Strategy::assignment;
    double lambda_prime = 1.0;      // shared-task cover-pair weight
    DiscArch disc_arch = DiscArch::weak;
    std::int64_t checkpoint_every = 0;  // iterations; 0 disables
    std::filesystem::path checkpoint_dir;
    std::filesystem::path metrics_path;  // per-iteration TSV; empty disables
    std::int64_t fault_nan_at = -1;  // test seam: poison the losses at this iteration

    void validate() const;
};

// Text round trip: "key = value" lines, # comments. Unknown keys and
// malformed values throw ConfigError.
TrainConfig train_config_from_keys(const std::map<std::string, std::string>& kv,
                                   const TrainConfig& base = TrainConfig{});
std::map<std::string, std::string> train_config_to_keys(const TrainConfig& cfg);
TrainConfig load_train_config(const std::filesystem::path& path,
                              const TrainConfig& base = TrainConfig{});
void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path);

// Total ternary entropy of a probability map in bits: each pixel contributes
// H(p_plus, p_minus, 1 - p_plus - p_minus). Zero probabilities contribute
// zero; components must be nonnegative and sum to at most 1.
double capacity_bits(const ProbabilityMap& p);

// Squared deviation of the map's capacity from the target payload of
// q bits per pixel.
double entropy_loss(const ProbabilityMap& p, double q);

// d(entropy_loss)/d(total p) for symmetric maps (p_plus = p_minus = p/2).
// Undefined on the simplex boundary; all three components must be positive.
Grid entropy_loss_grad(const ProbabilityMap& p, double q);

// -alpha * (e1 + lambda * e2) + beta * l_e.
double generator_loss(double e1, double e2, double l_e, const TrainConfig& cfg);

struct TrainHistory {
    std::vector<double> l_g, l_a, l_e, e1, e2, capacity;
    UpdateLog updates;
};

struct TrainResult {
    UNetGenerator generator;
    Discriminator d1;
    Discriminator d2;
    TrainHistory history;
    std::int64_t iterations = 0;
    double final_lr = 0.0;
};

// One adversarial iteration per generator step: sample a batch of
// fluctuation sets, run the generator, simulate embedding with the smooth
// modifier, score the continuous stego against cover (D1) and a randomly
// drawn fluctuation (D2), step exactly one discriminator and the generator.
// Stego values are clipped to [0,255]; clipped pixels pass no gradient.
// Histories hold batch means, one entry per iteration. Deterministic for a
// fixed config. Throws NumericError (after a best-effort snapshot into
// checkpoint_dir) if any loss goes non-finite.
TrainResult train(const std::vector<FluctuationSet>& sets, const TrainConfig& cfg);

// Streaming variant: entries are loaded from disk as the batch needs them.
TrainResult train(const DatasetManifest& m, const std::filesystem::path& base_dir,
                  const TrainConfig& cfg);

}  // namespace gifdl
