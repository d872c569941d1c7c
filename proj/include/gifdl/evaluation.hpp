#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gifdl/adversary.hpp"
#include "gifdl/image.hpp"
#include "gifdl/maps.hpp"

namespace gifdl {

struct EvalReport {
    double p_fa = 0.0;  // covers flagged as stego
    double p_md = 0.0;  // stegos passed as covers
    double p_e = 0.0;   // (p_fa + p_md) / 2
    double payload = 0.0;
    std::string method;
    int n_train = 0, n_val = 0, n_test = 0;
};

// Detection error from binary labels (0 = cover, 1 = stego) and predictions.
// Both classes must be present; method/payload/split fields are left for the
// caller to stamp.
EvalReport compute_pe(const std::vector<int>& labels, const std::vector<int>& predictions);

struct PairSample {
    ImageGray cover;
    ImageGray stego;
};

struct SteganalyzerConfig {
    DiscArch arch = DiscArch::weak;
    int iterations = 300;   // optimizer steps
    int batch_pairs = 4;    // cover/stego pairs per step
    double lr = 1e-3;
    int val_every = 25;     // validation cadence for model selection
    std::uint64_t rng_seed = 1;
    std::string method;     // stamped into the report
    double payload = 0.0;   // stamped into the report

    void validate() const;
};

struct SteganalyzerResult {
    Discriminator model;  // parameters of the best validation snapshot
    EvalReport report;    // test-split performance of that snapshot
    std::vector<double> val_pe_history;
};

// Trains a fresh binary steganalyzer on cover/stego pairs, selects the
// checkpoint with the lowest validation detection error, and reports on the
// held-out test split. Deterministic for a fixed config.
SteganalyzerResult train_steganalyzer(const std::vector<PairSample>& train_pairs,
                                      const std::vector<PairSample>& val_pairs,
                                      const std::vector<PairSample>& test_pairs,
                                      const SteganalyzerConfig& cfg);

enum class BaselineScheme { uniform, hill_like };

// Reference cost schemes for directional comparisons: "uniform" charges every
// change the same, "hill_like" prices changes by inverted smoothed local
// activity (cheap in texture, expensive in flat regions).
CostMap baseline_costs(const ImageGray& cover, BaselineScheme scheme);

// Line-oriented report records (TSV with a header), plus a rendered
// method-by-payload table of detection error percentages.
void save_reports(const std::vector<EvalReport>& reports,
                  const std::filesystem::path& path);
std::vector<EvalReport> load_reports(const std::filesystem::path& path);
std::string render_report_table(const std::vector<EvalReport>& reports);

}  // namespace gifdl
