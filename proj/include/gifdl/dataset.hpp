#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "gifdl/image.hpp"

namespace gifdl {

struct GenerationRequest {
    std::string prompt;
    std::uint64_t seed = 0;
    double cfg_scale = 0.0;  // guidance weight, must be positive
};

// cfg values are compared and keyed at the sweep granularity (1e-4).
long long cfg_key(double cfg);
std::string format_cfg(double cfg);

class T2IBackend {
public:
    virtual ~T2IBackend() = default;
    // Deterministic for a fixed request. Throws BackendError (echoing the
    // request) when the image cannot be produced.
    virtual ImageGray generate(const GenerationRequest& req) = 0;
};

// Offline stand-in for a text-to-image service: a prompt/seed-keyed smooth
// lattice with a texture layer, plus cfg-keyed high-frequency noise, so
// images from nearby cfg values differ by a few gray levels of MSE.
class ProceduralBackend : public T2IBackend {
public:
    ProceduralBackend(int height, int width);
    ImageGray generate(const GenerationRequest& req) override;

private:
    int height_, width_;
};

// Reads pre-generated images from a directory keyed by (prompt hash, seed,
// cfg). Missing files are backend errors.
class RecordedBackend : public T2IBackend {
public:
    explicit RecordedBackend(std::filesystem::path dir);
    ImageGray generate(const GenerationRequest& req) override;

    static std::filesystem::path recorded_path(const std::filesystem::path& dir,
                                               const GenerationRequest& req);

private:
    std::filesystem::path dir_;
};

struct HttpBackendConfig {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string path = "/generate";
    double timeout_s = 30.0;
    int retries = 2;      // additional attempts after the first
    int max_in_flight = 1;  // requests are issued synchronously
};

// POSTs {prompt, seed, cfg_scale} as JSON and expects a PGM body back.
class HttpBackend : public T2IBackend {
public:
    explicit HttpBackend(HttpBackendConfig cfg);
    ImageGray generate(const GenerationRequest& req) override;

private:
    HttpBackendConfig cfg_;
};

struct FluctuationSet {
    ImageGray cover;
    std::vector<ImageGray> fluctuations;
    std::vector<double> cfg_values;  // base cfg first, then one per fluctuation
    std::string prompt;
    std::uint64_t seed = 0;
    double tau = 0.0;
    int rejections = 0;  // candidates discarded during the build
};

// Throws if the set breaks its own contract (member count, shapes, cfg
// distinctness, MSE bound).
void validate_fluctuation_set(const FluctuationSet& set);

// Generates the cover at base_cfg and one candidate per sweep value;
// candidates with mse(cover, candidate) > tau are discarded and replaced by
// fresh cfg values extending the sweep outward in +-0.0010 steps. Up to
// max_retries replacement generations are spent; if the set still has fewer
// members than the sweep requested, GenerationExhausted carries the count.
FluctuationSet build_fluctuation_set(T2IBackend& backend, const std::string& prompt,
                                     std::uint64_t seed, double base_cfg,
                                     const std::vector<double>& sweep, double tau,
                                     int max_retries);

struct ManifestEntry {
    std::string cover_path;               // relative to the manifest directory
    std::vector<std::string> flu_paths;
    std::string prompt;
    std::uint64_t seed = 0;
    std::vector<double> cfg_values;
    double tau = 0.0;
};

struct DatasetManifest {
    std::string name;
    std::string role;  // train, val or test
    int height = 0;
    int width = 0;
    std::vector<ManifestEntry> entries;
};

// Tab-separated, one entry per line, prompts escaped (\t, \n, \\).
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Checks that every referenced image exists, parses, and matches the
// manifest's H x W; throws naming the first offending entry.
void verify_manifest(const DatasetManifest& m, const std::filesystem::path& base_dir);

// Writes cover and fluctuations as PGM files under dir using the stem and
// returns the manifest entry with relative paths.
ManifestEntry save_fluctuation_set(const FluctuationSet& set,
                                   const std::filesystem::path& dir,
                                   const std::string& stem);

FluctuationSet load_entry(const DatasetManifest& m, std::size_t index,
                          const std::filesystem::path& base_dir);

// Reproducible disjoint split into train/val/test of the given sizes.
std::array<DatasetManifest, 3> split_manifest(const DatasetManifest& m, int n_train,
                                              int n_val, int n_test,
                                              std::uint64_t rng_seed);

// The sweep used throughout: 7.4950 .. 7.5050 in 0.0010 steps, skipping the
// base value 7.5000.
inline constexpr double kDefaultBaseCfg = 7.5;
std::vector<double> default_cfg_sweep();

}  // namespace gifdl
