#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "densecotrain/cotrain.hpp"

namespace densecotrain::tuner {

enum class GeneKind { Continuous, LogContinuous, Integer, Categorical };

std::string_view to_string(GeneKind k);

/// Numeric genes use [lo, hi]; categorical genes store the menu index.
struct GeneSpec {
  std::string name;
  GeneKind kind = GeneKind::Continuous;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::string> menu;

  double upper() const { return kind == GeneKind::Categorical ? static_cast<double>(menu.size() - 1) : hi; }
};

inline constexpr std::size_t kGeneCount = 20;

// Gene positions, detector genes grouped per network: YOLO is the
// contextual view (B), R-CNN the localizer view (A).
enum Gene : std::size_t {
  kLrXgb, kDXgb, kRcXgb, kNtXgb,
  kDRf, kNtRf,
  kCSvm, kKSvm, kGSvm,
  kEpYolo, kCtYolo, kIouYolo, kBsYolo, kLrYolo,
  kEpRcnn, kCtRcnn, kIouRcnn, kBsRcnn, kLrRcnn, kAsRcnn,
};

using HyperVector = std::array<double, kGeneCount>;

const std::array<std::string_view, kGeneCount>& gene_names();

/// Batch sizes are categorical over {4, 8, 16, 32}; the menu holds the
/// decimal strings.
std::vector<GeneSpec> default_specs();

/// Checks that the specs name exactly the 20 genes in order with sane
/// bounds; the error lists missing genes.
void validate_specs(std::span<const GeneSpec> specs);

/// Overrides bounds or menus by gene name: {"d_xgb": {"lo": 2, "hi": 8}, ...}.
std::vector<GeneSpec> specs_from_json(const nlohmann::json& j, std::vector<GeneSpec> base = default_specs());
nlohmann::json to_json(std::span<const GeneSpec> specs);

bool is_valid(const HyperVector& v, std::span<const GeneSpec> specs);

/// "lr_xgb=0.1 d_xgb=4 ... k_svm=rbf ..."
std::string describe(const HyperVector& v, std::span<const GeneSpec> specs);

nlohmann::json to_json(const HyperVector& v, std::span<const GeneSpec> specs);
HyperVector vector_from_json(const nlohmann::json& j, std::span<const GeneSpec> specs);

/// The vector encoding the default pipeline parameters.
HyperVector default_vector(std::span<const GeneSpec> specs);
HyperVector encode(const cotrain::PipelineParams& p, std::span<const GeneSpec> specs);

/// Routes the genes to both detector views and the shared classifier
/// parameter blocks; profiles and everything else come from `base`.
cotrain::PipelineParams decode(const HyperVector& v, std::span<const GeneSpec> specs,
                               cotrain::PipelineParams base = {});

HyperVector random_vector(std::span<const GeneSpec> specs, std::uint64_t seed);

/// Each gene changes with probability `rate`: continuous genes by a Gaussian
/// step of sigma_fraction of the range (log range for log genes), integers by
/// +-1..3 scaled by sigma_fraction / 0.1 (so exactly +-1..3 by default),
/// categorical genes resample their menu. Results are clamped.
HyperVector mutate(const HyperVector& v, std::span<const GeneSpec> specs, double rate, std::uint64_t seed,
                   double sigma_fraction = 0.1);

/// Uniform crossover; take_from_a[i] sends a's gene i to child 1 and b's to
/// child 2.
std::pair<HyperVector, HyperVector> crossover_with_mask(const HyperVector& a, const HyperVector& b,
                                                        std::span<const bool> take_from_a);
std::pair<HyperVector, HyperVector> crossover(const HyperVector& a, const HyperVector& b, std::uint64_t seed);

enum class Algorithm { Ga, Sa };

std::string_view to_string(Algorithm a);
Algorithm algorithm_from_string(std::string_view s);

struct TunerConfig {
  Algorithm algorithm = Algorithm::Ga;
  int budget = 40;  // distinct objective evaluations
  int population = 20;
  double mutation_rate = 0.1;
  double crossover_rate = 0.9;
  double sigma_fraction = 0.1;
  double initial_temperature = 0.05;
  double cooling_rate = 0.99;
  std::optional<HyperVector> initial;  // seeded into GA's population / SA's start
  std::uint64_t seed = 0;
  int threads = 1;
};

void validate(const TunerConfig& c);

struct TraceEntry {
  int evaluation = 0;  // 1-based
  double score = 0.0;
  double best_so_far = 0.0;
  HyperVector vector{};
};

struct TuneResult {
  HyperVector best{};
  double best_score = 0.0;
  std::vector<TraceEntry> trace;
  std::vector<HyperVector> final_population;  // GA only
};

using Objective = std::function<double(const HyperVector&)>;

/// Metropolis rule: improvements and ties always pass; a worse move passes
/// when u < exp(delta / T), never at T = 0.
bool metropolis_accept(double delta, double temperature, double u);

/// Maximizes the objective within the budget. GA: tournament selection
/// (k = 3), elitism of one, uniform crossover and mutation at the configured
/// rates; a population larger than the budget is clamped to it. SA:
/// single-gene moves, Metropolis acceptance exp(delta / T), geometric
/// cooling. Scores are memoized per vector, and a repeated vector does not
/// consume budget. A score outside [0,1] or non-finite raises RuntimeFailure
/// naming the vector.
TuneResult optimize(const Objective& objective, const TunerConfig& config, std::span<const GeneSpec> specs);

struct PipelineTuneResult {
  TuneResult tune;
  cotrain::PipelineParams best_params;
};

/// Objective: combined validation mAP of the supervised phase under the
/// candidate vector. The default vector is injected as the initial candidate
/// unless the config names one.
PipelineTuneResult tune_pipeline(const cotrain::Workspace& ws, const cotrain::CoTrainConfig& cfg,
                                 TunerConfig config, std::span<const GeneSpec> specs,
                                 const cotrain::PipelineParams& base = {});

nlohmann::json to_json(const TunerConfig& c, std::span<const GeneSpec> specs);
TunerConfig tuner_config_from_json(const nlohmann::json& j, std::span<const GeneSpec> specs, TunerConfig defaults = {});

}  // namespace densecotrain::tuner
