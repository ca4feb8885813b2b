#include "densecotrain/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "densecotrain/errors.hpp"
#include "densecotrain/log.hpp"
#include "densecotrain/parallel.hpp"
#include "densecotrain/random.hpp"

namespace densecotrain::tuner {

namespace {

constexpr int kTournamentSize = 3;
constexpr int kMaxStalledGenerations = 200;
constexpr int kSaIterationsPerEvaluation = 50;

double clamp_gene(double x, const GeneSpec& g) { return std::clamp(x, g.lo, g.upper()); }

double sample_gene(const GeneSpec& g, Rng& rng) {
  switch (g.kind) {
    case GeneKind::Continuous: return std::uniform_real_distribution<double>(g.lo, g.hi)(rng);
    case GeneKind::LogContinuous:
      return std::clamp(std::exp(std::uniform_real_distribution<double>(std::log(g.lo), std::log(g.hi))(rng)), g.lo, g.hi);
    case GeneKind::Integer:
      return static_cast<double>(std::uniform_int_distribution<long long>(std::llround(g.lo), std::llround(g.hi))(rng));
    case GeneKind::Categorical:
      return static_cast<double>(std::uniform_int_distribution<std::size_t>(0, g.menu.size() - 1)(rng));
  }
  return g.lo;
}

double perturb_gene(double x, const GeneSpec& g, double sigma_fraction, Rng& rng) {
  switch (g.kind) {
    case GeneKind::Continuous: return clamp_gene(x + normal(rng, 0.0, sigma_fraction * (g.hi - g.lo)), g);
    case GeneKind::LogContinuous: {
      const double step = normal(rng, 0.0, sigma_fraction * (std::log(g.hi) - std::log(g.lo)));
      return std::clamp(std::exp(std::log(x) + step), g.lo, g.hi);
    }
    case GeneKind::Integer: {
      const int magnitude = std::uniform_int_distribution<int>(1, 3)(rng);
      const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      const double step = std::round(magnitude * std::max(1.0, sigma_fraction / 0.1));
      return clamp_gene(x + sign * step, g);
    }
    case GeneKind::Categorical: return sample_gene(g, rng);
  }
  return x;
}

std::string gene_value_string(double x, const GeneSpec& g) {
  switch (g.kind) {
    case GeneKind::Categorical: return g.menu[static_cast<std::size_t>(x)];
    case GeneKind::Integer: return fmt::format("{}", std::llround(x));
    default: return fmt::format("{:.6g}", x);
  }
}

std::size_t menu_index(const GeneSpec& g, const std::string& value) {
  const auto it = std::find(g.menu.begin(), g.menu.end(), value);
  if (it == g.menu.end()) throw ValidationError(fmt::format("gene {}: '{}' is not in its menu", g.name, value));
  return static_cast<std::size_t>(it - g.menu.begin());
}

int menu_int(const GeneSpec& g, double index) {
  const auto& s = g.menu.at(static_cast<std::size_t>(index));
  try {
    return std::stoi(s);
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("gene {}: menu entry '{}' is not an integer", g.name, s));
  }
}

// Memoized, budget-counting evaluation in deterministic batch order.
class Evaluator {
 public:
  Evaluator(const Objective& f, std::span<const GeneSpec> specs, int budget, int threads)
      : f_(f), specs_(specs), budget_(budget), threads_(threads) {}

  bool exhausted() const { return static_cast<int>(result_.trace.size()) >= budget_; }

  // Returns the score of each vector, or nullopt for vectors left
  // unevaluated because the budget ran out.
  std::vector<std::optional<double>> evaluate(const std::vector<HyperVector>& batch) {
    std::vector<HyperVector> fresh;
    for (const auto& v : batch) {
      if (memo_.contains(v) || std::find(fresh.begin(), fresh.end(), v) != fresh.end()) continue;
      if (static_cast<int>(result_.trace.size() + fresh.size()) >= budget_) break;
      fresh.push_back(v);
    }
    std::vector<double> scores(fresh.size());
    parallel_for(fresh.size(), threads_, [&](std::size_t i) { scores[i] = f_(fresh[i]); });
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      const double s = scores[i];
      if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
        throw RuntimeFailure(fmt::format("objective returned {} (outside [0,1]) for vector {}", s,
                                         describe(fresh[i], specs_)));
      }
      memo_.emplace(fresh[i], s);
      if (result_.trace.empty() || s > result_.best_score) {
        result_.best_score = s;
        result_.best = fresh[i];
      }
      result_.trace.push_back({static_cast<int>(result_.trace.size()) + 1, s, result_.best_score, fresh[i]});
    }
    std::vector<std::optional<double>> out;
    out.reserve(batch.size());
    for (const auto& v : batch) {
      auto it = memo_.find(v);
      out.push_back(it == memo_.end() ? std::nullopt : std::optional<double>(it->second));
    }
    return out;
  }

  std::size_t evaluations() const { return result_.trace.size(); }
  TuneResult take() { return std::move(result_); }

 private:
  const Objective& f_;
  std::span<const GeneSpec> specs_;
  int budget_;
  int threads_;
  std::map<HyperVector, double> memo_;
  TuneResult result_;
};

struct Member {
  HyperVector v;
  double score;
};

std::vector<Member> evaluated_members(Evaluator& ev, const std::vector<HyperVector>& batch) {
  const auto scores = ev.evaluate(batch);
  std::vector<Member> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (scores[i]) out.push_back({batch[i], *scores[i]});
  }
  return out;
}

std::size_t best_index(const std::vector<Member>& pop) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < pop.size(); ++i) {
    if (pop[i].score > pop[best].score) best = i;
  }
  return best;
}

const HyperVector& tournament(const std::vector<Member>& pop, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pop.size() - 1);
  std::size_t best = pick(rng);
  for (int k = 1; k < kTournamentSize; ++k) {
    const std::size_t c = pick(rng);
    if (pop[c].score > pop[best].score || (pop[c].score == pop[best].score && c < best)) best = c;
  }
  return pop[best].v;
}

TuneResult run_ga(const Objective& f, const TunerConfig& c, std::span<const GeneSpec> specs) {
  Evaluator ev(f, specs, c.budget, c.threads);
  const auto size = static_cast<std::size_t>(std::min(c.population, c.budget));

  std::vector<HyperVector> initial;
  if (c.initial) initial.push_back(*c.initial);
  for (std::size_t i = initial.size(); i < size; ++i) {
    initial.push_back(random_vector(specs, derive_seed(c.seed, {hash_string("ga-init"), i})));
  }
  auto pop = evaluated_members(ev, initial);

  int stalled = 0;
  for (std::uint64_t gen = 1; !ev.exhausted() && !pop.empty() && stalled < kMaxStalledGenerations; ++gen) {
    Rng rng(derive_seed(c.seed, {hash_string("ga-generation"), gen}));
    std::vector<HyperVector> next{pop[best_index(pop)].v};
    while (next.size() < size) {
      HyperVector c1 = tournament(pop, rng);
      HyperVector c2 = tournament(pop, rng);
      if (uniform01(rng) < c.crossover_rate) std::tie(c1, c2) = crossover(c1, c2, rng());
      next.push_back(mutate(c1, specs, c.mutation_rate, rng(), c.sigma_fraction));
      if (next.size() < size) next.push_back(mutate(c2, specs, c.mutation_rate, rng(), c.sigma_fraction));
    }
    const std::size_t before = ev.evaluations();
    pop = evaluated_members(ev, next);
    stalled = ev.evaluations() == before ? stalled + 1 : 0;
  }

  TuneResult r = ev.take();
  for (const auto& m : pop) r.final_population.push_back(m.v);
  return r;
}

HyperVector neighbor(const HyperVector& v, std::span<const GeneSpec> specs, double sigma_fraction, Rng& rng) {
  HyperVector out = v;
  const auto g = std::uniform_int_distribution<std::size_t>(0, kGeneCount - 1)(rng);
  const auto& spec = specs[g];
  if (spec.kind == GeneKind::Categorical && spec.menu.size() > 1) {
    // Move to a different menu entry.
    const auto k = std::uniform_int_distribution<std::size_t>(0, spec.menu.size() - 2)(rng);
    out[g] = static_cast<double>(k >= static_cast<std::size_t>(v[g]) ? k + 1 : k);
  } else {
    out[g] = perturb_gene(v[g], spec, sigma_fraction, rng);
  }
  return out;
}

TuneResult run_sa(const Objective& f, const TunerConfig& c, std::span<const GeneSpec> specs) {
  Evaluator ev(f, specs, c.budget, 1);
  HyperVector current = c.initial ? *c.initial : random_vector(specs, derive_seed(c.seed, {hash_string("sa-init")}));
  double current_score = *ev.evaluate({current}).front();
  double temperature = c.initial_temperature;
  const long long max_iterations = static_cast<long long>(c.budget) * kSaIterationsPerEvaluation;
  for (long long it = 1; it <= max_iterations && !ev.exhausted(); ++it) {
    Rng rng(derive_seed(c.seed, {hash_string("sa-step"), static_cast<std::uint64_t>(it)}));
    const HyperVector cand = neighbor(current, specs, c.sigma_fraction, rng);
    if (cand != current) {
      const double s = *ev.evaluate({cand}).front();
      if (metropolis_accept(s - current_score, temperature, uniform01(rng))) {
        current = cand;
        current_score = s;
      }
    }
    temperature *= c.cooling_rate;
  }
  return ev.take();
}

}  // namespace

std::string_view to_string(GeneKind k) {
  switch (k) {
    case GeneKind::Continuous: return "continuous";
    case GeneKind::LogContinuous: return "log";
    case GeneKind::Integer: return "integer";
    case GeneKind::Categorical: return "categorical";
  }
  return "continuous";
}

const std::array<std::string_view, kGeneCount>& gene_names() {
  static const std::array<std::string_view, kGeneCount> names = {
      "lr_xgb",  "d_xgb",   "rc_xgb",   "nt_xgb",  "d_rf",    "nt_rf",   "c_svm",
      "k_svm",   "g_svm",   "ep_yolo",  "ct_yolo", "iou_yolo", "bs_yolo", "lr_yolo",
      "ep_rcnn", "ct_rcnn", "iou_rcnn", "bs_rcnn", "lr_rcnn",  "as_rcnn"};
  return names;
}

std::vector<GeneSpec> default_specs() {
  using K = GeneKind;
  const std::vector<std::string> batches = {"4", "8", "16", "32"};
  return {
      {"lr_xgb", K::Continuous, 0.01, 0.5, {}},
      {"d_xgb", K::Integer, 1, 12, {}},
      {"rc_xgb", K::Continuous, 0, 10, {}},
      {"nt_xgb", K::Integer, 10, 300, {}},
      {"d_rf", K::Integer, 1, 20, {}},
      {"nt_rf", K::Integer, 10, 300, {}},
      {"c_svm", K::LogContinuous, 0.01, 100, {}},
      {"k_svm", K::Categorical, 0, 0, {"linear", "rbf", "poly"}},
      {"g_svm", K::LogContinuous, 1e-4, 10, {}},
      {"ep_yolo", K::Integer, 1, 60, {}},
      {"ct_yolo", K::Continuous, 0.05, 0.95, {}},
      {"iou_yolo", K::Continuous, 0.3, 0.9, {}},
      {"bs_yolo", K::Categorical, 0, 0, batches},
      {"lr_yolo", K::LogContinuous, 1e-5, 1e-2, {}},
      {"ep_rcnn", K::Integer, 1, 60, {}},
      {"ct_rcnn", K::Continuous, 0.05, 0.95, {}},
      {"iou_rcnn", K::Continuous, 0.3, 0.9, {}},
      {"bs_rcnn", K::Categorical, 0, 0, batches},
      {"lr_rcnn", K::LogContinuous, 1e-5, 1e-2, {}},
      {"as_rcnn", K::Categorical, 0, 0, {"small", "medium", "large", "mixed"}},
  };
}

void validate_specs(std::span<const GeneSpec> specs) {
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    const bool present = std::any_of(specs.begin(), specs.end(), [&](const GeneSpec& g) { return g.name == gene_names()[i]; });
    if (!present) missing.emplace_back(gene_names()[i]);
  }
  if (!missing.empty()) throw ValidationError(fmt::format("gene specs missing: {}", fmt::join(missing, ", ")));
  if (specs.size() != kGeneCount) throw ValidationError(fmt::format("expected {} gene specs, got {}", kGeneCount, specs.size()));
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    const auto& g = specs[i];
    if (g.name != gene_names()[i]) {
      throw ValidationError(fmt::format("gene spec {} is '{}', expected '{}'", i, g.name, gene_names()[i]));
    }
    if (g.kind == GeneKind::Categorical) {
      if (g.menu.empty()) throw ValidationError(fmt::format("gene {}: empty menu", g.name));
      continue;
    }
    if (!(std::isfinite(g.lo) && std::isfinite(g.hi) && g.lo < g.hi)) {
      throw ValidationError(fmt::format("gene {}: bounds must satisfy lo < hi", g.name));
    }
    if (g.kind == GeneKind::LogContinuous && !(g.lo > 0.0)) {
      throw ValidationError(fmt::format("gene {}: log-scaled bounds must be positive", g.name));
    }
    if (g.kind == GeneKind::Integer && (g.lo != std::round(g.lo) || g.hi != std::round(g.hi))) {
      throw ValidationError(fmt::format("gene {}: integer bounds must be integral", g.name));
    }
  }
}

std::vector<GeneSpec> specs_from_json(const nlohmann::json& j, std::vector<GeneSpec> specs) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto g = std::find_if(specs.begin(), specs.end(), [&](const GeneSpec& s) { return s.name == it.key(); });
    if (g == specs.end()) throw ValidationError(fmt::format("unknown gene '{}'", it.key()));
    const auto& o = it.value();
    g->lo = o.value("lo", g->lo);
    g->hi = o.value("hi", g->hi);
    if (o.contains("menu")) {
      g->menu.clear();
      for (const auto& m : o["menu"]) g->menu.push_back(m.is_string() ? m.get<std::string>() : m.dump());
    }
  }
  validate_specs(specs);
  return specs;
}

nlohmann::json to_json(std::span<const GeneSpec> specs) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& g : specs) {
    if (g.kind == GeneKind::Categorical) {
      j[g.name] = {{"kind", to_string(g.kind)}, {"menu", g.menu}};
    } else {
      j[g.name] = {{"kind", to_string(g.kind)}, {"lo", g.lo}, {"hi", g.hi}};
    }
  }
  return j;
}

bool is_valid(const HyperVector& v, std::span<const GeneSpec> specs) {
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    const auto& g = specs[i];
    const double x = v[i];
    if (!std::isfinite(x) || x < g.lo || x > g.upper()) return false;
    if ((g.kind == GeneKind::Integer || g.kind == GeneKind::Categorical) && x != std::round(x)) return false;
  }
  return true;
}

std::string describe(const HyperVector& v, std::span<const GeneSpec> specs) {
  std::string out;
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    if (!out.empty()) out += ' ';
    const bool printable = specs[i].kind != GeneKind::Categorical ||
                           (v[i] >= 0 && v[i] < static_cast<double>(specs[i].menu.size()) && v[i] == std::round(v[i]));
    out += fmt::format("{}={}", specs[i].name, printable ? gene_value_string(v[i], specs[i]) : fmt::format("#{}", v[i]));
  }
  return out;
}

nlohmann::json to_json(const HyperVector& v, std::span<const GeneSpec> specs) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    const auto& g = specs[i];
    if (g.kind == GeneKind::Categorical) {
      j[g.name] = g.menu[static_cast<std::size_t>(v[i])];
    } else if (g.kind == GeneKind::Integer) {
      j[g.name] = std::llround(v[i]);
    } else {
      j[g.name] = v[i];
    }
  }
  return j;
}

HyperVector vector_from_json(const nlohmann::json& j, std::span<const GeneSpec> specs) {
  HyperVector v = default_vector(specs);
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    const auto& g = specs[i];
    if (!j.contains(g.name)) continue;
    const auto& x = j[g.name];
    if (g.kind == GeneKind::Categorical) {
      v[i] = static_cast<double>(menu_index(g, x.is_string() ? x.get<std::string>() : x.dump()));
    } else {
      if (!x.is_number()) throw ValidationError(fmt::format("gene {} must be a number", g.name));
      v[i] = x.get<double>();
    }
  }
  if (!is_valid(v, specs)) throw ValidationError("hyperparameter vector out of bounds: " + describe(v, specs));
  return v;
}

HyperVector encode(const cotrain::PipelineParams& p, std::span<const GeneSpec> specs) {
  const auto& e = p.view_a.ensemble;
  const auto& yolo = p.view_b.detector;
  const auto& rcnn = p.view_a.detector;
  HyperVector v{};
  v[kLrXgb] = e.xgb.learning_rate;
  v[kDXgb] = e.xgb.max_depth;
  v[kRcXgb] = e.xgb.l2_reg;
  v[kNtXgb] = e.xgb.n_trees;
  v[kDRf] = e.rf.max_depth;
  v[kNtRf] = e.rf.n_trees;
  v[kCSvm] = e.svm.c;
  v[kKSvm] = static_cast<double>(menu_index(specs[kKSvm], std::string(ensemble::to_string(e.svm.kernel))));
  v[kGSvm] = e.svm.gamma;
  v[kEpYolo] = yolo.epochs;
  v[kCtYolo] = yolo.confidence_threshold;
  v[kIouYolo] = yolo.nms_iou;
  v[kBsYolo] = static_cast<double>(menu_index(specs[kBsYolo], std::to_string(yolo.batch_size)));
  v[kLrYolo] = yolo.learning_rate;
  v[kEpRcnn] = rcnn.epochs;
  v[kCtRcnn] = rcnn.confidence_threshold;
  v[kIouRcnn] = rcnn.nms_iou;
  v[kBsRcnn] = static_cast<double>(menu_index(specs[kBsRcnn], std::to_string(rcnn.batch_size)));
  v[kLrRcnn] = rcnn.learning_rate;
  v[kAsRcnn] = static_cast<double>(menu_index(specs[kAsRcnn], std::string(detect::to_string(rcnn.anchor_scale))));
  return v;
}

HyperVector default_vector(std::span<const GeneSpec> specs) {
  HyperVector v = encode({}, specs);
  for (std::size_t i = 0; i < kGeneCount; ++i) v[i] = clamp_gene(v[i], specs[i]);
  return v;
}

cotrain::PipelineParams decode(const HyperVector& v, std::span<const GeneSpec> specs, cotrain::PipelineParams p) {
  if (!is_valid(v, specs)) throw ValidationError("hyperparameter vector out of bounds: " + describe(v, specs));
  ensemble::EnsembleParams e;
  e.xgb.learning_rate = v[kLrXgb];
  e.xgb.max_depth = static_cast<int>(v[kDXgb]);
  e.xgb.l2_reg = v[kRcXgb];
  e.xgb.n_trees = static_cast<int>(v[kNtXgb]);
  e.rf.max_depth = static_cast<int>(v[kDRf]);
  e.rf.n_trees = static_cast<int>(v[kNtRf]);
  e.svm.c = v[kCSvm];
  e.svm.kernel = ensemble::kernel_from_string(specs[kKSvm].menu[static_cast<std::size_t>(v[kKSvm])]);
  e.svm.gamma = v[kGSvm];
  p.view_a.ensemble = e;
  p.view_b.ensemble = e;

  auto& yolo = p.view_b.detector;
  yolo.epochs = static_cast<int>(v[kEpYolo]);
  yolo.confidence_threshold = v[kCtYolo];
  yolo.nms_iou = v[kIouYolo];
  yolo.batch_size = menu_int(specs[kBsYolo], v[kBsYolo]);
  yolo.learning_rate = v[kLrYolo];

  auto& rcnn = p.view_a.detector;
  rcnn.epochs = static_cast<int>(v[kEpRcnn]);
  rcnn.confidence_threshold = v[kCtRcnn];
  rcnn.nms_iou = v[kIouRcnn];
  rcnn.batch_size = menu_int(specs[kBsRcnn], v[kBsRcnn]);
  rcnn.learning_rate = v[kLrRcnn];
  rcnn.anchor_scale = detect::anchor_scale_from_string(specs[kAsRcnn].menu[static_cast<std::size_t>(v[kAsRcnn])]);
  detect::validate(yolo);
  detect::validate(rcnn);
  return p;
}

HyperVector random_vector(std::span<const GeneSpec> specs, std::uint64_t seed) {
  validate_specs(specs);
  Rng rng(derive_seed(seed, {hash_string("random-vector")}));
  HyperVector v{};
  for (std::size_t i = 0; i < kGeneCount; ++i) v[i] = sample_gene(specs[i], rng);
  return v;
}

HyperVector mutate(const HyperVector& v, std::span<const GeneSpec> specs, double rate, std::uint64_t seed,
                   double sigma_fraction) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("mutation rate must lie in [0,1]");
  if (rate == 0.0) return v;
  Rng rng(derive_seed(seed, {hash_string("mutate")}));
  HyperVector out = v;
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    if (uniform01(rng) < rate) out[i] = perturb_gene(v[i], specs[i], sigma_fraction, rng);
  }
  return out;
}

std::pair<HyperVector, HyperVector> crossover_with_mask(const HyperVector& a, const HyperVector& b,
                                                        std::span<const bool> take_from_a) {
  if (take_from_a.size() != kGeneCount) throw ValidationError("crossover mask must have one entry per gene");
  HyperVector c1{}, c2{};
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    c1[i] = take_from_a[i] ? a[i] : b[i];
    c2[i] = take_from_a[i] ? b[i] : a[i];
  }
  return {c1, c2};
}

std::pair<HyperVector, HyperVector> crossover(const HyperVector& a, const HyperVector& b, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {hash_string("crossover")}));
  std::array<bool, kGeneCount> mask{};
  for (auto& m : mask) m = uniform01(rng) < 0.5;
  return crossover_with_mask(a, b, mask);
}

std::string_view to_string(Algorithm a) { return a == Algorithm::Ga ? "ga" : "sa"; }

Algorithm algorithm_from_string(std::string_view s) {
  if (s == "ga") return Algorithm::Ga;
  if (s == "sa") return Algorithm::Sa;
  throw ValidationError(fmt::format("unknown tuning algorithm '{}' (expected ga or sa)", s));
}

void validate(const TunerConfig& c) {
  if (c.budget < 1) throw ValidationError("tuner budget must be >= 1");
  if (c.population < 1) throw ValidationError("tuner population must be >= 1");
  if (!(c.mutation_rate >= 0.0 && c.mutation_rate <= 1.0)) throw ValidationError("mutation_rate must lie in [0,1]");
  if (!(c.crossover_rate >= 0.0 && c.crossover_rate <= 1.0)) throw ValidationError("crossover_rate must lie in [0,1]");
  if (!(c.sigma_fraction > 0.0)) throw ValidationError("sigma_fraction must be > 0");
  if (!(c.initial_temperature >= 0.0)) throw ValidationError("initial_temperature must be >= 0");
  if (!(c.cooling_rate > 0.0 && c.cooling_rate <= 1.0)) throw ValidationError("cooling_rate must lie in (0,1]");
  if (c.threads < 1) throw ValidationError("tuner threads must be >= 1");
}

bool metropolis_accept(double delta, double temperature, double u) {
  if (delta >= 0.0) return true;
  if (!(temperature > 0.0)) return false;
  return u < std::exp(delta / temperature);
}

TuneResult optimize(const Objective& objective, const TunerConfig& config, std::span<const GeneSpec> specs) {
  validate(config);
  validate_specs(specs);
  if (config.initial && !is_valid(*config.initial, specs)) {
    throw ValidationError("initial vector out of bounds: " + describe(*config.initial, specs));
  }
  return config.algorithm == Algorithm::Ga ? run_ga(objective, config, specs) : run_sa(objective, config, specs);
}

PipelineTuneResult tune_pipeline(const cotrain::Workspace& ws, const cotrain::CoTrainConfig& cfg, TunerConfig config,
                                 std::span<const GeneSpec> specs, const cotrain::PipelineParams& base) {
  validate_specs(specs);
  if (!config.initial) config.initial = default_vector(specs);
  // Candidates are evaluated concurrently at the tuner level; each one runs
  // its own supervised phase single-threaded.
  cotrain::CoTrainConfig inner = cfg;
  if (config.threads > 1) inner.threads = 1;
  const Objective objective = [&](const HyperVector& v) {
    const double score = cotrain::supervised_validation_map(ws, decode(v, specs, base), inner);
    log().debug("tune: {:.4f} for {}", score, describe(v, specs));
    return score;
  };
  PipelineTuneResult r{optimize(objective, config, specs), {}};
  r.best_params = decode(r.tune.best, specs, base);
  return r;
}

nlohmann::json to_json(const TunerConfig& c, std::span<const GeneSpec> specs) {
  nlohmann::json j = {{"algorithm", std::string(to_string(c.algorithm))},
                      {"budget", c.budget},
                      {"population", c.population},
                      {"mutation_rate", c.mutation_rate},
                      {"crossover_rate", c.crossover_rate},
                      {"sigma_fraction", c.sigma_fraction},
                      {"initial_temperature", c.initial_temperature},
                      {"cooling_rate", c.cooling_rate},
                      {"seed", c.seed},
                      {"threads", c.threads}};
  if (c.initial) j["initial"] = to_json(*c.initial, specs);
  return j;
}

TunerConfig tuner_config_from_json(const nlohmann::json& j, std::span<const GeneSpec> specs, TunerConfig c) {
  if (j.contains("algorithm")) c.algorithm = algorithm_from_string(j["algorithm"].get<std::string>());
  c.budget = j.value("budget", c.budget);
  c.population = j.value("population", c.population);
  c.mutation_rate = j.value("mutation_rate", c.mutation_rate);
  c.crossover_rate = j.value("crossover_rate", c.crossover_rate);
  c.sigma_fraction = j.value("sigma_fraction", c.sigma_fraction);
  c.initial_temperature = j.value("initial_temperature", c.initial_temperature);
  c.cooling_rate = j.value("cooling_rate", c.cooling_rate);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  if (j.contains("initial")) c.initial = vector_from_json(j["initial"], specs);
  validate(c);
  return c;
}

}  // namespace densecotrain::tuner
