#pragma once

#include <optional>
#include <utility>

#include "rankloss/calibrator.hpp"
#include "rankloss/constraints.hpp"
#include "rankloss/network.hpp"
#include "rankloss/report.hpp"

namespace rankloss {

enum class Mode { lossless, compact };
enum class EpsSource { calibrated, fixed };
enum class GradientRefresh { once, per_layer };

const char* to_string(Mode m);
const char* to_string(EpsSource s);
const char* to_string(GradientRefresh r);
Mode mode_from_string(const std::string& s);
GradientRefresh gradient_refresh_from_string(const std::string& s);

struct CompressionConfig {
  Mode mode = Mode::lossless;
  EpsSource eps_source = EpsSource::calibrated;
  double fixed_eps = kDefaultEpsilon;
  double probe_tolerance = kDefaultProbeTolerance;
  GradientRefresh gradient_refresh = GradientRefresh::once;
  // Rank candidates by measured loss (default) or by the first-order
  // prediction alone; admission is identical either way.
  bool rank_by_measured = true;
  // Opt-in: nudge each candidate pair one projected gradient step inside the
  // noise box before judging it.
  bool refine_factors = false;
  std::uint64_t seed = 0;  // echoed into the report; compression itself is
                           // deterministic and draws no randomness
};

struct CandidateEntry {
  int layer_index = 0;
  int rank = 0;
  FactorPair factors;
  double predicted_delta = 0.0;
  double measured_loss = 0.0;
  ConstraintVerdict verdict;
};

// Why a search came back empty, for report bookkeeping.
struct SearchDiagnostics {
  bool any_compressive_rank = false;  // kmax >= 1
  bool any_lossless = false;          // some rank met the noise bound
  bool any_improving = false;         // ...and predicted < 0 (or exact noise)
  bool any_measured_ok = false;       // ...and measured loss did not increase
};

// A rank is admissible when the pair is compressive, the noise stays inside
// the eps box, and the first-order prediction is an improvement (or the pair
// is exact). The lossless search additionally drops candidates whose
// measured loss exceeds base_loss, then picks the best measured loss among
// survivors, smaller rank on ties.
std::optional<CandidateEntry> lossless_layer_search(
    const Network& net, const Dataset& data, const GradientSnapshot& grad,
    int layer_index, double eps, double base_loss,
    const CompressionConfig& config = {}, SearchDiagnostics* diag = nullptr);

// Minimal admissible rank, located by binary search on the noise bound with
// a verification sweep (falls back to a full scan if the noise turns out
// non-monotone), so the result always equals what a linear scan would find.
std::optional<CandidateEntry> compact_layer_search(
    const Network& net, const Dataset& data, const GradientSnapshot& grad,
    int layer_index, double eps, const CompressionConfig& config = {},
    SearchDiagnostics* diag = nullptr);

// Walks layers input to output, searching each un-decomposed layer and
// applying accepted factorizations immediately. Returns the compressed
// network and a full report (metrics, per-layer decisions, totals).
std::pair<Network, CompressionReport> compress_network(
    const Network& net, const Dataset& data, const CompressionConfig& config,
    const Dataset* holdout = nullptr, const EpsilonProfile* profile = nullptr);

}  // namespace rankloss
