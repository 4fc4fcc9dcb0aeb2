#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbox/oracle.hpp"

namespace bbox {

enum class Access { NoInteractiveAccess, WithInteractiveAccess };
enum class DataQuality { NoOverlap, PartialOverlap, CompleteOverlap };
enum class DataQuantity { NotSufficient, Sufficient };

/// A declared black-box threat model: one cell of the taxonomy plus the
/// pretrained-surrogate sub-axis.
struct ThreatModel {
  Access access = Access::NoInteractiveAccess;
  /// Present iff access is interactive.
  std::optional<FeedbackMode> feedback;
  DataQuality quality = DataQuality::NoOverlap;
  DataQuantity quantity = DataQuantity::NotSufficient;
  bool pretrained_surrogate = false;
  /// Optional recorded statistic: target accuracy minus surrogate accuracy.
  /// Informational only; the sufficient/insufficient label stays declared.
  std::optional<double> surrogate_accuracy_gap;

  void validate() const;
  friend bool operator==(const ThreatModel&, const ThreatModel&) = default;
};

enum class AuxDataNeed { None, InsufficientOk, Sufficient };

/// What an attack needs from the threat model to be run fairly.
struct CapabilityProfile {
  bool needs_interaction = false;
  /// Defined only when needs_interaction.
  std::optional<FeedbackMode> min_feedback;
  bool needs_surrogates = false;
  AuxDataNeed needs_aux_data = AuxDataNeed::None;

  void validate() const;
  friend bool operator==(const CapabilityProfile&, const CapabilityProfile&) = default;
};

enum class Axis { Interaction, Feedback, Surrogates, AuxData };
const char* to_string(Axis axis) noexcept;

struct Violation {
  Axis axis;
  std::string reason;
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
};

/// Feedback order HardLabel < TopK(k) < FullScores; TopK(k) is met by
/// TopK(k' >= k) and by FullScores.
bool feedback_satisfies(const FeedbackMode& available, const FeedbackMode& required) noexcept;

/// Surrogates are available from a pretrained model, or can be trained from
/// sufficient auxiliary data that overlaps the target distribution.
bool surrogates_available(const ThreatModel& tm) noexcept;

ValidationResult validate(const CapabilityProfile& profile, const ThreatModel& tm);

/// Stable "<quality>/<quantity>/<access>" label, e.g. "none/insufficient/full-scores".
std::string classify_cell(const ThreatModel& tm);

/// Profile of a shipped attack by id. Throws Config for unknown ids.
CapabilityProfile builtin_profile(std::string_view attack_id);
/// Every attack id shipped by the library.
const std::vector<std::string>& builtin_attack_ids();

nlohmann::json to_json(const FeedbackMode& mode);
FeedbackMode feedback_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ThreatModel& tm);
ThreatModel threat_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CapabilityProfile& profile);
CapabilityProfile profile_from_json(const nlohmann::json& j);

}  // namespace bbox
