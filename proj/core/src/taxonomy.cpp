#include "bbox/taxonomy.hpp"

#include <algorithm>
#include <set>

#include "bbox/error.hpp"

namespace bbox {

namespace {

int feedback_rank(FeedbackKind kind) noexcept {
  switch (kind) {
    case FeedbackKind::HardLabel: return 0;
    case FeedbackKind::TopK: return 1;
    case FeedbackKind::FullScores: return 2;
  }
  return 0;
}

std::string feedback_label(const FeedbackMode& mode) {
  switch (mode.kind) {
    case FeedbackKind::HardLabel: return "hard-label";
    case FeedbackKind::TopK: return "top-k";
    case FeedbackKind::FullScores: return "full-scores";
  }
  return "?";
}

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::Config, std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw Error(ErrorCode::Config, std::string(what) + ": unknown key '" + key + "'");
    }
  }
}

template <class E>
E lookup(const nlohmann::json& j, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
  if (!j.is_string()) throw Error(ErrorCode::Config, std::string(what) + " must be a string");
  const auto s = j.get<std::string>();
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw Error(ErrorCode::Config, std::string(what) + ": unknown value '" + s + "'");
}

const char* quality_name(DataQuality q) {
  switch (q) {
    case DataQuality::NoOverlap: return "none";
    case DataQuality::PartialOverlap: return "partial";
    case DataQuality::CompleteOverlap: return "complete";
  }
  return "?";
}

const char* quantity_name(DataQuantity q) {
  return q == DataQuantity::Sufficient ? "sufficient" : "insufficient";
}

const char* aux_name(AuxDataNeed n) {
  switch (n) {
    case AuxDataNeed::None: return "none";
    case AuxDataNeed::InsufficientOk: return "insufficient-ok";
    case AuxDataNeed::Sufficient: return "sufficient";
  }
  return "?";
}

}  // namespace

const char* to_string(Axis axis) noexcept {
  switch (axis) {
    case Axis::Interaction: return "interaction";
    case Axis::Feedback: return "feedback";
    case Axis::Surrogates: return "surrogates";
    case Axis::AuxData: return "aux-data";
  }
  return "?";
}

void ThreatModel::validate() const {
  if (access == Access::NoInteractiveAccess && feedback) {
    throw Error(ErrorCode::Config, "threat model without interactive access cannot declare API feedback");
  }
  if (access == Access::WithInteractiveAccess && !feedback) {
    throw Error(ErrorCode::Config, "interactive threat model must declare API feedback");
  }
  if (feedback && feedback->kind == FeedbackKind::TopK && feedback->k < 1) {
    throw Error(ErrorCode::Config, "top-k feedback needs k >= 1");
  }
}

void CapabilityProfile::validate() const {
  if (!needs_interaction && min_feedback) {
    throw Error(ErrorCode::Config, "capability profile declares min feedback without interaction");
  }
  if (needs_interaction && !min_feedback) {
    throw Error(ErrorCode::Config, "interactive capability profile must declare min feedback");
  }
}

bool feedback_satisfies(const FeedbackMode& available, const FeedbackMode& required) noexcept {
  const int a = feedback_rank(available.kind);
  const int r = feedback_rank(required.kind);
  if (a != r) return a > r;
  if (required.kind == FeedbackKind::TopK) return available.k >= required.k;
  return true;
}

bool surrogates_available(const ThreatModel& tm) noexcept {
  return tm.pretrained_surrogate ||
         (tm.quantity == DataQuantity::Sufficient && tm.quality != DataQuality::NoOverlap);
}

ValidationResult validate(const CapabilityProfile& profile, const ThreatModel& tm) {
  ValidationResult result;
  if (profile.needs_interaction) {
    if (tm.access != Access::WithInteractiveAccess) {
      result.violations.push_back({Axis::Interaction, "attack queries the target but the threat model forbids it"});
    } else if (profile.min_feedback && tm.feedback && !feedback_satisfies(*tm.feedback, *profile.min_feedback)) {
      result.violations.push_back({Axis::Feedback, "attack needs " + feedback_label(*profile.min_feedback) +
                                                       " feedback but the API returns " +
                                                       feedback_label(*tm.feedback)});
    }
  }
  if (profile.needs_surrogates && !surrogates_available(tm)) {
    result.violations.push_back(
        {Axis::Surrogates, "attack needs surrogate models but none are pretrained and data cannot train them"});
  }
  if (profile.needs_aux_data == AuxDataNeed::Sufficient && tm.quantity != DataQuantity::Sufficient) {
    result.violations.push_back({Axis::AuxData, "attack needs sufficient auxiliary data"});
  }
  return result;
}

std::string classify_cell(const ThreatModel& tm) {
  std::string access = "no-interactive";
  if (tm.access == Access::WithInteractiveAccess && tm.feedback) access = feedback_label(*tm.feedback);
  return std::string(quality_name(tm.quality)) + "/" + quantity_name(tm.quantity) + "/" + access;
}

const std::vector<std::string>& builtin_attack_ids() {
  static const std::vector<std::string> ids = {
      "i-fgsm",   "mi-fgsm",  "ni-fgsm",     "vmi-fgsm", "vni-fgsm", "emi-fgsm",
      "smi-fgsm", "smimi-fgsm", "midi-fgsm", "admix-fgsm", "square", "square-topk",
      "nes",      "nes-topk", "rays",        "signflip", "hybrid-square", "random-noise"};
  return ids;
}

CapabilityProfile builtin_profile(std::string_view id) {
  static const std::set<std::string_view> transfer = {"i-fgsm",   "mi-fgsm",    "ni-fgsm",   "vmi-fgsm",
                                                      "vni-fgsm", "emi-fgsm",   "smi-fgsm",  "smimi-fgsm",
                                                      "midi-fgsm", "admix-fgsm"};
  if (transfer.contains(id)) return {false, std::nullopt, true, AuxDataNeed::None};
  if (id == "square" || id == "nes") return {true, FeedbackMode::full_scores(), false, AuxDataNeed::None};
  if (id == "square-topk" || id == "nes-topk") return {true, FeedbackMode::top_k(1), false, AuxDataNeed::None};
  if (id == "rays" || id == "signflip" || id == "random-noise") return {true, FeedbackMode::hard_label(), false, AuxDataNeed::None};
  if (id == "hybrid-square") return {true, FeedbackMode::full_scores(), true, AuxDataNeed::None};
  throw Error(ErrorCode::Config, "unknown attack id '" + std::string(id) + "'");
}

nlohmann::json to_json(const FeedbackMode& mode) {
  if (mode.kind == FeedbackKind::TopK) return {{"kind", "top-k"}, {"k", mode.k}};
  return {{"kind", feedback_label(mode)}};
}

FeedbackMode feedback_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"kind", "k"}, "feedback");
  if (!j.contains("kind")) throw Error(ErrorCode::Config, "feedback: missing 'kind'");
  const auto kind = lookup<FeedbackKind>(j.at("kind"),
                                         {{"hard-label", FeedbackKind::HardLabel},
                                          {"top-k", FeedbackKind::TopK},
                                          {"full-scores", FeedbackKind::FullScores}},
                                         "feedback.kind");
  FeedbackMode mode{kind, 0};
  if (kind == FeedbackKind::TopK) {
    if (!j.contains("k") || !j.at("k").is_number_unsigned() || j.at("k").get<std::size_t>() < 1) {
      throw Error(ErrorCode::Config, "feedback: top-k needs a positive integer 'k'");
    }
    mode.k = j.at("k").get<std::size_t>();
  } else if (j.contains("k")) {
    throw Error(ErrorCode::Config, "feedback: 'k' is only valid for top-k");
  }
  return mode;
}

nlohmann::json to_json(const ThreatModel& tm) {
  nlohmann::json j;
  j["interactive"] = tm.access == Access::WithInteractiveAccess;
  if (tm.feedback) j["feedback"] = to_json(*tm.feedback);
  j["data_quality"] = quality_name(tm.quality);
  j["data_quantity"] = quantity_name(tm.quantity);
  j["pretrained_surrogate"] = tm.pretrained_surrogate;
  if (tm.surrogate_accuracy_gap) j["surrogate_accuracy_gap"] = *tm.surrogate_accuracy_gap;
  return j;
}

ThreatModel threat_model_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"interactive", "feedback", "data_quality", "data_quantity", "pretrained_surrogate",
                       "surrogate_accuracy_gap"},
                      "threat_model");
  ThreatModel tm;
  if (!j.contains("interactive") || !j.at("interactive").is_boolean()) {
    throw Error(ErrorCode::Config, "threat_model: 'interactive' must be a boolean");
  }
  tm.access = j.at("interactive").get<bool>() ? Access::WithInteractiveAccess : Access::NoInteractiveAccess;
  if (j.contains("feedback")) tm.feedback = feedback_from_json(j.at("feedback"));
  if (j.contains("data_quality")) {
    tm.quality = lookup<DataQuality>(j.at("data_quality"),
                                     {{"none", DataQuality::NoOverlap},
                                      {"partial", DataQuality::PartialOverlap},
                                      {"complete", DataQuality::CompleteOverlap}},
                                     "threat_model.data_quality");
  }
  if (j.contains("data_quantity")) {
    tm.quantity = lookup<DataQuantity>(
        j.at("data_quantity"),
        {{"insufficient", DataQuantity::NotSufficient}, {"sufficient", DataQuantity::Sufficient}},
        "threat_model.data_quantity");
  }
  if (j.contains("pretrained_surrogate")) {
    if (!j.at("pretrained_surrogate").is_boolean()) {
      throw Error(ErrorCode::Config, "threat_model: 'pretrained_surrogate' must be a boolean");
    }
    tm.pretrained_surrogate = j.at("pretrained_surrogate").get<bool>();
  }
  if (j.contains("surrogate_accuracy_gap")) {
    if (!j.at("surrogate_accuracy_gap").is_number()) {
      throw Error(ErrorCode::Config, "threat_model: 'surrogate_accuracy_gap' must be a number");
    }
    tm.surrogate_accuracy_gap = j.at("surrogate_accuracy_gap").get<double>();
  }
  tm.validate();
  return tm;
}

nlohmann::json to_json(const CapabilityProfile& p) {
  nlohmann::json j;
  j["needs_interaction"] = p.needs_interaction;
  if (p.min_feedback) j["min_feedback"] = to_json(*p.min_feedback);
  j["needs_surrogates"] = p.needs_surrogates;
  j["needs_aux_data"] = aux_name(p.needs_aux_data);
  return j;
}

CapabilityProfile profile_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"needs_interaction", "min_feedback", "needs_surrogates", "needs_aux_data"}, "profile");
  CapabilityProfile p;
  p.needs_interaction = j.value("needs_interaction", false);
  if (j.contains("min_feedback")) p.min_feedback = feedback_from_json(j.at("min_feedback"));
  p.needs_surrogates = j.value("needs_surrogates", false);
  if (j.contains("needs_aux_data")) {
    p.needs_aux_data = lookup<AuxDataNeed>(j.at("needs_aux_data"),
                                           {{"none", AuxDataNeed::None},
                                            {"insufficient-ok", AuxDataNeed::InsufficientOk},
                                            {"sufficient", AuxDataNeed::Sufficient}},
                                           "profile.needs_aux_data");
  }
  p.validate();
  return p;
}

}  // namespace bbox
