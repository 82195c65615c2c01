#include "helio/losses.hpp"

namespace helio::losses {

std::string to_string(AdversarialForm form) {
  return form == AdversarialForm::NonSaturating ? "nonsaturating" : "minimax";
}

AdversarialForm parse_adversarial_form(const std::string& s) {
  if (s == "nonsaturating") return AdversarialForm::NonSaturating;
  if (s == "minimax") return AdversarialForm::Minimax;
  throw Error(ErrorKind::ConfigError, "unknown adversarial form '" + s + "'");
}

std::string to_string(FeatureMatchingNorm norm) {
  return norm == FeatureMatchingNorm::PerLayerMean ? "per_layer_mean" : "sum";
}

FeatureMatchingNorm parse_feature_matching_norm(const std::string& s) {
  if (s == "per_layer_mean") return FeatureMatchingNorm::PerLayerMean;
  if (s == "sum") return FeatureMatchingNorm::Sum;
  throw Error(ErrorKind::ConfigError, "unknown feature matching normalization '" + s + "'");
}

}  // namespace helio::losses
