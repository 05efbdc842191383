// SPDX-License-Identifier: Apache-2.0
#include "attrda/common.hpp"

namespace attrda {

std::string_view to_string(Label label) {
  return label == Label::Hate ? "hate" : "non-hate";
}

std::string_view to_string(Domain domain) {
  return domain == Domain::Source ? "source" : "target";
}

std::optional<Label> parse_label(std::string_view text) {
  if (text == "hate") return Label::Hate;
  if (text == "non-hate") return Label::NonHate;
  return std::nullopt;
}

std::optional<Domain> parse_domain(std::string_view text) {
  if (text == "source") return Domain::Source;
  if (text == "target") return Domain::Target;
  return std::nullopt;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace attrda
