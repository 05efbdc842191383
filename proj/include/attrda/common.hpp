// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace attrda {

using TermId = std::int32_t;
using DocId = std::int64_t;

enum class Label : int { NonHate = 0, Hate = 1 };
constexpr int kNumClasses = 2;

enum class Domain { Source, Target };

std::string_view to_string(Label label);
std::string_view to_string(Domain domain);
std::optional<Label> parse_label(std::string_view text);
std::optional<Domain> parse_domain(std::string_view text);

inline int class_index(Label label) { return static_cast<int>(label); }
inline Label label_from_index(int index) { return index == 0 ? Label::NonHate : Label::Hate; }

// Malformed files, bad labels, missing paths.
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or argument combination; reported before compute.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses or gradients during training.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Independent sub-seeds from one run seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace attrda
