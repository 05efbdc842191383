// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>

// Text resources compiled into the library from resources/.
namespace attrda::resources {

std::string_view stopwords_en();           // one term per line, '#' comments
std::string_view predef_identity_terms();  // term-list TSV, origin=predef
std::string_view synthetic_benchmark();    // key=value experiment config

}  // namespace attrda::resources
