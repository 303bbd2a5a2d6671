// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-level tokenizer: ids 0..255 are raw bytes, 256 = BOS, 257 = EOS.

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mole::tokenizer {

inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kVocabSize = 258;

std::vector<int> encode(std::string_view text);
/// Drops special ids.
std::string decode(std::span<const int> ids);

}  // namespace mole::tokenizer
