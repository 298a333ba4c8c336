#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "gcdk/vocabulary.hpp"

namespace gcdk {

/// One output position: a token, MASK, or EOS.
struct Slot {
  TokenId value = kMaskToken;

  static Slot mask() { return {kMaskToken}; }
  static Slot eos() { return {kEosToken}; }
  static Slot token(TokenId id) { return {id}; }

  bool is_mask() const { return value == kMaskToken; }
  bool is_eos() const { return value == kEosToken; }
  bool is_token() const { return value >= 0; }

  friend bool operator==(const Slot&, const Slot&) = default;
};

using Slots = std::vector<Slot>;

/// The decoding canvas: prompt plus L output slots split into blocks of B.
struct SequenceState {
  std::vector<TokenId> prompt;
  Slots output;
  std::size_t block_size = 1;
  std::size_t current_block = 0;

  /// All-MASK canvas. Throws std::invalid_argument unless 0 < block_size <= length.
  static SequenceState all_masked(std::vector<TokenId> prompt, std::size_t length,
                                  std::size_t block_size);

  std::size_t length() const { return output.size(); }
  std::size_t block_count() const { return (output.size() + block_size - 1) / block_size; }
  /// Half-open output range [begin, end) of block b.
  std::pair<std::size_t, std::size_t> block_range(std::size_t b) const;

  /// Masked positions of the current block, ascending.
  std::vector<std::size_t> masked_in_block() const;
  std::size_t mask_count() const;
};

/// Slots holding the given ids; sentinel ids become MASK / EOS slots.
Slots slots_from_tokens(const std::vector<TokenId>& tokens);

}  // namespace gcdk
