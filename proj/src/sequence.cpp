#include "gcdk/sequence.hpp"

#include <algorithm>
#include <stdexcept>

namespace gcdk {

SequenceState SequenceState::all_masked(std::vector<TokenId> prompt, std::size_t length,
                                        std::size_t block_size) {
  if (length == 0 || block_size == 0 || block_size > length) {
    throw std::invalid_argument("sequence: need 0 < block_size <= length");
  }
  SequenceState st;
  st.prompt = std::move(prompt);
  st.output.assign(length, Slot::mask());
  st.block_size = block_size;
  return st;
}

std::pair<std::size_t, std::size_t> SequenceState::block_range(std::size_t b) const {
  auto begin = std::min(b * block_size, output.size());
  return {begin, std::min(begin + block_size, output.size())};
}

std::vector<std::size_t> SequenceState::masked_in_block() const {
  auto [begin, end] = block_range(current_block);
  std::vector<std::size_t> out;
  for (auto i = begin; i < end; ++i) {
    if (output[i].is_mask()) out.push_back(i);
  }
  return out;
}

std::size_t SequenceState::mask_count() const {
  return static_cast<std::size_t>(
      std::count_if(output.begin(), output.end(), [](const Slot& s) { return s.is_mask(); }));
}

Slots slots_from_tokens(const std::vector<TokenId>& tokens) {
  Slots out;
  out.reserve(tokens.size());
  for (auto t : tokens) out.push_back(Slot{t});
  return out;
}

}  // namespace gcdk
