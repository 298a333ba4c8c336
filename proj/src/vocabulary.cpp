#include "gcdk/vocabulary.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gcdk {

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::string eos_marker,
                       std::string mask_marker)
    : tokens_(std::move(tokens)),
      eos_marker_(std::move(eos_marker)),
      mask_marker_(std::move(mask_marker)) {
  if (eos_marker_ == mask_marker_) {
    throw std::invalid_argument("vocabulary: EOS and MASK markers must differ");
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& tok = tokens_[i];
    if (tok.empty()) throw std::invalid_argument("vocabulary: empty token");
    if (tok == eos_marker_ || tok == mask_marker_) {
      throw std::invalid_argument("vocabulary: token '" + tok + "' collides with a sentinel marker");
    }
    if (!index_.emplace(tok, static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("vocabulary: duplicate token '" + tok + "'");
    }
  }
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(pos, nl - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(std::move(line));
    pos = nl + 1;
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::at(std::string_view token) const {
  if (auto id = find(token)) return *id;
  throw std::out_of_range("unknown token '" + std::string(token) + "'");
}

std::string Vocabulary::display(TokenId id) const {
  if (id == kEosToken) return eos_marker_;
  if (id == kMaskToken) return mask_marker_;
  return token(id);
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(at(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(display(id));
  return out;
}

}  // namespace gcdk
