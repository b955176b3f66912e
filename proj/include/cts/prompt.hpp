#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cts/autodiff.hpp"
#include "cts/tensor.hpp"

namespace cts {

/// Region-aware caption "Center:a,b,c; Surrounding:d,e,f". Both lists empty
/// means the unconditional paradigm.
struct CsPrompt {
  std::vector<std::string> center;
  std::vector<std::string> surrounding;

  bool unconditional() const { return center.empty() && surrounding.empty(); }
  friend bool operator==(const CsPrompt&, const CsPrompt&) = default;
};

/// Throws MalformedPrompt when either marker is missing, out of order, or
/// surrounded by stray text. Keywords are lowercased and deduplicated.
CsPrompt parse_prompt(std::string_view text);
std::string render(const CsPrompt& p);
/// ("Center:a,b,c", "Surrounding:d,e,f")
std::pair<std::string, std::string> split(const CsPrompt& p);

namespace token {
inline constexpr int pad = 0;
inline constexpr int center_mark = 1;
inline constexpr int surround_mark = 2;
inline constexpr int unk = 3;
inline constexpr int first_word = 4;
}  // namespace token

class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> words);

  /// One keyword per line; line i (0-based) gets id i + 4.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Id of `word`, or token::unk.
  int id(std::string_view word) const;
  /// Word for a non-reserved id.
  const std::string& word(int id) const;
  std::size_t size() const { return words_.size() + token::first_word; }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

struct TokenIds {
  std::vector<int> center;
  std::vector<int> surrounding;
};

/// [CENTER_MARK, ids..., PAD...] and [SURROUND_MARK, ids..., PAD...].
/// Throws LengthExceeded if a region does not fit.
TokenIds tokenize(const CsPrompt& p, const Vocab& v, std::size_t center_len, std::size_t surround_len);

/// Text streams for one prompt. total is center rows followed by surrounding rows.
struct PromptEmbedding {
  Tensor total;
  Tensor center;
  Tensor surrounding;
};

struct PromptStreams {
  Var total;
  Var center;
  Var surrounding;
};

PromptStreams embed(const Var& table, const TokenIds& ids);

PromptEmbedding tokenize_and_embed(const CsPrompt& p, const Vocab& v, const Tensor& table,
                                   std::size_t center_len, std::size_t surround_len);

}  // namespace cts
