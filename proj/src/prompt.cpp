#include "cts/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "cts/errors.hpp"

namespace cts {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Consumes `marker` (case-insensitive) at the front of `s`, after optional spaces.
bool eat(std::string_view& s, std::string_view marker) {
  s = trim(s);
  if (s.size() < marker.size() || lower(s.substr(0, marker.size())) != marker) return false;
  s.remove_prefix(marker.size());
  return true;
}

std::vector<std::string> keyword_list(std::string_view s, std::string_view whole) {
  std::vector<std::string> out;
  s = trim(s);
  if (s.empty()) return out;
  for (;;) {
    const auto comma = s.find(',');
    const std::string_view item = trim(s.substr(0, comma));
    if (item.empty() || item.find_first_of(":;") != std::string_view::npos)
      throw MalformedPrompt("bad keyword list in \"" + std::string(whole) + "\"");
    std::string kw = lower(item);
    if (std::find(out.begin(), out.end(), kw) == out.end()) out.push_back(std::move(kw));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ',';
    out += words[i];
  }
  return out;
}

}  // namespace

CsPrompt parse_prompt(std::string_view text) {
  std::string_view s = text;
  if (!eat(s, "center") || !eat(s, ":"))
    throw MalformedPrompt("expected \"Center:\" at start of \"" + std::string(text) + "\"");
  const auto semi = s.find(';');
  if (semi == std::string_view::npos)
    throw MalformedPrompt("missing ';' before Surrounding in \"" + std::string(text) + "\"");
  const std::string_view center = s.substr(0, semi);
  s.remove_prefix(semi + 1);
  if (!eat(s, "surrounding"))
    throw MalformedPrompt("expected \"Surrounding:\" in \"" + std::string(text) + "\"");
  // The bare form "Center:;Surrounding" (no trailing colon, nothing after) is accepted.
  if (!eat(s, ":") && !trim(s).empty())
    throw MalformedPrompt("expected ':' after Surrounding in \"" + std::string(text) + "\"");
  if (s.find(';') != std::string_view::npos)
    throw MalformedPrompt("stray text after Surrounding list in \"" + std::string(text) + "\"");
  CsPrompt p;
  p.center = keyword_list(center, text);
  p.surrounding = keyword_list(s, text);
  return p;
}

std::string render(const CsPrompt& p) {
  return "Center:" + join(p.center) + "; Surrounding:" + join(p.surrounding);
}

std::pair<std::string, std::string> split(const CsPrompt& p) {
  return {"Center:" + join(p.center), "Surrounding:" + join(p.surrounding)};
}

// ---------------------------------------------------------------------------

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const std::string& w = words_[i];
    if (w.empty() || w.find_first_of(",;:\n") != std::string::npos || trim(w) != w)
      throw Error("Vocab: invalid keyword \"" + w + "\"");
    if (!ids_.emplace(w, static_cast<int>(i) + token::first_word).second)
      throw Error("Vocab: duplicate keyword \"" + w + "\"");
  }
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab file " + path.string());
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    words.push_back(line);
  }
  return Vocab(std::move(words));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocab file " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

int Vocab::id(std::string_view word) const {
  const auto it = ids_.find(std::string(word));
  return it == ids_.end() ? token::unk : it->second;
}

const std::string& Vocab::word(int id) const {
  const int i = id - token::first_word;
  if (i < 0 || static_cast<std::size_t>(i) >= words_.size())
    throw Error("Vocab: id " + std::to_string(id) + " is reserved or out of range");
  return words_[static_cast<std::size_t>(i)];
}

TokenIds tokenize(const CsPrompt& p, const Vocab& v, std::size_t center_len, std::size_t surround_len) {
  auto region = [&v](const std::vector<std::string>& words, int mark, std::size_t len, const char* name) {
    if (words.size() + 1 > len)
      throw LengthExceeded(std::string(name) + " region has " + std::to_string(words.size()) +
                           " keywords but length " + std::to_string(len));
    std::vector<int> ids(len, token::pad);
    ids[0] = mark;
    for (std::size_t i = 0; i < words.size(); ++i) ids[i + 1] = v.id(words[i]);
    return ids;
  };
  return {region(p.center, token::center_mark, center_len, "center"),
          region(p.surrounding, token::surround_mark, surround_len, "surrounding")};
}

PromptStreams embed(const Var& table, const TokenIds& ids) {
  PromptStreams s;
  s.center = embedding(table, ids.center);
  s.surrounding = embedding(table, ids.surrounding);
  const Var parts[] = {s.center, s.surrounding};
  s.total = concat(parts, 0);
  return s;
}

PromptEmbedding tokenize_and_embed(const CsPrompt& p, const Vocab& v, const Tensor& table,
                                   std::size_t center_len, std::size_t surround_len) {
  if (table.rows() != v.size())
    throw ShapeMismatch("embedding table has " + std::to_string(table.rows()) + " rows, vocab has " +
                        std::to_string(v.size()));
  Tape tape;
  const PromptStreams s = embed(tape.constant(table), tokenize(p, v, center_len, surround_len));
  return {s.total.value(), s.center.value(), s.surrounding.value()};
}

}  // namespace cts
