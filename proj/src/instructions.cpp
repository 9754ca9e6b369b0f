#include <cctype>

#include "sport/datagen.hpp"
#include "sport/error.hpp"
#include "sport/rng.hpp"
#include "sport/text.hpp"

namespace sport::datagen {

const TemplateBank& TemplateBank::standard() {
  static const TemplateBank bank = [] {
    TemplateBank b;
    b.verbs = {"put", "place", "move", "set"};
    b.templates[Relation::Left] = {
        "{verb} the {movable} to the left of the {ref}.",
        "{verb} the {movable} on the left side of the {ref}.",
        "{verb} the {movable} left of the {ref}.",
        "please {verb} the {movable} to the left of the {ref}.",
        "could you {verb} the {movable} on the left of the {ref}?",
    };
    b.templates[Relation::Right] = {
        "{verb} the {movable} to the right of the {ref}.",
        "{verb} the {movable} on the right side of the {ref}.",
        "{verb} the {movable} right of the {ref}.",
        "please {verb} the {movable} to the right of the {ref}.",
        "could you {verb} the {movable} on the right of the {ref}?",
    };
    b.templates[Relation::Front] = {
        "{verb} the {movable} in front of the {ref}.",
        "{verb} the {movable} just in front of the {ref}.",
        "{verb} the {movable} on the near side of the {ref}.",
        "please {verb} the {movable} in front of the {ref}.",
        "could you {verb} the {movable} in front of the {ref}?",
    };
    b.templates[Relation::Behind] = {
        "{verb} the {movable} behind the {ref}.",
        "{verb} the {movable} just behind the {ref}.",
        "{verb} the {movable} on the far side of the {ref}.",
        "please {verb} the {movable} behind the {ref}.",
        "could you {verb} the {movable} behind the {ref}?",
    };
    b.templates[Relation::OnTopOf] = {
        "{verb} the {movable} on top of the {ref}.",
        "{verb} the {movable} onto the {ref}.",
        "{verb} the {movable} on the {ref}.",
        "please {verb} the {movable} on top of the {ref}.",
        "could you {verb} the {movable} onto the {ref}?",
    };
    b.templates[Relation::Between] = {
        "{verb} the {movable} between the {ref} and the {ref2}.",
        "{verb} the {movable} in between the {ref} and the {ref2}.",
        "{verb} the {movable} midway between the {ref} and the {ref2}.",
        "please {verb} the {movable} between the {ref} and the {ref2}.",
        "could you {verb} the {movable} between the {ref} and the {ref2}?",
    };
    return b;
  }();
  return bank;
}

std::string fill_template(std::string_view tmpl, std::string_view verb, std::string_view movable,
                          std::span<const std::string> refs) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close == std::string_view::npos) throw FormatError("unterminated slot in template");
      const auto slot = tmpl.substr(i + 1, close - i - 1);
      if (slot == "verb") out += verb;
      else if (slot == "movable") out += movable;
      else if (slot == "ref" && !refs.empty()) out += refs[0];
      else if (slot == "ref2" && refs.size() > 1) out += refs[1];
      else throw FormatError("unknown or unfilled template slot {" + std::string(slot) + "}");
      i = close + 1;
    } else {
      out += tmpl[i++];
    }
  }
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

std::string generate_instruction(std::string_view movable, std::span<const std::string> refs, Relation relation,
                                 const TemplateBank& bank, std::uint64_t seed) {
  const auto it = bank.templates.find(relation);
  if (it == bank.templates.end() || it->second.empty() || bank.verbs.empty())
    throw EmptyTemplateBank("no template for relation '" + std::string(scene::to_string(relation)) + "'");
  if (static_cast<int>(refs.size()) != scene::reference_count(relation))
    throw std::invalid_argument("wrong number of reference descriptors");
  Rng rng(seed);
  const auto& tmpl = it->second[rng.index(it->second.size())];
  const auto& verb = bank.verbs[rng.index(bank.verbs.size())];
  return fill_template(tmpl, verb, movable, refs);
}

namespace {

struct Matcher {
  const std::vector<std::string>& text;
  const std::vector<std::vector<std::string>>& descriptors;
  const std::vector<std::string>& verbs;

  // Slot bindings, -1 when unbound.
  int movable = -1, ref = -1, ref2 = -1;

  bool match(const std::vector<std::string>& pattern, std::size_t p, std::size_t q) {
    if (p == pattern.size()) return q == text.size();
    const auto& tok = pattern[p];
    if (tok == "{verb}") {
      if (q >= text.size()) return false;
      for (const auto& v : verbs)
        if (text[q] == v && match(pattern, p + 1, q + 1)) return true;
      return false;
    }
    int* slot = tok == "{movable}" ? &movable : tok == "{ref}" ? &ref : tok == "{ref2}" ? &ref2 : nullptr;
    if (slot) {
      for (std::size_t d = 0; d < descriptors.size(); ++d) {
        const auto& words = descriptors[d];
        if (words.empty() || q + words.size() > text.size()) continue;
        if (!std::equal(words.begin(), words.end(), text.begin() + static_cast<std::ptrdiff_t>(q))) continue;
        *slot = static_cast<int>(d);
        if (match(pattern, p + 1, q + words.size())) return true;
      }
      *slot = -1;
      return false;
    }
    return q < text.size() && text[q] == tok && match(pattern, p + 1, q + 1);
  }
};

// Template words with slots kept as single "{name}" tokens.
std::vector<std::string> pattern_tokens(const std::string& tmpl) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const auto open = tmpl.find('{', i);
    const auto chunk = tmpl.substr(i, open == std::string::npos ? std::string::npos : open - i);
    for (auto& w : word_tokens(chunk)) out.push_back(std::move(w));
    if (open == std::string::npos) break;
    const auto close = tmpl.find('}', open);
    out.push_back(tmpl.substr(open, close - open + 1));
    i = close + 1;
  }
  return out;
}

}  // namespace

ParsedInstruction parse_instruction(std::string_view text, std::span<const std::string> descriptors,
                                    const TemplateBank& bank) {
  const auto words = word_tokens(text);
  std::vector<std::vector<std::string>> desc_words;
  for (const auto& d : descriptors) desc_words.push_back(word_tokens(d));
  std::vector<std::string> verbs;
  for (const auto& v : bank.verbs) verbs.push_back(word_tokens(v).empty() ? v : word_tokens(v).front());

  for (const auto& [relation, templates] : bank.templates) {
    for (const auto& tmpl : templates) {
      Matcher m{words, desc_words, verbs};
      if (!m.match(pattern_tokens(tmpl), 0, 0)) continue;
      ParsedInstruction parsed;
      parsed.relation = relation;
      parsed.movable = descriptors[static_cast<std::size_t>(m.movable)];
      if (m.ref >= 0) parsed.references.push_back(descriptors[static_cast<std::size_t>(m.ref)]);
      if (m.ref2 >= 0) parsed.references.push_back(descriptors[static_cast<std::size_t>(m.ref2)]);
      bool distinct = true;
      for (const auto& r : parsed.references) distinct = distinct && r != parsed.movable;
      if (parsed.references.size() == 2) distinct = distinct && parsed.references[0] != parsed.references[1];
      if (!distinct) throw UnparseableInstruction("instruction names the same object twice");
      return parsed;
    }
  }
  throw UnparseableInstruction("instruction matches no known phrasing: " + std::string(text));
}

}  // namespace sport::datagen
