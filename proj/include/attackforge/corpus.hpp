#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attackforge/errors.hpp"

namespace attackforge {

inline constexpr const char* kCodeToken = "[CODE]";

// Half-open token range [begin, end) over a token sequence.
struct Span {
  int begin = 0;
  int end = 0;
  bool operator==(const Span& o) const { return begin == o.begin && end == o.end; }
  bool operator<(const Span& o) const {
    return begin != o.begin ? begin < o.begin : end < o.end;
  }
  int size() const { return end - begin; }
};

enum class SentenceSource { Question, Answer, Title };

inline std::string to_string(SentenceSource s) {
  switch (s) {
    case SentenceSource::Question: return "Question";
    case SentenceSource::Answer: return "Answer";
    case SentenceSource::Title: return "Title";
  }
  return "Question";
}

inline SentenceSource sentence_source_from_string(const std::string& s) {
  if (s == "Question") return SentenceSource::Question;
  if (s == "Answer") return SentenceSource::Answer;
  if (s == "Title") return SentenceSource::Title;
  throw Error("unknown sentence source: " + s);
}

struct Sentence {
  SentenceSource source = SentenceSource::Question;
  int index = 0;
  std::vector<std::string> tokens;
};

struct SecurityPost {
  std::string id;
  std::string title;
  std::string question_html;
  std::string answer_html;
  std::string created_at;
};

struct PreparedPost {
  std::string id;
  std::vector<std::string> title_tokens;
  std::vector<Sentence> sentences;
};

enum class ArgType { Instrument, Target, Unset };
enum class RelType { And, Or, AchievedBy, Unset };
enum class SpanRole { Trigger, Instrument, Target };

inline std::string to_string(ArgType t) {
  switch (t) {
    case ArgType::Instrument: return "Instrument";
    case ArgType::Target: return "Target";
    case ArgType::Unset: return "Unset";
  }
  return "Unset";
}

inline ArgType arg_type_from_string(const std::string& s) {
  if (s == "Instrument") return ArgType::Instrument;
  if (s == "Target") return ArgType::Target;
  if (s == "Unset") return ArgType::Unset;
  throw Error("unknown arg type: " + s);
}

inline std::string to_string(RelType t) {
  switch (t) {
    case RelType::And: return "And";
    case RelType::Or: return "Or";
    case RelType::AchievedBy: return "AchievedBy";
    case RelType::Unset: return "Unset";
  }
  return "Unset";
}

inline RelType rel_type_from_string(const std::string& s) {
  if (s == "And") return RelType::And;
  if (s == "Or") return RelType::Or;
  if (s == "AchievedBy") return RelType::AchievedBy;
  if (s == "Unset") return RelType::Unset;
  throw Error("unknown relation type: " + s);
}

// BIO tags over the scoped token sequence.
enum class BioTag { O, B_TRG, I_TRG, B_INS, I_INS, B_TGT, I_TGT };

inline std::string to_string(BioTag t) {
  switch (t) {
    case BioTag::O: return "O";
    case BioTag::B_TRG: return "B-TRG";
    case BioTag::I_TRG: return "I-TRG";
    case BioTag::B_INS: return "B-INS";
    case BioTag::I_INS: return "I-INS";
    case BioTag::B_TGT: return "B-TGT";
    case BioTag::I_TGT: return "I-TGT";
  }
  return "O";
}

inline BioTag bio_tag_from_string(const std::string& s) {
  if (s == "O") return BioTag::O;
  if (s == "B-TRG") return BioTag::B_TRG;
  if (s == "I-TRG") return BioTag::I_TRG;
  if (s == "B-INS") return BioTag::B_INS;
  if (s == "I-INS") return BioTag::I_INS;
  if (s == "B-TGT") return BioTag::B_TGT;
  if (s == "I-TGT") return BioTag::I_TGT;
  throw Error("unknown bio tag: " + s);
}

inline bool bio_is_begin(BioTag t) {
  return t == BioTag::B_TRG || t == BioTag::B_INS || t == BioTag::B_TGT;
}

inline bool bio_is_inside(BioTag t) {
  return t == BioTag::I_TRG || t == BioTag::I_INS || t == BioTag::I_TGT;
}

inline SpanRole bio_role(BioTag t) {
  switch (t) {
    case BioTag::B_TRG:
    case BioTag::I_TRG: return SpanRole::Trigger;
    case BioTag::B_INS:
    case BioTag::I_INS: return SpanRole::Instrument;
    case BioTag::B_TGT:
    case BioTag::I_TGT: return SpanRole::Target;
    default: throw Error("O tag has no role");
  }
}

inline BioTag bio_begin_of(SpanRole r) {
  switch (r) {
    case SpanRole::Trigger: return BioTag::B_TRG;
    case SpanRole::Instrument: return BioTag::B_INS;
    case SpanRole::Target: return BioTag::B_TGT;
  }
  return BioTag::O;
}

inline BioTag bio_inside_of(SpanRole r) {
  switch (r) {
    case SpanRole::Trigger: return BioTag::I_TRG;
    case SpanRole::Instrument: return BioTag::I_INS;
    case SpanRole::Target: return BioTag::I_TGT;
  }
  return BioTag::O;
}

struct LabeledSpan {
  Span span;
  SpanRole role = SpanRole::Trigger;
  bool operator==(const LabeledSpan& o) const { return span == o.span && role == o.role; }
};

// Decodes a BIO sequence into labeled spans in textual order.
// Throws InvalidBio when an I tag does not continue a span of the same role.
inline std::vector<LabeledSpan> decode_bio(const std::vector<BioTag>& bio) {
  std::vector<LabeledSpan> spans;
  for (std::size_t i = 0; i < bio.size(); ++i) {
    BioTag t = bio[i];
    if (t == BioTag::O) continue;
    if (bio_is_inside(t)) {
      bool continues = i > 0 && bio[i - 1] != BioTag::O &&
                       bio_role(bio[i - 1]) == bio_role(t);
      if (!continues) throw InvalidBio(i, "I tag without matching B/I");
      spans.back().span.end = static_cast<int>(i) + 1;
    } else {
      spans.push_back({{static_cast<int>(i), static_cast<int>(i) + 1}, bio_role(t)});
    }
  }
  return spans;
}

inline std::vector<BioTag> encode_bio(const std::vector<LabeledSpan>& spans, std::size_t len) {
  std::vector<BioTag> bio(len, BioTag::O);
  for (const auto& s : spans) {
    bio[s.span.begin] = bio_begin_of(s.role);
    for (int i = s.span.begin + 1; i < s.span.end; ++i) bio[i] = bio_inside_of(s.role);
  }
  return bio;
}

struct GoldDep {
  Span trigger;
  Span arg;
  ArgType type = ArgType::Unset;
  bool operator==(const GoldDep& o) const {
    return trigger == o.trigger && arg == o.arg && type == o.type;
  }
};

struct GoldRelation {
  int src = 0;
  int dst = 0;
  RelType type = RelType::Unset;
  bool operator==(const GoldRelation& o) const {
    return src == o.src && dst == o.dst && type == o.type;
  }
};

struct AnnotatedPost {
  PreparedPost post;
  std::vector<int> scope_gold;          // ascending sentence indices
  std::vector<std::string> tokens;      // scoped token sequence
  std::vector<BioTag> bio;              // one tag per scoped token
  std::vector<GoldDep> deps;
  std::vector<GoldRelation> relations;  // event ordinals by trigger order

  std::vector<LabeledSpan> spans() const { return decode_bio(bio); }

  std::vector<Span> trigger_spans() const {
    std::vector<Span> out;
    for (const auto& s : spans())
      if (s.role == SpanRole::Trigger) out.push_back(s.span);
    return out;
  }
};

namespace detail {

inline bool is_word_char(char c) {
  unsigned char u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '_' || u >= 0x80;
}

inline std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool ieq(const std::string& a, const std::string& b) {
  return lowercase(a) == lowercase(b);
}

// Case-insensitive search for a tag like "<code" starting at pos.
inline std::size_t find_tag(const std::string& s, const std::string& tag, std::size_t pos) {
  std::string hay = lowercase(s.substr(pos));
  std::size_t at = hay.find(tag);
  return at == std::string::npos ? std::string::npos : pos + at;
}

// Replaces <code>...</code> blocks with the [CODE] token. An unclosed
// <code> swallows the rest of the field.
inline std::string mask_code_blocks(const std::string& html) {
  std::string out;
  std::size_t pos = 0;
  while (pos < html.size()) {
    std::size_t open = find_tag(html, "<code", pos);
    if (open == std::string::npos) {
      out += html.substr(pos);
      break;
    }
    out += html.substr(pos, open - pos);
    std::size_t open_end = html.find('>', open);
    if (open_end == std::string::npos) {
      out += ' ';
      out += kCodeToken;
      out += ' ';
      return out;
    }
    std::size_t close = find_tag(html, "</code", open_end);
    out += ' ';
    out += kCodeToken;
    out += ' ';
    if (close == std::string::npos) return out;
    std::size_t close_end = html.find('>', close);
    pos = close_end == std::string::npos ? html.size() : close_end + 1;
  }
  return out;
}

// Minimal entity decoding; lt/gt become spaces so no token ever carries
// raw angle brackets.
inline std::string decode_entities(const std::string& s) {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"&amp;", "&"}, {"&quot;", "\""}, {"&#39;", "'"},
      {"&apos;", "'"}, {"&nbsp;", " "}, {"&lt;", " "}, {"&gt;", " "},
  };
  std::string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  while (pos < s.size()) {
    if (s[pos] == '&') {
      bool matched = false;
      for (const auto& [from, to] : table) {
        if (s.compare(pos, from.size(), from) == 0) {
          out += to;
          pos += from.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    out += s[pos++];
  }
  return out;
}

// Removes markup tags, keeping inner text. A '<' that never closes, or a
// nested '<' before '>', marks the markup unresolvable; the caller then
// falls back to stripping every angle-bracket character.
inline bool strip_tags_strict(const std::string& s, std::string* out) {
  out->clear();
  std::size_t pos = 0;
  while (pos < s.size()) {
    if (s[pos] == '>') return false;
    if (s[pos] != '<') {
      *out += s[pos++];
      continue;
    }
    std::size_t cur = pos + 1;
    while (cur < s.size() && s[cur] != '>' && s[cur] != '<') ++cur;
    if (cur >= s.size() || s[cur] == '<') return false;
    *out += ' ';
    pos = cur + 1;
  }
  return true;
}

inline std::string strip_angle_brackets(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) out += (c == '<' || c == '>') ? ' ' : c;
  return out;
}

struct RawToken {
  std::string text;
  bool space_after = false;  // whitespace (or end) follows in the raw text
};

// Whitespace/punctuation tokenizer. The literal [CODE] marker survives as
// one token; everything else is lowercased.
inline std::vector<RawToken> tokenize(const std::string& text) {
  std::vector<RawToken> tokens;
  std::size_t pos = 0;
  auto flush_space = [&](std::size_t at) {
    if (!tokens.empty() && at < text.size() &&
        std::isspace(static_cast<unsigned char>(text[at])))
      tokens.back().space_after = true;
  };
  const std::string code(kCodeToken);
  while (pos < text.size()) {
    char c = text[pos];
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tokens.empty()) tokens.back().space_after = true;
      ++pos;
      continue;
    }
    if (text.compare(pos, code.size(), code) == 0) {
      tokens.push_back({code, false});
      pos += code.size();
      flush_space(pos);
      continue;
    }
    if (is_word_char(c)) {
      std::size_t start = pos;
      while (pos < text.size() && is_word_char(text[pos])) ++pos;
      tokens.push_back({lowercase(text.substr(start, pos - start)), false});
      flush_space(pos);
      continue;
    }
    tokens.push_back({std::string(1, c), false});
    ++pos;
    flush_space(pos);
  }
  if (!tokens.empty()) tokens.back().space_after = true;
  return tokens;
}

inline bool is_terminal_punct(const std::string& t) {
  return t == "." || t == "!" || t == "?";
}

// Sentence split on terminal punctuation followed by whitespace.
inline std::vector<std::vector<std::string>> split_sentences(const std::vector<RawToken>& tokens) {
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> cur;
  for (const auto& t : tokens) {
    cur.push_back(t.text);
    if (is_terminal_punct(t.text) && t.space_after) {
      sentences.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) sentences.push_back(std::move(cur));
  return sentences;
}

inline std::vector<std::vector<std::string>> html_field_to_sentences(const std::string& html) {
  std::string masked = mask_code_blocks(html);
  std::string stripped;
  if (!strip_tags_strict(masked, &stripped)) stripped = strip_angle_brackets(masked);
  return split_sentences(tokenize(decode_entities(stripped)));
}

}  // namespace detail

inline PreparedPost preprocess_post(const SecurityPost& post) {
  if (post.id.empty()) throw Error("post id must be nonempty");
  PreparedPost out;
  out.id = post.id;
  {
    std::string stripped;
    std::string masked = detail::mask_code_blocks(post.title);
    if (!detail::strip_tags_strict(masked, &stripped))
      stripped = detail::strip_angle_brackets(masked);
    for (const auto& t : detail::tokenize(detail::decode_entities(stripped)))
      out.title_tokens.push_back(t.text);
  }
  int index = 0;
  for (auto& toks : detail::html_field_to_sentences(post.question_html)) {
    if (toks.empty()) continue;
    out.sentences.push_back({SentenceSource::Question, index++, std::move(toks)});
  }
  for (auto& toks : detail::html_field_to_sentences(post.answer_html)) {
    if (toks.empty()) continue;
    out.sentences.push_back({SentenceSource::Answer, index++, std::move(toks)});
  }
  if (out.sentences.empty())
    throw MalformedMarkup("post " + post.id + " has no tokens after markup removal");
  return out;
}

// Rebuilds a SecurityPost from prepared token streams (one sentence per
// space-joined run). Used to check that preprocessing is idempotent.
inline SecurityPost serialize_prepared(const PreparedPost& p) {
  SecurityPost out;
  out.id = p.id;
  std::string q, a;
  for (const auto& s : p.sentences) {
    std::string joined;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) joined += ' ';
      joined += s.tokens[i];
    }
    std::string& field = s.source == SentenceSource::Answer ? a : q;
    if (!field.empty()) field += ' ';
    field += joined;
  }
  out.question_html = q;
  out.answer_html = a;
  for (std::size_t i = 0; i < p.title_tokens.size(); ++i) {
    if (i) out.title += ' ';
    out.title += p.title_tokens[i];
  }
  return out;
}

inline std::vector<std::string> scoped_tokens(const PreparedPost& post,
                                              const std::vector<int>& selected) {
  std::vector<std::string> out;
  for (int idx : selected) {
    if (idx < 0 || idx >= static_cast<int>(post.sentences.size()))
      throw Error("sentence index out of range: " + std::to_string(idx));
    const auto& s = post.sentences[idx].tokens;
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

// ---- line-delimited record IO ----

inline std::vector<SecurityPost> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file: " + path);
  std::vector<SecurityPost> posts;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    SecurityPost p;
    try {
      p.id = j.at("id").get<std::string>();
      p.title = j.value("title", "");
      p.question_html = j.value("question_html", "");
      p.answer_html = j.value("answer_html", "");
      p.created_at = j.value("created_at", "");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    if (p.id.empty()) throw ParseError(line_no, "empty post id");
    if (p.question_html.empty() && p.answer_html.empty())
      throw ParseError(line_no, "both question_html and answer_html empty");
    if (!seen.insert(p.id).second) throw DuplicateId(p.id);
    posts.push_back(std::move(p));
  }
  return posts;
}

inline void save_prepared(const std::vector<PreparedPost>& posts, std::ostream& out) {
  for (const auto& p : posts) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["title_tokens"] = p.title_tokens;
    j["sentences"] = nlohmann::ordered_json::array();
    for (const auto& s : p.sentences) {
      nlohmann::ordered_json js;
      js["source"] = to_string(s.source);
      js["index"] = s.index;
      js["tokens"] = s.tokens;
      j["sentences"].push_back(js);
    }
    out << j.dump() << '\n';
  }
}

inline std::vector<PreparedPost> load_prepared(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open prepared file: " + path);
  std::vector<PreparedPost> posts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      PreparedPost p;
      p.id = j.at("id").get<std::string>();
      p.title_tokens = j.at("title_tokens").get<std::vector<std::string>>();
      for (const auto& js : j.at("sentences")) {
        Sentence s;
        s.source = sentence_source_from_string(js.at("source").get<std::string>());
        s.index = js.at("index").get<int>();
        s.tokens = js.at("tokens").get<std::vector<std::string>>();
        p.sentences.push_back(std::move(s));
      }
      posts.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return posts;
}

// Validates one annotation record against its prepared post. Token text is
// compared case-insensitively so annotations may restore surface casing.
inline AnnotatedPost validate_annotation(AnnotatedPost ann) {
  const auto scoped = scoped_tokens(ann.post, ann.scope_gold);
  if (ann.tokens.size() != scoped.size())
    throw Error("annotation tokens disagree with scoped sentences for post " + ann.post.id);
  for (std::size_t i = 0; i < scoped.size(); ++i)
    if (!detail::ieq(ann.tokens[i], scoped[i]))
      throw Error("annotation token mismatch at " + std::to_string(i) + " for post " +
                  ann.post.id);
  if (ann.bio.size() != ann.tokens.size())
    throw InvalidBio(ann.bio.size(), "bio length differs from token count");
  for (std::size_t i = 1; i < ann.scope_gold.size(); ++i)
    if (ann.scope_gold[i] <= ann.scope_gold[i - 1])
      throw Error("scope_gold must be strictly ascending for post " + ann.post.id);

  const auto spans = decode_bio(ann.bio);  // throws InvalidBio
  std::set<std::pair<Span, SpanRole>> span_set;
  std::vector<Span> triggers;
  for (const auto& s : spans) {
    span_set.insert({s.span, s.role});
    if (s.role == SpanRole::Trigger) triggers.push_back(s.span);
  }
  for (std::size_t d = 0; d < ann.deps.size(); ++d) {
    const auto& dep = ann.deps[d];
    if (!span_set.count({dep.trigger, SpanRole::Trigger}))
      throw DanglingSpan(d, "trigger span not in bio");
    SpanRole want = dep.type == ArgType::Instrument ? SpanRole::Instrument : SpanRole::Target;
    if (dep.type == ArgType::Unset) throw DanglingSpan(d, "dep arg type must be set");
    if (!span_set.count({dep.arg, want}))
      throw DanglingSpan(d, "arg span/role not in bio");
  }
  std::set<std::pair<int, int>> pairs;
  for (std::size_t r = 0; r < ann.relations.size(); ++r) {
    const auto& rel = ann.relations[r];
    int n = static_cast<int>(triggers.size());
    if (rel.src < 0 || rel.src >= n || rel.dst < 0 || rel.dst >= n)
      throw DanglingRelation(r, "event ordinal out of range");
    if (rel.src == rel.dst) throw DanglingRelation(r, "self-relation");
    if (rel.type == RelType::Unset) throw DanglingRelation(r, "relation type must be set");
    auto key = std::minmax(rel.src, rel.dst);
    if (!pairs.insert({key.first, key.second}).second)
      throw DanglingRelation(r, "duplicate relation pair");
  }
  return ann;
}

inline void save_annotations(const std::vector<AnnotatedPost>& anns, std::ostream& out) {
  for (const auto& a : anns) {
    nlohmann::ordered_json j;
    j["post_id"] = a.post.id;
    j["scope_gold"] = a.scope_gold;
    j["tokens"] = a.tokens;
    j["bio"] = nlohmann::ordered_json::array();
    for (auto t : a.bio) j["bio"].push_back(to_string(t));
    j["deps"] = nlohmann::ordered_json::array();
    for (const auto& d : a.deps)
      j["deps"].push_back({{d.trigger.begin, d.trigger.end},
                           {d.arg.begin, d.arg.end},
                           to_string(d.type)});
    j["relations"] = nlohmann::ordered_json::array();
    for (const auto& r : a.relations)
      j["relations"].push_back({r.src, r.dst, to_string(r.type)});
    out << j.dump() << '\n';
  }
}

inline std::vector<AnnotatedPost> load_annotations(const std::string& path,
                                                   const std::vector<PreparedPost>& corpus) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open annotations file: " + path);
  std::map<std::string, const PreparedPost*> by_id;
  for (const auto& p : corpus) by_id[p.id] = &p;
  std::vector<AnnotatedPost> anns;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    AnnotatedPost a;
    std::string post_id;
    try {
      post_id = j.at("post_id").get<std::string>();
      auto it = by_id.find(post_id);
      if (it == by_id.end()) throw UnknownPost(post_id);
      a.post = *it->second;
      a.scope_gold = j.at("scope_gold").get<std::vector<int>>();
      a.tokens = j.at("tokens").get<std::vector<std::string>>();
      for (const auto& t : j.at("bio")) a.bio.push_back(bio_tag_from_string(t.get<std::string>()));
      for (const auto& d : j.at("deps")) {
        GoldDep dep;
        dep.trigger = {d.at(0).at(0).get<int>(), d.at(0).at(1).get<int>()};
        dep.arg = {d.at(1).at(0).get<int>(), d.at(1).at(1).get<int>()};
        dep.type = arg_type_from_string(d.at(2).get<std::string>());
        a.deps.push_back(dep);
      }
      for (const auto& r : j.at("relations")) {
        GoldRelation rel;
        rel.src = r.at(0).get<int>();
        rel.dst = r.at(1).get<int>();
        rel.type = rel_type_from_string(r.at(2).get<std::string>());
        a.relations.push_back(rel);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    anns.push_back(validate_annotation(std::move(a)));
  }
  return anns;
}

}  // namespace attackforge
