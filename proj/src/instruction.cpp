#include "babywalk/instruction.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <sstream>

#include "babywalk/error.hpp"
#include "babywalk/io.hpp"
#include "babywalk/rng.hpp"

namespace babywalk {

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string trim(std::string_view s) {
  auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

void push_unique(std::vector<std::string>& out, const std::string& word) {
  if (std::find(out.begin(), out.end(), word) == out.end()) out.push_back(word);
}

bool starts_with_words(const std::vector<std::string>& words, const std::string& prefix) {
  auto prefix_words = tokenize_words(prefix);
  if (prefix_words.empty() || prefix_words.size() > words.size()) return false;
  return std::equal(prefix_words.begin(), prefix_words.end(), words.begin());
}

std::set<std::string> json_set(const nlohmann::json& doc, const char* key) {
  return doc.at(key).get<std::set<std::string>>();
}

}  // namespace

void Lexicon::validate(std::span<const std::string> landmark_names) const {
  for (const auto& name : landmark_names) {
    if (landmark_blacklist.contains(name) || verb_blacklist.contains(name)) {
      throw Error(ErrorCode::invalid_argument, "landmark '" + name + "' is blacklisted by the lexicon");
    }
  }
}

Lexicon default_lexicon() {
  Lexicon lex;
  for (const auto& name : default_landmark_names()) lex.noun_words.insert(name);
  // Non-landmark nouns, plus blacklisted words a generic tagger marks as nouns.
  lex.noun_words.insert({"room", "hallway", "area", "floor", "wall", "corner", "entrance", "house",
                         "level", "end", "head", "inside", "position", "ground", "home", "feet",
                         "way", "bit", "thing", "side", "middle", "piece", "left", "right",
                         "destination", "direction", "inch", "18", "one", "back", "round",
                         "straight", "forward"});
  lex.verb_words = {"go",    "walk",  "head",   "move",    "proceed", "continue", "pass",
                    "take",  "exit",  "enter",  "climb",   "descend", "stop",     "wait",
                    "stand", "turn",  "make",   "face",    "facing",  "veer",     "follow",
                    "keep",  "cross", "remain", "see",     "go",      "leave",    "walking"};
  lex.stop_words = {"the",  "a",    "an",   "for",  "from",  "to",    "of",   "and",  "at",
                    "in",   "on",   "by",   "with", "into",  "until", "past", "your", "you",
                    "there", "is",  "it",   "then", "will",  "this",  "that", "near", "once",
                    "up",   "down", "through", "towards", "toward", "just", "be", "are",
                    "ok",   "okay", "now",  "here", "so",    "all",   "very", "around"};
  lex.landmark_blacklist = {"end",    "18 inch",  "head",   "inside",  "forward", "position",
                            "ground", "home",     "face",   "walk",    "feet",    "way",
                            "walking", "bit",     "veer",   "'ve",     "next",    "stop",
                            "towards", "right",   "direction", "thing", "facing", "side",
                            "turn",   "middle",   "one",    "out",     "piece",   "left",
                            "destination", "straight", "enter", "wait", "don't",  "stand",
                            "back",   "round"};
  lex.verb_blacklist = {"make", "turn", "face", "facing", "veer"};
  lex.stop_sentence_prefixes = {"wait", "stop", "there", "remain", "you will see"};
  lex.next_merge_prefixes = {"with", "facing"};
  return lex;
}

nlohmann::json lexicon_to_json(const Lexicon& lex) {
  return {{"noun_words", lex.noun_words},
          {"verb_words", lex.verb_words},
          {"stop_words", lex.stop_words},
          {"landmark_blacklist", lex.landmark_blacklist},
          {"verb_blacklist", lex.verb_blacklist},
          {"stop_sentence_prefixes", lex.stop_sentence_prefixes},
          {"next_merge_prefixes", lex.next_merge_prefixes}};
}

Lexicon lexicon_from_json(const nlohmann::json& doc) {
  try {
    Lexicon lex;
    lex.noun_words = json_set(doc, "noun_words");
    lex.verb_words = json_set(doc, "verb_words");
    lex.stop_words = json_set(doc, "stop_words");
    lex.landmark_blacklist = json_set(doc, "landmark_blacklist");
    lex.verb_blacklist = json_set(doc, "verb_blacklist");
    lex.stop_sentence_prefixes = json_set(doc, "stop_sentence_prefixes");
    lex.next_merge_prefixes = json_set(doc, "next_merge_prefixes");
    return lex;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("lexicon: ") + e.what());
  }
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  try {
    return lexicon_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::schema_violation, path.string() + ": " + e.what());
  }
}

std::string lemmatize(std::string_view word) {
  std::string w(word);
  if (w.size() > 3 && ends_with(w, "es")) {
    std::string_view stem(w.data(), w.size() - 2);
    if (ends_with(stem, "s") || ends_with(stem, "x") || ends_with(stem, "z") ||
        ends_with(stem, "ch") || ends_with(stem, "sh")) {
      return std::string(stem);
    }
  }
  if (w.size() > 3 && ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "'s")) {
    w.pop_back();
  }
  return w;
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'') {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  // Quotes wrapping a word are punctuation, not part of it.
  for (auto& w : words) {
    while (!w.empty() && w.front() == '\'' && w != "'ve") w.erase(w.begin());
    while (!w.empty() && w.back() == '\'') w.pop_back();
  }
  std::erase_if(words, [](const std::string& w) { return w.empty(); });
  return words;
}

TaggedInstruction tag(std::string_view raw, const Lexicon& lexicon) {
  TaggedInstruction out;
  out.raw = std::string(raw);
  std::size_t start = 0;
  while (start <= raw.size()) {
    auto stop = raw.find('.', start);
    auto piece = raw.substr(start, stop == std::string_view::npos ? std::string_view::npos : stop - start);
    auto text = trim(piece);
    auto words = tokenize_words(text);
    if (!words.empty()) {
      TokenSpan span{static_cast<int>(out.tokens.size()), 0};
      for (auto& w : words) {
        Token tok;
        tok.lemma = lemmatize(w);
        if (lexicon.stop_words.contains(w)) {
          tok.tag = Tag::stopword;
        } else if (lexicon.verb_words.contains(w) || lexicon.verb_words.contains(tok.lemma)) {
          tok.tag = Tag::verb;
        } else if (lexicon.noun_words.contains(w) || lexicon.noun_words.contains(tok.lemma)) {
          tok.tag = Tag::noun;
        }
        const bool surface_known = (tok.tag == Tag::verb && lexicon.verb_words.contains(w)) ||
                                   (tok.tag == Tag::noun && lexicon.noun_words.contains(w));
        if (surface_known || (tok.tag != Tag::noun && tok.tag != Tag::verb)) tok.lemma = w;
        tok.word = std::move(w);
        out.tokens.push_back(std::move(tok));
      }
      span.end = static_cast<int>(out.tokens.size());
      out.sentences.push_back(span);
      out.sentence_texts.push_back(std::move(text));
    }
    if (stop == std::string_view::npos) break;
    start = stop + 1;
  }
  return out;
}

std::vector<SentenceUnit> sentence_units(const TaggedInstruction& tagged, const Lexicon& lexicon) {
  std::vector<SentenceUnit> units;
  for (std::size_t s = 0; s < tagged.sentences.size(); ++s) {
    const auto span = tagged.sentences[s];
    SentenceUnit unit;
    unit.span = {static_cast<int>(s), static_cast<int>(s) + 1};

    // Noun phrases are maximal runs of NOUN tokens; stop words break runs.
    std::vector<std::string> phrase;
    auto flush = [&] {
      if (phrase.empty()) return;
      std::string joined;
      for (const auto& w : phrase) joined += (joined.empty() ? "" : " ") + w;
      if (!lexicon.landmark_blacklist.contains(joined)) {
        std::string kept;
        for (const auto& w : phrase) {
          if (!lexicon.landmark_blacklist.contains(w)) kept += (kept.empty() ? "" : " ") + w;
        }
        if (!kept.empty()) push_unique(unit.landmarks, kept);
      }
      phrase.clear();
    };
    std::vector<std::string> words;
    for (int i = span.begin; i < span.end; ++i) {
      const auto& tok = tagged.tokens[i];
      words.push_back(tok.word);
      if (tok.tag == Tag::noun) {
        phrase.push_back(tok.lemma);
        continue;
      }
      flush();
      if (tok.tag == Tag::verb && !lexicon.verb_blacklist.contains(tok.lemma) &&
          !lexicon.verb_blacklist.contains(tok.word)) {
        push_unique(unit.verbs, tok.lemma);
      }
    }
    flush();

    for (const auto& prefix : lexicon.stop_sentence_prefixes) {
      if (starts_with_words(words, prefix)) unit.lead = SentenceUnit::Lead::stop_condition;
    }
    for (const auto& prefix : lexicon.next_merge_prefixes) {
      if (starts_with_words(words, prefix)) unit.lead = SentenceUnit::Lead::merge_next;
    }
    units.push_back(std::move(unit));
  }
  return units;
}

std::vector<SentenceUnit> merge_units(const std::vector<SentenceUnit>& units) {
  auto join = [](SentenceUnit into, const SentenceUnit& tail) {
    into.span.end = tail.span.end;
    for (const auto& l : tail.landmarks) push_unique(into.landmarks, l);
    for (const auto& v : tail.verbs) push_unique(into.verbs, v);
    return into;
  };
  enum class Move { forward, backward, anchor };

  std::vector<SentenceUnit> result;
  std::optional<SentenceUnit> pending;
  for (const auto& unit : units) {
    Move move = Move::anchor;
    if (!unit.actionable()) {
      move = Move::forward;  // non-actionable test comes first
    } else if (unit.lead == SentenceUnit::Lead::stop_condition) {
      move = Move::backward;
    } else if (unit.lead == SentenceUnit::Lead::merge_next) {
      move = Move::forward;
    }
    switch (move) {
      case Move::forward:
        pending = pending ? join(*pending, unit) : unit;
        break;
      case Move::backward:
        if (pending) {
          pending = join(*pending, unit);
        } else if (!result.empty()) {
          result.back() = join(result.back(), unit);
        } else {
          pending = unit;  // nothing before it: merge forward instead
        }
        break;
      case Move::anchor: {
        SentenceUnit merged = unit;
        if (pending) {
          merged = join(*pending, unit);
          merged.lead = unit.lead;
          pending.reset();
        }
        result.push_back(std::move(merged));
        break;
      }
    }
  }
  if (pending) {
    if (result.empty()) {
      result.push_back(std::move(*pending));
    } else {
      result.back() = join(result.back(), *pending);
    }
  }
  return result;
}

std::vector<BabyStep> identify_babysteps(const TaggedInstruction& tagged, const Lexicon& lexicon,
                                         SegmentMode mode) {
  auto units = sentence_units(tagged, lexicon);
  if (mode == SegmentMode::heuristic) units = merge_units(units);
  std::vector<BabyStep> steps;
  steps.reserve(units.size());
  for (auto& unit : units) {
    BabyStep step;
    step.sentence_span = unit.span;
    for (int s = unit.span.begin; s < unit.span.end; ++s) {
      if (!step.text.empty()) step.text += ' ';
      step.text += tagged.sentence_texts[s] + '.';
    }
    step.landmarks = std::move(unit.landmarks);
    step.verbs = std::move(unit.verbs);
    steps.push_back(std::move(step));
  }
  return steps;
}

std::vector<BabyStep> segment_instruction(std::string_view raw, const Lexicon& lexicon, SegmentMode mode) {
  return identify_babysteps(tag(raw, lexicon), lexicon, mode);
}

std::vector<std::string> extract_landmark_phrases(const BabyStep& step) {
  std::vector<std::string> out;
  for (const auto& l : step.landmarks) push_unique(out, l);
  return out;
}

std::vector<std::string> extract_landmark_phrases(std::string_view text, const Lexicon& lexicon) {
  std::vector<std::string> out;
  for (const auto& unit : sentence_units(tag(text, lexicon), lexicon)) {
    for (const auto& l : unit.landmarks) push_unique(out, l);
  }
  return out;
}

SynthesizedInstruction synthesize_instruction(const WorldGraph& world, std::span<const NodeId> path,
                                              const Lexicon& lexicon, std::uint64_t seed) {
  if (path.size() < 2) throw Error(ErrorCode::invalid_argument, "path needs at least 2 nodes");
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (!world.contains(path[i]) || !world.adjacent(path[i - 1], path[i])) {
      throw Error(ErrorCode::invalid_argument, "path is not a walk in world " + world.id());
    }
  }
  lexicon.validate(world.landmark_vocab());
  CounterRng rng(seed, 0x696e737472ULL);
  static const char* const kVerbs[] = {"Go", "Walk", "Head", "Move"};
  static const char* const kStopLeads[] = {"Stop at the", "Wait by the", "Stop next to the"};

  auto capital = [](std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
  };
  auto pick = [&](const std::vector<int>& options) {
    return options[static_cast<std::size_t>(rng.below(options.size()))];
  };

  SynthesizedInstruction out;
  std::vector<std::string> sentences;
  const int last = static_cast<int>(path.size()) - 1;
  int heading = world.direction(path[0], path[1]).heading;
  int start = 0;
  while (start < last) {
    int end = std::min(start + rng.uniform_int(1, 3), last);
    auto chunk_landmarks = [&] {
      std::vector<int> all;
      for (int i = start + 1; i <= end; ++i) {
        for (int l : world.landmark_indices(path[i])) all.push_back(l);
      }
      return all;
    };
    auto seen = chunk_landmarks();
    while (seen.empty() && end < last) {
      ++end;
      seen = chunk_landmarks();
    }
    if (seen.empty()) {
      throw Error(ErrorCode::no_landmark, "no landmark visible on path chunk ending at index " + std::to_string(end));
    }
    // End-node landmarks not carried by the chunk's other nodes when any exist.
    std::vector<int> end_landmarks;
    for (int l : world.landmark_indices(path[end])) {
      bool shared = false;
      for (int i = start; i < end && !shared; ++i) {
        const auto& here = world.landmark_indices(path[i]);
        shared = std::find(here.begin(), here.end(), l) != here.end();
      }
      if (!shared) end_landmarks.push_back(l);
    }
    if (end_landmarks.empty()) end_landmarks = world.landmark_indices(path[end]);
    const bool from_end = !end_landmarks.empty() && rng.uniform() < 0.7;
    const int landmark = from_end ? pick(end_landmarks) : pick(seen);
    const bool at_end = std::find(end_landmarks.begin(), end_landmarks.end(), landmark) != end_landmarks.end();

    const int rel = (world.direction(path[start], path[start + 1]).heading - heading + kHeadingBins) % kHeadingBins;
    std::string direction = "straight";
    if (rel >= 2 && rel <= 4) direction = "right";
    else if (rel >= 5 && rel <= 7) direction = "around";
    else if (rel >= 8 && rel <= 10) direction = "left";
    const std::string verb = direction == "around" ? "Turn" : kVerbs[rng.below(4)];

    GoldSegment seg;
    seg.sentences.begin = static_cast<int>(sentences.size());
    if (rng.uniform() < 0.06) sentences.push_back("Okay.");
    sentences.push_back(verb + " " + direction + " and walk past the " +
                        world.landmark_vocab()[landmark] + ".");
    if (!at_end && !end_landmarks.empty() && rng.uniform() < 0.8) {
      sentences.push_back(std::string(kStopLeads[rng.below(3)]) + " " +
                          world.landmark_vocab()[pick(end_landmarks)] + ".");
    }
    seg.sentences.end = static_cast<int>(sentences.size());
    seg.path_begin = start == 0 ? 0 : start + 1;
    seg.path_end = end + 1;
    out.gold_segments.push_back(seg);

    heading = world.direction(path[end - 1], path[end]).heading;
    start = end;
  }
  for (const auto& s : sentences) {
    if (!out.text.empty()) out.text += ' ';
    out.text += capital(s);
  }
  return out;
}

nlohmann::ordered_json babystep_to_json(const BabyStep& step) {
  return {{"sentence_span", {step.sentence_span.begin, step.sentence_span.end}},
          {"text", step.text},
          {"landmarks", step.landmarks},
          {"verbs", step.verbs}};
}

BabyStep babystep_from_json(const nlohmann::json& doc) {
  try {
    BabyStep step;
    step.sentence_span = {doc.at("sentence_span").at(0).get<int>(), doc.at("sentence_span").at(1).get<int>()};
    step.text = doc.at("text").get<std::string>();
    step.landmarks = doc.at("landmarks").get<std::vector<std::string>>();
    step.verbs = doc.at("verbs").get<std::vector<std::string>>();
    return step;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("babystep: ") + e.what());
  }
}

}  // namespace babywalk
