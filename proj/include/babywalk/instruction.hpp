#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "babywalk/world.hpp"
#include "json.hpp"

namespace babywalk {

/// Closed word lists driving tagging and the segmentation heuristics.
struct Lexicon {
  std::set<std::string> noun_words;
  std::set<std::string> verb_words;
  std::set<std::string> stop_words;
  std::set<std::string> landmark_blacklist;
  std::set<std::string> verb_blacklist;
  std::set<std::string> stop_sentence_prefixes;
  std::set<std::string> next_merge_prefixes;

  /// Throws if a blacklist shares a word with the given landmark names.
  void validate(std::span<const std::string> landmark_names) const;

  friend bool operator==(const Lexicon&, const Lexicon&) = default;
};

Lexicon default_lexicon();
nlohmann::json lexicon_to_json(const Lexicon& lexicon);
Lexicon lexicon_from_json(const nlohmann::json& doc);
Lexicon load_lexicon(const std::filesystem::path& path);

enum class Tag : std::uint8_t { noun, verb, stopword, other };

struct Token {
  std::string word;   // lower-cased surface form
  std::string lemma;  // suffix-stripped form
  Tag tag = Tag::other;
};

struct TokenSpan {
  int begin = 0;
  int end = 0;
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct TaggedInstruction {
  std::string raw;
  std::vector<TokenSpan> sentences;         // partitions `tokens`
  std::vector<std::string> sentence_texts;  // trimmed, without the period
  std::vector<Token> tokens;
};

/// Half-open range of sentence indices.
struct SentenceSpan {
  int begin = 0;
  int end = 0;
  friend bool operator==(const SentenceSpan&, const SentenceSpan&) = default;
};

struct BabyStep {
  SentenceSpan sentence_span;
  std::string text;
  std::vector<std::string> landmarks;
  std::vector<std::string> verbs;

  friend bool operator==(const BabyStep&, const BabyStep&) = default;
};

enum class SegmentMode { heuristic, sentence };

/// Drops a plural "-s" / "-es"; exact for the closed vocabulary only.
std::string lemmatize(std::string_view word);

/// Lower-cased word tokens of a text (periods and punctuation removed).
std::vector<std::string> tokenize_words(std::string_view text);

TaggedInstruction tag(std::string_view raw, const Lexicon& lexicon);

/// One unit of the merge pass: a run of sentences with its pooled landmark
/// and verb words. `lead` is the sentence-start class of the anchor sentence.
struct SentenceUnit {
  enum class Lead : std::uint8_t { plain, stop_condition, merge_next };

  SentenceSpan span;
  std::vector<std::string> landmarks;
  std::vector<std::string> verbs;
  Lead lead = Lead::plain;

  bool actionable() const { return !landmarks.empty() || !verbs.empty(); }
  friend bool operator==(const SentenceUnit&, const SentenceUnit&) = default;
};

/// Per-sentence units after noun-phrase curation and blacklist filtering.
std::vector<SentenceUnit> sentence_units(const TaggedInstruction& tagged, const Lexicon& lexicon);

/// Merges non-actionable sentences forward, stop-condition sentences backward
/// and "with"/"facing" sentences forward. Idempotent on its own output.
std::vector<SentenceUnit> merge_units(const std::vector<SentenceUnit>& units);

std::vector<BabyStep> identify_babysteps(const TaggedInstruction& tagged, const Lexicon& lexicon,
                                         SegmentMode mode = SegmentMode::heuristic);

/// Convenience: tag + identify.
std::vector<BabyStep> segment_instruction(std::string_view raw, const Lexicon& lexicon,
                                          SegmentMode mode = SegmentMode::heuristic);

/// Ordered, de-duplicated landmark words of a step.
std::vector<std::string> extract_landmark_phrases(const BabyStep& step);
std::vector<std::string> extract_landmark_phrases(std::string_view text, const Lexicon& lexicon);

/// Alignment between a sentence range and a half-open range of path indices.
struct GoldSegment {
  SentenceSpan sentences;
  int path_begin = 0;
  int path_end = 0;
  friend bool operator==(const GoldSegment&, const GoldSegment&) = default;
};

struct SynthesizedInstruction {
  std::string text;
  std::vector<GoldSegment> gold_segments;
};

/// Templated instruction grounded in the landmarks along `path`, one
/// sentence group per 1-3 hop chunk.
SynthesizedInstruction synthesize_instruction(const WorldGraph& world, std::span<const NodeId> path,
                                              const Lexicon& lexicon, std::uint64_t seed);

nlohmann::ordered_json babystep_to_json(const BabyStep& step);
BabyStep babystep_from_json(const nlohmann::json& doc);

}  // namespace babywalk
