#include "babywalk/dataset.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "babywalk/error.hpp"
#include "babywalk/io.hpp"
#include "babywalk/rng.hpp"

namespace babywalk {

namespace {

constexpr int kMaxSampleAttempts = 2000;
constexpr int kMaxChainAttempts = 64;

const char* source_name(EpisodeSource source) {
  switch (source) {
    case EpisodeSource::synthetic: return "synthetic";
    case EpisodeSource::concatenated: return "concatenated";
    case EpisodeSource::imported: return "imported";
  }
  return "synthetic";
}

EpisodeSource parse_source(const std::string& name) {
  if (name == "synthetic") return EpisodeSource::synthetic;
  if (name == "concatenated") return EpisodeSource::concatenated;
  if (name == "imported") return EpisodeSource::imported;
  throw Error(ErrorCode::schema_violation, "unknown episode source '" + name + "'");
}

std::string with_period(std::string_view text) {
  auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  auto last = text.find_last_not_of(" \t\r\n");
  std::string out(text.substr(first, last - first + 1));
  if (out.back() != '.') out += '.';
  return out;
}

}  // namespace

SplitStats DatasetSplit::stats(const Lexicon& lexicon) const {
  SplitStats s;
  s.count = episodes.size();
  if (episodes.empty()) return s;
  double words = 0.0, steps = 0.0;
  for (const auto& ep : episodes) {
    words += static_cast<double>(tokenize_words(ep.instruction).size());
    steps += static_cast<double>(segment_instruction(ep.instruction, lexicon).size());
  }
  s.mean_instruction_words = words / static_cast<double>(episodes.size());
  s.mean_babysteps = steps / static_cast<double>(episodes.size());
  return s;
}

int count_sentences(std::string_view text) {
  int count = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto stop = text.find('.', start);
    auto piece = text.substr(start, stop == std::string_view::npos ? std::string_view::npos : stop - start);
    if (!tokenize_words(piece).empty()) ++count;
    if (stop == std::string_view::npos) break;
    start = stop + 1;
  }
  return count;
}

bool gold_segments_partition(const Episode& episode) {
  if (!episode.gold_segments) return true;
  const auto& segs = *episode.gold_segments;
  if (segs.empty()) return false;
  int sentence = 0, node = 0;
  for (const auto& seg : segs) {
    if (seg.sentences.begin != sentence || seg.sentences.end <= seg.sentences.begin) return false;
    if (seg.path_begin != node || seg.path_end <= seg.path_begin) return false;
    sentence = seg.sentences.end;
    node = seg.path_end;
  }
  return sentence == count_sentences(episode.instruction) &&
         node == static_cast<int>(episode.path.size());
}

Episode sample_expert_episode(const WorldGraph& world, std::uint64_t seed, HopRange hops,
                              const Lexicon& lexicon) {
  if (hops.min < 1 || hops.max < hops.min) {
    throw Error(ErrorCode::invalid_argument, "hop range must satisfy 1 <= min <= max");
  }
  CounterRng rng(seed, 0x657069736f6465ULL);
  const auto n = static_cast<std::uint64_t>(world.size());
  for (int attempt = 0; attempt < kMaxSampleAttempts; ++attempt) {
    const auto a = static_cast<NodeId>(rng.below(n));
    const auto b = static_cast<NodeId>(rng.below(n));
    if (a == b) continue;
    auto path = shortest_path(world, a, b);
    const int h = static_cast<int>(path.size()) - 1;
    if (h < hops.min || h > hops.max) continue;
    try {
      auto synth = synthesize_instruction(world, path, lexicon, rng.next_u64());
      Episode ep;
      ep.episode_id = world.id() + "-" + std::to_string(seed);
      ep.world_id = world.id();
      ep.instruction = std::move(synth.text);
      ep.path = std::move(path);
      ep.gold_segments = std::move(synth.gold_segments);
      ep.source = EpisodeSource::synthetic;
      return ep;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::no_landmark) throw;
    }
  }
  throw Error(ErrorCode::sampling_exhausted,
              "no path with " + std::to_string(hops.min) + "-" + std::to_string(hops.max) +
                  " hops found in world " + world.id() + " after " + std::to_string(kMaxSampleAttempts) +
                  " attempts");
}

Episode concatenate_episodes(std::span<const Episode> episodes, const WorldGraph& world, double join_radius) {
  if (episodes.size() < 2) throw Error(ErrorCode::invalid_argument, "concatenation needs at least 2 episodes");
  for (const auto& ep : episodes) {
    if (ep.world_id != episodes.front().world_id) {
      throw Error(ErrorCode::invalid_argument, "episodes come from different worlds");
    }
    if (ep.path.empty()) throw Error(ErrorCode::invalid_argument, "episode " + ep.episode_id + " has no path");
  }

  Episode out = episodes.front();
  out.instruction = with_period(out.instruction);
  out.source = EpisodeSource::concatenated;
  out.babysteps.reset();
  out.aligned_segments.reset();
  int sentence_offset = count_sentences(out.instruction);

  for (std::size_t i = 1; i < episodes.size(); ++i) {
    const auto& next = episodes[i];
    const NodeId tail = out.path.back();
    const NodeId head = next.path.front();
    const double gap = world.distance(tail, head);
    if (gap > join_radius) {
      std::ostringstream msg;
      msg << "cannot join " << episodes[i - 1].episode_id << " -> " << next.episode_id << ": endpoints are "
          << gap << " m apart (join radius " << join_radius << " m)";
      throw Error(ErrorCode::join_violation, msg.str());
    }
    const bool dedup = tail == head;
    const int path_offset = static_cast<int>(out.path.size()) - (dedup ? 1 : 0);
    out.path.insert(out.path.end(), next.path.begin() + (dedup ? 1 : 0), next.path.end());

    if (out.gold_segments && next.gold_segments) {
      for (auto seg : *next.gold_segments) {
        seg.sentences.begin += sentence_offset;
        seg.sentences.end += sentence_offset;
        seg.path_begin = std::max(seg.path_begin + path_offset, path_offset + (dedup ? 1 : 0));
        seg.path_end += path_offset;
        out.gold_segments->push_back(seg);
      }
    } else {
      out.gold_segments.reset();
    }
    const auto part = with_period(next.instruction);
    if (!part.empty()) out.instruction += (out.instruction.empty() ? "" : " ") + part;
    sentence_offset += count_sentences(part);
    out.episode_id += "+" + next.episode_id;
  }
  return out;
}

namespace {

// Backtracking search for a chain of k distinct episodes, visiting starts and
// successors in random order. Empty when none is found within the budget.
std::vector<std::size_t> search_chain(const std::vector<std::vector<std::size_t>>& successors, int k, CounterRng& rng) {
  const std::size_t n = successors.size();
  std::vector<char> used(n, 0);
  std::vector<std::size_t> chain;
  long budget = 1'000'000;  // expansions before giving up
  auto shuffled = [&](std::vector<std::size_t> v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(i))]);
    return v;
  };
  std::function<bool(std::size_t)> extend = [&](std::size_t at) {
    if (--budget < 0) return false;
    chain.push_back(at);
    used[at] = 1;
    if (static_cast<int>(chain.size()) == k) return true;
    for (std::size_t j : shuffled(successors[at])) {
      if (!used[j] && extend(j)) return true;
    }
    used[at] = 0;
    chain.pop_back();
    return false;
  };
  std::vector<std::size_t> starts(n);
  for (std::size_t i = 0; i < n; ++i) starts[i] = i;
  for (std::size_t s : shuffled(starts)) {
    if (extend(s)) return chain;
  }
  return {};
}

}  // namespace

std::map<int, DatasetSplit> build_length_suite(const DatasetSplit& base, std::span<const int> factors,
                                               std::uint64_t seed, const WorldIndex& worlds,
                                               std::size_t count, double join_radius) {
  std::map<int, DatasetSplit> suite;
  const std::size_t n = base.episodes.size();
  const std::size_t wanted = count == 0 ? n : count;

  auto world_of = [&](const Episode& ep) -> const WorldGraph& {
    auto it = worlds.find(ep.world_id);
    if (it == worlds.end()) throw Error(ErrorCode::invalid_argument, "unknown world " + ep.world_id);
    return *it->second;
  };

  // successor lists: episodes whose start lies within the join radius of an end
  std::vector<std::vector<std::size_t>> successors(n);
  bool need_successors = std::any_of(factors.begin(), factors.end(), [](int k) { return k > 1; });
  if (need_successors) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& world = world_of(base.episodes[i]);
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j || base.episodes[j].world_id != base.episodes[i].world_id) continue;
        if (world.distance(base.episodes[i].path.back(), base.episodes[j].path.front()) <= join_radius) {
          successors[i].push_back(j);
        }
      }
    }
  }

  for (int k : factors) {
    if (k < 1) throw Error(ErrorCode::invalid_argument, "length factors must be >= 1");
    if (k == 1) {
      suite[k] = base;
      continue;
    }
    if (n == 0) throw Error(ErrorCode::join_violation, "empty base split cannot be chained");
    DatasetSplit split;
    split.name = base.name + "_x" + std::to_string(k);
    CounterRng rng(seed, 0x6c656e677468ULL + static_cast<std::uint64_t>(k));
    for (std::size_t out = 0; out < wanted; ++out) {
      std::vector<std::size_t> chain;
      for (int attempt = 0; attempt < kMaxChainAttempts && static_cast<int>(chain.size()) < k; ++attempt) {
        chain = {static_cast<std::size_t>(rng.below(n))};
        while (static_cast<int>(chain.size()) < k) {
          std::vector<std::size_t> options;
          for (std::size_t j : successors[chain.back()]) {
            if (std::find(chain.begin(), chain.end(), j) == chain.end()) options.push_back(j);
          }
          if (options.empty()) break;
          chain.push_back(options[static_cast<std::size_t>(rng.below(options.size()))]);
        }
      }
      if (static_cast<int>(chain.size()) < k) chain = search_chain(successors, k, rng);
      if (static_cast<int>(chain.size()) < k) {
        throw Error(ErrorCode::join_violation,
                    "no chain of " + std::to_string(k) + " join-compatible episodes found in " + base.name);
      }
      std::vector<Episode> parts;
      for (auto idx : chain) parts.push_back(base.episodes[idx]);
      Episode joined = concatenate_episodes(parts, world_of(parts.front()), join_radius);
      joined.episode_id = split.name + "-" + std::to_string(out);
      split.episodes.push_back(std::move(joined));
    }
    suite[k] = std::move(split);
  }
  return suite;
}

nlohmann::ordered_json episode_to_json(const Episode& ep) {
  nlohmann::ordered_json doc;
  doc["episode_id"] = ep.episode_id;
  doc["world_id"] = ep.world_id;
  doc["instruction"] = ep.instruction;
  doc["path"] = ep.path;
  if (ep.gold_segments) {
    auto segs = nlohmann::ordered_json::array();
    for (const auto& s : *ep.gold_segments) {
      segs.push_back({s.sentences.begin, s.sentences.end, s.path_begin, s.path_end});
    }
    doc["gold_segments"] = std::move(segs);
  } else {
    doc["gold_segments"] = nullptr;
  }
  doc["source"] = source_name(ep.source);
  if (ep.babysteps) {
    auto steps = nlohmann::ordered_json::array();
    for (const auto& b : *ep.babysteps) steps.push_back(babystep_to_json(b));
    doc["babysteps"] = std::move(steps);
  }
  if (ep.aligned_segments) {
    auto spans = nlohmann::ordered_json::array();
    for (const auto& s : *ep.aligned_segments) spans.push_back({s.begin, s.end});
    doc["aligned_segments"] = std::move(spans);
  }
  return doc;
}

Episode episode_from_json(const nlohmann::json& doc) {
  try {
    Episode ep;
    ep.episode_id = doc.at("episode_id").get<std::string>();
    ep.world_id = doc.at("world_id").get<std::string>();
    ep.instruction = doc.at("instruction").get<std::string>();
    ep.path = doc.at("path").get<std::vector<NodeId>>();
    if (ep.path.size() < 2) throw Error(ErrorCode::schema_violation, "path needs at least 2 nodes");
    const auto& gold = doc.at("gold_segments");
    if (!gold.is_null()) {
      std::vector<GoldSegment> segs;
      for (const auto& s : gold) {
        if (s.size() != 4) throw Error(ErrorCode::schema_violation, "gold segment must have 4 entries");
        segs.push_back({{s[0].get<int>(), s[1].get<int>()}, s[2].get<int>(), s[3].get<int>()});
      }
      ep.gold_segments = std::move(segs);
    }
    ep.source = parse_source(doc.at("source").get<std::string>());
    if (auto it = doc.find("babysteps"); it != doc.end() && !it->is_null()) {
      std::vector<BabyStep> steps;
      for (const auto& b : *it) steps.push_back(babystep_from_json(b));
      ep.babysteps = std::move(steps);
    }
    if (auto it = doc.find("aligned_segments"); it != doc.end() && !it->is_null()) {
      std::vector<PathSpan> spans;
      for (const auto& s : *it) spans.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
      ep.aligned_segments = std::move(spans);
    }
    return ep;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, e.what());
  }
}

std::string to_jsonl(const DatasetSplit& split) {
  std::string out;
  for (const auto& ep : split.episodes) {
    out += episode_to_json(ep).dump();
    out += '\n';
  }
  return out;
}

DatasetSplit from_jsonl(std::string_view text, std::string name) {
  DatasetSplit split;
  split.name = std::move(name);
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    auto stop = text.find('\n', start);
    auto line = text.substr(start, stop == std::string_view::npos ? std::string_view::npos : stop - start);
    ++line_no;
    start = stop == std::string_view::npos ? text.size() : stop + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      split.episodes.push_back(episode_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::schema_violation, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::schema_violation, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return split;
}

void save_jsonl(const DatasetSplit& split, const std::filesystem::path& path) {
  write_text_file_atomic(path, to_jsonl(split));
}

DatasetSplit load_jsonl(const std::filesystem::path& path) {
  return from_jsonl(read_text_file(path), path.stem().string());
}

R2RImport parse_r2r_json(std::string_view text, std::string name) {
  R2RImport out;
  out.split.name = std::move(name);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::schema_violation, std::string("R2R file: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::schema_violation, "R2R file must hold a JSON array");
  NodeId next_id = 0;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& entry = doc[i];
    const std::string where = "R2R entry " + std::to_string(i) + ": ";
    for (const char* key : {"path", "instructions", "scan", "heading"}) {
      if (!entry.contains(key)) throw Error(ErrorCode::schema_violation, where + "missing field '" + key + "'");
    }
    try {
      std::vector<NodeId> path;
      for (const auto& vp : entry.at("path")) {
        auto name = vp.get<std::string>();
        auto [it, inserted] = out.node_ids.try_emplace(name, next_id);
        if (inserted) ++next_id;
        path.push_back(it->second);
      }
      if (path.size() < 2) throw Error(ErrorCode::schema_violation, where + "path needs at least 2 viewpoints");
      const std::string base_id = entry.contains("path_id") ? entry.at("path_id").dump() : std::to_string(i);
      const auto& instructions = entry.at("instructions");
      for (std::size_t k = 0; k < instructions.size(); ++k) {
        Episode ep;
        ep.episode_id = base_id + "_" + std::to_string(k);
        ep.world_id = entry.at("scan").get<std::string>();
        ep.instruction = instructions[k].get<std::string>();
        ep.path = path;
        ep.source = EpisodeSource::imported;
        out.split.episodes.push_back(std::move(ep));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::schema_violation, where + e.what());
    }
  }
  return out;
}

R2RImport load_r2r_json(const std::filesystem::path& path) {
  return parse_r2r_json(read_text_file(path), path.stem().string());
}

}  // namespace babywalk
