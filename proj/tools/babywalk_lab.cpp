// babywalk_lab: data generation, segmentation, alignment, training,
// evaluation and transfer experiments over synthetic worlds.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "babywalk/agent.hpp"
#include "babywalk/aligner.hpp"
#include "babywalk/dataset.hpp"
#include "babywalk/error.hpp"
#include "babywalk/instruction.hpp"
#include "babywalk/io.hpp"
#include "babywalk/metrics.hpp"
#include "babywalk/training.hpp"
#include "babywalk/world.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace babywalk;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "babywalk_lab 1.0.0";

enum class LogLevel { quiet = 0, warn = 1, info = 2, debug = 3 };

LogLevel log_level() {
  const char* env = std::getenv("BABYWALK_LAB_LOG");
  if (!env) return LogLevel::warn;
  const std::string v = env;
  if (v == "quiet" || v == "0") return LogLevel::quiet;
  if (v == "info" || v == "2") return LogLevel::info;
  if (v == "debug" || v == "3") return LogLevel::debug;
  return LogLevel::warn;
}

void log(LogLevel level, const std::string& msg) {
  static const LogLevel threshold = log_level();
  if (level > threshold) return;
  static const char* names[] = {"", "warn", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  int threads = 1;
  std::string lexicon_path;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config (TrainConfig and AgentConfig keys)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Run seed");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--threads", c.threads, "Worker threads; 1 is fully sequential")->check(CLI::PositiveNumber);
  app->add_option("--lexicon", c.lexicon_path, "Lexicon JSON (defaults to the built-in word lists)")->check(CLI::ExistingFile);
}

/// Records what a command read and wrote; written last, next to its outputs.
class Manifest {
 public:
  Manifest(std::string command, const Common& c) : command_(std::move(command)), common_(c), started_(utc_now()) {
    fs::create_directories(c.out);
  }
  void input(const fs::path& p) { inputs_.push_back(p.generic_string()); }
  void output(const fs::path& p) { outputs_.push_back(p.lexically_relative(common_.out).generic_string()); }
  void set(const std::string& key, ordered_json value) { config_[key] = std::move(value); }
  void merge(const ordered_json& doc) {
    for (const auto& [k, v] : doc.items()) config_[k] = v;
  }

  void write(std::uint64_t seed) const {
    ordered_json doc;
    doc["command"] = command_;
    doc["tool_version"] = kToolVersion;
    doc["seed"] = seed;
    doc["threads"] = common_.threads;
    doc["config"] = config_;
    doc["inputs"] = inputs_;
    doc["outputs"] = outputs_;
    doc["started_at"] = started_;
    doc["finished_at"] = utc_now();
    write_text_file_atomic(fs::path(common_.out) / "manifest.json", doc.dump(2) + "\n");
  }

 private:
  std::string command_;
  Common common_;
  std::string started_;
  ordered_json config_ = ordered_json::object();
  std::vector<std::string> inputs_, outputs_;
};

Lexicon lexicon_for(const Common& c) {
  return c.lexicon_path.empty() ? default_lexicon() : load_lexicon(c.lexicon_path);
}

struct Configs {
  TrainConfig train;
  AgentConfig agent;
};

Configs configs_for(const Common& c) {
  Configs cfg;
  if (!c.config_path.empty()) load_config_file(c.config_path, cfg.train, cfg.agent);
  if (c.seed) cfg.train.seed = *c.seed;
  cfg.train.threads = c.threads;
  return cfg;
}

// Worlds of a generated data directory, kept alive for the views.
struct WorldStore {
  std::vector<WorldGraph> worlds;
  WorldIndex index;
};

WorldStore load_worlds(const fs::path& data_dir) {
  const auto dir = data_dir / "worlds";
  if (!fs::is_directory(dir)) throw Error(ErrorCode::io, "no worlds directory under " + data_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  WorldStore store;
  for (const auto& f : files) store.worlds.push_back(load_world(f));
  for (const auto& w : store.worlds) store.index[w.id()] = &w;
  if (store.worlds.empty()) throw Error(ErrorCode::empty_data, "no worlds in " + dir.string());
  return store;
}

fs::path split_file(const fs::path& dir, const std::string& part, int factor) {
  return dir / (part + "_x" + std::to_string(factor) + ".jsonl");
}

ordered_json spec_to_json(const BenchmarkSpec& s, const std::vector<std::string>& world_ids) {
  ordered_json doc;
  doc["seed"] = s.seed;
  doc["nodes"] = s.nodes;
  doc["landmarks"] = s.landmarks;
  doc["connectivity"] = s.connectivity;
  doc["train_worlds"] = s.train_worlds;
  doc["val_worlds"] = s.val_worlds;
  doc["base_train_episodes"] = s.base_train_episodes;
  doc["base_val_episodes"] = s.base_val_episodes;
  doc["base_select_episodes"] = s.base_select_episodes;
  doc["train_count"] = s.train_count;
  doc["val_count"] = s.val_count;
  doc["select_count"] = s.select_count;
  doc["min_hops"] = s.hops.min;
  doc["max_hops"] = s.hops.max;
  doc["factors"] = s.factors;
  doc["worlds"] = world_ids;
  return doc;
}

BenchmarkSpec spec_from_json(const json& doc) {
  BenchmarkSpec s;
  try {
    s.seed = doc.at("seed").get<std::uint64_t>();
    s.nodes = doc.at("nodes").get<int>();
    s.landmarks = doc.at("landmarks").get<int>();
    s.connectivity = doc.at("connectivity").get<double>();
    s.train_worlds = doc.at("train_worlds").get<int>();
    s.val_worlds = doc.at("val_worlds").get<int>();
    s.base_train_episodes = doc.at("base_train_episodes").get<int>();
    s.base_val_episodes = doc.at("base_val_episodes").get<int>();
    s.base_select_episodes = doc.at("base_select_episodes").get<int>();
    s.train_count = doc.at("train_count").get<int>();
    s.val_count = doc.at("val_count").get<int>();
    s.select_count = doc.at("select_count").get<int>();
    s.hops = {doc.at("min_hops").get<int>(), doc.at("max_hops").get<int>()};
    s.factors = doc.at("factors").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("benchmark.json: ") + e.what());
  }
  return s;
}

// A generated data directory read back as a Benchmark.
Benchmark load_benchmark(const fs::path& dir, Manifest& manifest) {
  Benchmark bench;
  const auto spec_path = dir / "benchmark.json";
  try {
    bench.spec = spec_from_json(json::parse(read_text_file(spec_path)));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::schema_violation, spec_path.string() + ": " + e.what());
  }
  manifest.input(spec_path);
  auto store = load_worlds(dir);
  bench.worlds = std::move(store.worlds);
  for (const auto& w : bench.worlds) bench.index[w.id()] = &w;
  for (int f : bench.spec.factors) {
    for (auto [part, target] : {std::pair{"train", &bench.train}, {"val", &bench.val}, {"select", &bench.select}}) {
      const auto path = split_file(dir, part, f);
      (*target)[f] = load_jsonl(path);
      manifest.input(path);
    }
  }
  return bench;
}

void write_output(Manifest& manifest, const fs::path& path, const std::string& content) {
  write_text_file_atomic(path, content);
  manifest.output(path);
}

// ---------------------------------------------------------------------------

struct GenArgs {
  int nodes = 40;
  int landmarks = 12;
  double connectivity = 3.0;
  int train_worlds = 6;
  int val_worlds = 3;
  std::vector<int> factors = {1, 2, 4};
  int train_count = 500;
  int val_count = 100;
  int select_count = 50;
  int base_train = 500;
  int base_val = 100;
  int base_select = 200;
  int min_hops = 2;
  int max_hops = 6;
};

void cmd_gen(const Common& c, const GenArgs& a) {
  Manifest manifest("gen", c);
  const auto lexicon = lexicon_for(c);
  BenchmarkSpec spec;
  spec.seed = c.seed.value_or(1);
  spec.nodes = a.nodes;
  spec.landmarks = a.landmarks;
  spec.connectivity = a.connectivity;
  spec.train_worlds = a.train_worlds;
  spec.val_worlds = a.val_worlds;
  spec.factors = a.factors;
  spec.train_count = a.train_count;
  spec.val_count = a.val_count;
  spec.select_count = a.select_count;
  spec.base_train_episodes = a.base_train;
  spec.base_val_episodes = a.base_val;
  spec.base_select_episodes = a.base_select;
  spec.hops = {a.min_hops, a.max_hops};
  log(LogLevel::info, "generating " + std::to_string(spec.train_worlds + spec.val_worlds) + " worlds");
  const auto bench = build_benchmark(spec, lexicon);

  const fs::path out = c.out;
  fs::create_directories(out / "worlds");
  std::vector<std::string> ids;
  for (const auto& w : bench.worlds) {
    ids.push_back(w.id());
    write_output(manifest, out / "worlds" / (w.id() + ".json"), world_to_json(w).dump() + "\n");
  }
  const auto spec_doc = spec_to_json(spec, ids);
  write_output(manifest, out / "benchmark.json", spec_doc.dump(2) + "\n");
  for (auto [part, splits] : {std::pair{"train", &bench.train}, {"val", &bench.val}, {"select", &bench.select}}) {
    for (const auto& [f, split] : *splits) {
      write_output(manifest, split_file(out, part, f), to_jsonl(split));
      const auto stats = split.stats(lexicon);
      log(LogLevel::info, std::string(part) + "_x" + std::to_string(f) + ": " + std::to_string(stats.count) +
                              " episodes, " + std::to_string(stats.mean_babysteps) + " BabySteps on average");
    }
  }
  manifest.merge(spec_doc);
  manifest.write(spec.seed);
}

// ---------------------------------------------------------------------------

void cmd_segment(const Common& c, const std::string& input, const std::string& mode_name) {
  Manifest manifest("segment", c);
  const auto lexicon = lexicon_for(c);
  const SegmentMode mode = mode_name == "sentence" ? SegmentMode::sentence : SegmentMode::heuristic;
  auto split = load_jsonl(input);
  manifest.input(input);
  for (auto& ep : split.episodes) ep.babysteps = segment_instruction(ep.instruction, lexicon, mode);
  write_output(manifest, fs::path(c.out) / fs::path(input).filename(), to_jsonl(split));
  manifest.set("mode", mode_name);
  manifest.write(c.seed.value_or(0));
}

// ---------------------------------------------------------------------------

void cmd_align(const Common& c, const std::string& input, const std::string& data_dir, const std::string& model_path) {
  Manifest manifest("align", c);
  const auto cfg = configs_for(c);
  const auto lexicon = lexicon_for(c);
  const auto store = load_worlds(data_dir);
  auto split = load_jsonl(input);
  manifest.input(input);
  for (const auto& ep : split.episodes) {
    if (!ep.babysteps) throw Error(ErrorCode::schema_violation, "episode " + ep.episode_id + " has no babysteps; run segment first");
  }
  LandmarkModel model;
  if (!model_path.empty()) {
    model = load_landmark_model(model_path);
    manifest.input(model_path);
  } else {
    LandmarkTrainOptions options;
    options.epochs = cfg.train.landmark_epochs;
    options.lr = cfg.train.landmark_lr;
    options.seed = cfg.train.seed;
    model = train_landmark_model(split.episodes, store.index, lexicon, options);
    const auto path = fs::path(c.out) / "landmark_model.json";
    save_landmark_model(model, path);
    manifest.output(path);
  }
  std::size_t skipped = 0;
  for (auto& ep : split.episodes) {
    const auto it = store.index.find(ep.world_id);
    if (it == store.index.end()) throw Error(ErrorCode::schema_violation, "unknown world " + ep.world_id);
    if (ep.babysteps->empty() || ep.babysteps->size() > ep.path.size()) {
      ++skipped;
      ep.aligned_segments.reset();
      continue;
    }
    ep.aligned_segments = align(model, *it->second, ep, *ep.babysteps).spans();
  }
  if (skipped) log(LogLevel::warn, std::to_string(skipped) + " episodes could not be aligned");
  write_output(manifest, fs::path(c.out) / fs::path(input).filename(), to_jsonl(split));
  manifest.merge(config_to_json(cfg.train, cfg.agent));
  manifest.set("unaligned", skipped);
  manifest.write(cfg.train.seed);
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  int factor = 2;
  std::string train_file;
  std::string select_file;
  std::optional<int> lectures;
  std::optional<std::string> summary_mode;
  bool whole_instruction = false;
  bool fresh = false;
  std::optional<int> halt_after;
};

// Uses stored alignments when every episode carries them.
std::vector<AlignedEpisode> training_data(const DatasetSplit& split, const WorldViews& views, const WorldIndex& worlds,
                                          const Lexicon& lexicon, const TrainConfig& config, Manifest& manifest,
                                          const fs::path& out) {
  const bool stored = !split.episodes.empty() && std::all_of(split.episodes.begin(), split.episodes.end(), [](const Episode& e) {
    return e.babysteps && e.aligned_segments;
  });
  if (stored) {
    std::vector<AlignedEpisode> data;
    for (const auto& ep : split.episodes) data.push_back(aligned_from_episode(ep, views));
    return data;
  }
  LandmarkTrainOptions options;
  options.epochs = config.landmark_epochs;
  options.lr = config.landmark_lr;
  options.seed = config.seed;
  const auto model = train_landmark_model(split.episodes, worlds, lexicon, options);
  save_landmark_model(model, out / "landmark_model.json");
  manifest.output(out / "landmark_model.json");
  PrepareStats stats;
  auto data = prepare_aligned(split.episodes, views, lexicon, model, &stats);
  log(LogLevel::info, "aligned " + std::to_string(stats.kept) + " episodes, dropped " + std::to_string(stats.dropped_infeasible));
  return data;
}

void cmd_train(const Common& c, const TrainArgs& a) {
  Manifest manifest("train", c);
  auto cfg = configs_for(c);
  if (a.lectures) cfg.train.lectures = *a.lectures;
  if (a.summary_mode) cfg.agent.summary_mode = summary_mode_from_string(*a.summary_mode);
  cfg.train.validate();
  cfg.agent.validate();
  const auto lexicon = lexicon_for(c);
  const fs::path out = c.out;
  const fs::path data_dir = a.data;
  const auto store = load_worlds(data_dir);
  const WorldViews views(store.index);
  const fs::path train_path = a.train_file.empty() ? split_file(data_dir, "train", a.factor) : fs::path(a.train_file);
  const fs::path select_path = a.select_file.empty() ? split_file(data_dir, "select", a.factor) : fs::path(a.select_file);
  const auto train = load_jsonl(train_path);
  const auto select = load_jsonl(select_path);
  manifest.input(train_path);
  manifest.input(select_path);

  ordered_json run = config_to_json(cfg.train, cfg.agent);
  run["whole_instruction"] = a.whole_instruction;
  run["train_file"] = train_path.generic_string();
  run["select_file"] = select_path.generic_string();
  manifest.merge(run);

  const auto data = training_data(train, views, store.index, lexicon, cfg.train, manifest, out);
  const EvalSet select_set{select.episodes, &views, &lexicon};

  // Resume point: the last phase whose checkpoint and state were both written.
  const auto state_path = out / "train_state.json";
  int done = -1;  // -1 nothing, 0 imitation, k lecture k
  TrainLog log_so_far;
  if (!a.fresh && fs::exists(state_path)) {
    const auto text = read_text_file(state_path);
    const auto state = json::parse(text);
    if (ordered_json::parse(text).at("run") != run) {
      throw Error(ErrorCode::invalid_state, "output directory holds a run with different settings; use --fresh or another --out");
    }
    done = state.at("completed").get<int>();
    log_so_far = train_log_from_json(state.at("log"));
    log(LogLevel::info, "resuming after phase " + std::to_string(done));
  }
  auto checkpoint_path = [&](int phase) { return out / (phase == 0 ? std::string("il.ckpt.json") : "lecture" + std::to_string(phase) + ".ckpt.json"); };
  auto commit = [&](int phase, const Agent& agent, const TrainLog& log_doc) {
    save_checkpoint(agent, checkpoint_path(phase));
    ordered_json state;
    state["run"] = run;
    state["completed"] = phase;
    state["log"] = train_log_to_json(log_doc);
    write_text_file_atomic(state_path, state.dump() + "\n");
  };
  auto halt = [&](int phase) { return a.halt_after && *a.halt_after == phase; };

  Agent agent;
  if (done >= 0) {
    agent = load_checkpoint(checkpoint_path(done));
  } else {
    const auto vocab = store.index.at(data.front().episode.world_id)->landmark_vocab();
    auto [il_agent, il_log] = imitation_learn(make_agent(cfg.agent, vocab, lexicon, cfg.train.seed), data, cfg.train);
    agent = std::move(il_agent);
    log_so_far = std::move(il_log);
    commit(0, agent, log_so_far);
    done = 0;
    log(LogLevel::info, "imitation learning finished");
  }
  bool halted = halt(0) && done == 0;
  if (!halted && done < cfg.train.lectures) {
    TrainLog prefix = log_so_far;
    struct Halt {};
    try {
      auto [final_agent, rl_log] = curriculum_train(
          agent, data, select_set, cfg.train, a.whole_instruction,
          [&](int k, const Agent& current, const TrainLog& lecture_log) {
            TrainLog full = prefix;
            full.append(lecture_log);
            commit(k, current, full);
            log(LogLevel::info, "lecture " + std::to_string(k) + " finished");
            if (halt(k)) throw Halt{};
          },
          done + 1);
      agent = std::move(final_agent);
      log_so_far = prefix;
      log_so_far.append(rl_log);
    } catch (const Halt&) {
      halted = true;
    }
  }
  if (halted) {
    log(LogLevel::warn, "halted on request; rerun with the same flags to resume");
    return;
  }
  save_checkpoint(agent, out / "final.ckpt.json");
  manifest.output(out / "final.ckpt.json");
  for (int phase = 0; phase <= cfg.train.lectures; ++phase) {
    if (fs::exists(checkpoint_path(phase))) manifest.output(checkpoint_path(phase));
  }
  write_output(manifest, out / "train_log.csv", log_so_far.to_csv());
  manifest.write(cfg.train.seed);
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string split;
  std::string data;
  int buckets = 0;
};

void cmd_eval(const Common& c, const EvalArgs& a) {
  Manifest manifest("eval", c);
  auto cfg = configs_for(c);
  const auto lexicon = lexicon_for(c);
  const auto agent = load_checkpoint(a.checkpoint);
  manifest.input(a.checkpoint);
  const auto store = load_worlds(a.data);
  const WorldViews views(store.index);
  const auto split = load_jsonl(a.split);
  manifest.input(a.split);
  const EvalSet set{split.episodes, &views, &lexicon};
  const auto report = evaluate_agent(agent, set, cfg.train);
  const fs::path out = c.out;
  write_output(manifest, out / "report.csv", report_to_csv(report));
  write_output(manifest, out / "report.json", report_to_json(report).dump(2) + "\n");
  if (a.buckets > 0) write_output(manifest, out / "buckets.csv", bucketed_csv(report, split.episodes, a.buckets));
  manifest.merge(config_to_json(cfg.train, cfg.agent));
  manifest.set("buckets", a.buckets);
  manifest.write(cfg.train.seed);
}

// ---------------------------------------------------------------------------

struct TransferArgs {
  std::string data;
  int train_factor = 2;
  std::vector<int> eval_factors = {4};
  bool with_baseline = false;
};

void cmd_transfer(const Common& c, const TransferArgs& a) {
  Manifest manifest("transfer", c);
  const auto cfg = configs_for(c);
  const auto lexicon = lexicon_for(c);
  const auto bench = load_benchmark(a.data, manifest);
  const auto rows = transfer_experiment(bench, a.train_factor, a.eval_factors, cfg.agent, cfg.train, lexicon, a.with_baseline);
  write_output(manifest, fs::path(c.out) / "transfer.csv", transfer_csv(rows));
  manifest.merge(config_to_json(cfg.train, cfg.agent));
  manifest.set("train_factor", a.train_factor);
  manifest.set("eval_factors", a.eval_factors);
  manifest.set("with_baseline", a.with_baseline);
  manifest.write(cfg.train.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BabyWalk navigation lab"};
  app.require_subcommand(1);

  Common gen_c, seg_c, align_c, train_c, eval_c, transfer_c;
  GenArgs gen_a;
  auto* gen = app.add_subcommand("gen", "Generate worlds and length-suite datasets");
  add_common(gen, gen_c);
  gen->add_option("--nodes", gen_a.nodes)->check(CLI::Range(2, 100000));
  gen->add_option("--landmarks", gen_a.landmarks)->check(CLI::PositiveNumber);
  gen->add_option("--connectivity", gen_a.connectivity);
  gen->add_option("--train-worlds", gen_a.train_worlds)->check(CLI::PositiveNumber);
  gen->add_option("--val-worlds", gen_a.val_worlds)->check(CLI::PositiveNumber);
  gen->add_option("--factors", gen_a.factors, "Chain lengths, comma separated")->delimiter(',')->check(CLI::PositiveNumber);
  gen->add_option("--train-count", gen_a.train_count)->check(CLI::PositiveNumber);
  gen->add_option("--val-count", gen_a.val_count)->check(CLI::PositiveNumber);
  gen->add_option("--select-count", gen_a.select_count)->check(CLI::PositiveNumber);
  gen->add_option("--base-train", gen_a.base_train)->check(CLI::PositiveNumber);
  gen->add_option("--base-val", gen_a.base_val)->check(CLI::PositiveNumber);
  gen->add_option("--base-select", gen_a.base_select)->check(CLI::PositiveNumber);
  gen->add_option("--min-hops", gen_a.min_hops)->check(CLI::PositiveNumber);
  gen->add_option("--max-hops", gen_a.max_hops)->check(CLI::PositiveNumber);

  std::string seg_input, seg_mode = "heuristic";
  auto* seg = app.add_subcommand("segment", "Add BabySteps to a JSONL split");
  add_common(seg, seg_c);
  seg->add_option("--input", seg_input)->required()->check(CLI::ExistingFile);
  seg->add_option("--mode", seg_mode)->check(CLI::IsMember({"heuristic", "sentence"}));

  std::string align_input, align_data, align_model;
  auto* aln = app.add_subcommand("align", "Add aligned path spans to a segmented JSONL split");
  add_common(aln, align_c);
  aln->add_option("--input", align_input)->required()->check(CLI::ExistingFile);
  aln->add_option("--data", align_data, "Directory written by gen")->required()->check(CLI::ExistingDirectory);
  aln->add_option("--model", align_model, "Landmark model; trained on the input when omitted")->check(CLI::ExistingFile);

  TrainArgs train_a;
  auto* trn = app.add_subcommand("train", "Imitation learning then curriculum RL");
  add_common(trn, train_c);
  trn->add_option("--data", train_a.data, "Directory written by gen")->required()->check(CLI::ExistingDirectory);
  trn->add_option("--factor", train_a.factor, "Training split length factor")->check(CLI::PositiveNumber);
  trn->add_option("--train", train_a.train_file, "Training JSONL (default: <data>/train_x<factor>.jsonl)")->check(CLI::ExistingFile);
  trn->add_option("--select", train_a.select_file, "Checkpoint-selection JSONL (default: <data>/select_x<factor>.jsonl)")->check(CLI::ExistingFile);
  trn->add_option("--lectures", train_a.lectures, "Number of lectures; 0 stops after imitation learning")->check(CLI::NonNegativeNumber);
  trn->add_option("--summary-mode", train_a.summary_mode)->check(CLI::IsMember({"forgetting", "average", "recurrent", "null"}));
  trn->add_flag("--whole-instruction", train_a.whole_instruction, "RL on whole instructions instead of the curriculum");
  trn->add_flag("--fresh", train_a.fresh, "Ignore a previous run in --out");
  trn->add_option("--halt-after", train_a.halt_after, "Stop after this phase (0 = imitation) as if interrupted")->check(CLI::NonNegativeNumber);

  EvalArgs eval_a;
  auto* evl = app.add_subcommand("eval", "Greedy evaluation of a checkpoint on a split");
  add_common(evl, eval_c);
  evl->add_option("--checkpoint", eval_a.checkpoint)->required();
  evl->add_option("--split", eval_a.split)->required()->check(CLI::ExistingFile);
  evl->add_option("--data", eval_a.data, "Directory written by gen")->required()->check(CLI::ExistingDirectory);
  evl->add_option("--buckets", eval_a.buckets, "Instruction-length buckets for buckets.csv")->check(CLI::NonNegativeNumber);

  TransferArgs transfer_a;
  auto* trf = app.add_subcommand("transfer", "Train on one length factor, evaluate on others");
  add_common(trf, transfer_c);
  trf->add_option("--data", transfer_a.data, "Directory written by gen")->required()->check(CLI::ExistingDirectory);
  trf->add_option("--train-factor", transfer_a.train_factor)->check(CLI::PositiveNumber);
  trf->add_option("--eval-factors", transfer_a.eval_factors)->delimiter(',')->check(CLI::PositiveNumber);
  trf->add_flag("--with-baseline", transfer_a.with_baseline, "Also train the no-memory whole-instruction baseline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) cmd_gen(gen_c, gen_a);
    else if (*seg) cmd_segment(seg_c, seg_input, seg_mode);
    else if (*aln) cmd_align(align_c, align_input, align_data, align_model);
    else if (*trn) cmd_train(train_c, train_a);
    else if (*evl) cmd_eval(eval_c, eval_a);
    else if (*trf) cmd_transfer(transfer_c, transfer_a);
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error[schema_violation]: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error[io]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
