#include "babywalk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <thread>

#include "babywalk/error.hpp"
#include "babywalk/io.hpp"

namespace babywalk {

namespace {

void require_nonempty(const PathPair& pair) {
  if (pair.predicted.empty() || pair.reference.empty()) {
    throw Error(ErrorCode::invalid_argument, "metric paths must be non-empty");
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double path_length(std::span<const NodeId> path, const DistanceFn& distance) {
  double total = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) total += distance(path[i - 1], path[i]);
  return total;
}

double navigation_error(const PathPair& pair) {
  require_nonempty(pair);
  return pair.distance(pair.predicted.back(), pair.reference.back());
}

double success(const PathPair& pair, double threshold) {
  return navigation_error(pair) <= threshold ? 1.0 : 0.0;
}

double spl(const PathPair& pair, double threshold) {
  if (success(pair, threshold) == 0.0) return 0.0;
  const double shortest = pair.distance(pair.reference.front(), pair.reference.back());
  const double travelled = path_length(pair.predicted, pair.distance);
  const double denom = std::max(shortest, travelled);
  return denom > 0.0 ? shortest / denom : 1.0;
}

double path_coverage(const PathPair& pair, double d_th) {
  require_nonempty(pair);
  double total = 0.0;
  for (NodeId r : pair.reference) {
    double nearest = std::numeric_limits<double>::infinity();
    for (NodeId p : pair.predicted) nearest = std::min(nearest, pair.distance(r, p));
    total += std::exp(-nearest / d_th);
  }
  return total / static_cast<double>(pair.reference.size());
}

double cls(const PathPair& pair, double d_th) {
  const double pc = path_coverage(pair, d_th);
  const double expected = pc * path_length(pair.reference, pair.distance);
  const double travelled = path_length(pair.predicted, pair.distance);
  const double denom = expected + std::abs(expected - travelled);
  // Both lengths zero: a single-node reference matched by a single node.
  const double ls = denom > 0.0 ? expected / denom : 1.0;
  return pc * ls;
}

double dtw(const PathPair& pair) {
  require_nonempty(pair);
  const std::size_t n = pair.predicted.size(), m = pair.reference.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = best + pair.distance(pair.predicted[i - 1], pair.reference[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double ndtw(const PathPair& pair, double d_th) {
  return std::exp(-dtw(pair) / (static_cast<double>(pair.reference.size()) * d_th));
}

double sdtw(const PathPair& pair, double threshold, double d_th) {
  return success(pair, threshold) * ndtw(pair, d_th);
}

EpisodeMetrics score_episode(std::string episode_id, const PathPair& pair, const MetricConfig& config) {
  EpisodeMetrics m;
  m.episode_id = std::move(episode_id);
  m.pl = path_length(pair.predicted, pair.distance);
  m.ne = navigation_error(pair);
  m.sr = success(pair, config.success_threshold);
  m.spl = spl(pair, config.success_threshold);
  m.cls = cls(pair, config.dtw_threshold);
  m.ndtw = ndtw(pair, config.dtw_threshold);
  m.sdtw = m.sr * m.ndtw;
  return m;
}

EpisodeMetrics MetricReport::means() const {
  EpisodeMetrics mean;
  mean.episode_id = "mean";
  if (records.empty()) return mean;
  for (const auto& r : records) {
    mean.pl += r.pl;
    mean.ne += r.ne;
    mean.sr += r.sr;
    mean.spl += r.spl;
    mean.cls += r.cls;
    mean.ndtw += r.ndtw;
    mean.sdtw += r.sdtw;
  }
  const double n = static_cast<double>(records.size());
  mean.pl /= n;
  mean.ne /= n;
  mean.sr /= n;
  mean.spl /= n;
  mean.cls /= n;
  mean.ndtw /= n;
  mean.sdtw /= n;
  return mean;
}

MetricReport evaluate_split(std::span<const Episode> episodes, std::span<const std::vector<NodeId>> rollouts,
                            const EpisodeDistance& distance_for, const MetricConfig& config, int threads) {
  if (episodes.empty()) throw Error(ErrorCode::empty_data, "cannot evaluate an empty split");
  if (episodes.size() != rollouts.size()) {
    throw Error(ErrorCode::invalid_argument, "rollout count does not match episode count");
  }
  MetricReport report;
  report.records.resize(episodes.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      PathPair pair{rollouts[i], episodes[i].path, distance_for(episodes[i])};
      report.records[i] = score_episode(episodes[i].episode_id, pair, config);
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1) {
    work(0, episodes.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (episodes.size() + workers - 1) / workers;
    for (std::size_t begin = 0; begin < episodes.size(); begin += chunk) {
      pool.emplace_back(work, begin, std::min(episodes.size(), begin + chunk));
    }
  }
  return report;
}

std::string report_to_csv(const MetricReport& report) {
  std::string out = std::string(kReportColumns) + "\n";
  auto row = [&](const EpisodeMetrics& m) {
    out += m.episode_id;
    for (double v : {m.pl, m.ne, m.sr, m.spl, m.cls, m.ndtw, m.sdtw}) out += "," + fmt_double(v);
    out += '\n';
  };
  for (const auto& r : report.records) row(r);
  row(report.means());
  return out;
}

nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : report.records) {
    records.push_back({{"episode_id", r.episode_id}, {"pl", r.pl}, {"ne", r.ne}, {"sr", r.sr},
                       {"spl", r.spl}, {"cls", r.cls}, {"ndtw", r.ndtw}, {"sdtw", r.sdtw}});
  }
  auto doc = aggregate_json(report);
  doc["records"] = std::move(records);
  return doc;
}

MetricReport report_from_json(const nlohmann::json& doc) {
  try {
    MetricReport report;
    for (const auto& r : doc.at("records")) {
      report.records.push_back({r.at("episode_id").get<std::string>(), r.at("pl").get<double>(),
                                r.at("ne").get<double>(), r.at("sr").get<double>(), r.at("spl").get<double>(),
                                r.at("cls").get<double>(), r.at("ndtw").get<double>(), r.at("sdtw").get<double>()});
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("metric report: ") + e.what());
  }
}

nlohmann::json aggregate_json(const MetricReport& report) {
  const auto m = report.means();
  return {{"count", report.count()},
          {"means", {{"pl", m.pl}, {"ne", m.ne}, {"sr", m.sr}, {"spl", m.spl},
                     {"cls", m.cls}, {"ndtw", m.ndtw}, {"sdtw", m.sdtw}}}};
}

std::string bucketed_csv(const MetricReport& report, std::span<const Episode> episodes, int buckets) {
  if (buckets < 1) throw Error(ErrorCode::invalid_argument, "bucket count must be >= 1");
  if (episodes.size() != report.records.size()) {
    throw Error(ErrorCode::invalid_argument, "report and split sizes differ");
  }
  std::vector<std::size_t> words;
  for (const auto& ep : episodes) words.push_back(tokenize_words(ep.instruction).size());
  std::string out = "bucket,min_words,max_words,count,pl,ne,sr,spl,cls,ndtw,sdtw\n";
  if (words.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(words.begin(), words.end());
  const double lo = static_cast<double>(*lo_it), hi = static_cast<double>(*hi_it);
  const double width = std::max(1.0, (hi - lo + 1.0) / buckets);
  std::vector<MetricReport> grouped(static_cast<std::size_t>(buckets));
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto b = static_cast<std::size_t>((static_cast<double>(words[i]) - lo) / width);
    grouped[std::min(b, grouped.size() - 1)].records.push_back(report.records[i]);
  }
  for (int b = 0; b < buckets; ++b) {
    const auto& g = grouped[static_cast<std::size_t>(b)];
    const auto m = g.means();
    out += std::to_string(b) + "," + fmt_double(lo + b * width) + "," + fmt_double(lo + (b + 1) * width) + "," +
           std::to_string(g.count());
    for (double v : {m.pl, m.ne, m.sr, m.spl, m.cls, m.ndtw, m.sdtw}) out += "," + fmt_double(v);
    out += '\n';
  }
  return out;
}

void DistanceTable::set(NodeId a, NodeId b, double metres) {
  if (!(metres >= 0.0)) throw Error(ErrorCode::invalid_argument, "distances must be non-negative");
  table_[{std::min(a, b), std::max(a, b)}] = metres;
}

double DistanceTable::operator()(NodeId a, NodeId b) const {
  if (a == b) return 0.0;
  auto it = table_.find({std::min(a, b), std::max(a, b)});
  if (it == table_.end()) {
    throw Error(ErrorCode::invalid_argument,
                "distance table has no entry for (" + std::to_string(a) + ", " + std::to_string(b) + ")");
  }
  return it->second;
}

DistanceTable parse_distance_csv(std::string_view text, const std::map<std::string, NodeId>* node_ids) {
  DistanceTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto node = [&](const std::string& field) -> NodeId {
    if (node_ids) {
      auto it = node_ids->find(field);
      if (it == node_ids->end()) {
        throw Error(ErrorCode::schema_violation, "line " + std::to_string(line_no) + ": unknown node '" + field + "'");
      }
      return it->second;
    }
    return std::stoi(field);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("node_a", 0) == 0)) continue;
    std::istringstream fields(line);
    std::string a, b, d;
    if (!std::getline(fields, a, ',') || !std::getline(fields, b, ',') || !std::getline(fields, d)) {
      throw Error(ErrorCode::schema_violation, "line " + std::to_string(line_no) + ": expected node_a,node_b,meters");
    }
    try {
      table.set(node(a), node(b), std::stod(d));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::schema_violation, "line " + std::to_string(line_no) + ": bad number");
    }
  }
  return table;
}

DistanceTable load_distance_csv(const std::filesystem::path& path, const std::map<std::string, NodeId>* node_ids) {
  return parse_distance_csv(read_text_file(path), node_ids);
}

}  // namespace babywalk
