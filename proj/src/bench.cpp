#include "circulate/bench.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "circulate/error.hpp"
#include "circulate/proxy.hpp"
#include "circulate/workloads.hpp"

namespace circulate {

using nlohmann::json;

std::string_view to_string(Pattern p) {
  switch (p) {
    case Pattern::kPipeline:
      return "pipeline";
    case Pattern::kFanIn:
      return "fan_in";
    case Pattern::kFanOut:
      return "fan_out";
    case Pattern::kFig3Scenario:
      return "fig3_scenario";
  }
  return "?";
}

Pattern parse_pattern(std::string_view text) {
  for (auto p : {Pattern::kPipeline, Pattern::kFanIn, Pattern::kFanOut, Pattern::kFig3Scenario}) {
    if (to_string(p) == text) return p;
  }
  throw Error(ErrorCode::kBadParams, "unknown pattern '" + std::string(text) + "'");
}

void BenchmarkSpec::validate() const {
  if (n < 1) throw Error(ErrorCode::kBadParams, "n must be at least 1");
  if (!(payload_mb > 0.0)) throw Error(ErrorCode::kBadParams, "payload_mb must be positive");
  if (repetitions < 1) throw Error(ErrorCode::kBadParams, "repetitions must be at least 1");
}

std::size_t regions_for_payload(double payload_mb, std::size_t n_genes,
                                std::string_view region_prefix) {
  const double target = payload_mb * 1e6;
  const double row_bytes = static_cast<double>((n_genes + 7) / 8);
  // Region ids are quoted, comma-separated and zero-padded to a width that
  // depends on the count, so settle the count by fixed-point iteration.
  std::size_t regions = 1000;
  for (int i = 0; i < 8; ++i) {
    const double id_bytes = static_cast<double>(indexed_name(region_prefix, 0, regions).size()) + 3.0;
    const auto next = static_cast<std::size_t>(target / (id_bytes + 4.0 * row_bytes / 3.0));
    if (next == regions) break;
    regions = std::max<std::size_t>(1, next);
  }
  return regions;
}

namespace {

Bytes params(const json& j) { return j.dump(); }

TaskNode source_task(std::string id, std::string site, const BenchmarkSpec& spec,
                     const PatternWorkload& w, std::uint64_t index, std::string prefix) {
  json p = {{"seed", spec.seed + index},
            {"n_genes", w.n_genes},
            {"n_regions", regions_for_payload(spec.payload_mb, w.n_genes, prefix)},
            {"density", w.density},
            {"region_prefix", prefix}};
  return {std::move(id), std::move(site), "gen_expression", {InputBinding::literal(params(p))},
          "expression_matrix"};
}

Bytes mining_params(const PatternWorkload& w) {
  return params({{"min_support", w.min_support},
                 {"min_confidence", w.min_confidence},
                 {"max_itemset", w.max_itemset}});
}

void require_sites(const std::vector<std::string>& sites, std::size_t needed, const BenchmarkSpec& spec) {
  if (sites.size() < needed) {
    throw Error(ErrorCode::kTooFewSites, std::string(to_string(spec.pattern)) + " with n=" +
                                             std::to_string(spec.n) + " needs " +
                                             std::to_string(needed) + " proxy sites, topology has " +
                                             std::to_string(sites.size()));
  }
}

}  // namespace

WorkflowDefinition build_pattern(const BenchmarkSpec& spec, const Topology& topology,
                                 const PatternWorkload& w) {
  spec.validate();
  const auto sites = topology.proxy_sites();
  const auto n = static_cast<std::size_t>(spec.n);
  WorkflowDefinition def;
  def.workflow_id = std::string(to_string(spec.pattern)) + "-" + std::to_string(spec.n);

  switch (spec.pattern) {
    case Pattern::kPipeline: {
      require_sites(sites, 1, spec);
      for (std::size_t i = 0; i < n; ++i) {
        const std::string id = "stage-" + std::to_string(i);
        const std::string& site = sites[i % sites.size()];
        if (i == 0) {
          def.tasks.push_back(source_task(id, site, spec, w, 0, "r"));
          continue;
        }
        const auto prev = InputBinding::edge("stage-" + std::to_string(i - 1));
        if (i + 1 < n) {
          def.tasks.push_back({id, site, "denoise",
                               {InputBinding::literal(params(
                                    {{"min_gene_frequency", w.min_gene_frequency},
                                     {"min_region_genes", w.min_region_genes}})),
                                prev},
                               "expression_matrix"});
        } else {
          def.tasks.push_back(
              {id, site, "mine_rules", {InputBinding::literal(mining_params(w)), prev}, "rules"});
        }
      }
      def.sinks = {"stage-" + std::to_string(n - 1)};
      break;
    }
    case Pattern::kFanIn: {
      require_sites(sites, n + 1, spec);
      TaskNode sink{"collect", sites[n], "mine_rules", {InputBinding::literal(mining_params(w))}, "rules"};
      for (std::size_t i = 0; i < n; ++i) {
        const std::string id = "src-" + std::to_string(i);
        def.tasks.push_back(source_task(id, sites[i], spec, w, i, "s" + std::to_string(i) + "-r"));
        sink.inputs.push_back(InputBinding::edge(id));
      }
      def.tasks.push_back(std::move(sink));
      def.sinks = {"collect"};
      break;
    }
    case Pattern::kFanOut: {
      require_sites(sites, n + 1, spec);
      def.tasks.push_back(source_task("source", sites[0], spec, w, 0, "r"));
      for (std::size_t i = 0; i < n; ++i) {
        const std::string id = "consumer-" + std::to_string(i);
        const std::string gene = indexed_name("g", i % w.n_genes, w.n_genes);
        def.tasks.push_back(
            {id, sites[i + 1], "compose_pattern",
             {InputBinding::literal(params({{"target_gene", gene}, {"max_leaves", w.max_leaves}})),
              InputBinding::edge("source")},
             "composition"});
        def.sinks.push_back(id);
      }
      break;
    }
    case Pattern::kFig3Scenario: {
      require_sites(sites, 4, spec);
      TaskNode mine{"mine", sites[3], "mine_rules", {InputBinding::literal(mining_params(w))}, "R-DM"};
      for (std::size_t i = 0; i < 3; ++i) {
        const std::string id = "WS-" + std::to_string(i + 1);
        def.tasks.push_back(source_task(id, sites[i], spec, w, i, "lab" + std::to_string(i + 1) + "-r"));
        def.tasks.back().output_name = "R-" + id;
        mine.inputs.push_back(InputBinding::edge(id));
      }
      def.tasks.push_back(std::move(mine));
      def.sinks = {"mine"};
      break;
    }
  }
  return def;
}

std::map<std::string, Bytes> execute_locally(const WorkflowDefinition& def,
                                             const ServiceRegistry& services) {
  std::map<std::string, Bytes> out;
  for (const auto& id : validate_dag(def)) {
    const TaskNode& t = *def.find(id);
    auto svc = services.find(t.service_op);
    if (svc == services.end()) throw Error(ErrorCode::kUnknownServiceOp, t.service_op);
    std::vector<std::string_view> inputs;
    for (const auto& in : t.inputs) {
      inputs.emplace_back(in.is_edge() ? std::string_view(out.at(in.source_task))
                                       : std::string_view(in.literal_bytes));
    }
    out[id] = svc->second(inputs);
  }
  return out;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

void absorb(ModeStats& stats, const RunReport& r, bool first) {
  if (!first && (stats.engine_payload_bytes != r.engine_payload_bytes ||
                 stats.p2p_payload_bytes != r.p2p_payload_bytes ||
                 stats.engine_control_bytes != r.engine_control_bytes)) {
    throw Error(ErrorCode::kCounterDrift,
                std::string(to_string(r.mode)) + " byte counters changed between repetitions");
  }
  stats.mode = r.mode;
  stats.engine_payload_bytes = r.engine_payload_bytes;
  stats.engine_control_bytes = r.engine_control_bytes;
  stats.p2p_payload_bytes = r.p2p_payload_bytes;
  stats.makespans_s.push_back(r.makespan_s);
}

}  // namespace

BenchmarkResult run_benchmark(const BenchmarkSpec& spec, const Topology& topology,
                              const PatternWorkload& workload) {
  spec.validate();
  LocalCluster cluster(topology, builtin_services());
  const WorkflowDefinition def = build_pattern(spec, cluster.topology(), workload);

  BenchmarkResult result;
  result.spec = spec;
  for (int rep = 0; rep < spec.repetitions; ++rep) {
    // Alternate which mode goes first so warm-up effects do not favour one.
    const bool pure_first = rep % 2 == 0;
    for (int k = 0; k < 2; ++k) {
      const ExecutionMode mode = (k == 0) == pure_first ? ExecutionMode::kPureOrchestration
                                                        : ExecutionMode::kCirculate;
      const RunReport report = execute(def, mode, cluster.topology());
      if (result.result_digests.empty()) {
        result.result_digests = report.result_digests;
      } else if (report.result_digests != result.result_digests) {
        throw Error(ErrorCode::kEquivalenceViolation,
                    std::string(to_string(spec.pattern)) + ": " + std::string(to_string(mode)) +
                        " produced different sink digests");
      }
      ModeStats& stats = mode == ExecutionMode::kCirculate ? result.circulate : result.pure;
      absorb(stats, report, rep == 0);
    }
  }
  result.pure.median_makespan_s = median(result.pure.makespans_s);
  result.circulate.median_makespan_s = median(result.circulate.makespans_s);
  result.speedup = result.pure.median_makespan_s / result.circulate.median_makespan_s;
  return result;
}

BenchmarkResult run_benchmark(const BenchmarkSpec& spec) {
  return run_benchmark(spec, load_topology(spec.topology_file));
}

std::vector<BenchmarkSpec> parse_suite(std::string_view json_text,
                                       const std::filesystem::path& base_dir) {
  try {
    std::vector<BenchmarkSpec> specs;
    for (const auto& j : json::parse(json_text)) {
      BenchmarkSpec s;
      s.pattern = parse_pattern(j.at("pattern").get<std::string>());
      s.n = j.value("n", s.n);
      s.payload_mb = j.value("payload_mb", s.payload_mb);
      s.seed = j.value("seed", s.seed);
      s.repetitions = j.value("repetitions", s.repetitions);
      std::filesystem::path topo = j.at("topology_file").get<std::string>();
      if (topo.is_relative() && !std::filesystem::exists(topo) && !base_dir.empty()) {
        topo = base_dir / topo;
      }
      s.topology_file = topo.string();
      s.validate();
      specs.push_back(std::move(s));
    }
    return specs;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("suite: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string exact(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc()) throw Error(ErrorCode::kMalformedDocument, "bad number '" + s + "'");
  return v;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string svg_escape(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

std::string speedup_svg(const std::vector<BenchmarkResult>& results) {
  const double bar_w = 56, gap = 24, left = 60, top = 30, plot_h = 260;
  double max_speedup = 4.5;
  for (const auto& r : results) max_speedup = std::max(max_speedup, r.speedup * 1.1);
  const double width = left + static_cast<double>(results.size()) * (bar_w + gap) + gap;
  const double height = top + plot_h + 90;
  auto y_of = [&](double s) { return top + plot_h - plot_h * s / max_speedup; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">pure / circulate makespan</text>\n";
  for (double ref : {1.0, 2.0, 4.0}) {
    os << "<line x1=\"" << left << "\" x2=\"" << width - gap / 2 << "\" y1=\"" << y_of(ref)
       << "\" y2=\"" << y_of(ref) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << y_of(ref) + 4 << "\" text-anchor=\"end\">"
       << ref << "x</text>\n";
  }
  os << "<line x1=\"" << left << "\" x2=\"" << left << "\" y1=\"" << top << "\" y2=\""
     << top + plot_h << "\" stroke=\"#000\"/>\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const double x = left + gap + static_cast<double>(i) * (bar_w + gap);
    const double y = y_of(r.speedup);
    os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w << "\" height=\""
       << top + plot_h - y << "\" fill=\"#3b7dd8\"/>\n";
    os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << y - 4 << "\" text-anchor=\"middle\">"
       << fixed(r.speedup, 2) << "</text>\n";
    const std::string label = std::string(to_string(r.spec.pattern));
    os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << top + plot_h + 16
       << "\" text-anchor=\"middle\">" << svg_escape(label) << "</text>\n";
    os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << top + plot_h + 30
       << "\" text-anchor=\"middle\">n=" << r.spec.n << ", " << exact(r.spec.payload_mb)
       << " MB</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

std::vector<CsvRow> to_csv_rows(const std::vector<BenchmarkResult>& results) {
  std::vector<CsvRow> rows;
  for (const auto& r : results) {
    for (const ModeStats* m : {&r.pure, &r.circulate}) {
      rows.push_back({std::string(to_string(r.spec.pattern)), r.spec.n, r.spec.payload_mb,
                      std::string(to_string(m->mode)), m->median_makespan_s,
                      m->engine_payload_bytes, m->p2p_payload_bytes, r.speedup});
    }
  }
  return rows;
}

std::vector<CsvRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 8) throw Error(ErrorCode::kMalformedDocument, "bad CSV row: " + line);
    rows.push_back({c[0], std::stoi(c[1]), parse_double(c[2]), c[3], parse_double(c[4]),
                    std::stoull(c[5]), std::stoull(c[6]), parse_double(c[7])});
  }
  return rows;
}

void emit_report(const std::vector<BenchmarkResult>& results, const std::filesystem::path& out_dir) {
  if (results.empty()) throw Error(ErrorCode::kBadParams, "no benchmark results to report");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  auto open = [&](const char* name) {
    std::ofstream f(out_dir / name, std::ios::trunc);
    if (!f) throw Error(ErrorCode::kIoFailure, "cannot write " + (out_dir / name).string());
    return f;
  };

  {
    auto csv = open("results.csv");
    csv << "pattern,n,payload_mb,mode,makespan_s,engine_payload_bytes,p2p_payload_bytes,speedup\n";
    for (const auto& row : to_csv_rows(results)) {
      csv << row.pattern << ',' << row.n << ',' << exact(row.payload_mb) << ',' << row.mode << ','
          << exact(row.makespan_s) << ',' << row.engine_payload_bytes << ','
          << row.p2p_payload_bytes << ',' << exact(row.speedup) << '\n';
    }
    if (!csv) throw Error(ErrorCode::kIoFailure, "write failed for results.csv");
  }
  {
    auto txt = open("summary.txt");
    txt << "pattern        n  payload_mb  pure_s    circulate_s  speedup  engine_MB(pure/circ)  "
           "p2p_MB(circ)\n";
    for (const auto& r : results) {
      char line[256];
      std::snprintf(line, sizeof(line), "%-13s %2d  %10.2f  %8.3f  %11.3f  %6.2fx  %9.2f/%-9.2f  %11.2f\n",
                    std::string(to_string(r.spec.pattern)).c_str(), r.spec.n, r.spec.payload_mb,
                    r.pure.median_makespan_s, r.circulate.median_makespan_s, r.speedup,
                    static_cast<double>(r.pure.engine_payload_bytes) / 1e6,
                    static_cast<double>(r.circulate.engine_payload_bytes) / 1e6,
                    static_cast<double>(r.circulate.p2p_payload_bytes) / 1e6);
      txt << line;
    }
  }
  {
    auto svg = open("speedup.svg");
    svg << speedup_svg(results);
  }
}

}  // namespace circulate
