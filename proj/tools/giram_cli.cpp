// giram: command-line front end.
//
//   giram synth  --out DIR [--config FILE] [synth overrides]
//   giram ingest --data FILE [--categories FILE] [--config FILE]
//   giram run    [--config FILE] [overrides] [--set section.key=value ...]
//   giram report --metrics FILE [--out DIR]
//
// Exit codes: 0 ok, 1 configuration or usage error, 2 data or I/O error,
// 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "giram/experiment.hpp"

namespace {

using giram::ExperimentConfig;
using nlohmann::json;
namespace fs = std::filesystem;

enum Exit : int { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3 };

/// Sets `path` (dot separated) in `j`. The value is parsed as JSON when it
/// parses, otherwise taken as a string.
void set_path(json& j, const std::string& path, const std::string& raw) {
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw giram::ConfigError("malformed override path '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

struct Overrides {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> data, categories, output_dir, targets, retrieval;
  std::optional<std::vector<std::string>> methods;
  std::optional<int> n_blocks, min_count, base_epochs, update_epochs, capacity, top_k, num_keys;
  std::optional<std::uint64_t> seed;
  std::optional<double> delta, gamma, alpha_base, beta_base, rrf_a;
  bool resume = false;
  bool no_checkpoints = false;
  bool fixed_weights = false;

  void add_to(CLI::App& app) {
    app.add_option("-c,--config", config_path, "JSON config (defaults apply to absent keys)")->check(CLI::ExistingFile);
    app.add_option("--data", data, "check-in CSV; empty means generate synthetic data");
    app.add_option("--categories", categories, "category map CSV (raw,derived)");
    app.add_option("--methods", methods, "static, finetune, retrain, giram, giram_single_key, giram_fixed_weights")
        ->delimiter(',');
    app.add_option("--n-blocks", n_blocks, "incremental blocks after the base block");
    app.add_option("--min-count", min_count, "drop users and POIs with fewer check-ins");
    app.add_option("--base-epochs", base_epochs);
    app.add_option("--update-epochs", update_epochs);
    app.add_option("--capacity", capacity, "memory entries per user");
    app.add_option("--top-k", top_k, "nonzeros kept per memory value");
    app.add_option("--num-keys", num_keys, "generated query keys per trajectory");
    app.add_option("--delta", delta, "cosine threshold for merging into an existing entry");
    app.add_option("--gamma", gamma, "consistency sensitivity of the adaptive weights");
    app.add_option("--alpha-base", alpha_base);
    app.add_option("--beta-base", beta_base);
    app.add_option("--rrf-a", rrf_a, "reciprocal rank fusion constant");
    app.add_option("--retrieval", retrieval, "generative | single_key");
    app.add_flag("--fixed-weights", fixed_weights, "disable consistency-adaptive weights");
    app.add_option("--targets", targets, "all_prefixes | last_only");
    app.add_option("--seed", seed, "global seed");
    app.add_option("-o,--output-dir", output_dir);
    app.add_flag("--resume", resume, "continue from the latest matching checkpoint");
    app.add_flag("--no-checkpoints", no_checkpoints);
    app.add_option("--set", sets, "generic override, e.g. --set keygen.epochs=5 (repeatable)");
  }

  ExperimentConfig build() const {
    json j = giram::to_json(config_path.empty() ? ExperimentConfig{} : giram::load_config(config_path));
    if (data) j["data"]["path"] = *data;
    if (categories) j["data"]["category_map"] = *categories;
    if (methods) j["methods"] = *methods;
    if (n_blocks) j["n_blocks"] = *n_blocks;
    if (min_count) j["min_count"] = *min_count;
    if (base_epochs) j["training"]["base_epochs"] = *base_epochs;
    if (update_epochs) j["training"]["update_epochs"] = *update_epochs;
    if (capacity) j["memory"]["capacity"] = *capacity;
    if (top_k) j["memory"]["top_k"] = *top_k;
    if (num_keys) j["keygen"]["num_keys"] = *num_keys;
    if (delta) j["fusion"]["delta"] = *delta;
    if (gamma) j["fusion"]["gamma"] = *gamma;
    if (alpha_base) j["fusion"]["alpha_base"] = *alpha_base;
    if (beta_base) j["fusion"]["beta_base"] = *beta_base;
    if (retrieval) j["fusion"]["retrieval"] = *retrieval;
    if (fixed_weights) j["fusion"]["adaptive_weights"] = false;
    if (rrf_a) j["rrf"]["a"] = *rrf_a;
    if (targets) j["eval_targets"] = *targets;
    if (seed) j["seed"] = *seed;
    if (output_dir) j["output_dir"] = *output_dir;
    if (resume) j["resume"] = true;
    if (no_checkpoints) j["checkpoints"] = false;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw giram::ConfigError("--set expects key=value, got '" + s + "'");
      set_path(j, s.substr(0, eq), s.substr(eq + 1));
    }
    return giram::config_from_json(j);
  }
};

void log_line(const std::string& s) { std::cerr << "[giram] " << s << '\n'; }

int cmd_synth(const ExperimentConfig& cfg, const fs::path& out) {
  const auto data = giram::generate(cfg.synth);
  fs::create_directories(out);
  giram::write_checkins((out / "checkins.csv").string(), data.checkins);
  giram::write_category_map((out / "categories.csv").string(), data.categories);
  std::cout << "wrote " << data.checkins.size() << " check-ins (" << cfg.synth.n_users << " users, "
            << cfg.synth.n_pois << " POIs) to " << (out / "checkins.csv").string() << '\n';
  return kOk;
}

int cmd_ingest(const ExperimentConfig& cfg, const std::string& json_out) {
  const auto raw = giram::load_raw_data(cfg);
  const auto prepared = giram::prepare_data(raw.checkins, raw.categories, cfg);
  const auto& v = prepared.vocab;
  json j{{"raw_checkins", raw.checkins.size()},
         {"checkins", prepared.n_checkins},
         {"users", v.num_users()},
         {"pois", v.num_pois()},
         {"raw_categories", v.num_raw_categories()},
         {"derived_categories", v.num_derived_categories()},
         {"regions", v.num_regions()}};
  json blocks = json::array();
  for (std::size_t b = 0; b < prepared.blocks.size(); ++b) {
    std::size_t visits = 0;
    for (const auto& t : prepared.blocks[b]) visits += t.visits.size();
    blocks.push_back({{"block", b}, {"trajectories", prepared.blocks[b].size()}, {"visits", visits}});
  }
  j["blocks"] = blocks;
  std::cout << "check-ins: " << raw.checkins.size() << " read, " << prepared.n_checkins << " after filtering\n"
            << "users: " << v.num_users() << "  POIs: " << v.num_pois() << "  categories: " << v.num_raw_categories()
            << " raw / " << v.num_derived_categories() << " derived  regions: " << v.num_regions() << '\n';
  for (const auto& b : blocks) {
    std::cout << "  T" << b["block"].get<std::size_t>() << ": " << b["trajectories"].get<std::size_t>()
              << " trajectories, " << b["visits"].get<std::size_t>() << " visits\n";
  }
  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) throw giram::DataError("cannot write " + json_out);
    out << j.dump(2) << '\n';
  }
  return kOk;
}

void print_table(const giram::ExperimentResult& r) {
  std::printf("%-22s %8s %8s %8s %8s\n", "mean over blocks", "Acc@5", "Acc@10", "Acc@20", "MRR");
  for (const auto& m : r.methods) {
    const auto x = r.mean(m);
    std::printf("%-22s %8.4f %8.4f %8.4f %8.4f\n", m.c_str(), x.acc5, x.acc10, x.acc20, x.mrr);
  }
}

int cmd_run(const ExperimentConfig& cfg, bool print_config) {
  if (print_config) {
    std::cout << giram::to_json(cfg).dump(2) << '\n';
    return kOk;
  }
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  {
    std::ofstream c(out / "config.json");
    if (!c) throw giram::DataError("cannot write " + (out / "config.json").string());
    c << giram::to_json(cfg).dump(2) << '\n';
  }
  log_line("config hash " + giram::config_hash(cfg));
  const auto raw = giram::load_raw_data(cfg);
  const auto result = giram::run_experiment(cfg, raw, log_line);
  giram::write_reports(out, result);
  print_table(result);
  log_line("reports written to " + out.string());
  return kOk;
}

int cmd_report(const std::string& metrics, const std::string& out_dir) {
  std::ifstream in(metrics, std::ios::binary);
  if (!in) throw giram::DataError("cannot open " + metrics);
  const auto r = giram::result_from_metrics(giram::read_metrics_csv(in));
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream t(fs::path(out_dir) / "table.csv", std::ios::binary);
    if (!t) throw giram::DataError("cannot write table in " + out_dir);
    giram::write_table_csv(t, r);
  } else {
    giram::write_table_csv(std::cout, r);
  }
  print_table(r);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual next-POI recommendation with a generative interest memory"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic check-in stream");
  std::string synth_out;
  std::string synth_config;
  std::optional<int> s_users, s_pois, s_blocks;
  std::optional<double> s_drift, s_noise;
  std::optional<std::uint64_t> s_seed;
  synth->add_option("-o,--out", synth_out, "output directory")->required();
  synth->add_option("-c,--config", synth_config, "read the synth section of this config")->check(CLI::ExistingFile);
  synth->add_option("--users", s_users);
  synth->add_option("--pois", s_pois);
  synth->add_option("--blocks", s_blocks, "total blocks including the base block");
  synth->add_option("--drift", s_drift);
  synth->add_option("--noise", s_noise);
  synth->add_option("--seed", s_seed);

  auto* ingest = app.add_subcommand("ingest", "load, filter and partition a check-in CSV and print a summary");
  Overrides ingest_ov;
  std::string ingest_json;
  ingest_ov.add_to(*ingest);
  ingest->add_option("--json", ingest_json, "also write the summary as JSON");

  auto* run = app.add_subcommand("run", "run the block-by-block continual experiment");
  Overrides run_ov;
  bool print_config = false;
  run_ov.add_to(*run);
  run->add_flag("--print-config", print_config, "print the effective config and exit");

  auto* report = app.add_subcommand("report", "rebuild the per-block table from metrics.csv");
  std::string report_metrics, report_out;
  report->add_option("-m,--metrics", report_metrics, "metrics.csv of a finished run")->required();
  report->add_option("-o,--out", report_out, "directory for table.csv (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) {
      ExperimentConfig cfg = synth_config.empty() ? ExperimentConfig{} : giram::load_config(synth_config);
      if (s_users) cfg.synth.n_users = *s_users;
      if (s_pois) cfg.synth.n_pois = *s_pois;
      if (s_blocks) cfg.synth.n_blocks = *s_blocks;
      if (s_drift) cfg.synth.drift_rate = *s_drift;
      if (s_noise) cfg.synth.noise_rate = *s_noise;
      if (s_seed) cfg.synth.seed = *s_seed;
      return cmd_synth(cfg, synth_out);
    }
    if (*ingest) return cmd_ingest(ingest_ov.build(), ingest_json);
    if (*run) return cmd_run(run_ov.build(), print_config);
    if (*report) return cmd_report(report_metrics, report_out);
  } catch (const giram::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const giram::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const giram::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const giram::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
