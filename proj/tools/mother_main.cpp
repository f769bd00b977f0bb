// mother: recover the heredity structure of a set of model checkpoints from
// their weights, and simulate synthetic populations to exercise the pipeline.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mother/checkpoint.hpp"
#include "mother/clustering.hpp"
#include "mother/manifest.hpp"
#include "mother/recovery.hpp"
#include "mother/simgen.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace mother;

namespace {

struct CommonOptions {
  std::string metric = "ft";
  double c = 0.3;
  double epsilon_rel = 1e-5;
  std::string layer_filter;      // distance layer set override
  std::string direction_filter;  // directional-score layer set override
  int threads = 0;
};

void add_common_flags(CLI::App* cmd, CommonOptions* opts) {
  cmd->add_option("--metric", opts->metric, "Distance metric (ft|lora)")
      ->envname("MOTHER_METRIC");
  cmd->add_option("--c", opts->c, "Direction penalty constant")
      ->envname("MOTHER_C");
  cmd->add_option("--epsilon-rel", opts->epsilon_rel,
                  "Relative SVD rank threshold")
      ->envname("MOTHER_EPSILON_REL");
  cmd->add_option("--layer-filter", opts->layer_filter,
                  "Regex selecting the distance layer set")
      ->envname("MOTHER_LAYER_FILTER");
  cmd->add_option("--direction-filter", opts->direction_filter,
                  "Regex selecting the directional-score layer set")
      ->envname("MOTHER_DIRECTION_FILTER");
  cmd->add_option("--threads", opts->threads,
                  "Worker threads (0 = all cores)")
      ->envname("MOTHER_THREADS");
}

MetricConfig metric_config_from(const CommonOptions& opts) {
  MetricConfig mc;
  mc.epsilon_rel = opts.epsilon_rel;
  const DistanceMetric metric = metric_from_string(opts.metric);
  if (!opts.layer_filter.empty()) {
    mc.distance_filter = LayerFilter(opts.layer_filter);
  } else if (metric == DistanceMetric::lora) {
    mc.distance_filter = LayerFilter(default_lora_pattern());
  }
  if (!opts.direction_filter.empty()) {
    mc.direction_filter = LayerFilter(opts.direction_filter);
  } else if (metric == DistanceMetric::lora) {
    mc.direction_filter = LayerFilter(default_lora_pattern());
  }
  mc.warn = [](const std::string& msg) {
    std::cerr << "warning: " << msg << "\n";
  };
  return mc;
}

struct LoadedPopulation {
  NodeSet nodes;
  std::optional<GraphManifest> manifest;
};

/// Load a population directory: manifest.json (if present) fixes the node
/// order and stages; otherwise checkpoints are read in sorted filename order
/// and stages must come from --stage-map.
LoadedPopulation load_population(const std::string& dir,
                                 const std::string& stage_map_path,
                                 const CommonOptions& opts) {
  LoadedPopulation out;
  out.nodes.metric = metric_from_string(opts.metric);
  out.nodes.metric_config = metric_config_from(opts);

  const fs::path root(dir);
  const fs::path models_dir = root / "models";
  if (!fs::is_directory(models_dir)) {
    throw Error("population directory '" + dir + "' has no models/ subdir");
  }

  std::map<std::string, Stage> stage_map;
  if (!stage_map_path.empty()) {
    std::ifstream in(stage_map_path);
    if (!in) {
      throw Error("cannot open stage map '" + stage_map_path + "'");
    }
    ordered_json j;
    in >> j;
    for (auto it = j.begin(); it != j.end(); ++it) {
      stage_map[it.key()] = stage_from_string(it.value().get<std::string>());
    }
  }

  const fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path)) {
    out.manifest = load_manifest(manifest_path);
  } else if (stage_map.empty()) {
    throw Error("stages required: no manifest.json in '" + dir +
                "' and no --stage-map given");
  }

  auto stage_of = [&](const std::string& id) -> Stage {
    const auto it = stage_map.find(id);
    if (it != stage_map.end()) {
      return it->second;
    }
    if (out.manifest) {
      const ManifestNode* n = out.manifest->find(id);
      if (n != nullptr) {
        return n->stage;
      }
    }
    throw Error("stages required: no stage label for model '" + id + "'");
  };

  if (out.manifest) {
    for (const auto& n : out.manifest->nodes) {
      const fs::path p = models_dir / (n.model_id + ".safetensors");
      auto weights = std::make_shared<ModelWeights>(load_model(p));
      out.nodes.nodes.push_back(
          {n.model_id, stage_of(n.model_id), std::move(weights)});
    }
  } else {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(models_dir)) {
      if (entry.path().extension() == ".safetensors") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      auto weights = std::make_shared<ModelWeights>(load_model(p));
      const std::string id = weights->model_id;
      out.nodes.nodes.push_back({id, stage_of(id), std::move(weights)});
    }
  }
  if (out.nodes.nodes.empty()) {
    throw Error("population '" + dir + "' contains no checkpoints");
  }
  return out;
}

ordered_json sim_config_json(const SimConfig& cfg, const std::string& preset) {
  ordered_json j;
  j["tool"] = kToolName;
  j["tool_version"] = kToolVersion;
  j["preset"] = preset;
  j["seed"] = cfg.seed;
  j["n_trees"] = cfg.n_trees;
  j["levels"] = cfg.levels;
  j["branching"] = cfg.branching;
  j["ft_noise_scale"] = cfg.ft_noise_scale;
  j["tail_shrink"] = cfg.tail_shrink;
  j["spike_prob"] = cfg.spike_prob;
  j["spike_scale"] = cfg.spike_scale;
  j["lora_ranks"] = cfg.lora_ranks;
  j["inter_root_separation"] = cfg.inter_root_separation;
  j["stage"] = to_string(cfg.stage);
  j["layers"] = cfg.architecture.size();
  ordered_json arch = ordered_json::array();
  for (const auto& l : cfg.architecture) {
    arch.push_back({{"name", l.name}, {"shape", l.shape}, {"dense", l.dense}});
  }
  j["architecture"] = std::move(arch);
  return j;
}

int cmd_simulate(const std::string& preset_name, uint64_t seed,
                 const std::string& out_dir, int trees, int levels,
                 int branching, double noise_scale, double tail_shrink,
                 double separation, int blocks, int dim,
                 const std::string& stage) {
  const Preset preset = preset_from_string(preset_name);
  SimConfig cfg = preset_config(preset, seed);
  if (trees > 0) {
    cfg.n_trees = trees;
    cfg.tree_levels.clear();
  }
  if (levels > 0) {
    cfg.levels = levels;
    cfg.tree_levels.clear();
  }
  if (branching > 0) {
    cfg.branching = branching;
  }
  if (noise_scale > 0) {
    cfg.ft_noise_scale = noise_scale;
  }
  if (tail_shrink >= 0) {
    cfg.tail_shrink = tail_shrink;
  }
  if (separation > 0) {
    cfg.inter_root_separation = separation;
  }
  if (blocks > 0 && dim > 0) {
    cfg.architecture = transformer_architecture(blocks, dim);
    cfg.lora_layers.clear();
    for (const auto& spec : cfg.architecture) {
      if (spec.name.find("attn.query.weight") != std::string::npos ||
          spec.name.find("attn.value.weight") != std::string::npos) {
        cfg.lora_layers.push_back(spec.name);
      }
    }
  }
  if (!stage.empty()) {
    cfg.stage = stage_from_string(stage);
  }

  const Population pop = generate_graph(cfg);

  const fs::path root(out_dir);
  fs::create_directories(root / "models");
  save_manifest(pop.manifest, root / "manifest.json");
  {
    std::ofstream out(root / "config.json", std::ios::trunc);
    out << sim_config_json(cfg, preset_name).dump(2) << '\n';
  }
  for (size_t i = 0; i < pop.models.size(); ++i) {
    const fs::path p =
        root / "models" / (pop.manifest.nodes[i].model_id + ".safetensors");
    save_model(*pop.models[i], p);
  }
  std::cout << "wrote " << pop.models.size() << " checkpoints to " << out_dir
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoTHer: model tree heritage recovery from weights"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  // --- simulate ---------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic population");
  std::string sim_preset = "ft";
  uint64_t sim_seed = 0;
  std::string sim_out;
  int sim_trees = 0, sim_levels = 0, sim_branching = 0;
  double sim_noise = 0, sim_shrink = -1, sim_sep = 0;
  int sim_blocks = 0, sim_dim = 0;
  std::string sim_stage;
  sim->add_option("--preset", sim_preset,
                  "ft|lora-f|lora-v|mixed|deep|merge|gpc|pc2|pcs|s3")
      ->required();
  sim->add_option("--seed", sim_seed, "Population seed")->envname("MOTHER_SEED");
  sim->add_option("--out", sim_out, "Output directory")->required();
  sim->add_option("--trees", sim_trees, "Override tree count");
  sim->add_option("--levels", sim_levels, "Override levels per tree");
  sim->add_option("--branching", sim_branching, "Override branching factor");
  sim->add_option("--noise-scale", sim_noise, "Override ft_noise_scale");
  sim->add_option("--tail-shrink", sim_shrink, "Override tail_shrink");
  sim->add_option("--separation", sim_sep, "Override inter-root separation");
  sim->add_option("--blocks", sim_blocks, "Override architecture block count");
  sim->add_option("--dim", sim_dim, "Override architecture width");
  sim->add_option("--stage", sim_stage,
                  "Stage label for all nodes (generalization|specialization)");

  // --- recover ----------------------------------------------------------
  auto* rec = app.add_subcommand("recover", "Recover a model graph");
  std::string rec_pop, rec_stage_map, rec_out, rec_dot, rec_root_policy = "all";
  std::string rec_cluster_mode = "ft", rec_cluster_layer;
  int rec_k = 0;
  CommonOptions rec_opts;
  rec->add_option("--population", rec_pop, "Population directory")->required();
  rec->add_option("--stage-map", rec_stage_map,
                  "JSON file mapping model_id -> stage");
  rec->add_option("--clusters", rec_k, "Number of model trees")->required();
  rec->add_option("--out", rec_out, "Recovered graph JSON path")->required();
  rec->add_option("--dot", rec_dot, "Also write a DOT rendering here");
  rec->add_option("--root-policy", rec_root_policy, "all|score-hint");
  rec->add_option("--cluster-mode", rec_cluster_mode,
                  "ft|concat|single-layer");
  rec->add_option("--cluster-layer", rec_cluster_layer,
                  "Layer name for single-layer clustering");
  add_common_flags(rec, &rec_opts);

  // --- evaluate ---------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "Score a recovered graph");
  std::string ev_graph, ev_manifest, ev_out;
  ev->add_option("--graph", ev_graph, "Recovered graph JSON")->required();
  ev->add_option("--manifest", ev_manifest, "Ground-truth manifest")
      ->required();
  ev->add_option("--out", ev_out, "Write the report JSON here");

  // --- distances --------------------------------------------------------
  auto* dist = app.add_subcommand("distances", "Export the pairwise matrix");
  std::string dist_pop, dist_stage_map, dist_out, dist_format = "csv";
  CommonOptions dist_opts;
  dist->add_option("--population", dist_pop, "Population directory")
      ->required();
  dist->add_option("--stage-map", dist_stage_map, "Stage map JSON");
  dist->add_option("--out", dist_out, "Output path")->required();
  dist->add_option("--format", dist_format, "csv|json");
  add_common_flags(dist, &dist_opts);

  // --- cluster ----------------------------------------------------------
  auto* clu = app.add_subcommand("cluster", "Cluster a population into trees");
  std::string clu_pop, clu_stage_map, clu_out, clu_mode = "ft", clu_layer;
  int clu_k = 0;
  bool clu_auto = false;
  CommonOptions clu_opts;
  clu->add_option("--population", clu_pop, "Population directory")->required();
  clu->add_option("--stage-map", clu_stage_map, "Stage map JSON");
  clu->add_option("--clusters", clu_k, "Number of clusters");
  clu->add_flag("--auto-k", clu_auto, "Pick k by the largest merge gap");
  clu->add_option("--mode", clu_mode, "ft|concat|single-layer");
  clu->add_option("--layer", clu_layer, "Layer for single-layer mode");
  clu->add_option("--out", clu_out, "Output JSON path")->required();
  add_common_flags(clu, &clu_opts);

  // --- export -----------------------------------------------------------
  auto* exp = app.add_subcommand("export", "Re-render a recovered graph");
  std::string exp_graph, exp_out, exp_format = "dot";
  exp->add_option("--graph", exp_graph, "Recovered graph JSON")->required();
  exp->add_option("--format", exp_format, "json|dot");
  exp->add_option("--out", exp_out, "Output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (sim->parsed()) {
      return cmd_simulate(sim_preset, sim_seed, sim_out, sim_trees, sim_levels,
                          sim_branching, sim_noise, sim_shrink, sim_sep,
                          sim_blocks, sim_dim, sim_stage);
    }

    if (rec->parsed()) {
      LoadedPopulation pop = load_population(rec_pop, rec_stage_map, rec_opts);
      PipelineConfig cfg;
      cfg.metric = metric_from_string(rec_opts.metric);
      cfg.c = rec_opts.c;
      cfg.metric_config = pop.nodes.metric_config;
      cfg.root_policy = root_policy_from_string(rec_root_policy);
      cfg.threads = rec_opts.threads;
      if (rec_cluster_mode == "ft") {
        cfg.cluster_mode = ClusterMode::ft;
      } else if (rec_cluster_mode == "concat") {
        cfg.cluster_mode = ClusterMode::concat;
      } else if (rec_cluster_mode == "single-layer") {
        cfg.cluster_mode = ClusterMode::single_layer;
        cfg.cluster_layer = rec_cluster_layer;
      } else {
        throw Error("unknown cluster mode '" + rec_cluster_mode + "'");
      }
      const RecoveredGraph graph = recover(pop.nodes, rec_k, cfg);
      export_graph(graph, GraphFormat::json, rec_out);
      if (!rec_dot.empty()) {
        export_graph(graph, GraphFormat::dot, rec_dot);
      }
      std::cout << "recovered " << graph.trees.size() << " tree(s) -> "
                << rec_out << "\n";
      return 0;
    }

    if (ev->parsed()) {
      const RecoveredGraph graph = load_recovered_graph(ev_graph);
      const GraphManifest manifest = load_manifest(ev_manifest);
      const EvalReport report = evaluate(graph, manifest);
      std::cout << render_eval_table(report);
      if (!ev_out.empty()) {
        save_eval_report(report, ev_out);
      }
      return 0;
    }

    if (dist->parsed()) {
      LoadedPopulation pop =
          load_population(dist_pop, dist_stage_map, dist_opts);
      const SquareMatrix d =
          build_distance_matrix(pop.nodes, dist_opts.threads);
      std::ofstream out(dist_out, std::ios::trunc);
      if (!out) {
        throw Error("cannot open '" + dist_out + "' for writing");
      }
      const int n = d.size();
      if (dist_format == "csv") {
        out << std::setprecision(17);
        out << "# " << kToolName << " " << kToolVersion << " metric="
            << dist_opts.metric << "\n";
        for (int i = 0; i < n; ++i) {
          out << pop.nodes.nodes[static_cast<size_t>(i)].model_id;
          for (int j = 0; j < n; ++j) {
            out << ",";
            if (i == j) {
              out << "inf";
            } else {
              out << d.at(i, j);
            }
          }
          out << "\n";
        }
      } else if (dist_format == "json") {
        ordered_json j;
        j["tool"] = kToolName;
        j["tool_version"] = kToolVersion;
        j["metric"] = dist_opts.metric;
        j["ids"] = ordered_json::array();
        for (const auto& node : pop.nodes.nodes) {
          j["ids"].push_back(node.model_id);
        }
        j["distances"] = ordered_json::array();
        for (int i = 0; i < n; ++i) {
          ordered_json row = ordered_json::array();
          for (int jcol = 0; jcol < n; ++jcol) {
            if (i == jcol) {
              row.push_back(nullptr);  // infinite diagonal
            } else {
              row.push_back(d.at(i, jcol));
            }
          }
          j["distances"].push_back(std::move(row));
        }
        out << j.dump(2) << '\n';
      } else {
        throw Error("unknown format '" + dist_format + "'");
      }
      return 0;
    }

    if (clu->parsed()) {
      LoadedPopulation pop = load_population(clu_pop, clu_stage_map, clu_opts);
      ClusterOptions copts;
      copts.threads = clu_opts.threads;
      if (clu_mode == "ft") {
        copts.mode = ClusterMode::ft;
      } else if (clu_mode == "concat") {
        copts.mode = ClusterMode::concat;
      } else if (clu_mode == "single-layer") {
        copts.mode = ClusterMode::single_layer;
        copts.layer_name = clu_layer;
      } else {
        throw Error("unknown cluster mode '" + clu_mode + "'");
      }
      const SquareMatrix d = clustering_distances(pop.nodes, copts);
      int k = clu_k;
      if (clu_auto) {
        k = suggest_cluster_count(d);
      } else if (k < 1) {
        throw Error("either --clusters or --auto-k is required");
      }
      const ClusterAssignment assignment = cluster_from_distances(d, k);
      ordered_json j;
      j["tool"] = kToolName;
      j["tool_version"] = kToolVersion;
      j["k"] = assignment.k;
      j["labels"] = ordered_json::object();
      for (size_t i = 0; i < pop.nodes.nodes.size(); ++i) {
        j["labels"][pop.nodes.nodes[i].model_id] = assignment.labels[i];
      }
      std::ofstream out(clu_out, std::ios::trunc);
      if (!out) {
        throw Error("cannot open '" + clu_out + "' for writing");
      }
      out << j.dump(2) << '\n';
      std::cout << "k=" << assignment.k << " -> " << clu_out << "\n";
      return 0;
    }

    if (exp->parsed()) {
      const RecoveredGraph graph = load_recovered_graph(exp_graph);
      if (exp_format == "dot") {
        export_graph(graph, GraphFormat::dot, exp_out);
      } else if (exp_format == "json") {
        export_graph(graph, GraphFormat::json, exp_out);
      } else {
        throw Error("unknown format '" + exp_format + "'");
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
