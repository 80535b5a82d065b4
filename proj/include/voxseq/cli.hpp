#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "voxseq/autocomplete.hpp"
#include "voxseq/config.hpp"
#include "voxseq/dataset.hpp"
#include "voxseq/evaluate.hpp"
#include "voxseq/flow.hpp"
#include "voxseq/models.hpp"
#include "voxseq/service.hpp"

namespace voxseq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;

// Fixed layout under the --out directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path checkpoint(const std::string& name) const { return root / "checkpoints" / (name + ".ckpt"); }
  std::filesystem::path result(const std::string& name) const { return root / "results" / name; }
};

struct Context {
  RunConfig cfg;
  RunPaths paths;
  std::ostream* log = &std::cout;
};

inline std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// Tab-separated table with a header row.
class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "\t" : "") + cells[i];
      out += "\n";
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }
  std::size_t size() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline Dataset load_run_dataset(const Context& ctx) { return read_dataset(ctx.paths.data()); }

inline std::vector<Matrix> model_sequences(const Context& ctx, const std::vector<EpisodeRecord>& records) {
  return embed_sequences(load_sequences(records, static_cast<std::size_t>(ctx.cfg.max_len)));
}

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double sq = 0.0;
  for (double x : v) sq += (x - m) * (x - m);
  return std::sqrt(sq / static_cast<double>(v.size()));
}

// gen -------------------------------------------------------------------

inline int cmd_gen(Context& ctx, std::optional<std::size_t> n) {
  const std::size_t count = n.value_or(ctx.cfg.dataset_size);
  const Dataset ds = generate(count, ctx.cfg.dataset_seed, ctx.cfg.dataset_config());
  write_dataset(ctx.paths.data(), ds);
  std::vector<double> lengths;
  for (const auto* split : {&ds.train, &ds.eval}) {
    for (const auto& r : *split) lengths.push_back(static_cast<double>(r.raw_length()));
  }
  nlohmann::json summary = {{"requested", count},
                            {"kept", ds.manifest.total},
                            {"train", ds.manifest.train},
                            {"eval", ds.manifest.eval},
                            {"seed", ctx.cfg.dataset_seed},
                            {"mean_raw_length", mean_of(lengths)}};
  write_json(ctx.paths.result("gen_summary.json"), summary);
  *ctx.log << "generated " << count << " episodes, kept " << ds.manifest.total << " (train " << ds.manifest.train
           << ", eval " << ds.manifest.eval << ") -> " << ctx.paths.data().string() << "\n";
  return kExitOk;
}

// train -----------------------------------------------------------------

inline int cmd_train(Context& ctx, const std::string& kind_text, std::optional<int> epochs) {
  const ModelKind kind = kind_from_name(kind_text);
  const Dataset ds = load_run_dataset(ctx);
  const auto seqs = model_sequences(ctx, ds.train);
  SequenceModel model(ctx.cfg.model_config(kind));
  TrainConfig tc = ctx.cfg.train;
  if (epochs) tc.epochs = *epochs;
  const auto report = train(model, seqs, tc, [&](int e, double loss) {
    *ctx.log << kind_text << " epoch " << e << " loss " << fmt(loss) << "\n" << std::flush;
  });
  model.save(ctx.paths.checkpoint(kind_text));
  Table t({"epoch", "loss"});
  for (std::size_t e = 0; e < report.loss_curve.size(); ++e) t.add({std::to_string(e), fmt(report.loss_curve[e], 10)});
  write_text(ctx.paths.result("train_" + kind_text + ".tsv"), t.str());
  write_json(ctx.paths.result("train_" + kind_text + ".json"),
             {{"kind", kind_text},
              {"epochs", tc.epochs},
              {"sequences", seqs.size()},
              {"parameters", model.params().scalar_count()},
              {"final_loss", report.loss_curve.empty() ? nlohmann::json(nullptr) : nlohmann::json(report.loss_curve.back())}});
  *ctx.log << "saved " << ctx.paths.checkpoint(kind_text).string() << "\n";
  return kExitOk;
}

// train-flow ------------------------------------------------------------

inline int cmd_train_flow(Context& ctx, const std::string& encoder_kind, std::optional<int> epochs) {
  const SequenceModel encoder = SequenceModel::load(ctx.paths.checkpoint(encoder_kind));
  const Dataset ds = load_run_dataset(ctx);
  const Matrix z = final_latents(encoder, model_sequences(ctx, ds.train));
  FlowConfig fc = ctx.cfg.flow_config();
  fc.dim = encoder.config().attention.model_dim;
  FlowModel flow(fc);
  FlowTrainConfig ftc = ctx.cfg.flow_train;
  if (epochs) ftc.epochs = *epochs;
  const auto report = train_flow(flow, z, ftc);
  flow.save(ctx.paths.checkpoint("flow"));
  Table t({"epoch", "nll_per_dim"});
  for (std::size_t e = 0; e < report.nll_curve.size(); ++e) t.add({std::to_string(e), fmt(report.nll_curve[e], 10)});
  write_text(ctx.paths.result("flow_nll.tsv"), t.str());
  write_json(ctx.paths.result("flow.json"), {{"encoder", encoder_kind},
                                             {"latents", z.rows()},
                                             {"epochs", ftc.epochs},
                                             {"final_nll_per_dim", report.nll_curve.empty() ? 0.0 : report.nll_curve.back()}});
  *ctx.log << "flow trained on " << z.rows() << " latents, final NLL/dim "
           << fmt(report.nll_curve.empty() ? 0.0 : report.nll_curve.back()) << "\n";
  return kExitOk;
}

// eval-recon ------------------------------------------------------------

inline int cmd_eval_recon(Context& ctx, const std::string& kind_text, bool ablation, std::optional<int> epochs) {
  const Dataset ds = load_run_dataset(ctx);
  const auto train_seqs = model_sequences(ctx, ds.train);
  const auto eval_seqs = model_sequences(ctx, ds.eval);

  if (!ablation) {
    const SequenceModel model = SequenceModel::load(ctx.paths.checkpoint(kind_text));
    const auto tr = reconstruction_accuracy(model, train_seqs);
    const auto ev = reconstruction_accuracy(model, eval_seqs);
    Table t({"t", "train", "eval"});
    for (std::size_t i = 0; i < std::max(tr.curve.size(), ev.curve.size()); ++i) {
      t.add({std::to_string(i), i < tr.curve.size() ? fmt(tr.curve[i], 10) : "",
             i < ev.curve.size() ? fmt(ev.curve[i], 10) : ""});
    }
    write_text(ctx.paths.result("recon_" + kind_text + ".tsv"), t.str());
    write_json(ctx.paths.result("recon_" + kind_text + ".json"), {{"kind", kind_text},
                                                                   {"train_mean", tr.mean},
                                                                   {"train_std", tr.stddev},
                                                                   {"eval_mean", ev.mean},
                                                                   {"eval_std", ev.stddev}});
    *ctx.log << "reconstruction accuracy (" << kind_text << "): train " << fmt(100 * tr.mean, 4) << "% +"
             << fmt(tr.stddev, 3) << ", eval " << fmt(100 * ev.mean, 4) << "% +" << fmt(ev.stddev, 3) << "\n";
    return kExitOk;
  }

  Table t({"layers", "heads", "train_mean", "train_std", "eval_mean", "eval_std"});
  nlohmann::json rows = nlohmann::json::array();
  TrainConfig tc = ctx.cfg.train;
  if (epochs) tc.epochs = *epochs;
  for (int layers : {4, 8}) {
    for (int heads : {2, 4, 8}) {
      ModelConfig mc = ctx.cfg.model_config(kind_from_name(kind_text));
      mc.attention.layers = layers;
      mc.attention.heads = heads;
      SequenceModel model(mc);
      train(model, train_seqs, tc);
      const auto tr = reconstruction_accuracy(model, train_seqs);
      const auto ev = reconstruction_accuracy(model, eval_seqs);
      t.add({std::to_string(layers), std::to_string(heads), fmt(tr.mean, 10), fmt(tr.stddev, 10), fmt(ev.mean, 10),
             fmt(ev.stddev, 10)});
      rows.push_back({{"layers", layers}, {"heads", heads}, {"train_mean", tr.mean}, {"train_std", tr.stddev},
                      {"eval_mean", ev.mean}, {"eval_std", ev.stddev}});
      *ctx.log << "layers " << layers << " heads " << heads << ": train " << fmt(100 * tr.mean, 4) << "% eval "
               << fmt(100 * ev.mean, 4) << "%\n" << std::flush;
    }
  }
  write_text(ctx.paths.result("ablation.tsv"), t.str());
  write_json(ctx.paths.result("ablation.json"), {{"kind", kind_text}, {"epochs", tc.epochs}, {"rows", rows}});
  return kExitOk;
}

// eval-pref -------------------------------------------------------------

// Held-out expert episodes: the eval split, topped up with fresh episodes
// whose seeds lie past the generated range.
inline std::vector<EpisodeRecord> preference_experts(const Context& ctx, const Dataset& ds, std::size_t pairs) {
  std::vector<EpisodeRecord> out(ds.eval.begin(), ds.eval.begin() + std::min(pairs, ds.eval.size()));
  const DatasetConfig dc = ctx.cfg.dataset_config();
  for (std::size_t i = ds.manifest.requested; out.size() < pairs; ++i) {
    EpisodeRecord r = expert_record(derive_seed(ds.manifest.seed, i), dc);
    if (static_cast<int>(r.raw_length()) >= dc.min_raw_len) out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<HorizonLevel> parse_levels(const std::string& mode, const std::vector<double>& values) {
  if (mode == "percent") {
    if (values.empty()) return percent_levels();
    std::vector<HorizonLevel> out;
    for (double v : values) out.push_back({v / 100.0, true});
    return out;
  }
  if (mode == "absolute") {
    std::vector<HorizonLevel> out;
    for (double v : values.empty() ? std::vector<double>{0, 100, 200, 300, 400} : values) out.push_back({v, false});
    return out;
  }
  throw UsageError("--H-mode must be percent or absolute");
}

inline int cmd_eval_pref(Context& ctx, const std::string& mode, const std::vector<double>& values,
                         const std::string& encoder_kind, std::size_t pairs) {
  const auto levels = parse_levels(mode, values);
  const SequenceModel encoder = SequenceModel::load(ctx.paths.checkpoint(encoder_kind));
  const FlowModel flow = FlowModel::load(ctx.paths.checkpoint("flow"));
  std::optional<SequenceModel> vae;
  if (std::filesystem::exists(ctx.paths.checkpoint("vae"))) vae = SequenceModel::load(ctx.paths.checkpoint("vae"));
  const Dataset ds = load_run_dataset(ctx);
  const auto experts = preference_experts(ctx, ds, pairs);
  const auto max_len = static_cast<std::size_t>(ctx.cfg.max_len);

  std::vector<std::vector<double>> flow_acc(levels.size()), vae_acc(levels.size());
  for (std::uint64_t seed : ctx.cfg.preference_seeds) {
    const auto rows = preference_experiment(encoder, flow, experts, levels, seed, max_len);
    for (std::size_t i = 0; i < rows.size(); ++i) flow_acc[i].push_back(rows[i].accuracy);
    if (vae) {
      const auto vrows = vae_preference_experiment(*vae, experts, levels, seed, max_len);
      for (std::size_t i = 0; i < vrows.size(); ++i) vae_acc[i].push_back(vrows[i].accuracy);
    }
  }
  std::vector<std::string> header{"H", "flow_mean", "flow_std"};
  if (vae) {
    header.push_back("vae_mean");
    header.push_back("vae_std");
  }
  Table t(header);
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::vector<std::string> row{levels[i].label(), fmt(mean_of(flow_acc[i]), 10), fmt(stddev_of(flow_acc[i]), 10)};
    nlohmann::json jr = {{"H", levels[i].label()}, {"flow", flow_acc[i]}};
    if (vae) {
      row.push_back(fmt(mean_of(vae_acc[i]), 10));
      row.push_back(fmt(stddev_of(vae_acc[i]), 10));
      jr["vae"] = vae_acc[i];
    }
    t.add(row);
    rows.push_back(jr);
    *ctx.log << "H=" << levels[i].label() << " flow " << fmt(mean_of(flow_acc[i]), 4)
             << (vae ? " vae " + fmt(mean_of(vae_acc[i]), 4) : std::string()) << "\n";
  }
  write_text(ctx.paths.result("preference.tsv"), t.str());
  write_json(ctx.paths.result("preference.json"), {{"encoder", encoder_kind},
                                                   {"pairs", experts.size()},
                                                   {"seeds", ctx.cfg.preference_seeds},
                                                   {"rows", rows}});
  return kExitOk;
}

// rollout ---------------------------------------------------------------

struct RolloutBatch {
  std::vector<std::vector<DesignState>> rollouts;
  std::vector<DesignSequence> sources;
};

inline RolloutBatch make_rollouts(const SequenceModel& model, const std::vector<DesignSequence>& seqs,
                                  const RolloutConfig& rc, std::size_t count) {
  RolloutBatch b;
  for (const auto& s : seqs) {
    if (b.rollouts.size() >= count) break;
    if (s.states.size() < rc.prefix_len) continue;
    const std::vector<DesignState> prefix(s.states.begin(), s.states.begin() + static_cast<long>(rc.prefix_len));
    b.rollouts.push_back(rollout(model, prefix, rc));
    b.sources.push_back(s);
  }
  return b;
}

inline int cmd_rollout(Context& ctx, const std::string& source, std::size_t count) {
  const SequenceModel model = SequenceModel::load(ctx.paths.checkpoint("avd"));
  const Dataset ds = load_run_dataset(ctx);
  if (source != "train" && source != "eval") throw UsageError("--source must be train or eval");
  const auto seqs = load_sequences(source == "train" ? ds.train : ds.eval, static_cast<std::size_t>(ctx.cfg.max_len));
  const auto batch = make_rollouts(model, seqs, ctx.cfg.rollout, count);
  std::string lines;
  std::vector<double> match;
  for (std::size_t i = 0; i < batch.rollouts.size(); ++i) {
    const auto& src = batch.sources[i];
    lines += to_json(rollout_record(batch.rollouts[i], src.constraints, src.constraints.seed)).dump() + "\n";
    match.push_back(state_diff(batch.rollouts[i].back(), src.states.back()));
  }
  write_text(ctx.paths.result("rollouts.jsonl"), lines);
  write_json(ctx.paths.result("rollout_summary.json"), {{"source", source},
                                                        {"rollouts", batch.rollouts.size()},
                                                        {"prefix_len", ctx.cfg.rollout.prefix_len},
                                                        {"horizon", ctx.cfg.rollout.horizon},
                                                        {"final_state_match_mean", mean_of(match)},
                                                        {"final_state_match", match}});
  *ctx.log << batch.rollouts.size() << " rollouts from " << source << " prefixes, mean final-state match "
           << fmt(mean_of(match), 4) << "\n";
  return kExitOk;
}

// eval-fid --------------------------------------------------------------

inline int cmd_eval_fid(Context& ctx, std::size_t count) {
  const SequenceModel model = SequenceModel::load(ctx.paths.checkpoint("avd"));
  const Dataset ds = load_run_dataset(ctx);
  const auto max_len = static_cast<std::size_t>(ctx.cfg.max_len);
  const auto train_seqs = load_sequences(ds.train, max_len);
  const auto reference = latents_by_step(model, embed_sequences(train_seqs));
  const auto batch = make_rollouts(model, train_seqs, ctx.cfg.rollout, count);
  const auto generated = sequential_fid(reference, rollout_latents(model, batch.rollouts), ctx.cfg.fid_diagonal);

  const std::vector<EpisodeRecord> experts(ds.train.begin(), ds.train.begin() + std::min(count, ds.train.size()));
  const auto levels = percent_levels();
  std::vector<std::vector<double>> random_curves;
  for (const auto& level : levels) {
    const auto seqs = corrupted_sequences(experts, level, ctx.cfg.preference_seeds.front(), max_len);
    random_curves.push_back(sequential_fid(reference, latents_by_step(model, seqs), ctx.cfg.fid_diagonal));
  }
  std::vector<std::string> header{"t", "generated"};
  for (const auto& l : levels) header.push_back("H" + l.label());
  Table t(header);
  for (std::size_t i = 0; i < generated.size(); ++i) {
    std::vector<std::string> row{std::to_string(i), fmt(generated[i], 10)};
    for (const auto& c : random_curves) row.push_back(i < c.size() ? fmt(c[i], 10) : "");
    t.add(row);
  }
  write_text(ctx.paths.result("fid.tsv"), t.str());
  write_json(ctx.paths.result("fid.json"), {{"rollouts", batch.rollouts.size()},
                                            {"diagonal", ctx.cfg.fid_diagonal},
                                            {"generated", generated},
                                            {"random_h0", random_curves.front()}});
  *ctx.log << "sequential FID over " << generated.size() << " steps written to "
           << ctx.paths.result("fid.tsv").string() << "\n";
  return kExitOk;
}

// hist ------------------------------------------------------------------

inline int cmd_hist(Context& ctx) {
  const Dataset ds = load_run_dataset(ctx);
  std::vector<EpisodeRecord> all = ds.train;
  all.insert(all.end(), ds.eval.begin(), ds.eval.end());
  std::vector<double> fars, rooms_per_floor;
  for (const auto& r : all) {
    const DesignSequence seq = replay(r);
    const DesignState& last = seq.states.back();
    fars.push_back(measure(last).far_so_far);
    const GridDims d = last.dims();
    for (int z = 0; z < d.nz; ++z) {
      int n = 0;
      for (int x = 0; x < d.nx; ++x) {
        for (int y = 0; y < d.ny; ++y) n += last.at({x, y, z}) != RoomType::Empty;
      }
      if (n > 0) rooms_per_floor.push_back(n);
    }
  }
  auto dump = [&](const std::string& name, const Histogram& h) {
    Table t({"bucket_lo", "bucket_hi", "count"});
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      t.add({fmt(h.lo + h.width * static_cast<double>(i)), fmt(h.lo + h.width * static_cast<double>(i + 1)),
             std::to_string(h.counts[i])});
    }
    write_text(ctx.paths.result(name), t.str());
  };
  dump("hist_length.tsv", length_histogram(all));
  dump("hist_far.tsv", histogram(fars, 0.0, 0.5, 12));
  dump("hist_rooms_per_floor.tsv", histogram(rooms_per_floor, 0.0, 10.0, 11));
  *ctx.log << "histograms over " << all.size() << " episodes written to " << (ctx.paths.root / "results").string()
           << "\n";
  return kExitOk;
}

// serve -----------------------------------------------------------------

inline int cmd_serve(Context& ctx, const std::string& host, int port, const std::string& static_dir) {
  Service service(ctx.cfg);
  service.load(ctx.paths.checkpoint("avd"), ctx.paths.checkpoint("flow"));
  httplib::Server server;
  std::optional<std::filesystem::path> dir;
  if (!static_dir.empty()) dir = static_dir;
  service.mount(server, dir);
  *ctx.log << "serving on http://" << host << ":" << port << "\n" << std::flush;
  if (!server.listen(host, port)) throw StorageError("cannot listen on " + host + ":" + std::to_string(port));
  return kExitOk;
}

// entry point -----------------------------------------------------------

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"voxseq: sequential volumetric design workbench"};
  app.require_subcommand(1);
  std::string config_path, scale, out_dir = "voxseq-run";
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed (dataset seed for gen, model/flow seed for training)");
  app.add_option("--out", out_dir, "run directory");
  app.add_option("--scale", scale, "scale preset")->check(CLI::IsMember({"desk", "full"}));
  app.fallthrough();

  std::optional<std::size_t> gen_n;
  auto* gen = app.add_subcommand("gen", "generate an expert dataset");
  gen->add_option("--n", gen_n, "number of episodes");

  std::string kind = "vdr";
  std::optional<int> epochs;
  auto* train_cmd = app.add_subcommand("train", "train a sequence model");
  train_cmd->add_option("--kind", kind, "vdr, avd or vae")->required()->check(CLI::IsMember({"vdr", "avd", "vae"}));
  train_cmd->add_option("--epochs", epochs);

  std::string encoder_kind = "avd";
  auto* flow_cmd = app.add_subcommand("train-flow", "train the density flow on encoder latents");
  flow_cmd->add_option("--encoder", encoder_kind)->check(CLI::IsMember({"vdr", "avd"}));
  flow_cmd->add_option("--epochs", epochs);

  bool ablation = false;
  std::string recon_kind = "vdr";
  auto* recon = app.add_subcommand("eval-recon", "reconstruction accuracy (and layers x heads ablation)");
  recon->add_option("--kind", recon_kind)->check(CLI::IsMember({"vdr", "avd", "vae"}));
  recon->add_flag("--ablation", ablation, "train and score the 6-model layers x heads grid");
  recon->add_option("--epochs", epochs, "training epochs per ablation model");

  std::string h_mode = "percent";
  std::vector<double> h_values;
  std::size_t pairs = 100;
  std::string pref_encoder = "avd";
  auto* pref = app.add_subcommand("eval-pref", "preference accuracy against horizon-H corruptions");
  pref->add_option("--H-mode", h_mode)->check(CLI::IsMember({"percent", "absolute"}));
  pref->add_option("--H-values", h_values, "horizon levels (percent or action counts)")->delimiter(',');
  pref->add_option("--pairs", pairs, "number of expert/corrupted pairs");
  pref->add_option("--encoder", pref_encoder)->check(CLI::IsMember({"vdr", "avd"}));

  std::string source = "train";
  std::size_t count = 20;
  auto* roll = app.add_subcommand("rollout", "autocomplete prefixes with the AVD model");
  roll->add_option("--source", source)->check(CLI::IsMember({"train", "eval"}));
  roll->add_option("--count", count);

  std::size_t fid_count = 100;
  auto* fid = app.add_subcommand("eval-fid", "sequential FID of rollouts and random sequences");
  fid->add_option("--count", fid_count);

  auto* hist = app.add_subcommand("hist", "length / FAR / rooms-per-floor histograms");

  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "HTTP API over the trained checkpoints");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--static", static_dir, "directory served under /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    Context ctx;
    ctx.log = &out;
    ctx.cfg = config_path.empty() ? config_from_json(nlohmann::json::object(), scale) : load_config(config_path, scale);
    if (seed) {
      if (gen->parsed()) {
        ctx.cfg.dataset_seed = *seed;
      } else {
        ctx.cfg.model_seed = ctx.cfg.train.seed = *seed;
        ctx.cfg.flow.seed = ctx.cfg.flow_train.seed = *seed;
      }
    }
    ctx.paths.root = out_dir;
    for (const char* sub : {"checkpoints", "results"}) {
      std::error_code ec;
      std::filesystem::create_directories(ctx.paths.root / sub, ec);
      if (ec) throw StorageError("cannot create " + (ctx.paths.root / sub).string() + ": " + ec.message());
    }
    if (gen->parsed()) return cmd_gen(ctx, gen_n);
    if (train_cmd->parsed()) return cmd_train(ctx, kind, epochs);
    if (flow_cmd->parsed()) return cmd_train_flow(ctx, encoder_kind, epochs);
    if (recon->parsed()) return cmd_eval_recon(ctx, recon_kind, ablation, epochs);
    if (pref->parsed()) return cmd_eval_pref(ctx, h_mode, h_values, pref_encoder, pairs);
    if (roll->parsed()) return cmd_rollout(ctx, source, count);
    if (fid->parsed()) return cmd_eval_fid(ctx, fid_count);
    if (hist->parsed()) return cmd_hist(ctx);
    if (serve->parsed()) return cmd_serve(ctx, host, port, static_dir);
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error [usage]: " << e.what() << "\n";
    return kExitUsage;
  } catch (const StorageError& e) {
    err << "error [io]: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error [" << e.category() << "]: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace voxseq::cli
