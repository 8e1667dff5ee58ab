#pragma once

#include <csignal>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "voxelfm/checkpoint.hpp"
#include "voxelfm/config.hpp"
#include "voxelfm/embeddings.hpp"
#include "voxelfm/io.hpp"
#include "voxelfm/phantom.hpp"
#include "voxelfm/png.hpp"
#include "voxelfm/probe.hpp"
#include "voxelfm/semantics.hpp"
#include "voxelfm/service.hpp"
#include "voxelfm/trainer.hpp"

namespace voxelfm {

namespace cli {

/// "16" or "16,16,24".
inline Index3 parse_index3(const std::string& s, const char* flag) {
  std::vector<int> v;
  std::stringstream ss(s);
  std::string part;
  try {
    while (std::getline(ss, part, ',')) v.push_back(std::stoi(part));
  } catch (const std::exception&) {
    v.clear();
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw Error(ErrorCode::invalid_argument, std::string(flag) + " expects N or N,N,N, got '" + s + "'");
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;

  RunConfig run_config() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (!config.empty()) return c;
    c.validate();
    return c;
  }

  fs::path out_dir() const {
    const fs::path p = out.empty() ? fs::path(".") : fs::path(out);
    fs::create_directories(p);
    return p;
  }
};

inline void add_common(CLI::App* app, Common& c, bool config_required = false) {
  auto* opt = app->add_option("--config", c.config, "run config (JSON)");
  if (config_required) opt->required();
  app->add_option("--seed", c.seed, "random seed (overrides the config)");
  app->add_option("--out", c.out, "output directory");
}

struct Labeled {
  std::string id;
  LabeledVolume lv;
};

/// Volumes in `dir` with a `<stem>_mask` partner.
inline std::vector<Labeled> load_labeled(const fs::path& dir) {
  std::vector<Labeled> out;
  for (const auto& stem : list_volumes(dir)) {
    const auto mask = with_suffix(stem, "_mask");
    if (!fs::exists(with_suffix(mask, ".json"))) continue;
    out.push_back({stem.filename().string(), {load_volume(stem), load_mask(mask)}});
  }
  require(!out.empty(), ErrorCode::missing_file, "no volume/mask pairs in " + dir.string());
  return out;
}

inline std::vector<NamedVolume> load_named(const fs::path& dir) {
  std::vector<NamedVolume> out;
  for (const auto& stem : list_volumes(dir)) out.push_back({stem.filename().string(), load_volume(stem)});
  require(!out.empty(), ErrorCode::missing_file, "no volumes in " + dir.string());
  return out;
}

inline std::vector<Scan> synth_scans(const RunConfig& c, std::uint64_t seed, int count) {
  std::vector<Scan> scans;
  for (int n = 0; n < count; ++n)
    scans.push_back({static_cast<std::uint64_t>(n),
                     generate_phantom(c.phantom.spec, derive_seed(seed, static_cast<std::uint64_t>(n))).first});
  return scans;
}

inline std::vector<LabeledVolume> synth_labeled(const RunConfig& c, std::uint64_t seed, int count) {
  std::vector<LabeledVolume> out;
  for (int n = 0; n < count; ++n) {
    auto [v, m] = generate_phantom(c.phantom.spec, derive_seed(seed, static_cast<std::uint64_t>(n)));
    out.push_back({std::move(v), std::move(m)});
  }
  return out;
}

inline json report_json(const ProbeReport& r) {
  json per = json::object();
  for (const auto& [label, d] : r.per_label) per[std::to_string(label)] = d;
  return {{"checkpoint_epoch", r.checkpoint_epoch},
          {"few_shot", r.few_shot},
          {"micro_dice", r.micro_dice},
          {"macro_dice", r.macro_dice},
          {"per_label", per}};
}

inline std::atomic<Service*> g_service{nullptr};

inline void handle_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

}  // namespace cli

/// Entry point for the `voxelfm` binary. Exit codes: 0 ok, 1 runtime
/// error, 2 usage error.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  CLI::App app{"voxelfm: volumetric self-supervised pre-training and embedding analytics", "voxelfm"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // phantom-gen
  cli::Common gen_c;
  int gen_count = 8;
  auto* gen = app.add_subcommand("phantom-gen", "write synthetic CT-like phantoms and masks");
  cli::add_common(gen, gen_c);
  gen->add_option("--count", gen_count, "number of phantoms")->check(CLI::PositiveNumber);

  // pretrain
  cli::Common pre_c;
  std::string pre_data;
  int pre_workers = 0;
  auto* pre = app.add_subcommand("pretrain", "contrastive pre-training");
  cli::add_common(pre, pre_c);
  pre->add_option("--data", pre_data, "directory of volumes (default: synthesize phantoms from the config)");
  pre->add_option("--workers", pre_workers, "worker threads (overrides the config)");

  // ablate
  cli::Common abl_c;
  std::string abl_data;
  auto* abl = app.add_subcommand("ablate", "pre-training strategy ablation with probe evaluation");
  cli::add_common(abl, abl_c, true);
  abl->add_option("--data", abl_data, "directory of volume/mask pairs (default: synthesize from the config)");

  // probe
  cli::Common prb_c;
  std::vector<std::string> prb_ckpts;
  std::string prb_data;
  std::vector<int> prb_shots;
  auto* prb = app.add_subcommand("probe", "frozen-encoder linear probe and checkpoint selection");
  cli::add_common(prb, prb_c);
  prb->add_option("--checkpoint", prb_ckpts, "checkpoint file(s)")->required();
  prb->add_option("--data", prb_data, "directory of volume/mask pairs")->required();
  prb->add_option("--few-shot", prb_shots, "training-volume counts (default: config probe.few_shot)");

  // embed
  cli::Common emb_c;
  std::string emb_ckpt, emb_data, emb_labels, emb_agg;
  auto* emb = app.add_subcommand("embed", "sliding-window embeddings into a store");
  cli::add_common(emb, emb_c);
  emb->add_option("--checkpoint", emb_ckpt)->required();
  emb->add_option("--data", emb_data, "directory of volumes")->required();
  emb->add_option("--labels", emb_labels, "JSON object volume_id -> integer label");
  emb->add_option("--aggregate", emb_agg, "min|mean|max: one record per volume instead of per window");

  // search
  cli::Common srch_c;
  std::string srch_ckpt, srch_data, srch_source, srch_center, srch_box, srch_stride;
  std::vector<std::string> srch_targets;
  auto* srch = app.add_subcommand("search", "semantic search: query box vs sliding windows of targets");
  cli::add_common(srch, srch_c);
  srch->add_option("--checkpoint", srch_ckpt)->required();
  srch->add_option("--data", srch_data, "directory of volumes")->required();
  srch->add_option("--source", srch_source, "source volume id")->required();
  srch->add_option("--center", srch_center, "query centre i,j,k")->required();
  srch->add_option("--targets", srch_targets, "target volume ids (default: all)");
  srch->add_option("--box", srch_box, "query box N or N,N,N (default: config)");
  srch->add_option("--stride", srch_stride, "window stride (default: config)");

  // retrieve-eval
  cli::Common ret_c;
  std::string ret_store;
  int ret_k = 0;
  auto* ret = app.add_subcommand("retrieve-eval", "leave-one-out retrieval metrics over a labeled store");
  cli::add_common(ret, ret_c);
  ret->add_option("--store", ret_store)->required();
  ret->add_option("--k", ret_k, "cutoff (default: config search.k)");

  // saliency
  cli::Common sal_c;
  std::string sal_ckpt, sal_volume, sal_occ, sal_stride;
  std::optional<double> sal_fill;
  auto* sal = app.add_subcommand("saliency", "occlusion saliency of the whole-volume embedding");
  cli::add_common(sal, sal_c);
  sal->add_option("--checkpoint", sal_ckpt)->required();
  sal->add_option("--volume", sal_volume, "volume path")->required();
  sal->add_option("--occ", sal_occ, "occluder N or N,N,N");
  sal->add_option("--stride", sal_stride);
  sal->add_option("--fill", sal_fill, "fill value in HU (default: volume minimum)");

  // pca-map
  cli::Common pca_c;
  std::string pca_ckpt, pca_patch, pca_stride;
  std::vector<std::string> pca_volumes;
  auto* pca = app.add_subcommand("pca-map", "shared PCA of window embeddings rendered as CIELAB colours");
  cli::add_common(pca, pca_c);
  pca->add_option("--checkpoint", pca_ckpt)->required();
  pca->add_option("--volumes", pca_volumes, "volume paths")->required();
  pca->add_option("--patch", pca_patch);
  pca->add_option("--stride", pca_stride);

  // stability
  cli::Common stb_c;
  std::string stb_ckpt, stb_a, stb_b, stb_patch, stb_stride;
  std::optional<double> stb_thr;
  auto* stb = app.add_subcommand("stability", "test-retest agreement of window embeddings");
  cli::add_common(stb, stb_c);
  stb->add_option("--checkpoint", stb_ckpt)->required();
  stb->add_option("--a", stb_a, "first scan")->required();
  stb->add_option("--b", stb_b, "second (aligned) scan")->required();
  stb->add_option("--patch", stb_patch);
  stb->add_option("--stride", stb_stride);
  stb->add_option("--threshold", stb_thr, "outlier cosine threshold");

  // ocd
  cli::Common ocd_c;
  std::string ocd_ckpt, ocd_data, ocd_box, ocd_stride;
  std::int32_t ocd_label = 0;
  auto* ocdc = app.add_subcommand("ocd", "organ centroid distance averaged over all ordered scan pairs");
  cli::add_common(ocdc, ocd_c);
  ocdc->add_option("--checkpoint", ocd_ckpt)->required();
  ocdc->add_option("--data", ocd_data, "directory of volume/mask pairs")->required();
  ocdc->add_option("--label", ocd_label, "organ label")->required();
  ocdc->add_option("--box", ocd_box);
  ocdc->add_option("--stride", ocd_stride);

  // serve
  cli::Common srv_c;
  std::string srv_data, srv_ckpt, srv_ui, srv_host = "127.0.0.1";
  int srv_port = 8080, srv_workers = 1;
  auto* srv = app.add_subcommand("serve", "HTTP API (and optional static UI)");
  cli::add_common(srv, srv_c);
  srv->add_option("--data", srv_data, "directory of volumes")->required();
  srv->add_option("--checkpoint", srv_ckpt)->required();
  srv->add_option("--host", srv_host);
  srv->add_option("--port", srv_port);
  srv->add_option("--workers", srv_workers);
  srv->add_option("--ui", srv_ui, "directory of static UI assets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 2;
  }

  try {
    auto box_or = [](const std::string& s, const Index3& dflt, const char* flag) {
      return s.empty() ? dflt : cli::parse_index3(s, flag);
    };

    if (*gen) {
      const auto c = gen_c.run_config();
      const auto dir = gen_c.out_dir();
      const std::uint64_t seed = gen_c.seed.value_or(0);
      json files = json::array();
      for (int n = 0; n < gen_count; ++n) {
        char name[32];
        std::snprintf(name, sizeof name, "phantom_%03d", n);
        auto [v, m] = generate_phantom(c.phantom.spec, derive_seed(seed, static_cast<std::uint64_t>(n)));
        save_volume(v, dir / name);
        save_mask(m, dir / (std::string(name) + "_mask"), v);
        files.push_back(name);
      }
      out << json{{"out", dir.string()}, {"count", gen_count}, {"volumes", files}}.dump() << '\n';
      return 0;
    }

    if (*pre) {
      auto c = pre_c.run_config();
      if (pre_c.seed) c.training.seed = *pre_c.seed;
      if (pre_workers > 0) c.training.workers = pre_workers;
      const auto dir = pre_c.out_dir();
      std::vector<Scan> scans;
      if (pre_data.empty()) {
        scans = cli::synth_scans(c, c.training.seed, c.phantom.count);
      } else {
        auto named = cli::load_named(pre_data);
        for (std::size_t n = 0; n < named.size(); ++n) scans.push_back({n, std::move(named[n].volume)});
      }
      const auto result = pretrain(scans, c.encoder, c.training, [&](const Checkpoint& ck) {
        char name[40];
        std::snprintf(name, sizeof name, "epoch_%04d.ckpt", ck.epoch);
        save_checkpoint(ck.state, ck.epoch, dir / name);
        err << "checkpoint " << (dir / name).string() << '\n';
      });
      save_checkpoint(result.state, c.training.epochs, dir / "final.ckpt");
      std::ofstream csv(dir / "loss.csv");
      write_loss_csv(csv, result.curve);
      out << json{{"final_checkpoint", (dir / "final.ckpt").string()},
                  {"loss_csv", (dir / "loss.csv").string()},
                  {"steps", result.curve.size()},
                  {"final_loss", result.curve.back().loss}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*abl) {
      auto c = abl_c.run_config();
      if (abl_c.seed) c.ablation.seeds = {*abl_c.seed};
      const auto dir = abl_c.out_dir();
      std::vector<Scan> scans;
      std::vector<LabeledVolume> probe_set;
      if (abl_data.empty()) {
        scans = cli::synth_scans(c, 0xABu, c.phantom.count);
        probe_set = cli::synth_labeled(c, 0xCDu, c.ablation.few_shot + 2);
      } else {
        auto labeled = cli::load_labeled(abl_data);
        for (std::size_t n = 0; n < labeled.size(); ++n) {
          scans.push_back({n, labeled[n].lv.volume});
          probe_set.push_back(std::move(labeled[n].lv));
        }
      }
      std::ofstream csv(dir / "ablation.csv");
      csv << "strategy,variant,crops,seed,micro_dice,macro_dice\n";
      const auto rows = ablate(scans, probe_set, c.ablation, [&](const AblationRow& r) {
        csv << to_string(r.strategy) << ',' << to_string(r.variant) << ',' << r.crops << ',' << r.seed << ','
            << r.micro_dice << ',' << r.macro_dice << '\n'
            << std::flush;
        err << to_string(r.strategy) << ' ' << to_string(r.variant) << " M=" << r.crops << " seed=" << r.seed
            << " micro=" << r.micro_dice << '\n';
      });
      out << json{{"ablation_csv", (dir / "ablation.csv").string()}, {"rows", rows.size()}}.dump() << '\n';
      return 0;
    }

    if (*prb) {
      const auto c = prb_c.run_config();
      ProbeConfig pc = c.probe;
      if (prb_c.seed) pc.seed = *prb_c.seed;
      if (prb_shots.empty()) prb_shots = {c.few_shot};
      auto labeled = cli::load_labeled(prb_data);
      std::vector<LabeledVolume> vols;
      for (auto& l : labeled) vols.push_back(std::move(l.lv));
      json reports = json::array();
      std::vector<ProbeReport> first_shot;
      for (const auto& path : prb_ckpts) {
        const auto ck = load_checkpoint(path);
        for (const auto& r : probe_evaluate(ck.state, vols, prb_shots, pc, ck.epoch)) {
          json j = cli::report_json(r);
          j["checkpoint"] = path;
          reports.push_back(j);
          if (r.few_shot == prb_shots.front()) first_shot.push_back(r);
        }
      }
      out << json{{"reports", reports}, {"selected_epoch", select_checkpoint(first_shot)}}.dump() << '\n';
      return 0;
    }

    if (*emb) {
      const auto c = emb_c.run_config();
      const auto ck = load_checkpoint(emb_ckpt);
      const BackboneEmbedder<float> embedder(ck.state);
      json labels = json::object();
      if (!emb_labels.empty()) labels = json::parse(read_file(emb_labels));
      EmbeddingStore store;
      store.dim = ck.state.config.embed_dim;
      const auto vols = cli::load_named(emb_data);
      std::uint64_t next_id = 0;
      for (std::size_t n = 0; n < vols.size(); ++n) {
        auto recs = sliding_window_embed(embedder, vols[n].volume, ck.state.config.patch, c.search.stride, n, next_id);
        std::optional<std::int32_t> label;
        if (labels.contains(vols[n].id)) label = labels.at(vols[n].id).get<std::int32_t>();
        if (!emb_agg.empty()) {
          EmbeddingRecord r;
          r.id = n;
          r.vector = aggregate(recs, aggregate_kind_from_string(emb_agg));
          r.scan_id = n;
          r.label = label;
          store.add(std::move(r));
        } else {
          next_id += recs.size();
          for (auto& r : recs) {
            r.label = label;
            store.add(std::move(r));
          }
        }
      }
      const auto path = emb_c.out_dir() / "embeddings.vfm";
      save_store(store, path);
      out << json{{"store", path.string()}, {"records", store.records.size()}, {"dim", store.dim}}.dump() << '\n';
      return 0;
    }

    if (*srch) {
      const auto c = srch_c.run_config();
      const auto ck = load_checkpoint(srch_ckpt);
      const BackboneEmbedder<float> embedder(ck.state);
      const auto vols = cli::load_named(srch_data);
      auto find = [&](const std::string& id) -> const NamedVolume& {
        for (const auto& v : vols)
          if (v.id == id) return v;
        throw Error(ErrorCode::not_found, "no volume '" + id + "' in " + srch_data);
      };
      if (srch_targets.empty())
        for (const auto& v : vols) srch_targets.push_back(v.id);
      std::vector<Scan> targets;
      for (std::size_t n = 0; n < srch_targets.size(); ++n) targets.push_back({n, find(srch_targets[n]).volume});
      const Index3 box = box_or(srch_box, c.search.box, "--box");
      const auto results = semantic_search(embedder, find(srch_source).volume, cli::parse_index3(srch_center, "--center"),
                                           box, targets, box_or(srch_stride, c.search.stride, "--stride"));
      json rs = json::array();
      const bool write = !srch_c.out.empty();
      for (std::size_t n = 0; n < results.size(); ++n) {
        json r{{"target_id", srch_targets[n]},
               {"best_position", results[n].best_position},
               {"best_similarity", results[n].best_similarity}};
        if (write) {
          const auto path = srch_c.out_dir() / (srch_targets[n] + "_heatmap");
          save_volume(grid_volume(results[n].grid, results[n].similarity, targets[n].volume), path, "heatmap");
          r["heatmap"] = path.string();
        }
        rs.push_back(r);
      }
      std::stable_sort(rs.begin(), rs.end(), [](const json& a, const json& b) {
        return a["best_similarity"].get<double>() > b["best_similarity"].get<double>();
      });
      out << json{{"source_id", srch_source}, {"results", rs}}.dump() << '\n';
      return 0;
    }

    if (*ret) {
      const auto c = ret_c.run_config();
      const int k = ret_k > 0 ? ret_k : c.search.k;
      const auto store = load_store(ret_store);
      std::map<std::int32_t, std::size_t> per_label;
      for (const auto& r : store.records)
        if (r.label) ++per_label[*r.label];
      double ap = 0, hr = 0, p = 0, f1 = 0;
      std::size_t queries = 0;
      for (std::size_t q = 0; q < store.records.size(); ++q) {
        const auto& query = store.records[q];
        if (!query.label) continue;
        EmbeddingStore rest;
        rest.dim = store.dim;
        for (std::size_t n = 0; n < store.records.size(); ++n)
          if (n != q && store.records[n].label) rest.records.push_back(store.records[n]);
        if (static_cast<int>(rest.records.size()) < k) continue;
        std::map<std::uint64_t, std::int32_t> label_of;
        for (const auto& r : rest.records) label_of[r.id] = *r.label;
        std::vector<std::int32_t> ranked;
        for (const auto& h : topk_search(query.vector, rest, k)) ranked.push_back(label_of[h.id]);
        const auto s = retrieval_metrics(*query.label, ranked, per_label[*query.label] - 1, k);
        ap += s.average_precision_at_k;
        hr += s.hit_rate;
        p += s.precision_at_k;
        f1 += s.f1;
        ++queries;
      }
      require(queries > 0, ErrorCode::empty_input, "no labeled queries with >= k labeled neighbours");
      const double n = static_cast<double>(queries);
      out << json{{"k", k}, {"queries", queries}, {"ap", ap / n}, {"hit_rate", hr / n}, {"precision", p / n},
                  {"f1", f1 / n}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*sal) {
      const auto c = sal_c.run_config();
      const auto ck = load_checkpoint(sal_ckpt);
      const BackboneEmbedder<float> embedder(ck.state);
      const auto v = load_volume(sal_volume);
      const Index3 occ = box_or(sal_occ, c.search.occluder, "--occ");
      const Index3 stride = sal_stride.empty() ? (sal_occ.empty() ? c.search.occluder_stride : occ)
                                               : cli::parse_index3(sal_stride, "--stride");
      const auto m = ofd_saliency(embedder, v, occ, stride, sal_fill ? sal_fill : c.search.fill);
      const auto d = m.grid.dims();
      const auto arg = m.argmax();
      const Index3 g{static_cast<int>(arg / (static_cast<std::size_t>(d[1]) * d[2])),
                     static_cast<int>(arg / d[2] % d[1]), static_cast<int>(arg % d[2])};
      const auto path = sal_c.out_dir() / (volume_stem(sal_volume).filename().string() + "_saliency");
      save_volume(grid_volume(m.grid, m.distance, v), path, "saliency");
      out << json{{"saliency", path.string()}, {"grid_shape", d}, {"fill", m.fill},
                  {"argmax_position", m.grid.corner(g)}, {"max_distance", m.distance[arg]}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*pca) {
      const auto c = pca_c.run_config();
      const auto ck = load_checkpoint(pca_ckpt);
      const BackboneEmbedder<float> embedder(ck.state);
      std::vector<Volume> vols;
      for (const auto& p : pca_volumes) vols.push_back(load_volume(p));
      const auto res = pca_cielab_map(embedder, vols, box_or(pca_patch, ck.state.config.patch, "--patch"),
                                      box_or(pca_stride, c.search.stride, "--stride"));
      const auto dir = pca_c.out_dir();
      json files = json::array();
      for (std::size_t n = 0; n < vols.size(); ++n) {
        const auto& ov = res.overlays[n];
        const int mid = ov.shape[0] / 2;
        const auto img = extract_plane(ov.shape, 'z', mid, 3, [&](const Index3& p, std::uint8_t* px) {
          const auto rgb = ov.at(p[0], p[1], p[2]);
          std::copy(rgb.begin(), rgb.end(), px);
        });
        const auto path = dir / (volume_stem(pca_volumes[n]).filename().string() + "_pca_z" + std::to_string(mid) + ".png");
        write_file(path, encode_png(img));
        files.push_back(path.string());
      }
      out << json{{"explained_variance", res.pca.explained_variance},
                  {"background_threshold", res.background_threshold},
                  {"images", files}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*stb) {
      const auto c = stb_c.run_config();
      const auto ck = load_checkpoint(stb_ckpt);
      const BackboneEmbedder<float> embedder(ck.state);
      const auto rep = test_retest(embedder, load_volume(stb_a), load_volume(stb_b),
                                   box_or(stb_patch, ck.state.config.patch, "--patch"),
                                   box_or(stb_stride, c.search.stride, "--stride"),
                                   stb_thr.value_or(c.search.outlier_threshold));
      const auto path = stb_c.out_dir() / "stability.csv";
      std::ofstream csv(path);
      write_stability_csv(csv, rep);
      out << json{{"csv", path.string()}, {"median_cosine", rep.median_cosine}, {"min_cosine", rep.min_cosine},
                  {"outliers", rep.outliers.size()}, {"windows", rep.entries.size()}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*ocdc) {
      const auto c = ocd_c.run_config();
      const auto ck = load_checkpoint(ocd_ckpt);
      const BackboneEmbedder<float> embedder(ck.state);
      const auto labeled = cli::load_labeled(ocd_data);
      const Index3 box = box_or(ocd_box, c.search.box, "--box");
      const Index3 stride = box_or(ocd_stride, c.search.stride, "--stride");
      std::vector<double> d;
      json pairs = json::array();
      for (const auto& s : labeled)
        for (const auto& t : labeled) {
          if (&s == &t) continue;
          const auto r = ocd(embedder, s.lv.volume, s.lv.mask, t.lv.volume, t.lv.mask, ocd_label, box, stride);
          d.push_back(r.distance_cm);
          pairs.push_back({{"source", s.id}, {"target", t.id}, {"distance_cm", r.distance_cm}});
        }
      require(!d.empty(), ErrorCode::empty_input, "ocd needs >= 2 labeled volumes");
      double mean = 0, var = 0;
      for (double x : d) mean += x / static_cast<double>(d.size());
      for (double x : d) var += (x - mean) * (x - mean);
      const double sd = d.size() > 1 ? std::sqrt(var / static_cast<double>(d.size() - 1)) : 0.0;
      out << json{{"label", ocd_label}, {"mean_cm", mean}, {"std_cm", sd}, {"pairs", pairs}}.dump() << '\n';
      return 0;
    }

    if (*srv) {
      ServiceOptions o;
      o.host = srv_host;
      o.port = srv_port;
      o.workers = srv_workers;
      if (!srv_ui.empty()) o.ui_dir = srv_ui;
      auto service = Service::from_disk(srv_data, srv_ckpt, o);
      const int port = service.start();
      cli::g_service = &service;
      std::signal(SIGINT, cli::handle_signal);
      std::signal(SIGTERM, cli::handle_signal);
      out << json{{"listening", "http://" + srv_host + ":" + std::to_string(port)},
                  {"volumes", service.volumes().size()}}
                 .dump()
          << std::endl;
      service.wait();
      cli::g_service = nullptr;
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace voxelfm
