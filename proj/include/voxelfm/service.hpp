#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "httplib.h"

#include "voxelfm/checkpoint.hpp"
#include "voxelfm/embeddings.hpp"
#include "voxelfm/io.hpp"
#include "voxelfm/png.hpp"
#include "voxelfm/semantics.hpp"

namespace voxelfm {

enum class JobStatus { pending, running, done, failed };

inline std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::pending: return "pending";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

struct SearchRequest {
  std::string source_id;
  Index3 center{};
  Index3 box{};
  std::vector<std::string> target_ids;
  Index3 stride{};
};

struct SaliencyRequest {
  std::string volume_id;
  Index3 occluder{};
  Index3 stride{};
};

struct Job {
  std::string id;
  std::variant<SearchRequest, SaliencyRequest> request;
  JobStatus status = JobStatus::pending;
  std::string error;
  std::vector<HeatmapResult> heatmaps;  // parallel to target_ids
  std::optional<SaliencyMap> saliency;
};

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  int workers = 1;
  std::size_t max_pending = 64;
  std::optional<fs::path> ui_dir;
};

struct NamedVolume {
  std::string id;
  Volume volume;
};

/// HTTP front end over immutable volumes and one frozen encoder. Sweeps run
/// as jobs on a bounded worker pool and are polled by id.
class Service {
 public:
  Service(std::vector<NamedVolume> volumes, EncoderState<float> state, ServiceOptions opts = {})
      : opts_(std::move(opts)), state_(std::move(state)), embedder_(state_) {
    for (std::size_t n = 0; n < volumes.size(); ++n) {
      require(!index_.contains(volumes[n].id), ErrorCode::invalid_argument, "duplicate volume id " + volumes[n].id);
      index_[volumes[n].id] = n;
    }
    volumes_ = std::move(volumes);
    routes();
  }

  static Service from_disk(const fs::path& volume_dir, const fs::path& checkpoint, ServiceOptions opts = {}) {
    require(fs::exists(checkpoint), ErrorCode::missing_file, "missing checkpoint " + checkpoint.string());
    auto ck = load_checkpoint(checkpoint);
    std::vector<NamedVolume> vols;
    for (const auto& stem : list_volumes(volume_dir)) vols.push_back({stem.filename().string(), load_volume(stem)});
    return Service(std::move(vols), std::move(ck.state), std::move(opts));
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;
  Service(Service&& o) = delete;

  ~Service() { stop(); }

  /// Binds and starts serving in the background; returns the bound port.
  int start() {
    require(!running_, ErrorCode::invalid_argument, "service already running");
    const int port = opts_.port == 0 ? server_.bind_to_any_port(opts_.host)
                                     : (server_.bind_to_port(opts_.host, opts_.port) ? opts_.port : -1);
    require(port > 0, ErrorCode::io, "cannot bind " + opts_.host + ":" + std::to_string(opts_.port) + " (port busy?)");
    stopping_ = false;
    for (int w = 0; w < std::max(1, opts_.workers); ++w) workers_.emplace_back([this] { worker_loop(); });
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    running_ = true;
    return port;
  }

  /// Blocks until stop() is called from elsewhere (e.g. a signal handler).
  void wait() {
    if (listener_.joinable()) listener_.join();
  }

  void stop() {
    if (!running_) return;
    server_.stop();
    if (listener_.joinable()) listener_.join();
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
    running_ = false;
  }

  /// Snapshot of a job, for in-process callers and tests.
  std::optional<Job> job(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return *it->second;
  }

  const std::vector<NamedVolume>& volumes() const { return volumes_; }

 private:
  const NamedVolume* find_volume(const std::string& id) const {
    const auto it = index_.find(id);
    return it == index_.end() ? nullptr : &volumes_[it->second];
  }

  std::string submit(std::variant<SearchRequest, SaliencyRequest> request) {
    std::lock_guard lock(mu_);
    require(queue_.size() < opts_.max_pending, ErrorCode::io, "job queue is full");
    auto job = std::make_shared<Job>();
    job->id = "j" + std::to_string(++next_job_);
    job->request = std::move(request);
    jobs_[job->id] = job;
    queue_.push_back(job);
    cv_.notify_one();
    return job->id;
  }

  void worker_loop() {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        job = queue_.front();
        queue_.pop_front();
        job->status = JobStatus::running;
      }
      std::vector<HeatmapResult> heatmaps;
      std::optional<SaliencyMap> saliency;
      std::string error;
      try {
        if (const auto* s = std::get_if<SearchRequest>(&job->request)) {
          std::vector<Scan> targets;
          for (std::size_t n = 0; n < s->target_ids.size(); ++n)
            targets.push_back({n, find_volume(s->target_ids[n])->volume});
          heatmaps = semantic_search(embedder_, find_volume(s->source_id)->volume, s->center, s->box, targets, s->stride);
        } else {
          const auto& r = std::get<SaliencyRequest>(job->request);
          saliency = ofd_saliency(embedder_, find_volume(r.volume_id)->volume, r.occluder, r.stride);
        }
      } catch (const std::exception& e) {
        error = e.what();
      }
      std::lock_guard lock(mu_);
      if (error.empty()) {
        job->heatmaps = std::move(heatmaps);
        job->saliency = std::move(saliency);
        job->status = JobStatus::done;
      } else {
        job->error = error;
        job->status = JobStatus::failed;
      }
    }
  }

  static void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, json{{"error", message}}, status);
  }

  static int http_status(const Error& e) {
    switch (e.code()) {
      case ErrorCode::not_found:
      case ErrorCode::missing_file: return 404;
      case ErrorCode::io: return 503;
      default: return 400;
    }
  }

  template <class Fn>
  static httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, std::string("bad request body: ") + e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  }

  static int int_param(const httplib::Request& req, const char* name, std::optional<int> fallback = std::nullopt) {
    if (!req.has_param(name)) {
      require(fallback.has_value(), ErrorCode::invalid_argument, std::string("missing query parameter '") + name + "'");
      return *fallback;
    }
    const auto v = req.get_param_value(name);
    try {
      std::size_t used = 0;
      const int out = std::stoi(v, &used);
      require(used == v.size(), ErrorCode::invalid_argument, "");
      return out;
    } catch (const std::exception&) {
      throw Error(ErrorCode::invalid_argument, std::string("query parameter '") + name + "' must be an integer");
    }
  }

  static char axis_param(const httplib::Request& req) {
    const auto a = req.has_param("axis") ? req.get_param_value("axis") : std::string("z");
    require(a.size() == 1, ErrorCode::invalid_argument, "axis must be z, y or x");
    axis_index(a[0]);
    return a[0];
  }

  const NamedVolume& volume_or_404(const std::string& id) const {
    const auto* v = find_volume(id);
    require(v != nullptr, ErrorCode::not_found, "unknown volume '" + id + "'");
    return *v;
  }

  std::shared_ptr<Job> job_or_404(const std::string& id) const {
    const auto it = jobs_.find(id);
    require(it != jobs_.end(), ErrorCode::not_found, "unknown job '" + id + "'");
    return it->second;
  }

  static json job_header(const Job& j) {
    json out{{"job_id", j.id}, {"status", to_string(j.status)}};
    if (j.status == JobStatus::failed) out["error"] = j.error;
    return out;
  }

  void routes() {
    server_.Get("/api/volumes", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& v : volumes_)
        out.push_back({{"id", v.id},
                       {"shape", v.volume.shape},
                       {"spacing_mm", v.volume.spacing_mm},
                       {"origin_mm", v.volume.origin_mm}});
      send_json(res, out);
    }));

    server_.Get(R"(/api/volumes/([^/]+)/slice)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& v = volume_or_404(req.matches[1]);
      const auto preset = req.has_param("preset") ? req.get_param_value("preset") : std::string("blood");
      const auto img = render_slice(v.volume, axis_param(req), int_param(req, "index"), windows::preset(preset));
      res.set_content(encode_png(img), "image/png");
    }));

    server_.Post("/api/search", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      SearchRequest r;
      r.source_id = body.at("source_id").get<std::string>();
      r.center = body.at("center").get<Index3>();
      r.box = body.at("box").get<Index3>();
      r.target_ids = body.at("target_ids").get<std::vector<std::string>>();
      r.stride = body.contains("stride") ? body.at("stride").get<Index3>() : r.box;
      require(!r.target_ids.empty(), ErrorCode::invalid_argument, "target_ids must be nonempty");
      const auto& src = volume_or_404(r.source_id);
      query_corner(src.volume.shape, r.center, r.box);
      for (const auto& t : r.target_ids) window_grid(volume_or_404(t).volume.shape, r.box, r.stride);
      send_json(res, json{{"job_id", submit(std::move(r))}}, 202);
    }));

    server_.Get(R"(/api/search/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      const auto job = job_or_404(req.matches[1]);
      const auto* r = std::get_if<SearchRequest>(&job->request);
      require(r != nullptr, ErrorCode::not_found, "job '" + job->id + "' is not a search job");
      json out = job_header(*job);
      out["results"] = json::array();
      if (job->status == JobStatus::done)
        for (std::size_t n = 0; n < job->heatmaps.size(); ++n)
          out["results"].push_back({{"target_id", r->target_ids[n]},
                                    {"best_position", job->heatmaps[n].best_position},
                                    {"best_similarity", job->heatmaps[n].best_similarity},
                                    {"grid_shape", job->heatmaps[n].grid.dims()}});
      send_json(res, out);
    }));

    server_.Get(R"(/api/search/([^/]+)/heatmap/([^/]+))",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  std::shared_ptr<Job> job;
                  {
                    std::lock_guard lock(mu_);
                    job = job_or_404(req.matches[1]);
                    require(job->status == JobStatus::done, ErrorCode::not_found, "job has no results yet");
                  }
                  const auto* r = std::get_if<SearchRequest>(&job->request);
                  require(r != nullptr, ErrorCode::not_found, "not a search job");
                  const std::string target = req.matches[2];
                  const auto it = std::find(r->target_ids.begin(), r->target_ids.end(), target);
                  require(it != r->target_ids.end(), ErrorCode::not_found, "target '" + target + "' not in job");
                  const auto& hm = job->heatmaps[static_cast<std::size_t>(it - r->target_ids.begin())];
                  const auto& vol = volume_or_404(target).volume;
                  res.set_content(encode_png(render_grid_slice(hm.grid, hm.similarity, vol.shape, axis_param(req),
                                                               int_param(req, "index"))),
                                  "image/png");
                }));

    server_.Get(R"(/api/saliency/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      const auto job = job_or_404(req.matches[1]);
      const auto* r = std::get_if<SaliencyRequest>(&job->request);
      require(r != nullptr, ErrorCode::not_found, "job '" + job->id + "' is not a saliency job");
      json out = job_header(*job);
      out["volume_id"] = r->volume_id;
      if (job->status == JobStatus::done) {
        const auto& m = *job->saliency;
        const auto arg = m.argmax();
        const auto d = m.grid.dims();
        const Index3 g{static_cast<int>(arg / (static_cast<std::size_t>(d[1]) * d[2])),
                       static_cast<int>(arg / d[2] % d[1]), static_cast<int>(arg % d[2])};
        out["result"] = {{"grid_shape", d},
                         {"occluder", m.occluder},
                         {"stride", m.stride},
                         {"fill", m.fill},
                         {"values", m.distance},
                         {"argmax_position", m.grid.corner(g)}};
      }
      send_json(res, out);
    }));

    server_.Get(R"(/api/saliency/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      SaliencyRequest r;
      r.volume_id = req.matches[1];
      const int occ = int_param(req, "occ", 8);
      const int stride = int_param(req, "stride", occ);
      r.occluder = {occ, occ, occ};
      r.stride = {stride, stride, stride};
      window_grid(volume_or_404(r.volume_id).volume.shape, r.occluder, r.stride);
      send_json(res, json{{"job_id", submit(std::move(r))}}, 202);
    }));

    const bool ui = opts_.ui_dir && fs::is_directory(*opts_.ui_dir) && server_.set_mount_point("/", opts_.ui_dir->string());
    if (!ui) {
      server_.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("voxelfm service: no UI assets mounted; the JSON API is under /api/\n", "text/plain");
      });
    }
  }

 public:
  /// Similarity grid painted at voxel resolution (nearest window centre),
  /// clamped to [0, 1] and quantized to 8 bits.
  static Image render_grid_slice(const WindowGrid& grid, std::span<const double> values, const Index3& shape,
                                 char axis, int index) {
    const auto nearest = nearest_windows(grid, shape);
    const auto gd = grid.dims();
    return extract_plane(shape, axis, index, 1, [&](const Index3& p, std::uint8_t* px) {
      const auto w = (static_cast<std::size_t>(nearest[0][p[0]]) * gd[1] + nearest[1][p[1]]) * gd[2] + nearest[2][p[2]];
      *px = quantize_unit(values[w]);
    });
  }

 private:
  ServiceOptions opts_;
  EncoderState<float> state_;
  BackboneEmbedder<float> embedder_;
  std::vector<NamedVolume> volumes_;
  std::map<std::string, std::size_t> index_;

  httplib::Server server_;
  std::thread listener_;
  std::vector<std::thread> workers_;
  bool running_ = false;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  std::deque<std::shared_ptr<Job>> queue_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::uint64_t next_job_ = 0;
};

}  // namespace voxelfm
