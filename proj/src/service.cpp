#include "clampcal/service.hpp"

#include <atomic>
#include <charconv>
#include <condition_variable>
#include <csignal>
#include <pthread.h>
#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "clampcal/diagram.hpp"
#include "clampcal/error.hpp"
#include "clampcal/metrics.hpp"

namespace clampcal {

std::string_view to_string(JobStatus::State state) {
  switch (state) {
    case JobStatus::State::queued: return "queued";
    case JobStatus::State::running: return "running";
    case JobStatus::State::done: return "done";
    case JobStatus::State::failed: return "failed";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// SessionStore

std::string SessionStore::next_id(std::string_view prefix) {
  return std::string(prefix) + "-" + std::to_string(++counter_);
}

std::string SessionStore::add_dataset(AnyDataset dataset) {
  auto value = std::make_shared<const AnyDataset>(std::move(dataset));
  std::unique_lock lock(mutex_);
  auto id = next_id("ds");
  datasets_.emplace(id, std::move(value));
  return id;
}

std::string SessionStore::add_model(MlpModel model) {
  auto value = std::make_shared<const MlpModel>(std::move(model));
  std::unique_lock lock(mutex_);
  auto id = next_id("model");
  models_.emplace(id, std::move(value));
  return id;
}

std::string SessionStore::add_calibrator(StoredCalibrator calibrator) {
  auto value = std::make_shared<const StoredCalibrator>(std::move(calibrator));
  std::unique_lock lock(mutex_);
  auto id = next_id("cal");
  calibrators_.emplace(id, std::move(value));
  return id;
}

std::string SessionStore::add_job() {
  auto value = std::make_shared<const JobStatus>();
  std::unique_lock lock(mutex_);
  auto id = next_id("job");
  jobs_.emplace(id, std::move(value));
  return id;
}

void SessionStore::set_job(const std::string& id, JobStatus status) {
  auto value = std::make_shared<const JobStatus>(std::move(status));
  std::unique_lock lock(mutex_);
  jobs_[id] = std::move(value);
}

namespace {
template <typename Map>
auto find_in(const Map& map, const std::string& id) -> typename Map::mapped_type {
  auto it = map.find(id);
  return it == map.end() ? nullptr : it->second;
}
}  // namespace

std::shared_ptr<const AnyDataset> SessionStore::dataset(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return find_in(datasets_, id);
}
std::shared_ptr<const MlpModel> SessionStore::model(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return find_in(models_, id);
}
std::shared_ptr<const StoredCalibrator> SessionStore::calibrator(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return find_in(calibrators_, id);
}
std::shared_ptr<const JobStatus> SessionStore::job(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return find_in(jobs_, id);
}

std::string SessionStore::snapshot_json() const {
  using ojson = nlohmann::ordered_json;
  std::shared_lock lock(mutex_);
  ojson j;
  j["counter"] = counter_;
  auto datasets = ojson::array();
  for (const auto& [id, ds] : datasets_) {
    ojson e;
    e["id"] = id;
    if (const auto* logits = std::get_if<LogitDataset>(ds.get())) {
      e["type"] = "logits";
      e["csv"] = to_csv(*logits);
    } else {
      const auto& inputs = std::get<InputDataset>(*ds);
      e["type"] = "inputs";
      e["csv"] = to_csv(inputs);
      if (inputs.num_classes()) e["num_classes"] = *inputs.num_classes();
    }
    datasets.push_back(std::move(e));
  }
  j["datasets"] = std::move(datasets);
  auto models = ojson::array();
  for (const auto& [id, m] : models_) {
    models.push_back({{"id", id}, {"model", ojson::parse(to_json(*m))}});
  }
  j["models"] = std::move(models);
  auto cals = ojson::array();
  for (const auto& [id, c] : calibrators_) {
    cals.push_back({{"id", id},
                    {"calibrator", ojson::parse(to_json(c->calibrator))},
                    {"model_id", c->model_id}});
  }
  j["calibrators"] = std::move(cals);
  return j.dump();
}

void SessionStore::restore_json(std::string_view text) {
  auto j = nlohmann::json::parse(text);
  std::unique_lock lock(mutex_);
  counter_ = std::max(counter_, j.at("counter").get<std::uint64_t>());
  for (const auto& e : j.at("datasets")) {
    auto csv = e.at("csv").get<std::string>();
    std::shared_ptr<const AnyDataset> ds;
    if (e.at("type") == "logits") {
      ds = std::make_shared<const AnyDataset>(parse_logits_csv(csv));
    } else {
      std::optional<std::size_t> k;
      if (e.contains("num_classes")) k = e["num_classes"].get<std::size_t>();
      ds = std::make_shared<const AnyDataset>(parse_features_csv(csv, k));
    }
    datasets_[e.at("id").get<std::string>()] = std::move(ds);
  }
  for (const auto& e : j.at("models")) {
    models_[e.at("id").get<std::string>()] =
        std::make_shared<const MlpModel>(parse_model_json(e.at("model").dump()));
  }
  for (const auto& e : j.at("calibrators")) {
    calibrators_[e.at("id").get<std::string>()] = std::make_shared<const StoredCalibrator>(
        StoredCalibrator{parse_calibrator_json(e.at("calibrator").dump()),
                         e.value("model_id", std::string{})});
  }
}

// ---------------------------------------------------------------------------
// Service

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

class WorkerPool {
 public:
  explicit WorkerPool(std::size_t workers) {
    for (std::size_t i = 0; i < std::max<std::size_t>(workers, 1); ++i) {
      threads_.emplace_back([this] { run(); });
    }
  }
  ~WorkerPool() { shutdown(); }

  void submit(std::function<void()> task) {
    {
      std::lock_guard lock(mutex_);
      tasks_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

  // Finishes queued tasks, then joins.
  void shutdown() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) {
      if (t.joinable()) t.join();
    }
  }

 private:
  void run() {
    while (true) {
      std::function<void()> task;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return stopping_ || !tasks_.empty(); });
        if (tasks_.empty()) return;
        task = std::move(tasks_.front());
        tasks_.pop_front();
      }
      task();
    }
  }

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> tasks_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

struct HttpError {
  int status;
  std::string message;
};

[[noreturn]] void fail(int status, std::string message) { throw HttpError{status, std::move(message)}; }

void send_json(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_content(body, "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, ojson{{"error", message}}.dump());
}

// Integer query parameter within [lo, hi].
std::size_t size_param(const httplib::Request& req, const std::string& name, std::size_t fallback,
                       std::size_t lo, std::size_t hi) {
  if (!req.has_param(name)) return fallback;
  auto text = req.get_param_value(name);
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    fail(400, "parameter '" + name + "' must be an integer");
  }
  if (value < lo || value > hi) {
    fail(400, "parameter '" + name + "' must lie in [" + std::to_string(lo) + "," +
                  std::to_string(hi) + "]");
  }
  return value;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

struct Service::Impl {
  explicit Impl(ServiceOptions opts) : options(std::move(opts)), pool(options.workers) {}

  ServiceOptions options;
  SessionStore store;
  httplib::Server server;
  WorkerPool pool;
  std::atomic<bool> stopped{false};

  // Calibrated probabilities for a dataset under the `calibrator` and `model`
  // query parameters.
  ProbMatrix probabilities(const std::string& dataset_id, const httplib::Request& req) {
    auto ds = store.dataset(dataset_id);
    if (!ds) fail(404, "unknown dataset '" + dataset_id + "'");

    std::string selector = req.has_param("calibrator") ? req.get_param_value("calibrator") : "none";
    Calibrator cal;
    std::string model_id = req.has_param("model") ? req.get_param_value("model") : "";
    if (selector == "none") {
      cal = Calibrator::identity();
    } else if (selector.starts_with("T:")) {
      std::string_view text(selector);
      text.remove_prefix(2);
      double t = 0.0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), t);
      if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
        fail(400, "malformed temperature '" + std::string(text) + "'");
      }
      if (!(t > 0.0) || !std::isfinite(t)) fail(400, "temperature must be positive");
      cal = Calibrator::scaling(t);
    } else {
      auto stored = store.calibrator(selector);
      if (!stored) fail(404, "unknown calibrator '" + selector + "'");
      cal = stored->calibrator;
      if (model_id.empty()) model_id = stored->model_id;
    }

    if (const auto* logits = std::get_if<LogitDataset>(ds.get())) {
      return apply(cal, *logits);
    }
    if (model_id.empty()) fail(400, "an inputs dataset requires a model (query parameter 'model')");
    auto model = store.model(model_id);
    if (!model) fail(404, "unknown model '" + model_id + "'");
    const auto& inputs = std::get<InputDataset>(*ds);
    inputs.check_labels(model->output_dim());
    return apply(cal, *model, inputs);
  }

  static const std::vector<int>& labels_of(const AnyDataset& ds) {
    return std::visit([](const auto& d) -> const std::vector<int>& { return d.labels(); }, ds);
  }

  void post_dataset(const httplib::Request& req, httplib::Response& res) {
    if (req.body.empty()) fail(400, "empty body");
    std::string type = req.has_param("type") ? req.get_param_value("type") : "logits";
    ojson out;
    if (type == "logits") {
      auto ds = parse_logits_csv(req.body);
      auto n = ds.num_samples();
      auto k = ds.num_classes();
      out = ojson{{"id", store.add_dataset(std::move(ds))}, {"n", n}, {"k", k}};
    } else if (type == "inputs") {
      std::optional<std::size_t> k;
      if (req.has_param("num_classes")) k = size_param(req, "num_classes", 0, 2, 1u << 20);
      auto ds = parse_features_csv(req.body, k);
      auto n = ds.num_samples();
      auto d = ds.input_dim();
      out = ojson{{"id", store.add_dataset(std::move(ds))}, {"n", n}, {"d_in", d}};
    } else {
      fail(400, "type must be 'logits' or 'inputs'");
    }
    send_json(res, 201, out.dump());
  }

  void get_diagram(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto bins = size_param(req, "bins", kDefaultBins, 1, 100);
    const std::string etag_key = id + '\n' +
                                 (req.has_param("calibrator") ? req.get_param_value("calibrator") : "none") +
                                 '\n' + std::to_string(bins) + '\n' +
                                 (req.has_param("model") ? req.get_param_value("model") : "");
    char etag[24];
    std::snprintf(etag, sizeof etag, "\"%016llx\"",
                  static_cast<unsigned long long>(fnv1a(etag_key)));
    if (!store.dataset(id)) fail(404, "unknown dataset '" + id + "'");
    // Stored artifacts never change, so the query alone identifies the body.
    if (req.get_header_value("If-None-Match") == etag) {
      res.set_header("ETag", etag);
      res.status = 304;
      return;
    }
    auto probs = probabilities(id, req);
    auto ds = store.dataset(id);
    res.set_header("ETag", etag);
    send_json(res, 200, to_json(build_diagram(probs, labels_of(*ds), bins)));
  }

  void get_metrics(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto bins = size_param(req, "bins", kDefaultBins, 1, 100);
    const auto ranges = size_param(req, "ranges", kDefaultRanges, 1, SIZE_MAX);
    auto probs = probabilities(id, req);
    auto ds = store.dataset(id);
    send_json(res, 200, to_json(compute_report(probs, labels_of(*ds), bins, ranges)));
  }

  void post_model(const httplib::Request& req, httplib::Response& res) {
    if (req.body.empty()) fail(400, "empty body");
    auto model = parse_model_json(req.body);
    auto in = model.input_dim();
    auto out = model.output_dim();
    auto id = store.add_model(std::move(model));
    send_json(res, 201, ojson{{"id", id}, {"input_dim", in}, {"output_dim", out}}.dump());
  }

  void post_calibrator(const httplib::Request& req, httplib::Response& res) {
    if (req.body.empty()) fail(400, "empty body");
    auto cal = parse_calibrator_json(req.body);
    std::string model_id = req.has_param("model") ? req.get_param_value("model") : "";
    if (!model_id.empty() && !store.model(model_id)) fail(404, "unknown model '" + model_id + "'");
    auto id = store.add_calibrator({std::move(cal), model_id});
    send_json(res, 201, ojson{{"id", id}}.dump());
  }

  void get_calibrator(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    auto cal = store.calibrator(id);
    if (!cal) fail(404, "unknown calibrator '" + id + "'");
    auto j = ojson::parse(to_json(cal->calibrator));
    if (!cal->model_id.empty()) j["model_id"] = cal->model_id;
    send_json(res, 200, j.dump());
  }

  static json parse_body(const httplib::Request& req) {
    try {
      auto j = json::parse(req.body);
      if (!j.is_object()) fail(400, "body must be a JSON object");
      return j;
    } catch (const json::exception& e) {
      fail(400, std::string("malformed JSON body: ") + e.what());
    }
  }

  static std::string string_field(const json& body, const char* key) {
    if (!body.contains(key) || !body[key].is_string()) {
      fail(400, std::string("missing string field '") + key + "'");
    }
    return body[key].get<std::string>();
  }

  static TrainConfig config_field(const json& body) {
    if (!body.contains("config")) return {};
    return parse_train_config(body["config"].dump());
  }

  std::string enqueue(std::function<FitReport()> fit, std::string model_id) {
    auto job_id = store.add_job();
    pool.submit([this, job_id, fit = std::move(fit), model_id = std::move(model_id)] {
      store.set_job(job_id, {JobStatus::State::running, {}, {}, {}});
      JobStatus status;
      try {
        auto report = fit();
        status.calibrator_id = store.add_calibrator({report.calibrator, model_id});
        status.report = std::move(report);
        status.state = JobStatus::State::done;
      } catch (const std::exception& e) {
        status.state = JobStatus::State::failed;
        status.error = e.what();
      }
      store.set_job(job_id, std::move(status));
    });
    return job_id;
  }

  void post_fit_temperature(const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    auto dataset_id = string_field(body, "dataset_id");
    auto config = config_field(body);
    auto ds = store.dataset(dataset_id);
    if (!ds) fail(404, "unknown dataset '" + dataset_id + "'");
    if (!std::holds_alternative<LogitDataset>(*ds)) {
      fail(400, "temperature fitting requires a logits dataset");
    }
    auto job = enqueue([ds, config] { return fit_temperature(std::get<LogitDataset>(*ds), config); },
                       "");
    send_json(res, 202, ojson{{"job_id", job}}.dump());
  }

  void post_fit_clamping(const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    auto dataset_id = string_field(body, "dataset_id");
    auto model_id = string_field(body, "model_id");
    auto config = config_field(body);
    auto ds = store.dataset(dataset_id);
    if (!ds) fail(404, "unknown dataset '" + dataset_id + "'");
    auto model = store.model(model_id);
    if (!model) fail(404, "unknown model '" + model_id + "'");
    if (!std::holds_alternative<InputDataset>(*ds)) {
      fail(400, "clamping fits require an inputs dataset");
    }
    auto job = enqueue(
        [ds, model, config] {
          return fit_neural_clamping(*model, std::get<InputDataset>(*ds), config);
        },
        model_id);
    send_json(res, 202, ojson{{"job_id", job}}.dump());
  }

  void get_job(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    auto job = store.job(id);
    if (!job) fail(404, "unknown job '" + id + "'");
    ojson j;
    j["id"] = id;
    j["status"] = to_string(job->state);
    if (job->report) {
      auto report = ojson::parse(to_json(*job->report));
      report["calibrator_id"] = job->calibrator_id;
      j["report"] = std::move(report);
    }
    if (job->state == JobStatus::State::failed) j["error"] = job->error;
    send_json(res, 200, j.dump());
  }

  using Handler = void (Impl::*)(const httplib::Request&, httplib::Response&);

  httplib::Server::Handler wrap(Handler h) {
    return [this, h](const httplib::Request& req, httplib::Response& res) {
      try {
        (this->*h)(req, res);
      } catch (const HttpError& e) {
        send_error(res, e.status, e.message);
      } catch (const ValidationError& e) {
        send_error(res, 400, e.what());
      } catch (const NotFoundError& e) {
        send_error(res, 404, e.what());
      } catch (const std::exception&) {
        send_error(res, 500, "internal error");
      }
    };
  }

  void routes() {
    server.set_payload_max_length(options.max_upload_mb * 1024 * 1024);
    server.Post("/api/datasets", wrap(&Impl::post_dataset));
    server.Get(R"(/api/datasets/([^/]+)/diagram)", wrap(&Impl::get_diagram));
    server.Get(R"(/api/datasets/([^/]+)/metrics)", wrap(&Impl::get_metrics));
    server.Post("/api/models", wrap(&Impl::post_model));
    server.Post("/api/calibrators", wrap(&Impl::post_calibrator));
    server.Get(R"(/api/calibrators/([^/]+))", wrap(&Impl::get_calibrator));
    server.Post("/api/fit/temperature", wrap(&Impl::post_fit_temperature));
    server.Post("/api/fit/clamping", wrap(&Impl::post_fit_clamping));
    server.Get(R"(/api/jobs/([^/]+))", wrap(&Impl::get_job));
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res,
                                    std::exception_ptr) { send_error(res, 500, "internal error"); });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        send_error(res, res.status, res.status == 404 ? "not found" : "request failed");
      }
    });
    if (!options.static_dir.empty() && std::filesystem::is_directory(options.static_dir)) {
      server.set_mount_point("/", options.static_dir.string());
    }
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
  if (!impl_->options.snapshot.empty() && std::filesystem::exists(impl_->options.snapshot)) {
    std::ifstream in(impl_->options.snapshot);
    std::ostringstream ss;
    ss << in.rdbuf();
    impl_->store.restore_json(ss.str());
  }
  impl_->routes();
}

Service::~Service() { stop(); }

SessionStore& Service::store() { return impl_->store; }

int Service::bind() {
  auto& o = impl_->options;
  if (o.port == 0) return impl_->server.bind_to_any_port(o.host);
  if (!impl_->server.bind_to_port(o.host, o.port)) {
    throw std::runtime_error("cannot bind " + o.host + ":" + std::to_string(o.port));
  }
  return o.port;
}

void Service::serve() { impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_->stopped.exchange(true)) return;
  impl_->server.stop();
  impl_->pool.shutdown();
  if (!impl_->options.snapshot.empty()) {
    std::ofstream out(impl_->options.snapshot);
    out << impl_->store.snapshot_json();
  }
}

int run_service(const ServiceOptions& options) {
  // Signals are taken synchronously by a waiter thread; every other thread
  // inherits the blocked mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Service service(options);
  int port = service.bind();
  std::fprintf(stderr, "listening on %s:%d\n", options.host.c_str(), port);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
  });
  service.serve();
  service.stop();
  // serve() only returns after stop(); wake the waiter if it is still parked.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace clampcal
