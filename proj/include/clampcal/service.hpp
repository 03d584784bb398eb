#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>

#include "clampcal/calibrate.hpp"
#include "clampcal/dataset.hpp"
#include "clampcal/model.hpp"

namespace clampcal {

struct JobStatus {
  enum class State { queued, running, done, failed };
  State state = State::queued;
  std::optional<FitReport> report;
  std::string calibrator_id;
  std::string error;
};

std::string_view to_string(JobStatus::State state);

using AnyDataset = std::variant<LogitDataset, InputDataset>;

struct StoredCalibrator {
  Calibrator calibrator;
  std::string model_id;  // set for calibrators fitted through a model
};

// In-memory registry of immutable artifacts. Many concurrent readers, exclusive
// writers. Ids are opaque strings, never reused within a store.
class SessionStore {
 public:
  std::string add_dataset(AnyDataset dataset);
  std::string add_model(MlpModel model);
  std::string add_calibrator(StoredCalibrator calibrator);
  std::string add_job();
  void set_job(const std::string& id, JobStatus status);

  // nullptr when absent.
  std::shared_ptr<const AnyDataset> dataset(const std::string& id) const;
  std::shared_ptr<const MlpModel> model(const std::string& id) const;
  std::shared_ptr<const StoredCalibrator> calibrator(const std::string& id) const;
  std::shared_ptr<const JobStatus> job(const std::string& id) const;

  std::string snapshot_json() const;
  void restore_json(std::string_view text);

 private:
  std::string next_id(std::string_view prefix);

  mutable std::shared_mutex mutex_;
  std::uint64_t counter_ = 0;
  std::map<std::string, std::shared_ptr<const AnyDataset>> datasets_;
  std::map<std::string, std::shared_ptr<const MlpModel>> models_;
  std::map<std::string, std::shared_ptr<const StoredCalibrator>> calibrators_;
  std::map<std::string, std::shared_ptr<const JobStatus>> jobs_;
};

struct ServiceOptions {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::size_t max_upload_mb = 64;
  std::size_t workers = 2;
  std::filesystem::path static_dir;  // served under "/" when set
  std::filesystem::path snapshot;    // restored on start, written on stop when set
};

// HTTP facade over a SessionStore.
//
//   POST /api/datasets?type=logits|inputs      CSV body -> {id, n, k | d_in}
//   GET  /api/datasets/{id}/diagram?bins=&calibrator=&model=
//   GET  /api/datasets/{id}/metrics?bins=&ranges=&calibrator=&model=
//   POST /api/models                           model JSON -> {id, input_dim, output_dim}
//   POST /api/calibrators                      calibrator JSON -> {id}
//   GET  /api/calibrators/{id}
//   POST /api/fit/temperature                  {dataset_id, config} -> {job_id}
//   POST /api/fit/clamping                     {dataset_id, model_id, config} -> {job_id}
//   GET  /api/jobs/{id}
//
// `calibrator` is `none`, `T:<value>` or a registered calibrator id.
class Service {
 public:
  explicit Service(ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  SessionStore& store();

  // Binds to options.port, or to an ephemeral port when it is 0; returns the port.
  int bind();
  // Blocks serving requests until stop().
  void serve();
  // Stops the listener, drains fit jobs and writes the snapshot if configured.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Runs a Service in the foreground until SIGINT/SIGTERM.
int run_service(const ServiceOptions& options);

}  // namespace clampcal
