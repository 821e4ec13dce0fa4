#pragma once

// REST surface over prediction, the review store and retraining. Handlers
// take and return plain structs so they run without a socket; `bind` wires
// them into an httplib server.

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "spi/pipeline.hpp"
#include "spi/retrain.hpp"
#include "spi/review.hpp"

namespace spi::service {

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;
  std::string body;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

inline int http_status(const std::string& code) {
  static const std::map<std::string, int> table = {
      {"unauthorized", 401},     {"unknown_commit", 404},     {"not_found", 404},
      {"duplicate_label", 409},  {"review_closed", 409},      {"not_conflicted", 409},
      {"self_adjudication", 403}, {"degenerate_labels", 422}, {"no_model", 503},
      {"invalid_label", 400},    {"invalid_reviewer", 400},   {"schema_violation", 400},
      {"bad_request", 400},      {"empty_revision", 400},     {"invalid_config", 400},
  };
  const auto it = table.find(code);
  return it == table.end() ? 500 : it->second;
}

inline Response error_response(const std::string& code, const std::string& message) {
  return {http_status(code), {{"format_version", kFormatVersion}, {"error", {{"code", code}, {"message", message}}}}};
}

inline std::string render_diff(const CommitRecord& c) {
  std::string out;
  for (const auto& f : c.file_diffs) {
    out += "--- a/" + f.path + "\n+++ b/" + f.path + "\n";
    for (const auto& l : f.removed_lines) out += "-" + l + "\n";
    for (const auto& l : f.added_lines) out += "+" + l + "\n";
  }
  return out;
}

struct ServiceOptions {
  std::string token;
  bool blind_predictions = false;
  review::QueueOrder order = review::QueueOrder::ProbabilityDesc;
  std::size_t page_size = 50;

  static ServiceOptions from_config(const nlohmann::json& config) {
    const auto& s = config.at("service");
    ServiceOptions o;
    o.token = s.value("token", std::string());
    o.blind_predictions = s.value("blind_predictions", false);
    o.order = review::parse_queue_order(s.value("queue_order", std::string("p_desc")));
    o.page_size = s.value("page_size", std::size_t{50});
    if (o.page_size < 1) throw Error("invalid_config", "service.page_size must be >= 1");
    return o;
  }
};

class Service {
 public:
  /// `previous` is the labeled corpus the current bundle was trained on and
  /// `validation` the fixed commits used to compare bundles on retrain.
  Service(nlohmann::json config, std::shared_ptr<const Bundle> bundle, review::LabelStore& store,
          std::vector<CommitRecord> previous = {}, std::vector<CommitRecord> validation = {})
      : config_(std::move(config)),
        options_(ServiceOptions::from_config(config_)),
        bundle_(std::move(bundle)),
        store_(&store),
        previous_(std::move(previous)),
        validation_(std::move(validation)) {}

  Response handle(const Request& req) {
    try {
      if (!authorized(req)) return error_response("unauthorized", "missing or invalid bearer token");
      if (req.method == "POST" && req.path == "/predict") return predict(req);
      if (req.method == "GET" && req.path == "/queue") return queue(req);
      if (req.method == "POST" && req.path == "/labels") return label(req, review::Round::Initial);
      if (req.method == "POST" && req.path == "/adjudications") return label(req, review::Round::Adjudication);
      if (req.method == "GET" && req.path == "/export") return export_labeled();
      if (req.method == "POST" && req.path == "/retrain") return retrain_bundle();
      if (req.method == "GET" && req.path == "/metrics") return metrics();
      return error_response("not_found", concat("no route for ", req.method, " ", req.path));
    } catch (const Error& e) {
      return error_response(e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      return error_response("bad_request", e.what());
    }
  }

  std::shared_ptr<const Bundle> bundle() const {
    std::lock_guard lock(bundle_mutex_);
    return bundle_;
  }

  void bind(httplib::Server& server, const std::string& static_dir = {}) {
    const auto adapt = [this](const httplib::Request& hr, httplib::Response& res) {
      Request req{hr.method, hr.path, {}, {}, hr.body};
      for (const auto& [k, v] : hr.params) req.query[k] = v;
      for (const auto& [k, v] : hr.headers) req.headers[ascii_lower(k)] = v;
      const auto out = handle(req);
      res.status = out.status;
      res.set_content(out.body.dump(), "application/json");
    };
    for (const char* path : {"/predict", "/labels", "/adjudications", "/retrain"}) server.Post(path, adapt);
    for (const char* path : {"/queue", "/export", "/metrics"}) server.Get(path, adapt);
    if (!static_dir.empty() && !server.set_mount_point("/", static_dir)) {
      throw Error("missing_input", concat("static directory ", static_dir, " does not exist"));
    }
  }

 private:
  bool authorized(const Request& req) const {
    if (options_.token.empty()) return true;
    const auto it = req.headers.find("authorization");
    return it != req.headers.end() && it->second == "Bearer " + options_.token;
  }

  static nlohmann::json parse_body(const Request& req) {
    const auto j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error("bad_request", "request body must be a JSON object");
    return j;
  }

  std::shared_ptr<const Bundle> require_bundle() const {
    auto b = bundle();
    if (!b) throw Error("no_model", "no model bundle is loaded");
    return b;
  }

  Response predict(const Request& req) {
    const auto body = parse_body(req);
    const auto model = require_bundle();
    const bool enqueue = req.query.count("enqueue") && req.query.at("enqueue") != "0" && req.query.at("enqueue") != "false";
    const bool batch = body.contains("commits");
    std::vector<CommitRecord> commits;
    if (batch) {
      std::size_t i = 0;
      for (const auto& c : body.at("commits")) commits.push_back(commit_from_json(c, i++));
    } else {
      commits.push_back(commit_from_json(body, 0));
    }
    const auto preds = predict_corpus(model->model, commits);
    if (enqueue) {
      std::vector<review::QueueItem> items;
      for (std::size_t i = 0; i < commits.size(); ++i) items.push_back({commits[i], preds[i]});
      store_->add_items(items);
    }
    nlohmann::json out = {{"format_version", kFormatVersion}};
    if (batch) {
      out["predictions"] = nlohmann::json::array();
      for (const auto& p : preds) out["predictions"].push_back(p.to_json());
    } else {
      out["prediction"] = preds.front().to_json();
    }
    return {200, out};
  }

  Response queue(const Request& req) const {
    std::optional<review::Status> status;
    if (const auto it = req.query.find("status"); it != req.query.end() && !it->second.empty()) {
      status = review::parse_status(it->second);
      if (!status) throw Error("bad_request", concat("unknown status '", it->second, "'"));
    }
    const auto number = [&](const char* key, std::size_t fallback) {
      const auto it = req.query.find(key);
      if (it == req.query.end()) return fallback;
      try {
        const long v = std::stol(it->second);
        if (v < 0) throw Error("bad_request", concat(key, " must be non-negative"));
        return static_cast<std::size_t>(v);
      } catch (const std::logic_error&) {
        throw Error("bad_request", concat(key, " must be an integer"));
      }
    };
    const std::size_t page = number("page", 0);
    const std::size_t page_size = std::max<std::size_t>(1, number("page_size", options_.page_size));
    const std::string reviewer = req.query.count("reviewer") ? req.query.at("reviewer") : std::string();
    const auto all = store_->queue(status, options_.order);
    nlohmann::json items = nlohmann::json::array();
    for (std::size_t i = page * page_size; i < all.size() && i < (page + 1) * page_size; ++i) {
      const auto& [item, state] = all[i];
      nlohmann::json j = {{"hash", item.commit.hash},
                          {"project", item.commit.project},
                          {"message", item.commit.message},
                          {"diff", render_diff(item.commit)},
                          {"review", review::review_view(state, reviewer)}};
      if (item.prediction && !options_.blind_predictions) {
        j["p_cm"] = item.prediction->p_cm;
        j["p_cr"] = item.prediction->p_cr ? nlohmann::json(*item.prediction->p_cr) : nlohmann::json(nullptr);
        j["p"] = item.prediction->p;
        j["predicted_label"] = to_string(item.prediction->label);
      } else {
        j["p_cm"] = j["p_cr"] = j["p"] = j["predicted_label"] = nullptr;
      }
      items.push_back(std::move(j));
    }
    return {200,
            {{"format_version", kFormatVersion},
             {"page", page},
             {"page_size", page_size},
             {"total", all.size()},
             {"items", items}}};
  }

  Response label(const Request& req, review::Round round) {
    const auto body = parse_body(req);
    const auto hash = body.at("hash").get<std::string>();
    const auto reviewer = body.at("reviewer_id").get<std::string>();
    const auto value = review::parse_review_label(body.at("label").get<std::string>());
    const auto state = round == review::Round::Initial ? store_->submit_initial(hash, reviewer, value)
                                                       : store_->adjudicate(hash, reviewer, value);
    return {200, {{"format_version", kFormatVersion}, {"review", review::review_view(state, reviewer)}}};
  }

  Response export_labeled() const {
    nlohmann::json commits = nlohmann::json::array();
    for (const auto& c : store_->export_labeled()) commits.push_back(spi::to_json(c));
    return {200, {{"format_version", kFormatVersion}, {"commits", commits}}};
  }

  Response retrain_bundle() {
    std::lock_guard training(retrain_mutex_);
    const auto current = require_bundle();
    auto result = retrain(previous_, store_->export_labeled(), current->model, validation_, config_);
    auto fresh = std::make_shared<const Bundle>(std::move(result.bundle));
    const auto report = result.report.to_json();
    std::size_t round = 0;
    {
      std::lock_guard lock(bundle_mutex_);
      bundle_ = fresh;
      last_report_ = report;
      round = ++round_;
    }
    return {200, {{"format_version", kFormatVersion}, {"round", round}, {"report", report}}};
  }

  Response metrics() const {
    nlohmann::json out = {{"format_version", kFormatVersion}};
    const auto b = bundle();
    out["bundle"] = b ? nlohmann::json{{"seed", b->manifest.value("seed", 0)},
                                       {"training_commits", b->manifest.value("training_commits", 0)},
                                       {"training_corpus_digest", b->manifest.value("training_corpus_digest", "")},
                                       {"weight", b->model.weight},
                                       {"threshold", b->model.threshold}}
                      : nlohmann::json(nullptr);
    out["review"] = store_->status_counts();
    std::lock_guard lock(bundle_mutex_);
    out["round"] = round_;
    out["last_retrain"] = last_report_ ? *last_report_ : nlohmann::json(nullptr);
    return {200, out};
  }

  nlohmann::json config_;
  ServiceOptions options_;
  mutable std::mutex bundle_mutex_;
  std::mutex retrain_mutex_;
  std::shared_ptr<const Bundle> bundle_;
  review::LabelStore* store_;
  std::vector<CommitRecord> previous_;
  std::vector<CommitRecord> validation_;
  std::optional<nlohmann::json> last_report_;
  std::size_t round_ = 0;
};

}  // namespace spi::service
