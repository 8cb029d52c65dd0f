#pragma once

#include "coexplain/session.hpp"

#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace coexplain {

struct GatewayConfig {
  std::filesystem::path data_dir = "coexplain-data";
  double enhance_timeout_seconds = 120.0;
  std::size_t enhance_epochs = 10;
  std::size_t max_enhance_epochs = 1000;
  ModelConfig model;  // guideline and pretrained models built at session creation
  PartitionConfig partition;
  CostConfig cost;
};

struct Reply {
  int status = 200;
  Json body = Json::object();
};

/// Request-level failure with an HTTP status; `diagnostics` lists
/// {path, message} pairs for rule errors.
class HttpError : public std::runtime_error {
public:
  HttpError(int status, const std::string& what, Json diagnostics = Json::array())
      : std::runtime_error(what), status_(status), diagnostics_(std::move(diagnostics)) {}
  int status() const { return status_; }
  const Json& diagnostics() const { return diagnostics_; }

private:
  int status_;
  Json diagnostics_;
};

/// JSON-over-HTTP session service. `handle` is the whole API and is safe to
/// call from many threads: sessions are independent, mutations of one
/// session are serialized, and a second enhance (or any edit) while one is
/// running gets 409.
class Gateway {
public:
  explicit Gateway(GatewayConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.data_dir) {}

  const GatewayConfig& config() const { return cfg_; }

  Reply handle(std::string_view method, std::string_view path, std::string_view body) {
    try {
      return route(method, path, body);
    } catch (const HttpError& e) {
      return error_reply(e.status(), e.what(), e.diagnostics());
    } catch (const ValidationError& e) {
      return error_reply(422, e.what(), Json::array({{{"path", e.path()}, {"message", e.what()}}}));
    } catch (const std::exception& e) {
      return error_reply(500, e.what(), Json::array());
    }
  }

private:
  struct DatasetEntry {
    std::string csv;
    DatasetSpec spec;
  };

  struct Slot {
    std::mutex m;
    Session s;
    std::shared_ptr<const Dataset> ds;
    bool enhancing = false;
    std::vector<EpochRecord> progress;
  };

  static Reply error_reply(int status, const std::string& msg, const Json& diagnostics) {
    Reply r;
    r.status = status;
    r.body["error"] = msg;
    r.body["diagnostics"] = diagnostics;
    return r;
  }

  static Json parse_body(std::string_view body) {
    if (body.empty()) return Json::object();
    try {
      return Json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw HttpError(400, std::string("request body is not JSON: ") + e.what());
    }
  }

  static std::vector<std::string> segments(std::string_view path) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < path.size()) {
      while (i < path.size() && path[i] == '/') ++i;
      const std::size_t j = path.find('/', i);
      const std::size_t end = j == std::string_view::npos ? path.size() : j;
      if (end > i) out.emplace_back(path.substr(i, end - i));
      i = end;
    }
    return out;
  }

  Reply route(std::string_view method, std::string_view path, std::string_view body) {
    const auto seg = segments(path.substr(0, path.find('?')));
    const auto is = [&](std::string_view m) { return method == m; };
    if (seg.size() == 1 && seg[0] == "datasets") {
      if (is("POST")) return post_dataset(parse_body(body));
      throw HttpError(405, "method not allowed");
    }
    if (!seg.empty() && seg[0] == "sessions") {
      if (seg.size() == 1) {
        if (is("POST")) return post_session(parse_body(body));
        throw HttpError(405, "method not allowed");
      }
      auto slot = find_slot(seg[1]);
      const std::string what = seg.size() == 2 ? "" : seg[2];
      if (seg.size() > 3) throw HttpError(404, "no such endpoint");
      if (what.empty() && is("GET")) return get_session(*slot);
      if (what == "rules" && is("GET")) return get_rules(*slot);
      if (what == "rules" && is("PUT")) return put_rules(*slot, parse_body(body));
      if (what == "diff" && is("GET")) return get_diff(*slot);
      if (what == "enhance" && is("POST")) return post_enhance(*slot, parse_body(body));
      if (what == "progress" && is("GET")) return get_progress(*slot);
      if (what == "accept" && is("POST")) return post_accept(*slot, parse_body(body));
      if (what == "simulate" && is("POST")) return post_simulate(*slot, parse_body(body));
      if (what == "history" && is("GET")) return get_history(*slot);
      if (what == "metrics" && is("GET")) return get_metrics(*slot);
      static const std::set<std::string> known{"", "rules", "diff", "enhance", "progress",
                                               "accept", "simulate", "history", "metrics"};
      throw HttpError(known.count(what) ? 405 : 404, known.count(what) ? "method not allowed" : "no such endpoint");
    }
    throw HttpError(404, "no such endpoint");
  }

  // -- datasets --------------------------------------------------------------

  Reply post_dataset(const Json& req) {
    if (!req.is_object() || !req.contains("csv") || !req.at("csv").is_string()) {
      throw HttpError(400, "body needs a \"csv\" string");
    }
    auto csv = req.at("csv").get<std::string>();
    DatasetSpec spec;
    Dataset ds;
    try {
      if (req.contains("schema")) {
        spec = dataset_spec_from_json(req.at("schema"));
      } else if (req.contains("label_column")) {
        spec = infer_spec(csv, req.at("label_column").get<std::string>());
      } else {
        throw ValidationError("body needs \"schema\" or \"label_column\"");
      }
      ds = load_dataset(csv, spec, cfg_.partition);
      ds.validate();
    } catch (const ValidationError& e) {
      throw HttpError(400, e.what(), Json::array({{{"path", e.path()}, {"message", e.what()}}}));
    } catch (const nlohmann::json::exception& e) {
      throw HttpError(400, e.what());
    }
    if (spec.class_names.empty()) spec.class_names = ds.class_names;
    std::string id;
    {
      std::lock_guard lock(m_);
      id = store_.next_id("datasets", "d");
      store_.save_dataset(id, csv, spec);
      datasets_[id] = std::make_shared<DatasetEntry>(DatasetEntry{std::move(csv), spec});
    }
    Reply r;
    r.status = 201;
    r.body["id"] = id;
    r.body["rows"] = ds.size();
    r.body["class_names"] = ds.class_names;
    r.body["attributes"] = schema_to_json(ds.schema);
    return r;
  }

  std::shared_ptr<const DatasetEntry> find_dataset(const std::string& id) {
    std::lock_guard lock(m_);
    if (const auto it = datasets_.find(id); it != datasets_.end()) return it->second;
    if (!store_.has_dataset(id)) throw HttpError(404, "unknown dataset '" + id + "'");
    auto [csv, spec] = store_.load_dataset(id);
    auto e = std::make_shared<DatasetEntry>(DatasetEntry{std::move(csv), std::move(spec)});
    datasets_[id] = e;
    return e;
  }

  static std::shared_ptr<const Dataset> materialize(const DatasetEntry& e, const SplitPredicate& split,
                                                    const PartitionConfig& pc) {
    DatasetSpec spec = e.spec;
    spec.split = split;
    return std::make_shared<const Dataset>(load_dataset(e.csv, spec, pc));
  }

  // -- sessions --------------------------------------------------------------

  Reply post_session(const Json& req) {
    if (!req.is_object() || !req.contains("dataset") || !req.at("dataset").is_string()) {
      throw ValidationError("body needs a \"dataset\" id");
    }
    const auto entry = find_dataset(req.at("dataset").get<std::string>());
    Session s;
    s.dataset_id = req.at("dataset").get<std::string>();
    if (req.contains("split")) {
      try {
        s.split = split_from_json(req.at("split"));
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed split: ") + e.what());
      }
    } else if (entry->spec.split) {
      s.split = *entry->spec.split;
    } else {
      throw ValidationError("no split predicate given and the dataset has none");
    }
    s.partition = cfg_.partition;
    s.partition.seed = req.value("seed", cfg_.partition.seed);
    auto ds = materialize(*entry, s.split, s.partition);
    if (ds->indices(TagFilter::of(Distribution::guideline, Fold::train)).empty() ||
        ds->indices(TagFilter::of(Distribution::pretrained, Fold::train)).empty()) {
      throw ValidationError("split leaves one distribution without training rows");
    }

    ModelConfig mc = cfg_.model;
    mc.train.seed = s.partition.seed;
    s.guideline = generate_guideline(*ds, mc).tree;
    auto pretrained = train_explained_model(ds->filter(TagFilter::of(Distribution::pretrained, Fold::train)), mc);
    s.network = std::move(pretrained.net);
    s.ai = pretrained.tree;
    s.user = pretrained.tree;
    s.constraints = Constraints{};

    auto slot = std::make_shared<Slot>();
    {
      std::lock_guard lock(m_);
      s.id = store_.next_id("sessions", "s");
      store_.save_session(s);
      slot->s = std::move(s);
      slot->ds = std::move(ds);
      sessions_[slot->s.id] = slot;
    }
    Reply r;
    r.status = 201;
    std::lock_guard lock(slot->m);
    r.body = session_summary(*slot);
    return r;
  }

  std::shared_ptr<Slot> find_slot(const std::string& id) {
    {
      std::lock_guard lock(m_);
      if (const auto it = sessions_.find(id); it != sessions_.end()) return it->second;
      if (!store_.has_session(id)) throw HttpError(404, "unknown session '" + id + "'");
    }
    auto s = [&] {
      std::lock_guard lock(m_);
      return store_.load_session(id);
    }();
    const auto entry = find_dataset(s.dataset_id);
    auto slot = std::make_shared<Slot>();
    slot->ds = materialize(*entry, s.split, s.partition);
    slot->s = std::move(s);
    std::lock_guard lock(m_);
    const auto [it, inserted] = sessions_.emplace(id, slot);
    return it->second;  // another thread may have loaded it first
  }

  void persist(const Slot& slot) {
    std::lock_guard lock(m_);
    store_.save_session(slot.s);
  }

  Json rules_json(const Slot& slot, const DecisionTree& t) const {
    return to_jsonlogic(t, slot.ds->schema);
  }

  Json node_table(const Slot& slot, const DecisionTree& t) const {
    Json a = Json::array();
    for (const NodeId id : t.internal_nodes()) {
      const auto& n = t.node(id);
      const auto& attr = slot.ds->schema[n.attribute];
      a.push_back({{"id", id}, {"path", t.path_of(id)}, {"attribute", attr.name},
                   {"threshold", canonical_number(attr.to_raw(n.threshold))}});
    }
    return a;
  }

  Json metrics_of(const Slot& slot) const {
    Json j = evaluation_block(*slot.ds, slot.s.network, slot.s.ai, slot.s.guideline, &slot.s.user, cfg_.cost);
    std::size_t user_ops = 0;
    for (const auto& h : slot.s.history) {
      if (h.actor == "user") user_ops += h.ops.size();
    }
    j["edit_operations"] = user_ops;
    j["enhance_iterations"] = slot.s.enhance_count;
    return j;
  }

  Json session_summary(const Slot& slot) const {
    Json j = Json::object();
    j["id"] = slot.s.id;
    j["dataset"] = slot.s.dataset_id;
    j["split"] = split_to_json(slot.s.split);
    j["guideline_rules"] = rules_json(slot, slot.s.guideline);
    j["rules"] = rules_json(slot, slot.s.user);
    j["ai_rules"] = rules_json(slot, slot.s.ai);
    j["constraints"] = constraints_to_json(slot.s.constraints);
    j["enhancing"] = slot.enhancing;
    return j;
  }

  static void require_idle(const Slot& slot) {
    if (slot.enhancing) throw HttpError(409, "an enhancement is running for this session");
  }

  Reply get_session(Slot& slot) {
    std::lock_guard lock(slot.m);
    return {200, session_summary(slot)};
  }

  Reply get_rules(Slot& slot) {
    std::lock_guard lock(slot.m);
    Reply r;
    r.body["rules"] = rules_json(slot, slot.s.user);
    r.body["nodes"] = node_table(slot, slot.s.user);
    r.body["ai_rules"] = rules_json(slot, slot.s.ai);
    return r;
  }

  Reply put_rules(Slot& slot, const Json& req) {
    const Json& doc = req.is_object() && req.contains("rules") ? req.at("rules") : req;
    // Parsed and validated before the lock: a bad document never touches state.
    const DecisionTree tree = from_jsonlogic(doc, slot.ds->schema, slot.ds->class_names);
    std::lock_guard lock(slot.m);
    require_idle(slot);
    const auto diff = distance(slot.s.user, tree, cfg_.cost);
    if (!diff.script.empty()) {
      slot.s.history.push_back({utc_now(), "user", "edit", edit_ops_to_json(diff.script, slot.ds->schema, tree.class_names())});
    }
    slot.s.user = tree;
    // Locks refer to node ids of the old tree.
    slot.s.constraints.locked_nodes.clear();
    slot.s.constraints.restricted_nodes.clear();
    persist(slot);
    Reply r;
    r.body["rules"] = rules_json(slot, slot.s.user);
    r.body["nodes"] = node_table(slot, slot.s.user);
    r.body["metrics"] = metrics_of(slot);
    return r;
  }

  Reply get_diff(Slot& slot) {
    std::lock_guard lock(slot.m);
    const auto d = distance(slot.s.user, slot.s.ai, cfg_.cost);
    Reply r;
    r.body["distance"] = d.distance;
    r.body["ops"] = edit_ops_to_json(d.script, slot.ds->schema, slot.s.user.class_names());
    return r;
  }

  Reply post_enhance(Slot& slot, const Json& req) {
    if (!req.is_object() || !req.contains("mode") || !req.at("mode").is_string()) {
      throw ValidationError("body needs \"mode\": \"values\" or \"flowchart\"");
    }
    const auto mode = enhance_mode_from_string(req.at("mode").get<std::string>());
    EnhanceConfig ec;
    ec.cost = cfg_.cost;
    ec.deadline_seconds = cfg_.enhance_timeout_seconds;
    try {
      ec.train.epochs = req.value("epochs", cfg_.enhance_epochs);
      ec.train.seed = req.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed option: ") + e.what());
    }
    if (ec.train.epochs == 0 || ec.train.epochs > cfg_.max_enhance_epochs) {
      throw ValidationError("epochs must lie in 1.." + std::to_string(cfg_.max_enhance_epochs));
    }

    DecisionTree user;
    Constraints c;
    {
      std::lock_guard lock(slot.m);
      require_idle(slot);
      user = slot.s.user;
      c = req.contains("constraints") ? constraints_from_json(req.at("constraints"), user) : slot.s.constraints;
      slot.enhancing = true;
      slot.progress.clear();
    }
    struct Release {
      Slot& slot;
      ~Release() {
        std::lock_guard lock(slot.m);
        slot.enhancing = false;
      }
    } release{slot};

    ec.on_epoch = [&slot](const EpochRecord& e) {
      std::lock_guard lock(slot.m);
      slot.progress.push_back(e);
    };
    const Dataset train = slot.ds->filter(TagFilter::of(Distribution::pretrained, Fold::train));
    const Dataset test = slot.ds->filter(TagFilter::of(Distribution::pretrained, Fold::test));
    const auto result = enhance(mode, user, train, test, ec, c);

    Json out = enhance_result_to_json(result, slot.ds->schema);
    out["warning"] = !result.warnings.empty();
    std::lock_guard lock(slot.m);
    slot.s.ai = result.tree;
    slot.s.network = result.net;
    slot.s.constraints = c;
    ++slot.s.enhance_count;
    slot.s.history.push_back({utc_now(), "ai", "enhance", out["script"]});
    slot.s.last_enhance = out;
    persist(slot);
    out["evaluation"] = metrics_of(slot);
    return {200, std::move(out)};
  }

  Reply get_progress(Slot& slot) {
    std::lock_guard lock(slot.m);
    Reply r;
    r.body["running"] = slot.enhancing;
    r.body["epochs_done"] = slot.progress.size();
    r.body["history"] = history_to_json(slot.progress);
    return r;
  }

  Reply post_accept(Slot& slot, const Json& req) {
    std::optional<std::vector<std::size_t>> picks;
    try {
      const Json scope = req.is_object() ? req.value("scope", Json("all")) : Json("all");
      if (scope.is_array()) {
        picks = scope.get<std::vector<std::size_t>>();
      } else if (!(scope.is_string() && scope.get<std::string>() == "all")) {
        throw ValidationError("scope must be \"all\" or a list of op indices");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed scope: ") + e.what());
    }
    std::lock_guard lock(slot.m);
    require_idle(slot);
    const DecisionTree merged = accept_edits(slot.s.user, slot.s.ai, picks, cfg_.cost);
    const auto applied = distance(slot.s.user, merged, cfg_.cost);
    if (!applied.script.empty()) {
      slot.s.history.push_back(
          {utc_now(), "user", "accept", edit_ops_to_json(applied.script, slot.ds->schema, merged.class_names())});
    }
    slot.s.user = merged;
    slot.s.constraints.locked_nodes.clear();
    slot.s.constraints.restricted_nodes.clear();
    persist(slot);
    const auto remaining = distance(slot.s.user, slot.s.ai, cfg_.cost);
    Reply r;
    r.body["rules"] = rules_json(slot, slot.s.user);
    r.body["accepted"] = applied.script.size();
    r.body["remaining"] = edit_ops_to_json(remaining.script, slot.ds->schema, merged.class_names());
    r.body["metrics"] = metrics_of(slot);
    return r;
  }

  Reply post_simulate(Slot& slot, const Json& req) {
    const Dataset& ds = *slot.ds;
    std::vector<std::size_t> ids;
    try {
      if (req.is_object() && req.contains("case_ids")) {
        ids = req.at("case_ids").get<std::vector<std::size_t>>();
        for (const auto i : ids) {
          if (i >= ds.size()) throw ValidationError("case id " + std::to_string(i) + " out of range");
        }
      } else {
        const auto n = req.is_object() ? req.value("n", std::size_t{20}) : std::size_t{20};
        auto pool = ds.indices(TagFilter::of(Fold::test));
        if (n == 0 || n > pool.size()) {
          throw ValidationError("n must lie in 1.." + std::to_string(pool.size()));
        }
        std::mt19937_64 rng(req.is_object() ? req.value("seed", std::uint64_t{0}) : 0);
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(n);
        ids = std::move(pool);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed request: ") + e.what());
    }
    std::lock_guard lock(slot.m);
    Json cases = Json::array();
    for (const auto i : ids) {
      const auto x = ds.row(i);
      Json values = Json::object();
      for (std::size_t f = 0; f < ds.num_features(); ++f) {
        const auto& a = ds.schema[f];
        if (a.is_binary()) {
          values[a.name] = x[f] > 0.5 ? a.true_label : a.false_label;
        } else {
          values[a.name] = canonical_number(a.to_raw(x[f]));
        }
      }
      Json c = Json::object();
      c["id"] = i;
      c["distribution"] = ds.tags[i].distribution == Distribution::guideline ? "guideline" : "pretrained";
      c["fold"] = ds.tags[i].fold == Fold::test ? "test" : "train";
      c["values"] = std::move(values);
      c["ai_prediction"] = ds.class_names[predict(slot.s.network, x)];
      c["ai_rules_prediction"] = ds.class_names[slot.s.ai.evaluate(x)];
      c["user_rules_prediction"] = ds.class_names[slot.s.user.evaluate(x)];
      c["ground_truth"] = ds.class_names[ds.labels[i]];
      cases.push_back(std::move(c));
    }
    Reply r;
    r.body["cases"] = std::move(cases);
    return r;
  }

  Reply get_history(Slot& slot) {
    std::lock_guard lock(slot.m);
    Json a = Json::array();
    for (const auto& h : slot.s.history) {
      a.push_back({{"time", h.time}, {"actor", h.actor}, {"action", h.action}, {"ops", h.ops}});
    }
    Reply r;
    r.body["history"] = std::move(a);
    return r;
  }

  Reply get_metrics(Slot& slot) {
    std::lock_guard lock(slot.m);
    return {200, metrics_of(slot)};
  }

  GatewayConfig cfg_;
  SessionStore store_;
  std::mutex m_;  // guards the maps and the store
  std::map<std::string, std::shared_ptr<const DatasetEntry>> datasets_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

// ---------------------------------------------------------------------------
// Socket binding.

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// "host:port", ":port" or "host". Empty keeps the defaults.
inline BindAddress parse_bind_address(std::string_view text) {
  BindAddress b;
  if (text.empty()) return b;
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) {
    b.host = std::string(text);
    return b;
  }
  if (colon > 0) b.host = std::string(text.substr(0, colon));
  const auto port = detail::parse_double(text.substr(colon + 1));
  if (!port || *port < 0 || *port > 65535 || *port != static_cast<int>(*port)) {
    throw ValidationError("bad port in bind address '" + std::string(text) + "'");
  }
  b.port = static_cast<int>(*port);
  return b;
}

inline std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : std::move(fallback);
}

/// httplib front end for a Gateway. Port 0 picks a free port.
class HttpServer {
public:
  explicit HttpServer(Gateway& g) : gateway_(g) {
    const auto adapt = [this](const httplib::Request& req, httplib::Response& res) {
      const Reply r = gateway_.handle(req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server_.Get(".*", adapt);
    server_.Post(".*", adapt);
    server_.Put(".*", adapt);
    server_.Delete(".*", adapt);
  }

  ~HttpServer() { stop(); }

  /// Binds and serves on a background thread; returns the bound port.
  int start(const BindAddress& addr) {
    const int port = addr.port == 0 ? server_.bind_to_any_port(addr.host) : bind_fixed(addr);
    if (port < 0) throw std::runtime_error("cannot bind " + addr.host + ":" + std::to_string(addr.port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  /// Binds and serves on the calling thread until stopped.
  void run(const BindAddress& addr) {
    if (!server_.listen(addr.host, addr.port)) {
      throw std::runtime_error("cannot bind " + addr.host + ":" + std::to_string(addr.port));
    }
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

private:
  int bind_fixed(const BindAddress& addr) { return server_.bind_to_port(addr.host, addr.port) ? addr.port : -1; }

  Gateway& gateway_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace coexplain
