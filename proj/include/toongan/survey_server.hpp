#pragma once

// HTTP front end for SurveyService.
//
//   POST /api/session                   new session -> {participant_id, tasks}
//   GET  /api/session/{pid}             same payload plus "answered" task ids
//   POST /api/session/{pid}/response    {"task_id", "rankings": {image_id: rank}, "nonce"?}
//   GET  /img/{image_id}                image bytes
//   GET  /api/report                    mean-rank report (JSON)
//
// Errors are {"error": message} with 400 (validation), 404 (unknown ids)
// or 409 (a submission id replayed with a different answer).

#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
// <resolv.h> defines _res as a macro, which breaks Eigen headers included later.
#undef _res

#include "toongan/image.hpp"
#include "toongan/survey.hpp"

namespace toongan::survey {

class SurveyServer {
 public:
  /// `static_dir`, when given, is served at / (for the browser client).
  explicit SurveyServer(SurveyService& svc, const std::filesystem::path& static_dir = {}) : svc_(svc) {
    routes();
    if (!static_dir.empty() && !server_.set_mount_point("/", static_dir.string())) {
      throw ConfigError("cannot serve static files from " + static_dir.string());
    }
  }

  ~SurveyServer() { stop(); }

  SurveyServer(const SurveyServer&) = delete;
  SurveyServer& operator=(const SurveyServer&) = delete;

  /// Binds and starts serving on a background thread. Port 0 picks a free
  /// port. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
  }

  /// Maps library exceptions onto status codes.
  template <typename F>
  static void guarded(httplib::Response& res, F&& fn) {
    try {
      fn();
    } catch (const ValidationError& e) {
      send_error(res, 400, e.what());
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  }

  static Submission parse_submission(const std::string& body) {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception&) {
      throw ValidationError("request body is not JSON");
    }
    Submission s;
    if (!j.is_object() || !j.contains("task_id") || !j["task_id"].is_string()) {
      throw ValidationError("missing task_id");
    }
    s.task_id = j["task_id"].get<std::string>();
    if (!j.contains("rankings") || !j["rankings"].is_object()) throw ValidationError("missing rankings object");
    for (const auto& [image, rank] : j["rankings"].items()) {
      if (!rank.is_number_integer()) throw ValidationError("ranks must be integers");
      s.rankings[image] = rank.get<int>();
    }
    if (j.contains("nonce")) {
      if (!j["nonce"].is_string()) throw ValidationError("nonce must be a string");
      s.nonce = j["nonce"].get<std::string>();
    }
    return s;
  }

  static std::string content_type(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    return "application/octet-stream";
  }

  void routes() {
    server_.Post("/api/session", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, session_payload(svc_, *svc_.create_session())); });
    });

    server_.Get(R"(/api/session/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string pid = req.matches[1];
        json body = session_payload(svc_, *svc_.session(pid));
        body["answered"] = svc_.answered_tasks(pid);
        send_json(res, 200, body);
      });
    });

    server_.Post(R"(/api/session/([^/]+)/response)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string pid = req.matches[1];
        svc_.session(pid);  // unknown participant is 404 even when the body is bad
        const SubmitResult r = svc_.submit(pid, parse_submission(req.body));
        send_json(res, 200, {{"ok", true}, {"duplicate", r.duplicate}, {"answered", r.answered}});
      });
    });

    server_.Get(R"(/img/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto target = svc_.resolve_image(req.matches[1]);
        if (!target) throw NotFoundError("unknown image");
        for (const auto& img : svc_.definition().task(target->first).images) {
          if (img.model != target->second) continue;
          const auto bytes = read_file(img.path);
          res.status = 200;
          res.set_content(reinterpret_cast<const char*>(bytes.data()), bytes.size(), content_type(img.path));
          return;
        }
        throw NotFoundError("unknown image");
      });
    });

    server_.Get("/api/report", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, report_to_json(svc_.report())); });
    });

    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "not found" : "request failed");
    });
  }

  SurveyService& svc_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace toongan::survey
