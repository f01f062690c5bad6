#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

// <resolv.h>, included by httplib, defines a _res macro that breaks Eigen
// headers parsed after it.
#include <Eigen/Core>
#include <httplib.h>
#include <json.hpp>

#include "peakit/annotation.hpp"
#include "peakit/error.hpp"
#include "peakit/image_io.hpp"
#include "peakit/video_io.hpp"

namespace peakit {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

inline HttpResponse json_response(int status, const nlohmann::json& j) { return {status, "application/json", j.dump()}; }

inline HttpResponse error_response(int status, std::string_view code, const std::string& message,
                                   const std::optional<std::string>& field = std::nullopt) {
  nlohmann::json j{{"error", code}, {"message", message}};
  j["field"] = field ? nlohmann::json(*field) : nlohmann::json(nullptr);
  return json_response(status, j);
}

/// Request handlers behind the annotation UI. Sequence files are only read;
/// annotations go to one append-only JSONL file.
class AnnotationService {
 public:
  AnnotationService(const SequenceRegistry& sequences, AnnotationStore& store) : sequences_(sequences), store_(store) {}

  /// GET /api/sequences
  HttpResponse list_sequences() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& name : sequences_.names()) {
      nlohmann::json m = sequences_.get(name).meta();
      m["frame_count"] = sequences_.get(name).frame_count();
      out.push_back(std::move(m));
    }
    return json_response(200, out);
  }

  /// GET /api/sequences/{name}/frames/{i}
  HttpResponse frame_png(const std::string& name, std::string_view index) const {
    if (!sequences_.contains(name)) return error_response(404, "FileMissing", "unknown sequence '" + name + "'", "sequence");
    const auto& seq = sequences_.get(name);
    int i = -1;
    const auto [ptr, ec] = std::from_chars(index.data(), index.data() + index.size(), i);
    if (ec != std::errc() || ptr != index.data() + index.size() || i < 0 || i >= seq.frame_count())
      return error_response(404, "IndexOutOfRange",
                            "frame '" + std::string(index) + "' outside [0, " + std::to_string(seq.frame_count()) + ")",
                            "frame");
    const auto png = encode_png(yuv_to_rgb(seq.read_frame(i)));
    return {200, "image/png", std::string(png.begin(), png.end())};
  }

  /// POST /api/annotations. The line is synced to disk before 201 is returned.
  HttpResponse post_annotation(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      return error_response(400, "ParseError", std::string("request body is not JSON: ") + e.what());
    }
    EllipseAnnotation a;
    try {
      a = annotation_from_json(j, "annotation");
    } catch (const FieldError& e) {
      return error_response(400, error_code_name(e.code()), e.detail(), e.field());
    }
    if (!sequences_.contains(a.sequence))
      return error_response(404, "FileMissing", "unknown sequence '" + a.sequence + "'", "sequence");
    if (auto v = check_annotation(a, sequences_.get(a.sequence).meta()))
      return error_response(400, "InvalidArgument", v->message, v->field);
    try {
      store_.append(a);
    } catch (const Error& e) {
      return error_response(500, error_code_name(e.code()), e.what());
    }
    return json_response(201, to_json_object(a));
  }

  /// GET /api/annotations[?sequence=name]
  HttpResponse get_annotations(const std::optional<std::string>& sequence) const {
    if (sequence && !sequences_.contains(*sequence))
      return error_response(404, "FileMissing", "unknown sequence '" + *sequence + "'", "sequence");
    nlohmann::json out = nlohmann::json::array();
    for (const auto& a : store_.snapshot())
      if (!sequence || a.sequence == *sequence) out.push_back(to_json_object(a));
    return json_response(200, out);
  }

  /// GET /api/progress: distinct frames covered per subject and sequence.
  HttpResponse progress() const {
    std::map<std::string, std::map<std::string, std::set<int>>> frames;
    std::map<std::string, std::map<std::string, int>> counts;
    for (const auto& a : store_.snapshot()) {
      auto& s = frames[a.subject_id][a.sequence];
      for (int f = a.start_frame(); f < a.end_frame(); ++f) s.insert(f);
      ++counts[a.subject_id][a.sequence];
    }
    nlohmann::json subjects = nlohmann::json::object();
    for (const auto& [subject, per_seq] : frames) {
      nlohmann::json seqs = nlohmann::json::object();
      for (const auto& [name, set] : per_seq) {
        nlohmann::json e{{"frames_annotated", set.size()}, {"annotations", counts[subject][name]}};
        e["frame_count"] = sequences_.contains(name) ? nlohmann::json(sequences_.get(name).frame_count()) : nlohmann::json(nullptr);
        seqs[name] = e;
      }
      subjects[subject] = seqs;
    }
    return json_response(200, {{"subjects", subjects}});
  }

  void mount(httplib::Server& server) {
    auto reply = [](httplib::Response& res, const HttpResponse& r) {
      res.status = r.status;
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_content(r.body, r.content_type);
    };
    server.Get("/api/sequences", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, list_sequences()); });
    server.Get(R"(/api/sequences/([^/]+)/frames/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, frame_png(req.matches[1], req.matches[2].str()));
    });
    server.Post("/api/annotations", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, post_annotation(req.body));
    });
    server.Get("/api/annotations", [this, reply](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> seq;
      if (req.has_param("sequence")) seq = req.get_param_value("sequence");
      reply(res, get_annotations(seq));
    });
    server.Get("/api/progress", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, progress()); });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
  }

 private:
  const SequenceRegistry& sequences_;
  AnnotationStore& store_;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> static_dir;  // built annotator UI, served at /
};

/// Blocks until the server stops.
inline void serve(AnnotationService& service, const ServeOptions& opt, httplib::Server& server) {
  service.mount(server);
  if (opt.static_dir && !server.set_mount_point("/", opt.static_dir->string()))
    fail(ErrorCode::FileMissing, "UI directory not found: " + opt.static_dir->string());
  if (!server.listen(opt.host, opt.port))
    fail(ErrorCode::IoError, "cannot listen on " + opt.host + ":" + std::to_string(opt.port));
}

}  // namespace peakit
