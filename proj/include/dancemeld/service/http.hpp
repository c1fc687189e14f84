#pragma once

#include <string>

#include "dancemeld/service/api.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro clashes with
// Eigen parameter names.
#include <httplib.h>

namespace dancemeld::service {

inline void send(httplib::Response& res, const Reply& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

inline Reply parse_body(const httplib::Request& req, json& out) {
  try {
    out = req.body.empty() ? json::object() : json::parse(req.body);
    return {200, {}};
  } catch (const json::parse_error& e) {
    return {400, {{"v", kApiVersion}, {"error", "InvalidArgument"}, {"message", std::string("malformed JSON: ") + e.what()}}};
  }
}

// Registers the API routes (and optional static UI assets) on `server`.
inline void mount(httplib::Server& server, Service& service, const io::fs::path& static_dir = {}) {
  server.Get("/api/health", [&](const httplib::Request&, httplib::Response& res) { send(res, service.health()); });
  server.Get("/api/codebooks", [&](const httplib::Request&, httplib::Response& res) {
    send(res, service.codebooks());
  });
  server.Post("/api/generate", [&](const httplib::Request& req, httplib::Response& res) {
    json body;
    if (auto bad = parse_body(req, body); bad.status != 200) return send(res, bad);
    send(res, service.generate(body));
  });
  server.Get(R"(/api/session/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, service.get(req.matches[1]));
  });
  server.Post(R"(/api/session/([^/]+)/edit)", [&](const httplib::Request& req, httplib::Response& res) {
    json body;
    if (auto bad = parse_body(req, body); bad.status != 200) return send(res, bad);
    send(res, service.edit(req.matches[1], body));
  });
  if (!static_dir.empty()) server.set_mount_point("/", static_dir.string());
}

}  // namespace dancemeld::service
