// Copyright 2026 The mrt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// HTTP/1.1 JSON binding of DecisionService.

#include <string>

// Eigen must come first: httplib pulls in <resolv.h>, whose _res macro
// collides with Eigen parameter names.
#include "mrt/service.hpp"

#include <httplib.h>

namespace mrt {

inline void mount_routes(httplib::Server& server, DecisionService& service) {
  auto reply = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    if (r.status != 204) res.set_content(r.body.dump(), "application/json");
  };
  auto with_body = [reply](auto handler) {
    return [reply, handler](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::parse_error& e) {
        reply(res, {422, {{"error", std::string("malformed JSON: ") + e.what()}}});
        return;
      }
      reply(res, handler(body));
    };
  };
  server.Post("/v1/decision", with_body([&service](const nlohmann::json& b) { return service.decide(b); }));
  server.Post("/v1/reward", with_body([&service](const nlohmann::json& b) { return service.record_reward(b); }));
  server.Post("/v1/update/posterior", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.update_posterior());
  });
  server.Post("/v1/update/hyper", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.update_hyper());
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(nlohmann::json{{"error", msg}}.dump(), "application/json");
  });
}

/// Splits "host:port" (port required).
inline bool parse_bind_address(const std::string& addr, std::string& host, int& port) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon + 1 >= addr.size()) return false;
  host = addr.substr(0, colon);
  if (host.empty()) host = "0.0.0.0";
  try {
    std::size_t used = 0;
    port = std::stoi(addr.substr(colon + 1), &used);
    if (used != addr.size() - colon - 1) return false;
  } catch (...) {
    return false;
  }
  return port >= 0 && port <= 65535;
}

}  // namespace mrt
