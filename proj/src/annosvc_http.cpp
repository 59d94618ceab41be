// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "httplib.h"
#include "imad/annosvc.hpp"

namespace imad::annosvc {

using labels::Taxonomy;

namespace {

constexpr const char* kJson = "application/json";

void send_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(Json{{"error", message}}.dump(), kJson);
}

// Maps service exceptions onto status codes.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
    try {
        fn();
    } catch (const UnknownRaterError& e) {
        send_error(res, 403, e.what());
    } catch (const UnknownCandidateError& e) {
        send_error(res, 404, e.what());
    } catch (const DuplicateLabelError& e) {
        send_error(res, 409, e.what());
    } catch (const IllegalLabelError& e) {
        send_error(res, 422, e.what());
    } catch (const NoCompleteItemsError& e) {
        send_error(res, 422, e.what());
    } catch (const ValidationError& e) {
        send_error(res, 400, e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

Taxonomy taxonomy_param(const httplib::Request& req) {
    if (!req.has_param("taxonomy")) throw ValidationError("missing taxonomy parameter");
    return labels::parse_taxonomy(req.get_param_value("taxonomy"));
}

std::string body_string(const Json& body, const char* field) {
    if (!body.contains(field) || !body.at(field).is_string())
        throw ValidationError(std::string("body field \"") + field + "\" must be a string");
    return body.at(field).get<std::string>();
}

}  // namespace

struct HttpServer::Impl {
    httplib::Server server;
};

HttpServer::HttpServer(AnnotationService& service, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>()) {
    auto& s = impl_->server;
    s.Get("/task", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            if (!req.has_param("rater")) throw ValidationError("missing rater parameter");
            const auto taxonomy = taxonomy_param(req);
            auto task = service.next_task(req.get_param_value("rater"), taxonomy);
            if (!task) {
                res.status = 204;
                return;
            }
            res.set_content(to_json(*task).dump(), kJson);
        });
    });
    s.Post("/label", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            Json body;
            try {
                body = Json::parse(req.body);
            } catch (const Json::parse_error& e) {
                throw ValidationError(std::string("malformed JSON body: ") + e.what());
            }
            if (!body.is_object()) throw ValidationError("body must be a JSON object");
            const auto taxonomy = labels::parse_taxonomy(body_string(body, "taxonomy"));
            auto record = service.submit(body_string(body, "rater_id"), body_string(body, "candidate_id"),
                                         body_string(body, "label"), taxonomy);
            res.status = 201;
            res.set_content(labels::to_json(record).dump(), kJson);
        });
    });
    s.Get("/agreement", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { res.set_content(to_json(service.agreement(taxonomy_param(req))).dump(), kJson); });
    });
    s.Get("/export", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::optional<Taxonomy> taxonomy;
            if (req.has_param("taxonomy")) taxonomy = taxonomy_param(req);
            res.set_content(labels_text(service.export_labels(taxonomy)), "application/x-ndjson");
        });
    });
    s.Get("/progress", [&service](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { res.set_content(service.progress().dump(), kJson); });
    });
    if (static_dir && !s.set_mount_point("/", static_dir->string()))
        throw IoError("static directory " + static_dir->string() + " does not exist");
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw IoError("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace imad::annosvc
