#include "vlm.hpp"

#include <cstdlib>
#include <fstream>

#include <httplib.h>

#include "adm_types.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "tas.hpp"

namespace sp {

using nlohmann::json;

std::string base64_encode(const unsigned char* data, size_t n) {
    static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (size_t i = 0; i < n; i += 3) {
        uint32_t v = static_cast<uint32_t>(data[i]) << 16;
        if (i + 1 < n) v |= static_cast<uint32_t>(data[i + 1]) << 8;
        if (i + 2 < n) v |= data[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(i + 1 < n ? tbl[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < n ? tbl[v & 63] : '=');
    }
    return out;
}

/*---------------------------------- MockVlm ---------------------------------*/

nlohmann::json MockVlm::complete(const VlmRequest& request) {
    if (request.task == "extract_attributes") {
        std::string cls = request.payload.value("subject_class", "");
        Rng rng(splitmix64(seed_ ^ hash_tag(cls)));
        json cats = json::object();
        for (const auto& cat : dictionary_categories()) {
            const auto& lex = tas::category_lexicon(cat);
            int n = 1 + static_cast<int>(rng.uniform_int(0, 1));
            json words = json::array();
            for (int i = 0; i < n; i++)
                words.push_back(lex[static_cast<size_t>(rng.uniform_int(0, lex.size() - 1))]);
            cats[cat] = words;
        }
        return json{{"id", request.id}, {"categories", cats}};
    }
    if (request.task == "match_attributes") {
        AttributeDictionary dict;
        dict.subject_class = request.payload.value("subject_class", "");
        for (auto& [k, v] : request.payload.at("dictionary").items())
            for (const auto& w : v) dict.categories[k].push_back(w.get<std::string>());
        auto m = tas::match_attributes_keyword(request.payload.at("prompt").get<std::string>(),
                                               dict, tas::kDefaultEliminateTemplate);
        return json{{"id", request.id},
                    {"matched_words", m.matched_words},
                    {"category", m.category}};
    }
    fail(ErrorCode::vlm_unavailable, "mock vlm does not serve task '" + request.task + "'");
}

/*--------------------------------- FixtureVlm -------------------------------*/

FixtureVlm::FixtureVlm(const std::string& fixture_path) {
    std::ifstream in(fixture_path);
    if (!in) fail(ErrorCode::config, "vlm fixture file not found: " + fixture_path);
    try {
        in >> fixtures_;
    } catch (const std::exception& e) {
        fail(ErrorCode::config, "vlm fixture file is not valid JSON: " + std::string(e.what()));
    }
}

nlohmann::json FixtureVlm::complete(const VlmRequest& request) {
    std::string keyed = request.task + ":" + request.id;
    if (fixtures_.contains(keyed)) return fixtures_[keyed];
    if (fixtures_.contains(request.task)) return fixtures_[request.task];
    fail(ErrorCode::vlm_unavailable, "no fixture recorded for task '" + request.task + "'");
}

/*----------------------------------- HttpVlm --------------------------------*/

HttpVlm::HttpVlm(std::string endpoint, std::string model, std::string api_key_env)
    : endpoint_(std::move(endpoint)), model_(std::move(model)),
      api_key_env_(std::move(api_key_env)) {}

nlohmann::json HttpVlm::complete(const VlmRequest& request) {
    if (endpoint_.empty()) fail(ErrorCode::vlm_unavailable, "vlm endpoint not configured");
    json body{{"id", request.id}, {"task", request.task}, {"model", model_},
              {"payload", request.payload}};
    httplib::Client client(endpoint_);
    client.set_read_timeout(60, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(api_key_env_.c_str()))
        headers.emplace("Authorization", std::string("Bearer ") + key);
    auto res = client.Post("/v1/complete", headers, body.dump(), "application/json");
    if (!res || res->status != 200)
        fail(ErrorCode::vlm_unavailable,
             "vlm request failed: " + (res ? "status " + std::to_string(res->status)
                                           : "no connection to " + endpoint_));
    json parsed;
    try {
        parsed = json::parse(res->body);
    } catch (const std::exception&) {
        fail(ErrorCode::malformed_vlm_response, "vlm response is not valid JSON");
    }
    if (parsed.contains("id") && parsed["id"] != request.id)
        fail(ErrorCode::malformed_vlm_response, "vlm response id does not match request id");
    return parsed;
}

std::shared_ptr<VlmClient> make_vlm_client(const VlmSettings& s) {
    if (s.mode == "none") return nullptr;
    if (s.mode == "mock") return std::make_shared<MockVlm>(s.seed);
    if (s.mode == "fixture") return std::make_shared<FixtureVlm>(s.fixture_path);
    if (s.mode == "http") {
        std::string endpoint = s.endpoint;
        if (const char* env = std::getenv("SP_VLM_ENDPOINT")) endpoint = env;
        return std::make_shared<HttpVlm>(endpoint, s.model, s.api_key_env);
    }
    fail(ErrorCode::config, "unknown vlm mode: " + s.mode);
}

}  // namespace sp
