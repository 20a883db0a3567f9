#ifndef SP_VLM_HPP
#define SP_VLM_HPP

#include <memory>
#include <string>

#include <json.hpp>

namespace sp {

struct VlmRequest {
    std::string id;    // echoed back so concurrent callers can pair responses
    std::string task;  // extract_attributes | compose_prompts | match_attributes
    nlohmann::json payload;
};

// request/response client over a VLM endpoint; implementations throw
// vlm-unavailable when they cannot serve a task
class VlmClient {
public:
    virtual ~VlmClient() = default;
    virtual nlohmann::json complete(const VlmRequest& request) = 0;
    virtual std::string model_id() const = 0;
};

// deterministic offline stand-in: attribute extraction seeded by the subject
// class, attribute matching via the keyword rules
class MockVlm : public VlmClient {
public:
    explicit MockVlm(uint64_t seed = 0) : seed_(seed) {}
    nlohmann::json complete(const VlmRequest& request) override;
    std::string model_id() const override { return "mock-vlm"; }

private:
    uint64_t seed_;
};

// replays responses recorded in a JSON file keyed by task (or "task:id")
class FixtureVlm : public VlmClient {
public:
    explicit FixtureVlm(const std::string& fixture_path);
    nlohmann::json complete(const VlmRequest& request) override;
    std::string model_id() const override { return "fixture-vlm"; }

private:
    nlohmann::json fixtures_;
};

// POSTs {id, task, model, payload} as JSON to <endpoint>/v1/complete with a
// bearer token taken from api_key_env
class HttpVlm : public VlmClient {
public:
    HttpVlm(std::string endpoint, std::string model, std::string api_key_env);
    nlohmann::json complete(const VlmRequest& request) override;
    std::string model_id() const override { return model_; }

private:
    std::string endpoint_;
    std::string model_;
    std::string api_key_env_;
};

struct VlmSettings {
    std::string mode = "mock";  // mock | fixture | http | none
    std::string endpoint;
    std::string model = "mock-vlm";
    std::string api_key_env = "SP_VLM_API_KEY";
    std::string fixture_path;
    uint64_t seed = 0;
};

// nullptr when mode is "none"
std::shared_ptr<VlmClient> make_vlm_client(const VlmSettings& settings);

std::string base64_encode(const unsigned char* data, size_t n);

}  // namespace sp

#endif
