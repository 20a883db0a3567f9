#ifndef SP_ERROR_HPP
#define SP_ERROR_HPP

#include <stdexcept>
#include <string>

namespace sp {

enum class ErrorCode {
    config,
    invalid_argument,
    shape_mismatch,
    empty_mask,
    dimension_mismatch,
    step_out_of_range,
    zero_eliminate_direction,
    backbone_unavailable,
    vlm_unavailable,
    malformed_vlm_response,
    insufficient_combinations,
    insufficient_backgrounds,
    id_misalignment,
    divergence,
    io,
    pipeline,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}

    ErrorCode code() const { return code_; }

    // config errors map to exit code 2, everything else to 3
    bool is_config() const {
        return code_ == ErrorCode::config || code_ == ErrorCode::invalid_argument;
    }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
    throw Error(code, msg);
}

}  // namespace sp

#endif
