#include "types.hpp"

#include <cmath>

namespace sp {

SamplerSchedule SamplerSchedule::linear(int steps, float lambda_split, float alpha_end) {
    SamplerSchedule s;
    s.steps = steps;
    s.lambda_split = lambda_split;
    s.alpha.resize(steps + 1);
    s.delta.resize(steps + 1);
    for (int t = 0; t <= steps; t++) {
        float a = 1.f - (1.f - alpha_end) * static_cast<float>(t) / static_cast<float>(steps);
        s.alpha[t] = a;
        s.delta[t] = std::sqrt(std::max(0.f, 1.f - a * a));
    }
    s.alpha[0] = 1.f;
    s.delta[0] = 0.f;
    return s;
}

void SamplerSchedule::validate() const {
    if (steps < 1)
        fail(ErrorCode::config, "schedule: step count must be >= 1");
    if (lambda_split < 0.f || lambda_split > 1.f)
        fail(ErrorCode::config, "schedule: lambda_split must be in [0,1]");
    if (alpha.size() != static_cast<size_t>(steps + 1) ||
        delta.size() != static_cast<size_t>(steps + 1))
        fail(ErrorCode::config, "schedule: alpha/delta must have length T+1");
    if (alpha[0] != 1.f || delta[0] != 0.f)
        fail(ErrorCode::config, "schedule: alpha[0] must be 1 and delta[0] must be 0");
    for (int t = 0; t <= steps; t++) {
        if (alpha[t] < 0.f || alpha[t] > 1.f || delta[t] < 0.f || delta[t] > 1.f)
            fail(ErrorCode::config, "schedule: coefficients must lie in [0,1]");
        if (t > 0 && (alpha[t] > alpha[t - 1] || delta[t] < delta[t - 1]))
            fail(ErrorCode::config, "schedule: alpha must be non-increasing and delta non-decreasing");
    }
}

int SamplerSchedule::lcg_steps() const {
    // relative epsilon absorbs float32 error in lambda so e.g. 0.6 * 50 counts as 30
    double x = static_cast<double>(lambda_split) * steps;
    double eps = x * 4.0 * 1.1920928955078125e-07 + 1e-12;
    return static_cast<int>(std::ceil(x - eps));
}

}  // namespace sp
