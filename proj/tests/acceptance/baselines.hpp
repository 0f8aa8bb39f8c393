#pragma once

// Pinned first-run regression baselines. Regenerate with
//   chc_acceptance --baseline
// after an intentional scheme change and paste the block below.

namespace baselines {

inline constexpr double kCarest2ClampedMax = 0.0;
inline constexpr double kCarest2SimpleMax = 0.0;
inline constexpr double kCarest1ClampedMax = 0.0;
inline constexpr double kCarest1SimpleMax = 0.0;
inline constexpr double kStruct2Clamped = 0.0;
inline constexpr double kStruct2Simple = 0.0;
inline constexpr double kStruct1Clamped = 0.0;
inline constexpr double kStruct1Simple = 0.0;
inline constexpr double kCarest2Singleton = 0.0;
inline constexpr double kCarest1Singleton = 0.0;

}  // namespace baselines
