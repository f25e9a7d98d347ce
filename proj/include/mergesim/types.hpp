#pragma once

#include <limits>
#include <stdexcept>
#include <string>

namespace mergesim {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Lane indexing: 0 = rightmost mainline lane, higher = further left.
// The on-ramp sits to the right of lane 0.
inline constexpr int kRampLane = -1;

enum class VehicleClass { HV, CAV };
enum class Origin { Mainline, Ramp };
enum class DriverStyle { Aggressive = 0, Normal = 1, Cautious = 2 };

enum class ControllerMode { Rule, GameOnly, LearnOnly, LearnGame, TrustFull };

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ContractViolation : std::logic_error {
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

struct IdmParams {
  double a = 1.0;    // max acceleration, m/s^2
  double b = 1.5;    // comfortable deceleration, m/s^2
  double T = 1.2;    // desired time headway, s
  double s0 = 2.0;   // minimum spacing, m
  double v_d = 30.0; // desired speed, m/s
};

struct MobilParams {
  double p = 0.2;           // politeness factor
  double delta_a_th = 0.3;  // advantage threshold, m/s^2
  double b_safe = 4.0;      // safe braking limit, m/s^2
};

// Hard physical braking clamp on IDM output; the model itself is unbounded
// below as gap -> 0.
inline constexpr double kEmergencyDecel = 9.0;

struct VehicleState {
  int id = -1;
  VehicleClass cls = VehicleClass::HV;
  int lane = 0;
  double position = 0.0;  // front bumper chainage, m
  double speed = 0.0;     // m/s, never negative
  double accel = 0.0;     // last commanded acceleration, m/s^2
  double prev_accel = 0.0;
  double length = 5.0;
  double lane_change_cooldown = 0.0;  // s remaining
  Origin origin = Origin::Mainline;
  double spawn_time = 0.0;
  DriverStyle style = DriverStyle::Normal;
  IdmParams idm;
  MobilParams mobil;
  bool collided = false;

  double rear() const { return position - length; }
};

inline const char* to_string(ControllerMode m) {
  switch (m) {
    case ControllerMode::Rule: return "rule";
    case ControllerMode::GameOnly: return "game_only";
    case ControllerMode::LearnOnly: return "learn_only";
    case ControllerMode::LearnGame: return "learn_game";
    case ControllerMode::TrustFull: return "trust_full";
  }
  return "?";
}

inline ControllerMode controller_mode_from_string(const std::string& s) {
  if (s == "rule") return ControllerMode::Rule;
  if (s == "game_only") return ControllerMode::GameOnly;
  if (s == "learn_only") return ControllerMode::LearnOnly;
  if (s == "learn_game") return ControllerMode::LearnGame;
  if (s == "trust_full") return ControllerMode::TrustFull;
  throw ConfigError("unknown controller mode: " + s);
}

}  // namespace mergesim
