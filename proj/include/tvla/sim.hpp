#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tvla/image.hpp"
#include "tvla/rng.hpp"

// Planar peg-in-hole world. Units are millimetres and radians; x is lateral,
// z is vertical with the top face of the base at z = 0. The peg pose is the
// centre of its tip; the peg frame has +z running up the peg.
namespace tvla {

enum class PegShape { Circle, Square, Pentagon, ConnectorA, ConnectorB };
const char* peg_shape_name(PegShape s);

struct Vec2 {
  double x = 0.0;
  double z = 0.0;
};

// Peg outline: straight left/right sides x = x0 + slope * z (peg frame),
// an optional tip chamfer, length along the peg axis.
struct PegGeometry {
  double left0 = -5.0;
  double left_slope = 0.0;
  double right0 = 5.0;
  double right_slope = 0.0;
  double chamfer = 0.0;
  double length = 30.0;

  double left_at(double z) const { return left0 + left_slope * z; }
  double right_at(double z) const { return right0 + right_slope * z; }
  double width() const { return right0 - left0; }
  std::vector<Vec2> outline() const;  // convex, counter-clockwise
};

struct TaskSpec {
  std::string id;
  PegShape shape = PegShape::Circle;
  double clearance = 3.0;
  double hole_x = 0.0;  // nominal; reset jitters it per episode
  double depth_required = 10.0;
  std::string instruction;
  PegGeometry peg;

  double aperture() const { return peg.width() + 2.0 * clearance; }
  void validate() const;
};

// circle2, circle3, square2, square3, pentagon2, pentagon3, usb, hdmi.
const std::vector<TaskSpec>& benchmark_tasks();
// Throws LookupError naming the known ids.
const TaskSpec& task_by_id(const std::string& id);

enum class Contact { None, RimLeft, RimRight, Seated };
const char* contact_name(Contact c);

struct Pose {
  double x = 0.0;
  double z = 0.0;
  double theta = 0.0;
  friend bool operator==(const Pose&, const Pose&) = default;
};

struct Action {
  double dx = 0.0;
  double dz = 0.0;
  double dtheta = 0.0;
  friend bool operator==(const Action&, const Action&) = default;
};

inline constexpr double kMaxStepMm = 2.0;
inline constexpr double kMaxStepRad = 0.05;
inline constexpr double kDt = 0.1;
inline constexpr std::size_t kMaxSteps = 300;
inline constexpr double kStiffness = 500.0;  // N/m
inline constexpr double kDamping = 5.0;      // N s/m
inline constexpr double kFriction = 0.3;
inline constexpr double kMaxWindupMm = 30.0;
inline constexpr double kForceSaturation = 20.0;  // N
inline constexpr double kSlotDepth = 20.0;
// Tip depth below the rim past which a contact counts as inside the slot.
inline constexpr double kSeatedDepth = 0.25;

Action clamp_action(const Action& a);

struct StepInfo {
  double contact_force = 0.0;  // N
  Contact contact = Contact::None;
  bool contact_flag = false;
  double inserted_depth = 0.0;  // mm
  Vec2 contact_point;           // peg frame
  Vec2 shear;                   // tangential slip during contact, peg frame
};

struct SimState {
  TaskSpec task;
  double hole_x = 0.0;    // actual aperture centre this episode
  double parallax = 0.0;  // apparent displacement of the aperture in the camera
  Pose pose;
  Pose windup;  // commanded pose minus actual pose
  Pose velocity;
  Contact contact = Contact::None;
  std::size_t time = 0;
  bool terminated = false;
  bool succeeded = false;
};

struct Observation {
  Image rgb;
  Image tactile;
  Pose proprio;
  double contact_force = 0.0;
};

struct StepResult {
  Observation obs;
  StepInfo info;
};

struct ResetParams {
  double max_offset = 8.0;
  double max_tilt = 0.15;
  double start_height = 30.0;
  double hole_jitter = 4.0;
  double max_parallax = 4.0;
  // Overrides the drawn lateral offset (peg minus hole) when set.
  std::optional<double> offset;
};

class PegInsertionEnv {
 public:
  explicit PegInsertionEnv(TaskSpec task, ResetParams params = {});

  Observation reset(std::uint64_t seed);
  // Places the world in an explicit state (tests, probe generation).
  void set_state(const SimState& s) { state_ = s; }
  StepResult step(const Action& action);

  const SimState& state() const { return state_; }
  const TaskSpec& task() const { return task_; }
  Observation observe(const StepInfo& info) const;

 private:
  TaskSpec task_;
  ResetParams params_;
  SimState state_;
};

// Static obstacles (convex, counter-clockwise) for an episode's aperture.
std::vector<std::vector<Vec2>> base_polygons(const TaskSpec& task, double hole_x);
std::vector<Vec2> peg_polygon(const PegGeometry& peg, const Pose& pose);

// Minimum translation that separates `moving` from `fixed`: depth along
// unit normal (pointing from fixed to moving). Depth 0 when disjoint.
struct Penetration {
  double depth = 0.0;
  Vec2 normal;
  Vec2 point;  // world contact point
};
Penetration penetration(const std::vector<Vec2>& moving, const std::vector<Vec2>& fixed);

double inserted_depth(const SimState& s);

inline constexpr std::size_t kRgbSize = 48;
inline constexpr std::size_t kTactileSize = 32;

Image render_rgb(const SimState& s);
Image render_tactile(const SimState& s, const StepInfo& info);
// Gel image with no contact.
const Image& tactile_reference();

enum class CameraMode { Clean, Dim80, Freeze50 };
const char* camera_mode_name(CameraMode m);
CameraMode parse_camera_mode(const std::string& s);

// Dim80 scales pixels by 0.2. Freeze50 delivers the new frame with
// probability 0.5 and otherwise repeats the last delivered frame; with no
// previous frame it always delivers.
Image degrade_camera(const Image& frame, CameraMode mode, Rng& rng, const Image* last_delivered);

// Teleoperator stand-in. Aims at the aperture where the camera shows it
// (parallax included) with a per-episode aim error that scales with the
// noise level, descends, and on a firm contact short of the slot moves away
// from the side the touch indicates: either sliding along the rim under
// light pressure or lifting and shifting. Each such move also shifts where
// it aims afterwards.
class ScriptedExpert {
 public:
  ScriptedExpert(const TaskSpec& task, double noise_scale, std::uint64_t seed);
  Action act(const SimState& s, const StepInfo& last);
  double aim_error() const { return aim_; }

  static constexpr double kAimGain = 12.0;
  static constexpr double kHover = 8.0;
  static constexpr double kFastDescent = 1.2;
  static constexpr double kSlowDescent = 0.4;
  static constexpr double kReactForce = 1.0;
  // Contacts shallower than this are treated as a missed aperture.
  static constexpr double kStuckDepth = 2.0;
  // Share of episodes where the operator lifts and retries instead of
  // sliding along the rim.
  static constexpr double kRetryProb = 0.3;
  static constexpr double kSlideStep = 1.5;
  static constexpr double kPress = 0.3;

 private:
  double noise_;
  Rng rng_;
  double aim_ = 0.0;
  bool retry_ = false;
  int lift_left_ = 0;
  double shift_ = 0.0;
  double belief_ = 0.0;
};

struct TraceStep {
  Pose pose;
  StepInfo info;
};

struct EpisodeOutcome {
  bool success = false;
  bool direct = false;
  bool contact = false;
  std::size_t steps = 0;
  double max_force = 0.0;
  double time_s = 0.0;
  std::size_t retreats = 0;
};

// A retreat is any step after the first contact whose z rises by > 0.5 mm.
EpisodeOutcome episode_outcome(const std::vector<TraceStep>& trace, double depth_required,
                               std::size_t max_steps = kMaxSteps);

}  // namespace tvla
