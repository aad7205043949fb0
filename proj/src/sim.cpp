#include "tvla/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tvla/errors.hpp"

namespace tvla {

const char* peg_shape_name(PegShape s) {
  switch (s) {
    case PegShape::Circle: return "circle";
    case PegShape::Square: return "square";
    case PegShape::Pentagon: return "pentagon";
    case PegShape::ConnectorA: return "connector_a";
    case PegShape::ConnectorB: return "connector_b";
  }
  return "circle";
}

const char* contact_name(Contact c) {
  switch (c) {
    case Contact::None: return "none";
    case Contact::RimLeft: return "rim_left";
    case Contact::RimRight: return "rim_right";
    case Contact::Seated: return "seated";
  }
  return "none";
}

std::vector<Vec2> PegGeometry::outline() const {
  const double c = chamfer;
  if (c <= 0.0) return {{left0, 0.0}, {right0, 0.0}, {right_at(length), length}, {left_at(length), length}};
  return {{left0 + c, 0.0},           {right0 - c, 0.0},           {right_at(c), c},
          {right_at(length), length}, {left_at(length), length}, {left_at(c), c}};
}

void TaskSpec::validate() const {
  if (!(clearance > 0.0)) throw ConfigError("task " + id + ": clearance must be positive");
  if (!(peg.width() > 0.0) || !(peg.length > kSlotDepth)) throw ConfigError("task " + id + ": bad peg geometry");
  if (!(depth_required > 0.0) || depth_required > kSlotDepth) {
    throw ConfigError("task " + id + ": insertion depth must lie in (0, slot depth]");
  }
}

namespace {

TaskSpec make_task(std::string id, PegShape shape, double clearance, std::string instruction, PegGeometry g) {
  TaskSpec t;
  t.id = std::move(id);
  t.shape = shape;
  t.clearance = clearance;
  t.instruction = std::move(instruction);
  t.peg = g;
  return t;
}

PegGeometry rect(double w, double chamfer) {
  PegGeometry g;
  g.left0 = -w / 2;
  g.right0 = w / 2;
  g.chamfer = chamfer;
  return g;
}

}  // namespace

const std::vector<TaskSpec>& benchmark_tasks() {
  static const std::vector<TaskSpec> tasks = [] {
    const PegGeometry circle = rect(10.0, 0.5);
    const PegGeometry square = rect(12.0, 0.0);
    const PegGeometry pentagon = rect(11.0, 2.0);
    PegGeometry usb;
    usb.left0 = -6.0;
    usb.right0 = 4.0;
    usb.right_slope = 2.0 / 30.0;
    PegGeometry hdmi;
    hdmi.left0 = -6.0;
    hdmi.left_slope = -1.0 / 30.0;
    hdmi.right0 = 5.0;
    hdmi.right_slope = 2.0 / 30.0;
    hdmi.chamfer = 0.5;
    const std::string peg_text = " peg into the base";
    return std::vector<TaskSpec>{
        make_task("circle2", PegShape::Circle, 2.0, "insert the circle" + peg_text, circle),
        make_task("circle3", PegShape::Circle, 3.0, "insert the circle" + peg_text, circle),
        make_task("square2", PegShape::Square, 2.0, "insert the square" + peg_text, square),
        make_task("square3", PegShape::Square, 3.0, "insert the square" + peg_text, square),
        make_task("pentagon2", PegShape::Pentagon, 2.0, "insert the pentagon" + peg_text, pentagon),
        make_task("pentagon3", PegShape::Pentagon, 3.0, "insert the pentagon" + peg_text, pentagon),
        make_task("usb", PegShape::ConnectorA, 1.0, "insert the usb connector into the port", usb),
        make_task("hdmi", PegShape::ConnectorB, 1.0, "insert the hdmi connector into the port", hdmi),
    };
  }();
  return tasks;
}

const TaskSpec& task_by_id(const std::string& id) {
  std::string known;
  for (const auto& t : benchmark_tasks()) {
    if (t.id == id) return t;
    known += (known.empty() ? "" : ", ") + t.id;
  }
  throw LookupError("unknown task '" + id + "' (known: " + known + ")");
}

Action clamp_action(const Action& a) {
  if (!std::isfinite(a.dx) || !std::isfinite(a.dz) || !std::isfinite(a.dtheta)) {
    throw NumericError("non-finite action");
  }
  return {std::clamp(a.dx, -kMaxStepMm, kMaxStepMm), std::clamp(a.dz, -kMaxStepMm, kMaxStepMm),
          std::clamp(a.dtheta, -kMaxStepRad, kMaxStepRad)};
}

std::vector<std::vector<Vec2>> base_polygons(const TaskSpec& task, double hole_x) {
  const double w = 200.0;
  const double c = task.clearance;
  const PegGeometry& g = task.peg;
  const double lb = hole_x + g.left_at(0.0) - c;
  const double lt = hole_x + g.left_at(kSlotDepth) - c;
  const double rb = hole_x + g.right_at(0.0) + c;
  const double rt = hole_x + g.right_at(kSlotDepth) + c;
  return {
      {{-w, -kSlotDepth}, {lb, -kSlotDepth}, {lt, 0.0}, {-w, 0.0}},
      {{rb, -kSlotDepth}, {w, -kSlotDepth}, {w, 0.0}, {rt, 0.0}},
      {{-w, -kSlotDepth - 10.0}, {w, -kSlotDepth - 10.0}, {w, -kSlotDepth}, {-w, -kSlotDepth}},
  };
}

std::vector<Vec2> peg_polygon(const PegGeometry& peg, const Pose& pose) {
  const double cs = std::cos(pose.theta);
  const double sn = std::sin(pose.theta);
  std::vector<Vec2> out;
  for (const Vec2& v : peg.outline()) out.push_back({pose.x + v.x * cs - v.z * sn, pose.z + v.x * sn + v.z * cs});
  return out;
}

namespace {

bool inside(const std::vector<Vec2>& poly, Vec2 p) {
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2 a = poly[i];
    const Vec2 b = poly[(i + 1) % poly.size()];
    if ((b.x - a.x) * (p.z - a.z) - (b.z - a.z) * (p.x - a.x) < 0.0) return false;
  }
  return true;
}

Vec2 to_peg_frame(const Pose& pose, Vec2 w) {
  const double cs = std::cos(pose.theta);
  const double sn = std::sin(pose.theta);
  const double dx = w.x - pose.x;
  const double dz = w.z - pose.z;
  return {dx * cs + dz * sn, -dx * sn + dz * cs};
}

Vec2 rotate_to_peg(double theta, Vec2 v) {
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  return {v.x * cs + v.z * sn, -v.x * sn + v.z * cs};
}

}  // namespace

Penetration penetration(const std::vector<Vec2>& moving, const std::vector<Vec2>& fixed) {
  Penetration best;
  best.depth = std::numeric_limits<double>::infinity();
  for (const auto* poly : {&moving, &fixed}) {
    for (std::size_t i = 0; i < poly->size(); ++i) {
      const Vec2 a = (*poly)[i];
      const Vec2 b = (*poly)[(i + 1) % poly->size()];
      const double len = std::hypot(b.x - a.x, b.z - a.z);
      if (len == 0.0) continue;
      const Vec2 n{(b.z - a.z) / len, -(b.x - a.x) / len};
      double min_m = std::numeric_limits<double>::infinity(), max_m = -min_m;
      double min_f = min_m, max_f = -min_m;
      for (const Vec2& v : moving) {
        const double p = v.x * n.x + v.z * n.z;
        min_m = std::min(min_m, p);
        max_m = std::max(max_m, p);
      }
      for (const Vec2& v : fixed) {
        const double p = v.x * n.x + v.z * n.z;
        min_f = std::min(min_f, p);
        max_f = std::max(max_f, p);
      }
      const double push_pos = max_f - min_m;
      const double push_neg = max_m - min_f;
      if (push_pos <= 0.0 || push_neg <= 0.0) return {};
      if (push_pos < best.depth) best = {push_pos, n, {}};
      if (push_neg < best.depth) best = {push_neg, {-n.x, -n.z}, {}};
    }
  }
  Vec2 sum;
  int count = 0;
  for (const Vec2& v : moving) {
    if (inside(fixed, v)) {
      sum.x += v.x;
      sum.z += v.z;
      ++count;
    }
  }
  if (count == 0) {
    for (const Vec2& v : fixed) {
      if (inside(moving, v)) {
        sum.x += v.x;
        sum.z += v.z;
        ++count;
      }
    }
  }
  if (count > 0) {
    best.point = {sum.x / count, sum.z / count};
  } else {
    for (const Vec2& v : moving) {
      sum.x += v.x;
      sum.z += v.z;
    }
    best.point = {sum.x / static_cast<double>(moving.size()), sum.z / static_cast<double>(moving.size())};
  }
  return best;
}

double inserted_depth(const SimState& s) {
  double lowest = std::numeric_limits<double>::infinity();
  for (const Vec2& v : peg_polygon(s.task.peg, s.pose)) lowest = std::min(lowest, v.z);
  return std::max(0.0, -lowest);
}

PegInsertionEnv::PegInsertionEnv(TaskSpec task, ResetParams params) : task_(std::move(task)), params_(params) {
  task_.validate();
}

Observation PegInsertionEnv::reset(std::uint64_t seed) {
  Rng rng(seed, "sim/reset");
  SimState s;
  s.task = task_;
  s.hole_x = task_.hole_x + rng.uniform(-params_.hole_jitter, params_.hole_jitter);
  s.parallax = rng.uniform(-params_.max_parallax, params_.max_parallax);
  const double offset = rng.uniform(-params_.max_offset, params_.max_offset);
  const double tilt = rng.uniform(-params_.max_tilt, params_.max_tilt);
  s.pose = {s.hole_x + params_.offset.value_or(offset), params_.start_height, tilt};
  state_ = s;
  return observe(StepInfo{});
}

Observation PegInsertionEnv::observe(const StepInfo& info) const {
  return Observation{render_rgb(state_), render_tactile(state_, info), state_.pose, info.contact_force};
}

StepResult PegInsertionEnv::step(const Action& action) {
  if (state_.terminated) throw StateError("step called on a terminated episode");
  const Action a = clamp_action(action);
  SimState& s = state_;
  Pose w{std::clamp(s.windup.x + a.dx, -kMaxWindupMm, kMaxWindupMm),
         std::clamp(s.windup.z + a.dz, -kMaxWindupMm, kMaxWindupMm), s.windup.theta + a.dtheta};
  const Pose d{std::clamp(w.x, -kMaxStepMm, kMaxStepMm), std::clamp(w.z, -kMaxStepMm, kMaxStepMm),
               std::clamp(w.theta, -kMaxStepRad, kMaxStepRad)};
  const Pose start = s.pose;
  const auto walls = base_polygons(s.task, s.hole_x);

  constexpr int kSubsteps = 4;
  Pose pos = start;
  bool collided = false;
  double deepest = 0.0;
  Vec2 contact_world;
  Vec2 slip;
  for (int k = 0; k < kSubsteps; ++k) {
    const Vec2 move{d.x / kSubsteps, d.z / kSubsteps};
    pos.x += move.x;
    pos.z += move.z;
    pos.theta += d.theta / kSubsteps;
    for (int iter = 0; iter < 4; ++iter) {
      bool any = false;
      for (const auto& wall : walls) {
        const Penetration p = penetration(peg_polygon(s.task.peg, pos), wall);
        if (p.depth <= 1e-12) continue;
        any = true;
        collided = true;
        pos.x += p.normal.x * p.depth;
        pos.z += p.normal.z * p.depth;
        if (iter == 0) {
          const double along = move.x * p.normal.x + move.z * p.normal.z;
          Vec2 t{move.x - along * p.normal.x, move.z - along * p.normal.z};
          const double tn = std::hypot(t.x, t.z);
          if (tn > 0.0) {
            const double keep = std::max(0.0, tn - kFriction * p.depth) / tn;
            pos.x -= t.x * (1.0 - keep);
            pos.z -= t.z * (1.0 - keep);
            slip.x += t.x * keep;
            slip.z += t.z * keep;
          }
        }
        if (p.depth >= deepest) {
          deepest = p.depth;
          contact_world = p.point;
        }
      }
      if (!any) break;
    }
  }
  if (!collided) pos = {start.x + d.x, start.z + d.z, start.theta + d.theta};

  const Pose disp{pos.x - start.x, pos.z - start.z, pos.theta - start.theta};
  s.pose = pos;
  s.windup = {w.x - disp.x, w.z - disp.z, w.theta - disp.theta};
  s.velocity = {disp.x / kDt, disp.z / kDt, disp.theta / kDt};
  s.time += 1;

  StepInfo info;
  info.inserted_depth = inserted_depth(s);
  if (collided) {
    const double windup_m = std::hypot(s.windup.x, s.windup.z) * 1e-3;
    const double speed_m = std::hypot(s.velocity.x, s.velocity.z) * 1e-3;
    info.contact_force = kStiffness * windup_m + kDamping * speed_m;
    info.contact_flag = true;
    if (info.inserted_depth > kSeatedDepth) {
      info.contact = Contact::Seated;
    } else {
      info.contact = contact_world.x < s.hole_x ? Contact::RimLeft : Contact::RimRight;
    }
    info.contact_point = to_peg_frame(s.pose, contact_world);
    info.shear = rotate_to_peg(s.pose.theta, slip);
  }
  s.contact = info.contact;
  if (info.inserted_depth >= s.task.depth_required) {
    s.terminated = true;
    s.succeeded = true;
  } else if (s.time >= kMaxSteps) {
    s.terminated = true;
  }
  return StepResult{observe(info), info};
}

namespace {

constexpr double kViewLeft = -48.0;
constexpr double kViewTop = 72.0;
constexpr double kMmPerPixel = 2.0;

struct Rgb {
  double r, g, b;
};

Rgb peg_color(PegShape s) {
  switch (s) {
    case PegShape::Circle: return {0.85, 0.20, 0.15};
    case PegShape::Square: return {0.20, 0.70, 0.25};
    case PegShape::Pentagon: return {0.20, 0.35, 0.85};
    case PegShape::ConnectorA: return {0.95, 0.60, 0.10};
    case PegShape::ConnectorB: return {0.60, 0.25, 0.75};
  }
  return {1.0, 1.0, 1.0};
}

void put(Image& im, std::size_t y, std::size_t x, Rgb c) {
  im.at(y, x, 0) = c.r;
  im.at(y, x, 1) = c.g;
  im.at(y, x, 2) = c.b;
}

}  // namespace

Image render_rgb(const SimState& s) {
  Image im(kRgbSize, kRgbSize, 3);
  const auto walls = base_polygons(s.task, s.hole_x + s.parallax);
  const auto peg = peg_polygon(s.task.peg, s.pose);
  const double gw = s.task.peg.width() / 2.0 + 3.0;
  const double len = s.task.peg.length;
  PegGeometry grip;
  grip.left0 = -gw;
  grip.right0 = gw;
  grip.length = 8.0;
  const double cs = std::cos(s.pose.theta);
  const double sn = std::sin(s.pose.theta);
  const Pose grip_pose{s.pose.x - (len - 8.0) * sn, s.pose.z + (len - 8.0) * cs, s.pose.theta};
  const auto gripper = peg_polygon(grip, grip_pose);
  const Rgb peg_rgb = peg_color(s.task.shape);
  for (std::size_t r = 0; r < kRgbSize; ++r) {
    for (std::size_t c = 0; c < kRgbSize; ++c) {
      const Vec2 p{kViewLeft + (static_cast<double>(c) + 0.5) * kMmPerPixel,
                   kViewTop - (static_cast<double>(r) + 0.5) * kMmPerPixel};
      Rgb col{0.92, 0.92, 0.96};
      if (p.z <= 0.0 && p.z >= -kSlotDepth - 10.0) col = {0.10, 0.10, 0.12};
      for (const auto& wall : walls) {
        if (inside(wall, p)) col = {0.45, 0.45, 0.50};
      }
      if (inside(peg, p)) col = peg_rgb;
      if (inside(gripper, p)) col = {0.25, 0.25, 0.28};
      put(im, r, c, col);
    }
  }
  return im;
}

namespace {

constexpr double kGelCentre = 16.0;

Image make_tactile_reference() {
  Image im(kTactileSize, kTactileSize, 3);
  const double dots_u[] = {-15.0, -9.0, -3.0, 3.0, 9.0, 15.0};
  const double dots_v[] = {4.0, 10.0, 16.0, 22.0, 28.0};
  for (std::size_t r = 0; r < kTactileSize; ++r) {
    for (std::size_t c = 0; c < kTactileSize; ++c) {
      const double u = static_cast<double>(c) + 0.5 - kGelCentre;
      const double v = static_cast<double>(r) + 0.5;
      Rgb col{0.30, 0.26, 0.36};
      for (double du : dots_u) {
        for (double dv : dots_v) {
          if ((u - du) * (u - du) + (v - dv) * (v - dv) <= 1.5) col = {0.10, 0.10, 0.14};
        }
      }
      put(im, r, c, col);
    }
  }
  return im;
}

}  // namespace

const Image& tactile_reference() {
  static const Image ref = make_tactile_reference();
  return ref;
}

Image render_tactile(const SimState& s, const StepInfo& info) {
  Image im = tactile_reference();
  if (!(info.contact_force > 0.0)) return im;
  const double intensity = std::min(info.contact_force / kForceSaturation, 1.0);
  const PegGeometry& g = s.task.peg;
  const double half = g.width() / 2.0 + 1.0;
  const double bu = std::clamp(info.contact_point.x / half * 12.0, -15.0, 15.0);
  const double bv = std::clamp(30.0 - info.contact_point.z * (26.0 / g.length), 1.0, 31.0);
  const double slip = std::hypot(info.shear.x, info.shear.z);
  double sx = 1.0, sz = 0.0;
  if (slip > 1e-9) {
    sx = info.shear.x / slip;
    sz = info.shear.z / slip;
  }
  const double cs = std::cos(s.pose.theta);
  const double sn = std::sin(s.pose.theta);
  const double ex = sx * cs - sz * sn;
  const double ez = sx * sn + sz * cs;
  const double minor = 1.6;
  const double major = minor * (1.0 + 2.0 * std::min(slip, 1.0));
  const Rgb tint{0.65, 0.45, 0.30};
  for (std::size_t r = 0; r < kTactileSize; ++r) {
    for (std::size_t c = 0; c < kTactileSize; ++c) {
      const double du = (static_cast<double>(c) + 0.5 - kGelCentre) - bu;
      const double dv = (static_cast<double>(r) + 0.5) - bv;
      const double along = du * ex + dv * ez;
      const double across = -du * ez + dv * ex;
      const double gauss =
          std::exp(-0.5 * (along * along / (major * major) + across * across / (minor * minor)));
      const double k = intensity * gauss;
      im.at(r, c, 0) += k * tint.r;
      im.at(r, c, 1) += k * tint.g;
      im.at(r, c, 2) += k * tint.b;
    }
  }
  return im;
}

const char* camera_mode_name(CameraMode m) {
  switch (m) {
    case CameraMode::Clean: return "clean";
    case CameraMode::Dim80: return "dim80";
    case CameraMode::Freeze50: return "freeze50";
  }
  return "clean";
}

CameraMode parse_camera_mode(const std::string& s) {
  if (s == "clean") return CameraMode::Clean;
  if (s == "dim80") return CameraMode::Dim80;
  if (s == "freeze50") return CameraMode::Freeze50;
  throw ConfigError("unknown camera mode '" + s + "' (expected clean|dim80|freeze50)");
}

Image degrade_camera(const Image& frame, CameraMode mode, Rng& rng, const Image* last_delivered) {
  switch (mode) {
    case CameraMode::Clean: return frame;
    case CameraMode::Dim80: {
      Image out = frame;
      for (auto& v : out.pixels) v *= 0.2;
      return out;
    }
    case CameraMode::Freeze50: {
      if (!last_delivered) return frame;
      return rng.bernoulli(0.5) ? frame : *last_delivered;
    }
  }
  return frame;
}

ScriptedExpert::ScriptedExpert(const TaskSpec& task, double noise_scale, std::uint64_t seed)
    : noise_(noise_scale), rng_(seed, "expert") {
  (void)task;
  aim_ = noise_ > 0.0 ? rng_.normal(0.0, kAimGain * noise_) : 0.0;
  retry_ = rng_.bernoulli(kRetryProb);
}

Action ScriptedExpert::act(const SimState& s, const StepInfo& last) {
  Action a;
  a.dtheta = std::clamp(-0.3 * s.pose.theta, -kMaxStepRad, kMaxStepRad);
  const double depth = inserted_depth(s);
  if (lift_left_ > 0) {
    a.dx = shift_;
    a.dz = kMaxStepMm;
    --lift_left_;
  } else if (last.contact_force >= kReactForce && depth < kStuckDepth) {
    const double side = last.contact_point.x < 0.0 ? 1.0 : -1.0;
    aim_ *= 0.25;
    if (retry_) {
      a.dx = kMaxStepMm * side;
      a.dz = kMaxStepMm;
      shift_ = kMaxStepMm * side * 0.5;
      lift_left_ = 1;
      belief_ += a.dx + shift_;
    } else {
      a.dx = kSlideStep * side;
      a.dz = -kPress;
      belief_ += a.dx;
    }
  } else if (depth > 2.0 * kSeatedDepth) {
    a.dx = 0.5 * (s.hole_x - s.pose.x);
    a.dz = -kSlowDescent;
  } else {
    // The camera shows the aperture displaced by the parallax; only touch corrects it.
    const double e = s.hole_x + s.parallax + aim_ + belief_ - s.pose.x;
    a.dx = 0.5 * e;
    if (s.pose.z > kHover) {
      a.dz = -kFastDescent;
    } else {
      a.dz = std::abs(e) < 1.0 ? -kSlowDescent : 0.0;
    }
  }
  if (noise_ > 0.0) {
    a.dx += rng_.normal(0.0, noise_);
    a.dz += rng_.normal(0.0, noise_);
  }
  return clamp_action(a);
}

EpisodeOutcome episode_outcome(const std::vector<TraceStep>& trace, double depth_required, std::size_t max_steps) {
  EpisodeOutcome out;
  bool touched = false;
  const std::size_t n = std::min(trace.size(), max_steps);
  for (std::size_t i = 0; i < n; ++i) {
    const TraceStep& t = trace[i];
    if (touched && i > 0 && t.pose.z - trace[i - 1].pose.z > 0.5) ++out.retreats;
    if (t.info.contact_flag || t.info.contact_force > 0.0) touched = true;
    out.max_force = std::max(out.max_force, t.info.contact_force);
    out.steps = i + 1;
    if (t.info.inserted_depth >= depth_required) {
      out.success = true;
      break;
    }
  }
  out.contact = touched;
  out.direct = out.success && out.retreats == 0;
  out.time_s = static_cast<double>(out.steps) * kDt;
  return out;
}

}  // namespace tvla
