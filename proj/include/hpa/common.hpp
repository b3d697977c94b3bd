#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace hpa {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Quat = Eigen::Quaterniond;

enum class ErrorCode {
  kInvalidArgument,
  kInconsistentConstraint,
  kNonFinite,
  kNotExtended,
  kDegenerateForce,
  kDegenerateTension,
  kEmptyTrace,
  kNoTransitions,
  kControllerFailure,
  kConfig,
};

const char* to_string(ErrorCode code);

/// Exception type used throughout the library. The code identifies the
/// failure class so callers can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline Vec3 e3() { return Vec3::UnitZ(); }

inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

inline Vec3 vee(const Mat3& m) { return Vec3(m(2, 1), m(0, 2), m(1, 0)); }

}  // namespace hpa
