#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cft/box.hpp"
#include "cft/dethead.hpp"
#include "cft/encodings.hpp"
#include "cft/tensor.hpp"
#include "cft/windows.hpp"

namespace cft {

using Mat3 = std::array<double, 9>;  // row-major
using Vec3 = std::array<double, 3>;

Mat3 mat3_identity();
Mat3 mat3_mul(const Mat3& a, const Mat3& b);
Vec3 mat3_apply(const Mat3& m, const Vec3& v);
Mat3 axis_angle_to_mat3(const Vec3& axis, double angle_rad);
double mat3_orthonormality_error(const Mat3& m);

struct Camera {
    int view = 0;
    double azimuth_deg = 0.0;
    // intrinsics
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    int64_t width = 0, height = 0;
    // extrinsics: p_cam = rot * (p_ego - pos)
    Mat3 rot = mat3_identity();
    Vec3 pos{};
};

// Six outward-looking pinhole cameras at the standard view azimuths. The rig
// exists only on the generator/baseline side; the view transformer never
// sees it.
struct CameraRig {
    std::vector<Camera> cameras;

    static CameraRig standard(int64_t image_size, double fov_deg = 70.0, double mount_radius = 0.5,
                              double mount_height = 1.6);
};

struct PixelProjection {
    double u = 0.0;  // column
    double v = 0.0;  // row
    double depth = 0.0;
    bool valid = false;  // in front of the camera and inside the image
};

PixelProjection project_point(const Camera& cam, const Vec3& p_ego);
Vec3 unproject_pixel(const Camera& cam, double u, double v, double depth);

struct SceneConfig {
    BevConfig bev;
    int64_t image_size = 64;
    int64_t min_objects = 1;
    int64_t max_objects = 8;
    double border_margin = 1.0;    // meters inside the perception range
    double min_range = 3.0;        // meters from the ego center
    double min_separation = 4.0;   // meters between object centers
    double z_min = -1.0, z_max = 2.0;  // sampled center heights (inside bev.z_range)
    double max_speed = 8.0;
    double p_static = 0.4;
    double size_jitter = 0.15;  // relative size variation around the class prior
};

struct SceneSample {
    uint64_t seed = 0;
    std::vector<DetectionBox> boxes;
    Tensor images;  // [views x H x W x 3]
};

// Deterministic function of (seed, cfg, rig): samples boxes with class priors
// and renders each into every view that sees it as a class-colored Gaussian
// splat whose footprint scales with inverse depth.
SceneSample generate_scene(uint64_t seed, const SceneConfig& cfg, const CameraRig& rig);

// Composes each rotation with a random small rotation (uniform axis, angle ~
// N(0, sigma_rot)) and jitters each translation ~ N(0, sigma_trans) per axis.
// The input rig is untouched.
CameraRig perturb_extrinsics(const CameraRig& rig, double sigma_rot_deg, double sigma_trans_m, Rng& rng);

// Camera-driven baseline: lifts image features onto the BEV plane by
// projecting every grid center at a fixed height and bilinearly sampling each
// view that sees it, averaging over views. Unlike the transformer path this
// consumes the rig.
Tensor projection_baseline_features(const SceneSample& sample, const CameraRig& rig, const BevConfig& bev,
                                    double z_fixed);

struct BaselineParams {
    Tensor conv1_w, conv1_b;
    Tensor conv2_w, conv2_b;

    BaselineParams() = default;
    BaselineParams(ParamSet& params, const std::string& name, int64_t in_channels, int64_t out_channels, Rng& rng);
    Tensor operator()(const Tensor& raw_bev, int64_t grid_h, int64_t grid_w) const;
};

// --- dataset container ------------------------------------------------------
// Length-prefixed binary records plus a JSON sidecar manifest; regenerable
// from the stored seeds alone.

void save_dataset(const std::string& bin_path, const std::string& manifest_path, const std::vector<SceneSample>& scenes,
                  const SceneConfig& cfg);
std::vector<SceneSample> load_dataset(const std::string& bin_path);

}  // namespace cft
