#include "cft/scenegen.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace cft {

Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += a[static_cast<size_t>(i * 3 + k)] * b[static_cast<size_t>(k * 3 + j)];
            c[static_cast<size_t>(i * 3 + j)] = acc;
        }
    return c;
}

Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 axis_angle_to_mat3(const Vec3& axis, double angle_rad) {
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    if (n == 0.0) return mat3_identity();
    const double x = axis[0] / n, y = axis[1] / n, z = axis[2] / n;
    const double c = std::cos(angle_rad), s = std::sin(angle_rad), t = 1.0 - c;
    return {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,  //
            t * x * y + s * z, t * y * y + c,     t * y * z - s * x,  //
            t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

double mat3_orthonormality_error(const Mat3& m) {
    // max |(R^T R - I)_ij|
    double err = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += m[static_cast<size_t>(k * 3 + i)] * m[static_cast<size_t>(k * 3 + j)];
            err = std::max(err, std::fabs(acc - (i == j ? 1.0 : 0.0)));
        }
    return err;
}

CameraRig CameraRig::standard(int64_t image_size, double fov_deg, double mount_radius, double mount_height) {
    CameraRig rig;
    for (int v = 0; v < kNumViews; ++v) {
        Camera cam;
        cam.view = v;
        cam.azimuth_deg = kViewAzimuthDeg[static_cast<size_t>(v)];
        cam.width = image_size;
        cam.height = image_size;
        const double half_fov = fov_deg * M_PI / 360.0;
        cam.fx = static_cast<double>(image_size) / 2.0 / std::tan(half_fov);
        cam.fy = cam.fx;
        cam.cx = static_cast<double>(image_size) / 2.0;
        cam.cy = static_cast<double>(image_size) / 2.0;
        const double az = cam.azimuth_deg * M_PI / 180.0;
        const double ca = std::cos(az), sa = std::sin(az);
        // camera axes in ego coordinates: optical axis along the azimuth,
        // image x to the right of it, image y down
        cam.rot = {sa, -ca, 0,  //
                   0,  0,  -1,  //
                   ca, sa, 0};
        cam.pos = {mount_radius * ca, mount_radius * sa, mount_height};
        rig.cameras.push_back(cam);
    }
    return rig;
}

PixelProjection project_point(const Camera& cam, const Vec3& p_ego) {
    PixelProjection out;
    const Vec3 rel = {p_ego[0] - cam.pos[0], p_ego[1] - cam.pos[1], p_ego[2] - cam.pos[2]};
    const Vec3 pc = mat3_apply(cam.rot, rel);
    out.depth = pc[2];
    if (pc[2] <= 1e-6) return out;
    out.u = cam.fx * pc[0] / pc[2] + cam.cx;
    out.v = cam.fy * pc[1] / pc[2] + cam.cy;
    out.valid = out.u >= 0.0 && out.u < static_cast<double>(cam.width) && out.v >= 0.0 &&
                out.v < static_cast<double>(cam.height);
    return out;
}

Vec3 unproject_pixel(const Camera& cam, double u, double v, double depth) {
    const Vec3 pc = {(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth};
    // rot is orthonormal, transpose inverts it
    const Mat3& m = cam.rot;
    const Vec3 rel = {m[0] * pc[0] + m[3] * pc[1] + m[6] * pc[2], m[1] * pc[0] + m[4] * pc[1] + m[7] * pc[2],
                      m[2] * pc[0] + m[5] * pc[1] + m[8] * pc[2]};
    return {rel[0] + cam.pos[0], rel[1] + cam.pos[1], rel[2] + cam.pos[2]};
}

namespace {

bool visible_in_any_view(const CameraRig& rig, const Vec3& p) {
    for (const auto& cam : rig.cameras)
        if (project_point(cam, p).valid) return true;
    return false;
}

void splat(double* image, int64_t H, int64_t W, double u, double v, double sigma,
           const std::array<double, 3>& color) {
    const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    const int64_t ci = static_cast<int64_t>(std::floor(v));
    const int64_t cj = static_cast<int64_t>(std::floor(u));
    for (int64_t i = ci - radius; i <= ci + radius; ++i) {
        if (i < 0 || i >= H) continue;
        for (int64_t j = cj - radius; j <= cj + radius; ++j) {
            if (j < 0 || j >= W) continue;
            const double du = (static_cast<double>(j) + 0.5) - u;
            const double dv = (static_cast<double>(i) + 0.5) - v;
            const double g = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
            for (int c = 0; c < 3; ++c) image[(i * W + j) * 3 + c] += g * color[static_cast<size_t>(c)];
        }
    }
}

}  // namespace

SceneSample generate_scene(uint64_t seed, const SceneConfig& cfg, const CameraRig& rig) {
    cfg.bev.validate();
    if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects)
        throw TensorError("SceneConfig: bad object count range");
    if (cfg.z_min < cfg.bev.z_range.min || cfg.z_max > cfg.bev.z_range.max)
        throw TensorError("SceneConfig: sampled heights leave the preset height range");
    const double x_lo = cfg.bev.x_range.min + cfg.border_margin, x_hi = cfg.bev.x_range.max - cfg.border_margin;
    const double y_lo = cfg.bev.y_range.min + cfg.border_margin, y_hi = cfg.bev.y_range.max - cfg.border_margin;
    if (x_lo >= x_hi || y_lo >= y_hi) throw TensorError("SceneConfig: margin leaves no room inside the range");

    Rng rng(seed * 0x9e3779b97f4a7c15ULL + 1);
    SceneSample sample;
    sample.seed = seed;
    const auto& classes = default_classes();
    const int64_t n_objects = rng.uniform_int(cfg.min_objects, cfg.max_objects);
    int attempts = 0;
    while (static_cast<int64_t>(sample.boxes.size()) < n_objects && attempts < 1000) {
        ++attempts;
        DetectionBox box;
        box.class_id = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(classes.size()) - 1));
        const auto& spec = classes[static_cast<size_t>(box.class_id)];
        for (int d = 0; d < 3; ++d)
            box.size[static_cast<size_t>(d)] =
                spec.size[static_cast<size_t>(d)] * (1.0 + cfg.size_jitter * (2.0 * rng.uniform() - 1.0));
        box.center = {rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi), rng.uniform(cfg.z_min, cfg.z_max)};
        if (std::hypot(box.center[0], box.center[1]) < cfg.min_range) continue;
        bool too_close = false;
        for (const auto& other : sample.boxes)
            if (std::hypot(box.center[0] - other.center[0], box.center[1] - other.center[1]) < cfg.min_separation) {
                too_close = true;
                break;
            }
        if (too_close) continue;
        if (!visible_in_any_view(rig, box.center)) continue;
        box.yaw = normalize_yaw(rng.uniform(-M_PI, M_PI));
        if (rng.uniform() < cfg.p_static) {
            box.velocity = {0.0, 0.0};
        } else {
            const double speed = rng.uniform(0.5, cfg.max_speed);
            box.velocity = {speed * std::cos(box.yaw), speed * std::sin(box.yaw)};
        }
        box.score = 1.0;
        sample.boxes.push_back(box);
    }

    const int64_t H = cfg.image_size, W = cfg.image_size;
    std::vector<double> pixels(static_cast<size_t>(kNumViews * H * W * 3), 0.0);
    for (const auto& box : sample.boxes) {
        const auto& color = classes[static_cast<size_t>(box.class_id)].color;
        for (const auto& cam : rig.cameras) {
            const PixelProjection p = project_point(cam, box.center);
            if (!p.valid) continue;
            // splat footprint shrinks with depth like the projected object would
            const double extent = 0.5 * (box.size[0] + box.size[1]) / 2.0;
            const double sigma = std::clamp(cam.fx * extent / p.depth * 0.5, 0.8, 6.0);
            splat(pixels.data() + cam.view * H * W * 3, H, W, p.u, p.v, sigma, color);
        }
    }
    sample.images = Tensor::from_vector({kNumViews, H, W, 3}, std::move(pixels));
    return sample;
}

CameraRig perturb_extrinsics(const CameraRig& rig, double sigma_rot_deg, double sigma_trans_m, Rng& rng) {
    if (sigma_rot_deg < 0.0 || sigma_trans_m < 0.0) throw TensorError("perturb_extrinsics: sigmas must be >= 0");
    CameraRig out = rig;
    for (auto& cam : out.cameras) {
        Vec3 axis;
        double n2;
        do {
            axis = {rng.normal(), rng.normal(), rng.normal()};
            n2 = axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2];
        } while (n2 < 1e-12);
        const double angle = sigma_rot_deg * M_PI / 180.0 * rng.normal();
        cam.rot = mat3_mul(axis_angle_to_mat3(axis, angle), cam.rot);
        for (int d = 0; d < 3; ++d) cam.pos[static_cast<size_t>(d)] += sigma_trans_m * rng.normal();
    }
    return out;
}

Tensor projection_baseline_features(const SceneSample& sample, const CameraRig& rig, const BevConfig& bev,
                                    double z_fixed) {
    const int64_t H = sample.images.dim(1), W = sample.images.dim(2), C = sample.images.dim(3);
    const auto& img = sample.images.values();
    std::vector<double> out(static_cast<size_t>(bev.cells() * C), 0.0);
    for (int64_t h = 0; h < bev.grid_h; ++h)
        for (int64_t w = 0; w < bev.grid_w; ++w) {
            const Vec3 p = {bev.cell_x(h), bev.cell_y(w), z_fixed};
            double* cell = out.data() + (h * bev.grid_w + w) * C;
            int n_views = 0;
            for (const auto& cam : rig.cameras) {
                const PixelProjection proj = project_point(cam, p);
                if (!proj.valid) continue;
                // bilinear sample at (u, v) in pixel-center coordinates
                const double fu = proj.u - 0.5, fv = proj.v - 0.5;
                const int64_t u0 = static_cast<int64_t>(std::floor(fu)), v0 = static_cast<int64_t>(std::floor(fv));
                const double au = fu - static_cast<double>(u0), av = fv - static_cast<double>(v0);
                ++n_views;
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int dv = 0; dv <= 1; ++dv)
                        for (int du = 0; du <= 1; ++du) {
                            const int64_t uu = u0 + du, vv = v0 + dv;
                            if (uu < 0 || uu >= W || vv < 0 || vv >= H) continue;
                            const double weight = (du ? au : 1.0 - au) * (dv ? av : 1.0 - av);
                            acc += weight *
                                   img[static_cast<size_t>(((cam.view * H + vv) * W + uu) * C + c)];
                        }
                    cell[c] += acc;
                }
            }
            if (n_views > 0)
                for (int c = 0; c < C; ++c) cell[c] /= static_cast<double>(n_views);
        }
    return Tensor::from_vector({bev.cells(), C}, std::move(out));
}

BaselineParams::BaselineParams(ParamSet& params, const std::string& name, int64_t in_channels, int64_t out_channels,
                               Rng& rng) {
    const double std1 = std::sqrt(2.0 / static_cast<double>(9 * in_channels));
    conv1_w = params.add(name + ".conv1.w", randn({3, 3, in_channels, out_channels}, rng, std1));
    conv1_b = params.add(name + ".conv1.b", Tensor::zeros({out_channels}));
    const double std2 = std::sqrt(2.0 / static_cast<double>(9 * out_channels));
    conv2_w = params.add(name + ".conv2.w", randn({3, 3, out_channels, out_channels}, rng, std2));
    conv2_b = params.add(name + ".conv2.b", Tensor::zeros({out_channels}));
}

Tensor BaselineParams::operator()(const Tensor& raw_bev, int64_t grid_h, int64_t grid_w) const {
    Tensor x = reshape(raw_bev, {1, grid_h, grid_w, raw_bev.dim(1)});
    x = relu(conv2d(x, conv1_w, conv1_b, 1, 1));
    x = relu(conv2d(x, conv2_w, conv2_b, 1, 1));
    return reshape(x, {grid_h * grid_w, conv2_w.dim(3)});
}

// --- dataset container ------------------------------------------------------

namespace {

constexpr uint32_t kDatasetMagic = 0x43465444;  // "CFTD"
constexpr uint32_t kDatasetVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw TensorError("dataset file truncated");
    return v;
}

}  // namespace

void save_dataset(const std::string& bin_path, const std::string& manifest_path,
                  const std::vector<SceneSample>& scenes, const SceneConfig& cfg) {
    std::ofstream os(bin_path, std::ios::binary);
    if (!os) throw TensorError("cannot open dataset for writing: " + bin_path);
    write_pod(os, kDatasetMagic);
    write_pod(os, kDatasetVersion);
    write_pod(os, static_cast<uint64_t>(scenes.size()));
    std::vector<uint64_t> seeds;
    for (const auto& scene : scenes) {
        seeds.push_back(scene.seed);
        std::ostringstream record;
        write_pod(record, scene.seed);
        write_pod(record, static_cast<uint32_t>(scene.boxes.size()));
        for (const auto& b : scene.boxes) {
            for (double v : b.center) write_pod(record, v);
            for (double v : b.size) write_pod(record, v);
            write_pod(record, b.yaw);
            for (double v : b.velocity) write_pod(record, v);
            write_pod(record, static_cast<int32_t>(b.class_id));
            write_pod(record, b.score);
        }
        const Shape& s = scene.images.shape();
        write_pod(record, static_cast<uint32_t>(s.size()));
        for (int64_t e : s) write_pod(record, static_cast<uint64_t>(e));
        for (double v : scene.images.values()) write_pod(record, static_cast<float>(v));
        const std::string payload = record.str();
        write_pod(os, static_cast<uint64_t>(payload.size()));
        os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    }
    nlohmann::json manifest;
    manifest["version"] = kDatasetVersion;
    manifest["scene_count"] = scenes.size();
    manifest["seeds"] = seeds;
    manifest["config"] = {{"image_size", cfg.image_size},
                          {"min_objects", cfg.min_objects},
                          {"max_objects", cfg.max_objects},
                          {"grid_h", cfg.bev.grid_h},
                          {"grid_w", cfg.bev.grid_w},
                          {"x_range", {cfg.bev.x_range.min, cfg.bev.x_range.max}},
                          {"y_range", {cfg.bev.y_range.min, cfg.bev.y_range.max}},
                          {"z_range", {cfg.bev.z_range.min, cfg.bev.z_range.max}}};
    std::ofstream ms(manifest_path);
    if (!ms) throw TensorError("cannot open manifest for writing: " + manifest_path);
    ms << manifest.dump(2) << "\n";
}

std::vector<SceneSample> load_dataset(const std::string& bin_path) {
    std::ifstream is(bin_path, std::ios::binary);
    if (!is) throw TensorError("cannot open dataset: " + bin_path);
    if (read_pod<uint32_t>(is) != kDatasetMagic) throw TensorError("not a dataset file: " + bin_path);
    if (read_pod<uint32_t>(is) != kDatasetVersion) throw TensorError("unsupported dataset version in " + bin_path);
    const uint64_t count = read_pod<uint64_t>(is);
    std::vector<SceneSample> scenes;
    for (uint64_t i = 0; i < count; ++i) {
        (void)read_pod<uint64_t>(is);  // record length, unused on sequential read
        SceneSample scene;
        scene.seed = read_pod<uint64_t>(is);
        const uint32_t n_boxes = read_pod<uint32_t>(is);
        for (uint32_t b = 0; b < n_boxes; ++b) {
            DetectionBox box;
            for (double& v : box.center) v = read_pod<double>(is);
            for (double& v : box.size) v = read_pod<double>(is);
            box.yaw = read_pod<double>(is);
            for (double& v : box.velocity) v = read_pod<double>(is);
            box.class_id = read_pod<int32_t>(is);
            box.score = read_pod<double>(is);
            scene.boxes.push_back(box);
        }
        const uint32_t rank = read_pod<uint32_t>(is);
        Shape shape;
        for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int64_t>(read_pod<uint64_t>(is)));
        std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
        for (double& v : data) v = static_cast<double>(read_pod<float>(is));
        scene.images = Tensor::from_vector(shape, std::move(data));
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

}  // namespace cft
