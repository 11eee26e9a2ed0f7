#pragma once

// Analytic scenes, pinhole cameras, the reference ray tracer used as ground
// truth, and posed multi-view datasets.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "vosh/error.hpp"
#include "vosh/image.hpp"
#include "vosh/vec.hpp"

namespace vosh {

inline constexpr float kSceneBound = 4.0f;

struct Ray {
    Vec3f origin;
    Vec3f dir;  // unit length
};

// ---------------------------------------------------------------------------
// Camera

struct Camera {
    Vec3f position{};
    Mat3f rotation{};  // rows: right, up, forward (world coordinates)
    float focal = 100.0f;
    int width = 64;
    int height = 64;

    void validate() const {
        if (width < 8 || height < 8) throw InvalidArgument("camera: resolution below 8x8");
        if (!(focal > 0.0f)) throw InvalidArgument("camera: focal length must be positive");
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                const float d = dot(rotation.rows[i], rotation.rows[j]);
                if (std::abs(d - (i == j ? 1.0f : 0.0f)) > 1e-5f) throw InvalidArgument("camera: rotation is not orthonormal");
            }
        }
    }

    Vec3f right() const { return rotation.rows[0]; }
    Vec3f up() const { return rotation.rows[1]; }
    Vec3f forward() const { return rotation.rows[2]; }

    /// Ray through the center of pixel (px, py); py = 0 is the top row.
    Ray pixel_ray(int px, int py) const {
        const float cx = (float(px) + 0.5f - 0.5f * float(width)) / focal;
        const float cy = -(float(py) + 0.5f - 0.5f * float(height)) / focal;
        const Vec3f d = right() * cx + up() * cy + forward();
        return {position, normalized(d)};
    }

    static Camera look_at(const Vec3f& eye, const Vec3f& target, const Vec3f& world_up, float focal, int w, int h) {
        const Vec3d f = normalized(Vec3d(target - eye));
        Vec3d r = cross(f, Vec3d(world_up));
        if (norm(r) < 1e-8) r = cross(f, Vec3d(1, 0, 0));
        r = normalized(r);
        const Vec3d u = cross(r, f);
        Camera c;
        c.position = eye;
        c.rotation.rows[0] = Vec3f(r);
        c.rotation.rows[1] = Vec3f(u);
        c.rotation.rows[2] = Vec3f(f);
        c.focal = focal;
        c.width = w;
        c.height = h;
        return c;
    }

    bool operator==(const Camera& o) const {
        return position == o.position && rotation.rows[0] == o.rotation.rows[0] &&
               rotation.rows[1] == o.rotation.rows[1] && rotation.rows[2] == o.rotation.rows[2] &&
               focal == o.focal && width == o.width && height == o.height;
    }
};

inline float focal_from_fov(float fov_degrees, int width) {
    return 0.5f * float(width) / std::tan(0.5f * fov_degrees * std::numbers::pi_v<float> / 180.0f);
}

// ---------------------------------------------------------------------------
// Scene primitives

struct Albedo {
    enum class Kind { Constant, Checker, Stripes, Waves } kind = Kind::Constant;
    Vec3f a{0.5f, 0.5f, 0.5f};
    Vec3f b{0.5f, 0.5f, 0.5f};
    float scale = 1.0f;  // checker cell size, or spatial frequency for stripes/waves
    int axis = 0;

    Vec3f eval(const Vec3f& p) const {
        switch (kind) {
            case Kind::Constant: return a;
            case Kind::Checker: {
                const long s = long(std::floor(p.x / scale)) + long(std::floor(p.y / scale)) + long(std::floor(p.z / scale));
                return (s & 1) ? b : a;
            }
            case Kind::Stripes: {
                const float t = 0.5f + 0.5f * std::sin(2.0f * std::numbers::pi_v<float> * scale * p[axis]);
                return a * (1.0f - t) + b * t;
            }
            case Kind::Waves: {
                const float w = 2.0f * std::numbers::pi_v<float> * scale;
                const float t = 0.5f + 0.5f * std::sin(w * p.x) * std::cos(w * p.z) * std::cos(0.5f * w * p.y);
                return a * (1.0f - t) + b * t;
            }
        }
        return a;
    }
};

/// View-dependent additive tint: color * max(0, dot(toward_camera, axis)).
struct Tint {
    Vec3f color{};
    Vec3f axis{0, 1, 0};
};

struct Sphere {
    Vec3f center{};
    float radius = 1.0f;
};

struct Box {
    Vec3f lo{-0.5f, -0.5f, -0.5f};
    Vec3f hi{0.5f, 0.5f, 0.5f};
};

/// Axis-aligned square patch: {x : x[axis] = offset, |x[j]| <= extent for j != axis}.
struct Plane {
    int axis = 1;
    float offset = 0.0f;
    float extent = 1.0f;
};

struct Primitive {
    std::variant<Sphere, Box, Plane> shape;
    Albedo albedo;
    std::optional<Tint> tint;
};

struct AnalyticScene {
    std::string name;
    std::vector<Primitive> primitives;
    Vec3f background{0, 0, 0};
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Descriptor (JSON) <-> scene

namespace detail {

inline Vec3f vec_from(const nlohmann::json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 3) throw DescriptorError(key, "expected a 3-element array");
    return {j[0].get<float>(), j[1].get<float>(), j[2].get<float>()};
}

inline nlohmann::json vec_to(const Vec3f& v) { return nlohmann::json::array({v.x, v.y, v.z}); }

inline void check_color(const Vec3f& c, const std::string& key) {
    for (int i = 0; i < 3; ++i) {
        if (!(c[i] >= 0.0f && c[i] <= 1.0f)) throw DescriptorError(key, "color channel outside [0,1]");
    }
}

inline Albedo albedo_from(const nlohmann::json& j, const std::string& key) {
    Albedo a;
    const std::string kind = j.value("kind", "constant");
    if (kind == "constant") a.kind = Albedo::Kind::Constant;
    else if (kind == "checker") a.kind = Albedo::Kind::Checker;
    else if (kind == "stripes") a.kind = Albedo::Kind::Stripes;
    else if (kind == "waves") a.kind = Albedo::Kind::Waves;
    else throw DescriptorError(key + ".kind", "unknown albedo kind '" + kind + "'");
    if (j.contains("color")) a.a = a.b = vec_from(j["color"], key + ".color");
    if (j.contains("a")) a.a = vec_from(j["a"], key + ".a");
    if (j.contains("b")) a.b = vec_from(j["b"], key + ".b");
    a.scale = j.value("scale", 1.0f);
    a.axis = j.value("axis", 0);
    check_color(a.a, key + ".a");
    check_color(a.b, key + ".b");
    if (!(a.scale > 0.0f)) throw DescriptorError(key + ".scale", "must be positive");
    if (a.axis < 0 || a.axis > 2) throw DescriptorError(key + ".axis", "must be 0, 1 or 2");
    return a;
}

inline nlohmann::json albedo_to(const Albedo& a) {
    static const char* names[] = {"constant", "checker", "stripes", "waves"};
    return {{"kind", names[int(a.kind)]}, {"a", vec_to(a.a)}, {"b", vec_to(a.b)}, {"scale", a.scale}, {"axis", a.axis}};
}

}  // namespace detail

inline AnalyticScene make_scene(const nlohmann::json& desc) {
    AnalyticScene scene;
    scene.name = desc.value("name", "scene");
    scene.seed = desc.value("seed", std::uint64_t{0});
    if (desc.contains("background")) scene.background = detail::vec_from(desc["background"], "background");
    detail::check_color(scene.background, "background");
    if (!desc.contains("primitives") || !desc["primitives"].is_array()) throw DescriptorError("primitives", "missing primitive list");
    std::size_t idx = 0;
    for (const auto& p : desc["primitives"]) {
        const std::string key = "primitives[" + std::to_string(idx++) + "]";
        const std::string kind = p.value("kind", "");
        Primitive prim;
        if (kind == "sphere") {
            Sphere s{detail::vec_from(p.at("center"), key + ".center"), p.at("radius").get<float>()};
            if (!(s.radius > 0.0f)) throw DescriptorError(key + ".radius", "must be positive");
            if (max_abs(s.center) + s.radius > kSceneBound) throw DescriptorError(key, "sphere extends beyond |x|_inf <= 4");
            prim.shape = s;
        } else if (kind == "box") {
            Box b{detail::vec_from(p.at("min"), key + ".min"), detail::vec_from(p.at("max"), key + ".max")};
            for (int i = 0; i < 3; ++i) {
                if (!(b.lo[i] < b.hi[i])) throw DescriptorError(key, "box min must be below max");
            }
            if (max_abs(b.lo) > kSceneBound || max_abs(b.hi) > kSceneBound) throw DescriptorError(key, "box extends beyond |x|_inf <= 4");
            prim.shape = b;
        } else if (kind == "plane") {
            Plane pl{p.value("axis", 1), p.at("offset").get<float>(), p.at("extent").get<float>()};
            if (pl.axis < 0 || pl.axis > 2) throw DescriptorError(key + ".axis", "must be 0, 1 or 2");
            if (!(pl.extent > 0.0f)) throw DescriptorError(key + ".extent", "must be positive");
            if (std::abs(pl.offset) > kSceneBound || pl.extent > kSceneBound) throw DescriptorError(key, "plane extends beyond |x|_inf <= 4");
            prim.shape = pl;
        } else {
            throw DescriptorError(key + ".kind", "unknown primitive kind '" + kind + "'");
        }
        prim.albedo = p.contains("albedo") ? detail::albedo_from(p["albedo"], key + ".albedo") : Albedo{};
        if (p.contains("tint")) {
            Tint t{detail::vec_from(p["tint"].at("color"), key + ".tint.color"),
                   normalized(detail::vec_from(p["tint"].at("axis"), key + ".tint.axis"))};
            detail::check_color(t.color, key + ".tint.color");
            prim.tint = t;
        }
        scene.primitives.push_back(prim);
    }
    return scene;
}

inline nlohmann::json scene_to_json(const AnalyticScene& scene) {
    nlohmann::json prims = nlohmann::json::array();
    for (const auto& p : scene.primitives) {
        nlohmann::json j;
        if (const auto* s = std::get_if<Sphere>(&p.shape)) {
            j = {{"kind", "sphere"}, {"center", detail::vec_to(s->center)}, {"radius", s->radius}};
        } else if (const auto* b = std::get_if<Box>(&p.shape)) {
            j = {{"kind", "box"}, {"min", detail::vec_to(b->lo)}, {"max", detail::vec_to(b->hi)}};
        } else {
            const auto& pl = std::get<Plane>(p.shape);
            j = {{"kind", "plane"}, {"axis", pl.axis}, {"offset", pl.offset}, {"extent", pl.extent}};
        }
        j["albedo"] = detail::albedo_to(p.albedo);
        if (p.tint) j["tint"] = {{"color", detail::vec_to(p.tint->color)}, {"axis", detail::vec_to(p.tint->axis)}};
        prims.push_back(j);
    }
    return {{"name", scene.name}, {"seed", scene.seed}, {"background", detail::vec_to(scene.background)}, {"primitives", prims}};
}

/// Built-in descriptors: "sphere" (unit sphere, checker albedo) and
/// "sphere_plane" (textured sphere over a large ground plane).
inline nlohmann::json builtin_scene(const std::string& name) {
    using nlohmann::json;
    if (name == "sphere") {
        return json::parse(R"({"name":"sphere","background":[1,1,1],"primitives":[
            {"kind":"sphere","center":[0,0,0],"radius":1.0,
             "albedo":{"kind":"checker","a":[0.9,0.2,0.2],"b":[0.2,0.2,0.9],"scale":0.5}}]})");
    }
    if (name == "sphere_plane") {
        return json::parse(R"({"name":"sphere_plane","background":[0.55,0.7,0.85],"primitives":[
            {"kind":"sphere","center":[0,0.05,0],"radius":0.45,
             "albedo":{"kind":"stripes","a":[0.85,0.45,0.25],"b":[0.95,0.8,0.35],"scale":1.5,"axis":1},
             "tint":{"color":[0.06,0.06,0.08],"axis":[0,1,0]}},
            {"kind":"plane","axis":1,"offset":-0.4,"extent":4.0,
             "albedo":{"kind":"waves","a":[0.35,0.5,0.3],"b":[0.5,0.6,0.4],"scale":0.35}}]})");
    }
    throw DescriptorError("scene", "unknown built-in scene '" + name + "'");
}

// ---------------------------------------------------------------------------
// Reference tracer

struct SurfaceSample {
    float t = std::numeric_limits<float>::infinity();
    std::size_t primitive = 0;
};

inline SurfaceSample intersect_scene(const AnalyticScene& scene, const Ray& ray) {
    SurfaceSample best;
    const Vec3d o(ray.origin), d(ray.dir);
    double best_t = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        double t = std::numeric_limits<double>::infinity();
        const auto& shape = scene.primitives[i].shape;
        if (const auto* s = std::get_if<Sphere>(&shape)) {
            const Vec3d oc = o - Vec3d(s->center);
            const double b = dot(oc, d);
            const double c = dot(oc, oc) - double(s->radius) * s->radius;
            const double disc = b * b - c;
            if (disc >= 0.0) {
                const double sq = std::sqrt(disc);
                const double t0 = -b - sq, t1 = -b + sq;
                t = t0 > 1e-6 ? t0 : (t1 > 1e-6 ? t1 : t);
            }
        } else if (const auto* bx = std::get_if<Box>(&shape)) {
            double tmin = -std::numeric_limits<double>::infinity(), tmax = std::numeric_limits<double>::infinity();
            bool miss = false;
            for (int a = 0; a < 3; ++a) {
                if (std::abs(d[a]) < 1e-12) {
                    if (o[a] < bx->lo[a] || o[a] > bx->hi[a]) miss = true;
                    continue;
                }
                double ta = (bx->lo[a] - o[a]) / d[a], tb = (bx->hi[a] - o[a]) / d[a];
                if (ta > tb) std::swap(ta, tb);
                tmin = std::max(tmin, ta);
                tmax = std::min(tmax, tb);
            }
            if (!miss && tmax >= tmin) t = tmin > 1e-6 ? tmin : (tmax > 1e-6 ? tmax : t);
        } else {
            const auto& pl = std::get<Plane>(shape);
            if (std::abs(d[pl.axis]) > 1e-12) {
                const double tp = (pl.offset - o[pl.axis]) / d[pl.axis];
                if (tp > 1e-6) {
                    const Vec3d p = o + d * tp;
                    bool inside = true;
                    for (int a = 0; a < 3; ++a) {
                        if (a != pl.axis && std::abs(p[a]) > pl.extent) inside = false;
                    }
                    if (inside) t = tp;
                }
            }
        }
        if (t < best_t) {
            best_t = t;
            best.primitive = i;
        }
    }
    best.t = float(best_t);
    return best;
}

inline Vec3f shade_hit(const AnalyticScene& scene, const Ray& ray, const SurfaceSample& hit) {
    const Primitive& prim = scene.primitives[hit.primitive];
    const Vec3f p = ray.origin + ray.dir * hit.t;
    Vec3f c = prim.albedo.eval(p);
    if (prim.tint) c += prim.tint->color * std::max(0.0f, dot(-ray.dir, prim.tint->axis));
    return {std::clamp(c.x, 0.0f, 1.0f), std::clamp(c.y, 0.0f, 1.0f), std::clamp(c.z, 0.0f, 1.0f)};
}

inline Vec3f trace_ray(const AnalyticScene& scene, const Ray& ray) {
    const SurfaceSample hit = intersect_scene(scene, ray);
    if (!std::isfinite(hit.t)) return scene.background;
    return shade_hit(scene, ray, hit);
}

/// First-hit analytic shading of one pixel.
inline Vec3f trace_reference(const AnalyticScene& scene, const Camera& camera, int px, int py) {
    if (px < 0 || py < 0 || px >= camera.width || py >= camera.height) {
        throw InvalidArgument("trace_reference: pixel (" + std::to_string(px) + ", " + std::to_string(py) + ") outside image");
    }
    return trace_ray(scene, camera.pixel_ray(px, py));
}

inline Image render_reference(const AnalyticScene& scene, const Camera& camera) {
    Image img(camera.width, camera.height);
    for (int y = 0; y < camera.height; ++y) {
        for (int x = 0; x < camera.width; ++x) img.set(x, y, trace_reference(scene, camera, x, y));
    }
    return img;
}

// ---------------------------------------------------------------------------
// Multi-view datasets

struct View {
    Camera camera;
    Image image;
    bool held_out = false;
};

struct MultiViewDataset {
    std::vector<View> views;

    std::vector<const View*> train() const {
        std::vector<const View*> out;
        for (const auto& v : views) if (!v.held_out) out.push_back(&v);
        return out;
    }
    std::vector<const View*> held_out() const {
        std::vector<const View*> out;
        for (const auto& v : views) if (v.held_out) out.push_back(&v);
        return out;
    }
};

struct CameraRig {
    float radius = 2.5f;
    float min_elevation_deg = 12.0f;
    float max_elevation_deg = 40.0f;
    float fov_deg = 50.0f;
};

/// Orbit cameras looking at the origin, spread by the golden angle in azimuth.
inline std::vector<Camera> orbit_cameras(std::size_t n, int width, int height, std::uint64_t seed, const CameraRig& rig = {}) {
    std::mt19937_64 rng(seed);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<Camera> cams;
    cams.reserve(n);
    const float focal = focal_from_fov(rig.fov_deg, width);
    for (std::size_t k = 0; k < n; ++k) {
        const double u = double(rng() >> 11) * 0x1.0p-53;
        const double jitter = double(rng() >> 11) * 0x1.0p-53;
        const double az = double(k) * golden + 0.3 * (jitter - 0.5);
        const double el = (rig.min_elevation_deg + u * (rig.max_elevation_deg - rig.min_elevation_deg)) * std::numbers::pi / 180.0;
        const Vec3f eye(float(rig.radius * std::cos(el) * std::cos(az)), float(rig.radius * std::sin(el)),
                        float(rig.radius * std::cos(el) * std::sin(az)));
        cams.push_back(Camera::look_at(eye, {0, 0, 0}, {0, 1, 0}, focal, width, height));
    }
    return cams;
}

/// Renders n_views orbit cameras; the last ceil(n/8) views are held out.
inline MultiViewDataset render_dataset(const AnalyticScene& scene, std::size_t n_views, int width, int height,
                                       std::uint64_t seed, const CameraRig& rig = {}) {
    if (n_views < 2) throw InvalidArgument("render_dataset: need at least 2 views");
    const std::size_t held = (n_views + 7) / 8;
    MultiViewDataset ds;
    for (const Camera& cam : orbit_cameras(n_views, width, height, seed, rig)) {
        cam.validate();
        ds.views.push_back({cam, render_reference(scene, cam), false});
    }
    for (std::size_t i = n_views - held; i < n_views; ++i) ds.views[i].held_out = true;
    return ds;
}

inline nlohmann::json camera_to_json(const Camera& c) {
    return {{"position", detail::vec_to(c.position)},
            {"rotation", {detail::vec_to(c.rotation.rows[0]), detail::vec_to(c.rotation.rows[1]), detail::vec_to(c.rotation.rows[2])}},
            {"focal", c.focal},
            {"width", c.width},
            {"height", c.height}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
    Camera c;
    c.position = detail::vec_from(j.at("position"), "camera.position");
    for (int i = 0; i < 3; ++i) c.rotation.rows[i] = detail::vec_from(j.at("rotation").at(i), "camera.rotation");
    c.focal = j.at("focal").get<float>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.validate();
    return c;
}

/// Writes dataset.json plus one 8-bit PNG per view into `dir`.
inline void save_dataset(const MultiViewDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json views = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "view_%03zu.png", i);
        write_png(dir / name, ds.views[i].image);
        views.push_back({{"file", name}, {"split", ds.views[i].held_out ? "held_out" : "train"},
                         {"camera", camera_to_json(ds.views[i].camera)}});
    }
    std::ofstream(dir / "dataset.json") << nlohmann::json{{"format", "vosh-dataset"}, {"version", 1}, {"views", views}}.dump(2) << "\n";
}

inline MultiViewDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "dataset.json");
    if (!in) throw std::runtime_error("cannot open dataset: " + (dir / "dataset.json").string());
    const nlohmann::json j = nlohmann::json::parse(in);
    MultiViewDataset ds;
    for (const auto& v : j.at("views")) {
        View view;
        view.camera = camera_from_json(v.at("camera"));
        view.image = read_png(dir / v.at("file").get<std::string>());
        view.held_out = v.at("split").get<std::string>() == "held_out";
        if (view.image.width != view.camera.width || view.image.height != view.camera.height) {
            throw DescriptorError("views.file", "image size does not match camera resolution");
        }
        ds.views.push_back(std::move(view));
    }
    return ds;
}

}  // namespace vosh
