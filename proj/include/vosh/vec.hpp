#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>

namespace vosh {

template <std::floating_point T>
struct Vec3 {
    T x{}, y{}, z{};

    constexpr Vec3() = default;
    constexpr Vec3(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}
    template <std::floating_point U>
    constexpr explicit Vec3(const Vec3<U>& o) : x(T(o.x)), y(T(o.y)), z(T(o.z)) {}

    constexpr T& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr const T& operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator-() const { return {-x, -y, -z}; }
    constexpr Vec3 operator*(T s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator/(T s) const { return {x / s, y / s, z / s}; }
    constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3& operator*=(T s) { x *= s; y *= s; z *= s; return *this; }
    constexpr bool operator==(const Vec3&) const = default;
};

template <std::floating_point T>
constexpr Vec3<T> operator*(T s, const Vec3<T>& v) { return v * s; }

template <std::floating_point T>
constexpr T dot(const Vec3<T>& a, const Vec3<T>& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

template <std::floating_point T>
constexpr Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <std::floating_point T>
constexpr Vec3<T> hadamard(const Vec3<T>& a, const Vec3<T>& b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }

template <std::floating_point T>
inline T norm(const Vec3<T>& v) { return std::sqrt(dot(v, v)); }

template <std::floating_point T>
inline Vec3<T> normalized(const Vec3<T>& v) { return v / norm(v); }

template <std::floating_point T>
constexpr T max_abs(const Vec3<T>& v) {
    return std::max({std::abs(v.x), std::abs(v.y), std::abs(v.z)});
}

template <std::floating_point T>
inline bool all_finite(const Vec3<T>& v) {
    return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

using Vec3f = Vec3<float>;
using Vec3d = Vec3<double>;

/// Row-major 3x3 matrix, rows are the camera basis vectors when used as a rotation.
template <std::floating_point T>
struct Mat3 {
    Vec3<T> rows[3]{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

    constexpr Vec3<T> operator*(const Vec3<T>& v) const { return {dot(rows[0], v), dot(rows[1], v), dot(rows[2], v)}; }
    constexpr Vec3<T> col(std::size_t c) const { return {rows[0][c], rows[1][c], rows[2][c]}; }
    constexpr Vec3<T> transposed_times(const Vec3<T>& v) const {
        return rows[0] * v.x + rows[1] * v.y + rows[2] * v.z;
    }
};

using Mat3f = Mat3<float>;

}  // namespace vosh
