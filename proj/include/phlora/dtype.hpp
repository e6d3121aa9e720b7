#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "phlora/errors.hpp"

namespace phlora {

enum class DType : std::uint8_t { F64, F32, F16, BF16 };

inline std::size_t dtype_width(DType t) {
    switch (t) {
        case DType::F64: return 8;
        case DType::F32: return 4;
        case DType::F16: return 2;
        case DType::BF16: return 2;
    }
    return 0;
}

inline const char* dtype_name(DType t) {
    switch (t) {
        case DType::F64: return "F64";
        case DType::F32: return "F32";
        case DType::F16: return "F16";
        case DType::BF16: return "BF16";
    }
    return "?";
}

inline DType dtype_from_string(const std::string& s) {
    if (s == "F64") return DType::F64;
    if (s == "F32") return DType::F32;
    if (s == "F16") return DType::F16;
    if (s == "BF16") return DType::BF16;
    throw MalformedHeader("unknown dtype '" + s + "'");
}

namespace dtype {

inline float bits_to_f32(std::uint32_t bits) {
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
}

inline std::uint32_t f32_to_bits(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    return bits;
}

// bf16 is the top 16 bits of an f32, so widening is exact.
inline float bf16_to_f32(std::uint16_t h) {
    return bits_to_f32(static_cast<std::uint32_t>(h) << 16);
}

inline std::uint16_t f32_to_bf16(float f) {
    std::uint32_t bits = f32_to_bits(f);
    if ((bits & 0x7F800000u) == 0x7F800000u && (bits & 0x007FFFFFu) != 0) {
        // NaN: keep sign, force a quiet payload that survives truncation
        return static_cast<std::uint16_t>((bits >> 16) | 0x0040u);
    }
    const std::uint32_t rounding_bias = 0x7FFFu + ((bits >> 16) & 1u);
    return static_cast<std::uint16_t>((bits + rounding_bias) >> 16);
}

inline float f16_to_f32(std::uint16_t h) {
    const std::uint32_t sign = (h >> 15) & 1u;
    std::uint32_t exponent = (h >> 10) & 0x1Fu;
    std::uint32_t mantissa = static_cast<std::uint32_t>(h & 0x3FFu) << 13;
    if (exponent == 0x1Fu) { // inf / NaN
        exponent = 0xFFu;
        if (mantissa != 0) mantissa |= 0x400000u; // quiet
    } else if (exponent == 0) {
        if (mantissa != 0) { // subnormal: normalize
            exponent = 0x71u;
            std::uint32_t msb;
            do {
                msb = mantissa & 0x400000u;
                mantissa <<= 1;
                --exponent;
            } while (!msb);
            mantissa &= 0x7FFFFFu;
        }
    } else {
        exponent += 0x70u;
    }
    return bits_to_f32((sign << 31) | (exponent << 23) | mantissa);
}

// Round-to-nearest-even f32 -> f16, overflow saturates to inf per IEEE.
inline std::uint16_t f32_to_f16(float f) {
    const std::uint32_t x = f32_to_bits(f);
    const std::uint32_t u = x & 0x7FFFFFFFu;
    const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);

    if (u > 0x7F800000u) return static_cast<std::uint16_t>(sign | 0x7E00u); // NaN
    if (u >= 0x47800000u) return static_cast<std::uint16_t>(sign | 0x7C00u); // overflow -> inf
    if (u < 0x33000001u) return sign; // underflow -> signed zero

    std::uint32_t exponent = (u >> 23) & 0xFFu;
    std::uint32_t mantissa = u & 0x7FFFFFu;
    std::uint32_t shift;
    if (exponent > 0x70u) {
        shift = 13;
        exponent -= 0x70u;
    } else {
        shift = 0x7Eu - exponent;
        exponent = 0;
        mantissa |= 0x800000u;
    }
    const std::uint32_t lsb = 1u << shift;
    const std::uint32_t lsb_s1 = lsb >> 1;
    const std::uint32_t remainder = mantissa & (lsb - 1);
    mantissa >>= shift;
    if (remainder > lsb_s1 || (remainder == lsb_s1 && (mantissa & 1u))) {
        ++mantissa;
        if (!(mantissa & 0x3FFu)) {
            ++exponent;
            mantissa = 0;
        }
    }
    return static_cast<std::uint16_t>(sign | (exponent << 10) | mantissa);
}

} // namespace dtype

// Decode one element at `ptr` to double. Widening through f32 is exact for
// every 16-bit format, so no precision is lost.
inline double decode_element(DType t, const std::uint8_t* ptr) {
    switch (t) {
        case DType::F64: {
            double d;
            std::memcpy(&d, ptr, 8);
            return d;
        }
        case DType::F32: {
            float f;
            std::memcpy(&f, ptr, 4);
            return static_cast<double>(f);
        }
        case DType::F16: {
            std::uint16_t h;
            std::memcpy(&h, ptr, 2);
            return static_cast<double>(dtype::f16_to_f32(h));
        }
        case DType::BF16: {
            std::uint16_t h;
            std::memcpy(&h, ptr, 2);
            return static_cast<double>(dtype::bf16_to_f32(h));
        }
    }
    throw ValidationError("unreachable dtype");
}

// Encode one double at `ptr`, nearest-even rounding on downcast.
inline void encode_element(DType t, double v, std::uint8_t* ptr) {
    switch (t) {
        case DType::F64: {
            std::memcpy(ptr, &v, 8);
            return;
        }
        case DType::F32: {
            const float f = static_cast<float>(v);
            std::memcpy(ptr, &f, 4);
            return;
        }
        case DType::F16: {
            const std::uint16_t h = dtype::f32_to_f16(static_cast<float>(v));
            std::memcpy(ptr, &h, 2);
            return;
        }
        case DType::BF16: {
            const std::uint16_t h = dtype::f32_to_bf16(static_cast<float>(v));
            std::memcpy(ptr, &h, 2);
            return;
        }
    }
}

} // namespace phlora
