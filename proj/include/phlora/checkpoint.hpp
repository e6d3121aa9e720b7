#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "phlora/dtype.hpp"
#include "phlora/errors.hpp"
#include "phlora/matrix.hpp"

namespace phlora {

// One named tensor inside a checkpoint file: dtype, shape, and the byte span
// it occupies in the data buffer.
struct TensorRecord {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::size_t> shape;
    std::size_t offset = 0; // relative to the start of the data buffer
    std::size_t length = 0;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }
};

// In-memory checkpoint: name-ordered tensor records over one contiguous byte
// buffer, plus a free-form string metadata map preserved through load/save.
struct Checkpoint {
    std::map<std::string, TensorRecord> tensors;
    std::vector<std::uint8_t> data;
    std::map<std::string, std::string> metadata;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    const TensorRecord& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ValidationError("no tensor named '" + name + "'");
        return it->second;
    }

    // Appends raw bytes and registers the record.
    void add_tensor(const std::string& name, DType dtype, std::vector<std::size_t> shape,
                    const std::vector<std::uint8_t>& bytes) {
        if (tensors.count(name)) throw DuplicateName(name);
        TensorRecord rec;
        rec.name = name;
        rec.dtype = dtype;
        rec.shape = std::move(shape);
        rec.offset = data.size();
        rec.length = bytes.size();
        if (rec.element_count() * dtype_width(dtype) != rec.length) {
            throw ValidationError("tensor '" + name + "' byte length " +
                                  std::to_string(rec.length) + " does not match shape");
        }
        data.insert(data.end(), bytes.begin(), bytes.end());
        tensors.emplace(name, std::move(rec));
    }

    std::vector<std::uint8_t> tensor_bytes(const std::string& name) const {
        const TensorRecord& rec = at(name);
        return {data.begin() + static_cast<std::ptrdiff_t>(rec.offset),
                data.begin() + static_cast<std::ptrdiff_t>(rec.offset + rec.length)};
    }
};

namespace detail {

inline std::uint64_t read_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline void write_u64_le(std::uint64_t v, std::uint8_t* p) {
    for (int i = 0; i < 8; ++i) {
        p[i] = static_cast<std::uint8_t>(v & 0xFFu);
        v >>= 8;
    }
}

inline void validate_spans(const Checkpoint& ckpt) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& [name, rec] : ckpt.tensors) {
        if (rec.offset + rec.length > ckpt.data.size() || rec.offset > ckpt.data.size()) {
            throw SpanOutOfBounds("tensor '" + name + "' span [" + std::to_string(rec.offset) +
                                  ", " + std::to_string(rec.offset + rec.length) +
                                  ") exceeds buffer of " + std::to_string(ckpt.data.size()) +
                                  " bytes");
        }
        if (rec.length > 0) spans.emplace_back(rec.offset, rec.offset + rec.length);
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].first < spans[i - 1].second) {
            throw SpanOutOfBounds("overlapping tensor spans");
        }
    }
}

} // namespace detail

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
    if (bytes.size() < 8) throw MalformedHeader("file shorter than the 8-byte length prefix");

    const std::uint64_t header_len = detail::read_u64_le(bytes.data());
    if (8 + header_len > bytes.size()) {
        throw MalformedHeader("header length " + std::to_string(header_len) +
                              " exceeds file size");
    }

    // Duplicate keys at the top level would silently collapse in the parsed
    // object, so they are caught during the parse itself.
    std::set<std::string> seen;
    nlohmann::json::parser_callback_t cb = [&](int depth, nlohmann::json::parse_event_t event,
                                               nlohmann::json& parsed) {
        if (event == nlohmann::json::parse_event_t::key && depth == 1) {
            if (!seen.insert(parsed.get<std::string>()).second) {
                throw DuplicateName(parsed.get<std::string>());
            }
        }
        return true;
    };

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 8,
                                       bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len),
                                       cb);
    } catch (const DuplicateName&) {
        throw;
    } catch (const std::exception& e) {
        throw MalformedHeader(e.what());
    }
    if (!header.is_object()) throw MalformedHeader("header is not a JSON object");

    Checkpoint ckpt;
    ckpt.data.assign(bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len), bytes.end());

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object()) throw MalformedHeader("__metadata__ is not an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) throw MalformedHeader("__metadata__ values must be strings");
                ckpt.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            throw MalformedHeader("tensor '" + name + "' missing dtype/shape/data_offsets");
        }
        TensorRecord rec;
        rec.name = name;
        if (!entry["dtype"].is_string()) throw MalformedHeader("dtype must be a string");
        rec.dtype = dtype_from_string(entry["dtype"].get<std::string>());
        if (!entry["shape"].is_array()) throw MalformedHeader("shape must be an array");
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_unsigned()) {
                throw MalformedHeader("tensor '" + name + "' has a negative or non-integer dim");
            }
            rec.shape.push_back(d.get<std::size_t>());
        }
        const auto& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_unsigned() ||
            !offs[1].is_number_unsigned()) {
            throw MalformedHeader("tensor '" + name + "' data_offsets must be [start, end]");
        }
        const std::size_t start = offs[0].get<std::size_t>();
        const std::size_t end = offs[1].get<std::size_t>();
        if (end < start) throw MalformedHeader("tensor '" + name + "' has end < start");
        rec.offset = start;
        rec.length = end - start;
        if (rec.element_count() * dtype_width(rec.dtype) != rec.length) {
            throw MalformedHeader("tensor '" + name + "' byte span does not match shape * dtype width");
        }
        ckpt.tensors.emplace(name, std::move(rec));
    }
    detail::validate_spans(ckpt);
    return ckpt;
}

// Canonical serialization: tensors in name order with contiguous recomputed
// offsets, compact JSON with sorted keys. Saving the same logical checkpoint
// twice yields byte-identical files.
inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    nlohmann::json header = nlohmann::json::object();
    std::vector<std::uint8_t> out_data;
    out_data.reserve(ckpt.data.size());

    for (const auto& [name, rec] : ckpt.tensors) {
        if (rec.offset + rec.length > ckpt.data.size()) {
            throw SpanOutOfBounds("tensor '" + name + "' span exceeds buffer");
        }
        const std::size_t start = out_data.size();
        out_data.insert(out_data.end(),
                        ckpt.data.begin() + static_cast<std::ptrdiff_t>(rec.offset),
                        ckpt.data.begin() + static_cast<std::ptrdiff_t>(rec.offset + rec.length));
        header[name] = {{"dtype", dtype_name(rec.dtype)},
                        {"shape", rec.shape},
                        {"data_offsets", {start, start + rec.length}}};
    }
    if (!ckpt.metadata.empty()) {
        header["__metadata__"] = ckpt.metadata;
    }

    const std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    std::uint8_t len_bytes[8];
    detail::write_u64_le(header_str.size(), len_bytes);
    out.write(reinterpret_cast<const char*>(len_bytes), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    if (!out_data.empty()) {
        out.write(reinterpret_cast<const char*>(out_data.data()),
                  static_cast<std::streamsize>(out_data.size()));
    }
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

// Decode a 2-D tensor to a double Matrix. NaN or Inf payloads are rejected
// here so they cannot poison downstream SVDs.
inline Matrix to_matrix(const TensorRecord& rec, const std::vector<std::uint8_t>& buffer) {
    if (rec.shape.size() != 2 || rec.shape[0] == 0 || rec.shape[1] == 0) {
        std::string dims;
        for (std::size_t i = 0; i < rec.shape.size(); ++i) {
            dims += (i ? "x" : "") + std::to_string(rec.shape[i]);
        }
        throw NotTwoDimensional("tensor '" + rec.name + "' has shape [" + dims + "]");
    }
    if (rec.offset + rec.length > buffer.size()) {
        throw SpanOutOfBounds("tensor '" + rec.name + "'");
    }
    const std::size_t rows = rec.shape[0], cols = rec.shape[1];
    const std::size_t width = dtype_width(rec.dtype);
    Matrix m(rows, cols);
    const std::uint8_t* src = buffer.data() + rec.offset;
    for (std::size_t i = 0; i < rows * cols; ++i) {
        const double v = decode_element(rec.dtype, src + i * width);
        if (!std::isfinite(v)) {
            throw ValidationError("tensor '" + rec.name + "' contains a non-finite value");
        }
        m.data()[i] = v;
    }
    return m;
}

inline Matrix to_matrix(const Checkpoint& ckpt, const std::string& name) {
    return to_matrix(ckpt.at(name), ckpt.data);
}

// Encode a Matrix as a tensor record plus payload bytes, rounding to the
// requested storage dtype.
inline std::pair<TensorRecord, std::vector<std::uint8_t>> from_matrix(const Matrix& m,
                                                                      const std::string& name,
                                                                      DType dtype) {
    TensorRecord rec;
    rec.name = name;
    rec.dtype = dtype;
    rec.shape = {m.rows(), m.cols()};
    const std::size_t width = dtype_width(dtype);
    std::vector<std::uint8_t> bytes(m.size() * width);
    for (std::size_t i = 0; i < m.size(); ++i) {
        encode_element(dtype, m.data()[i], bytes.data() + i * width);
    }
    rec.offset = 0;
    rec.length = bytes.size();
    return {rec, bytes};
}

} // namespace phlora
