#pragma once

// Shared scaffolding for tests that touch the filesystem: unique temp
// directories and synthetic base/fine-tuned checkpoint pairs with injected
// low-rank deltas (the delta is known by construction, so it doubles as the
// oracle for extraction accuracy).

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "phlora/checkpoint.hpp"
#include "phlora/matrix.hpp"
#include "oracles.hpp"

namespace fixtures {

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<std::uint64_t> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("phlora_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Raw tensor-file bytes assembled by hand from the wire format, independent
// of save_checkpoint.
inline std::vector<std::uint8_t> raw_tensor_file(const std::string& header_json,
                                                 const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> bytes(8, 0);
    std::uint64_t len = header_json.size();
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<std::uint8_t>(len & 0xFFu);
        len >>= 8;
    }
    bytes.insert(bytes.end(), header_json.begin(), header_json.end());
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    return bytes;
}

inline std::vector<std::uint8_t> f32_payload(const std::vector<float>& values) {
    std::vector<std::uint8_t> bytes(values.size() * 4);
    std::memcpy(bytes.data(), values.data(), bytes.size());
    return bytes;
}

struct LayerSpec {
    std::string name;
    std::size_t d;
    std::size_t k;
    std::size_t injected_rank; // 0 = identical in base and fine-tuned
    double delta_magnitude = 0.1;
};

struct ModelPair {
    std::filesystem::path base_path;
    std::filesystem::path ft_path;
    std::map<std::string, phlora::Matrix> base_weights;
    std::map<std::string, phlora::Matrix> ft_weights;
};

// Builds base and fine-tuned checkpoints where each layer's delta is an
// exactly rank-q product, plus optional extra tensors copied verbatim.
inline ModelPair make_model_pair(const std::filesystem::path& dir,
                                 const std::vector<LayerSpec>& layers,
                                 phlora::DType storage = phlora::DType::F64,
                                 std::uint32_t seed = 1000) {
    ModelPair pair;
    pair.base_path = dir / "base.safetensors";
    pair.ft_path = dir / "finetuned.safetensors";

    phlora::Checkpoint base, ft;
    base.metadata["producer"] = "fixture";
    ft.metadata["producer"] = "fixture";
    std::uint32_t s = seed;
    for (const auto& layer : layers) {
        phlora::Matrix w_base = oracles::random_matrix(layer.d, layer.k, s++);
        phlora::Matrix w_ft = w_base;
        if (layer.injected_rank > 0) {
            phlora::Matrix update = phlora::scale(
                oracles::random_low_rank(layer.d, layer.k, layer.injected_rank, s),
                layer.delta_magnitude);
            s += 2;
            w_ft = phlora::add(w_base, update);
        }
        auto [rec_b, bytes_b] = phlora::from_matrix(w_base, layer.name, storage);
        auto [rec_f, bytes_f] = phlora::from_matrix(w_ft, layer.name, storage);
        base.add_tensor(layer.name, storage, rec_b.shape, bytes_b);
        ft.add_tensor(layer.name, storage, rec_f.shape, bytes_f);
        pair.base_weights.emplace(layer.name, phlora::to_matrix(rec_b, bytes_b));
        pair.ft_weights.emplace(layer.name, phlora::to_matrix(rec_f, bytes_f));
    }
    phlora::save_checkpoint(base, pair.base_path);
    phlora::save_checkpoint(ft, pair.ft_path);
    return pair;
}

// Adds a 1-D tensor (bias-like) with identical bytes to both files.
inline void add_shared_vector(const std::filesystem::path& base_path,
                              const std::filesystem::path& ft_path, const std::string& name,
                              std::size_t n, std::uint32_t seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::vector<float> values(n);
    for (float& v : values) v = dist(gen);
    for (const auto& path : {base_path, ft_path}) {
        phlora::Checkpoint ckpt = phlora::load_checkpoint(path);
        ckpt.add_tensor(name, phlora::DType::F32, {n}, f32_payload(values));
        phlora::save_checkpoint(ckpt, path);
    }
}

} // namespace fixtures
