#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "phlora/checkpoint.hpp"
#include "fixtures.hpp"

using phlora::Checkpoint;
using phlora::DType;
using phlora::Matrix;

namespace {

const std::string kSingleTensorHeader =
    R"({"w": {"dtype": "F32", "shape": [2, 2], "data_offsets": [0, 16]}})";

std::vector<std::uint8_t> single_tensor_file() {
    return fixtures::raw_tensor_file(kSingleTensorHeader,
                                     fixtures::f32_payload({1.0f, 2.0f, 3.0f, 4.0f}));
}

} // namespace

TEST(CheckpointLoad, HandBuiltSingleTensorFixture) {
    fixtures::TempDir dir("load_single");
    const auto path = dir / "one.safetensors";
    fixtures::write_bytes(path, single_tensor_file());

    Checkpoint ckpt = phlora::load_checkpoint(path);
    ASSERT_EQ(ckpt.tensors.size(), 1u);
    const auto& rec = ckpt.at("w");
    EXPECT_EQ(rec.dtype, DType::F32);
    EXPECT_EQ(rec.shape, (std::vector<std::size_t>{2, 2}));

    Matrix m = phlora::to_matrix(ckpt, "w");
    EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(m(0, 1), 2.0);
    EXPECT_DOUBLE_EQ(m(1, 0), 3.0);
    EXPECT_DOUBLE_EQ(m(1, 1), 4.0);
}

TEST(CheckpointLoad, EmptyTensorMap) {
    fixtures::TempDir dir("load_empty");
    const auto path = dir / "empty.safetensors";
    fixtures::write_bytes(path, fixtures::raw_tensor_file("{}", {}));
    Checkpoint ckpt = phlora::load_checkpoint(path);
    EXPECT_TRUE(ckpt.tensors.empty());
    EXPECT_TRUE(ckpt.metadata.empty());
}

TEST(CheckpointLoad, OverlappingSpansRejected) {
    fixtures::TempDir dir("load_overlap");
    const auto path = dir / "bad.safetensors";
    const std::string header =
        R"({"a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},)"
        R"( "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]}})";
    fixtures::write_bytes(path,
                          fixtures::raw_tensor_file(header, std::vector<std::uint8_t>(12, 0)));
    EXPECT_THROW(phlora::load_checkpoint(path), phlora::SpanOutOfBounds);
}

TEST(CheckpointLoad, SpanPastBufferRejected) {
    fixtures::TempDir dir("load_oob");
    const auto path = dir / "bad.safetensors";
    const std::string header = R"({"a": {"dtype": "F32", "shape": [4], "data_offsets": [0, 16]}})";
    fixtures::write_bytes(path, fixtures::raw_tensor_file(header, std::vector<std::uint8_t>(8, 0)));
    EXPECT_THROW(phlora::load_checkpoint(path), phlora::SpanOutOfBounds);
}

TEST(CheckpointLoad, DuplicateNameRejected) {
    fixtures::TempDir dir("load_dup");
    const auto path = dir / "bad.safetensors";
    const std::string header =
        R"({"a": {"dtype": "F32", "shape": [1], "data_offsets": [0, 4]},)"
        R"( "a": {"dtype": "F32", "shape": [1], "data_offsets": [4, 8]}})";
    fixtures::write_bytes(path, fixtures::raw_tensor_file(header, std::vector<std::uint8_t>(8, 0)));
    EXPECT_THROW(phlora::load_checkpoint(path), phlora::DuplicateName);
}

TEST(CheckpointLoad, MalformedCasesRejected) {
    fixtures::TempDir dir("load_malformed");
    const auto path = dir / "bad.safetensors";

    fixtures::write_bytes(path, fixtures::raw_tensor_file("{not json", {}));
    EXPECT_THROW(phlora::load_checkpoint(path), phlora::MalformedHeader);

    fixtures::write_bytes(
        path, fixtures::raw_tensor_file(
                  R"({"a": {"dtype": "I8", "shape": [1], "data_offsets": [0, 1]}})",
                  std::vector<std::uint8_t>(1, 0)));
    EXPECT_THROW(phlora::load_checkpoint(path), phlora::MalformedHeader);

    fixtures::write_bytes(path, fixtures::raw_tensor_file(R"({"a": {"dtype": "F32"}})", {}));
    EXPECT_THROW(phlora::load_checkpoint(path), phlora::MalformedHeader);

    // header length prefix pointing past end of file
    std::vector<std::uint8_t> truncated = {0xFF, 0, 0, 0, 0, 0, 0, 0};
    fixtures::write_bytes(path, truncated);
    EXPECT_THROW(phlora::load_checkpoint(path), phlora::MalformedHeader);

    // shape/span disagreement
    fixtures::write_bytes(
        path, fixtures::raw_tensor_file(
                  R"({"a": {"dtype": "F32", "shape": [3], "data_offsets": [0, 8]}})",
                  std::vector<std::uint8_t>(8, 0)));
    EXPECT_THROW(phlora::load_checkpoint(path), phlora::MalformedHeader);
}

TEST(CheckpointLoad, MissingFileIsIoError) {
    EXPECT_THROW(phlora::load_checkpoint("/nonexistent/nope.safetensors"), phlora::IoError);
}

TEST(CheckpointSave, LoadSaveLoadPreservesTensorBytes) {
    fixtures::TempDir dir("roundtrip");
    const auto first = dir / "first.safetensors";
    fixtures::write_bytes(first, single_tensor_file());

    Checkpoint a = phlora::load_checkpoint(first);
    const auto second = dir / "second.safetensors";
    phlora::save_checkpoint(a, second);
    Checkpoint b = phlora::load_checkpoint(second);

    ASSERT_TRUE(b.has("w"));
    EXPECT_EQ(a.tensor_bytes("w"), b.tensor_bytes("w"));
    EXPECT_EQ(a.at("w").shape, b.at("w").shape);
    EXPECT_EQ(a.at("w").dtype, b.at("w").dtype);
}

TEST(CheckpointSave, HalfPrecisionBytesSurviveUntouched) {
    fixtures::TempDir dir("half");
    Checkpoint ckpt;
    // raw pattern bytes, including subnormals and negative zero
    std::vector<std::uint8_t> f16_bytes = {0x00, 0x3C, 0x01, 0x00, 0xFF, 0x7B, 0x00, 0x80};
    std::vector<std::uint8_t> bf16_bytes = {0x80, 0x3F, 0x01, 0x00, 0x7F, 0x7F, 0xCC, 0x3D};
    ckpt.add_tensor("h", DType::F16, {2, 2}, f16_bytes);
    ckpt.add_tensor("b", DType::BF16, {2, 2}, bf16_bytes);

    const auto path = dir / "half.safetensors";
    phlora::save_checkpoint(ckpt, path);
    Checkpoint back = phlora::load_checkpoint(path);
    EXPECT_EQ(back.tensor_bytes("h"), f16_bytes);
    EXPECT_EQ(back.tensor_bytes("b"), bf16_bytes);
}

TEST(CheckpointSave, CanonicalWriterIsDeterministic) {
    fixtures::TempDir dir("canonical");
    Checkpoint ckpt;
    ckpt.metadata["note"] = "fixture";
    ckpt.add_tensor("z_last", DType::F32, {1, 2}, fixtures::f32_payload({1.0f, 2.0f}));
    ckpt.add_tensor("a_first", DType::F32, {2, 1}, fixtures::f32_payload({3.0f, 4.0f}));

    const auto p1 = dir / "one.safetensors";
    const auto p2 = dir / "two.safetensors";
    phlora::save_checkpoint(ckpt, p1);
    Checkpoint reloaded = phlora::load_checkpoint(p1);
    phlora::save_checkpoint(reloaded, p2);
    EXPECT_EQ(fixtures::read_bytes(p1), fixtures::read_bytes(p2));
}

TEST(CheckpointSave, ZeroTensorCheckpointIsValid) {
    fixtures::TempDir dir("zero");
    Checkpoint empty;
    const auto path = dir / "empty.safetensors";
    phlora::save_checkpoint(empty, path);
    Checkpoint back = phlora::load_checkpoint(path);
    EXPECT_TRUE(back.tensors.empty());
}

TEST(CheckpointSave, MetadataPreservedVerbatim) {
    fixtures::TempDir dir("meta");
    Checkpoint ckpt;
    ckpt.metadata["format"] = "pt";
    ckpt.metadata["source"] = "unit-test";
    ckpt.add_tensor("t", DType::F32, {1, 1}, fixtures::f32_payload({5.0f}));
    const auto path = dir / "meta.safetensors";
    phlora::save_checkpoint(ckpt, path);
    Checkpoint back = phlora::load_checkpoint(path);
    EXPECT_EQ(back.metadata, ckpt.metadata);
}

TEST(ToMatrix, RejectsNon2D) {
    phlora::TensorRecord rec;
    rec.name = "v";
    rec.dtype = DType::F32;
    rec.shape = {5};
    rec.offset = 0;
    rec.length = 20;
    std::vector<std::uint8_t> buffer(20, 0);
    EXPECT_THROW(phlora::to_matrix(rec, buffer), phlora::NotTwoDimensional);
}

TEST(ToMatrix, DecodesBf16OneExactly) {
    phlora::TensorRecord rec;
    rec.name = "b";
    rec.dtype = DType::BF16;
    rec.shape = {1, 1};
    rec.offset = 0;
    rec.length = 2;
    std::vector<std::uint8_t> buffer = {0x80, 0x3F}; // 0x3F80 little-endian
    Matrix m = phlora::to_matrix(rec, buffer);
    EXPECT_EQ(m(0, 0), 1.0);
}

TEST(ToMatrix, NaNPayloadRejected) {
    phlora::TensorRecord rec;
    rec.name = "w";
    rec.dtype = DType::F32;
    rec.shape = {1, 2};
    rec.offset = 0;
    rec.length = 8;
    const float values[2] = {1.0f, std::nanf("")};
    std::vector<std::uint8_t> buffer(8);
    std::memcpy(buffer.data(), values, 8);
    EXPECT_THROW(phlora::to_matrix(rec, buffer), phlora::ValidationError);
}

TEST(FromMatrix, F64RoundTripBitExact) {
    Matrix m(2, 2, {1.0 / 3.0, -2.5e-7, 3.0, 4e200});
    auto [rec, bytes] = phlora::from_matrix(m, "w", DType::F64);
    Matrix back = phlora::to_matrix(rec, bytes);
    for (std::size_t i = 0; i < m.size(); ++i) {
        EXPECT_EQ(back.data()[i], m.data()[i]);
    }
}

TEST(FromMatrix, F32RoundTripWithinRoundoff) {
    Matrix m(1, 1, {1.0 / 3.0});
    auto [rec, bytes] = phlora::from_matrix(m, "w", DType::F32);
    Matrix back = phlora::to_matrix(rec, bytes);
    EXPECT_LE(std::abs(back(0, 0) - 1.0 / 3.0), 2.0 * std::ldexp(1.0, -24) / 3.0);
}

TEST(Checkpoint, AddTensorRejectsDuplicates) {
    Checkpoint ckpt;
    ckpt.add_tensor("t", DType::F32, {1, 1}, fixtures::f32_payload({1.0f}));
    EXPECT_THROW(ckpt.add_tensor("t", DType::F32, {1, 1}, fixtures::f32_payload({2.0f})),
                 phlora::DuplicateName);
}
