#include <doctest.h>

#include <cstring>

#include "ctrkd/hash.hpp"
#include "ctrkd/persist.hpp"
#include "test_support.hpp"

using namespace ctrkd;
using namespace ctrkd::persist;
using features::InputLayout;
using models::Model;
using models::ModelSpec;

namespace {

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

CheckpointError::Kind decode_error(std::string_view bytes, std::optional<std::uint64_t> fp = {}) {
  try {
    decode_model(bytes, fp);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("decode succeeded");
  return CheckpointError::Kind::io;
}

}  // namespace

TEST_CASE("save/load reproduces predictions bitwise for every zoo model") {
  const InputLayout layout{{6, 4, 9}, 2};
  const auto data = testing::random_dataset(layout, 100, 5);
  const auto batch = testing::whole_batch(data, false);
  const auto dir = testing::scratch_dir("persist_roundtrip");
  for (const auto& name : testing::zoo_names()) {
    Model m(ModelSpec::preset(name, {8, 4}, 3), layout, 3);
    testing::randomize(m, 4, 0.3);
    const auto path = dir / (name + ".ckpt");
    save_model(m, path, {7, 3, 0xABCDULL});
    const auto loaded = load_model(path, 0xABCDULL);
    CHECK(loaded.model.spec() == m.spec());
    CHECK(loaded.model.layout() == m.layout());
    CHECK(loaded.meta.seed == 7);
    CHECK(loaded.meta.epoch == 3);
    CHECK(same_bits(loaded.model.predict(batch), m.predict(batch)));
    CHECK(!loaded.adam);
  }
}

TEST_CASE("optimizer state round trip") {
  const InputLayout layout{{3, 3}, 0};
  Model m(ModelSpec::preset("dnn", {4}, 2), layout, 1);
  train::Adam adam(m.parameter_tensors());
  for (auto& p : m.parameters()) {
    for (auto& g : p.tensor.grad()) g = 0.25;
  }
  adam.step();
  const auto bytes = encode_model(m, {}, &adam);
  const auto loaded = decode_model(bytes);
  REQUIRE(loaded.adam);
  CHECK(loaded.adam->steps == 1);
  const auto snap = snapshot(adam);
  REQUIRE(loaded.adam->m.size() == snap.m.size());
  for (std::size_t i = 0; i < snap.m.size(); ++i) {
    CHECK(same_bits(loaded.adam->m[i], snap.m[i]));
    CHECK(same_bits(loaded.adam->v[i], snap.v[i]));
  }
}

TEST_CASE("truncated or damaged files are corrupt") {
  Model m(ModelSpec::preset("dcn", {4}, 2), InputLayout{{3, 5}, 1}, 1);
  const auto bytes = encode_model(m, {});
  for (std::size_t cut : {std::size_t{0}, std::size_t{4}, std::size_t{20}, bytes.size() / 2,
                          bytes.size() - 1}) {
    CHECK(decode_error(std::string_view(bytes).substr(0, cut)) == CheckpointError::Kind::corrupt);
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK(decode_error(flipped) == CheckpointError::Kind::corrupt);

  const auto dir = testing::scratch_dir("persist_truncated");
  write_file(dir / "t.ckpt", std::string_view(bytes).substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(load_model(dir / "t.ckpt"), CheckpointError);
  try {
    load_model(dir / "missing.ckpt");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::io);
  }
}

TEST_CASE("version mismatch is refused") {
  Model m(ModelSpec::preset("lr"), InputLayout{{3}, 0}, 1);
  auto bytes = encode_model(m, {});
  bytes[8] = 2;  // u32 version right after the 8-byte magic
  CHECK(decode_error(bytes) == CheckpointError::Kind::version);
}

TEST_CASE("vocabulary fingerprint mismatch is refused") {
  // Two vocabularies differing in one token.
  features::TableSchema schema;
  schema.fields = {{"C1", features::FieldKind::categorical, 1}};
  std::vector<features::RawRecord> a_rows{{{"x"}, {}, 0, ""}, {{"y"}, {}, 1, ""}};
  auto b_rows = a_rows;
  b_rows[1].categorical[0] = "z";
  const auto va = features::Vocabulary::build(a_rows, schema, 1);
  const auto vb = features::Vocabulary::build(b_rows, schema, 1);
  REQUIRE(va.fingerprint() != vb.fingerprint());

  Model m(ModelSpec::preset("fm", {}, 2), InputLayout{va.sizes(), 0}, 1);
  const auto bytes = encode_model(m, {1, 1, va.fingerprint()});
  CHECK_NOTHROW(decode_model(bytes, va.fingerprint()));
  CHECK(decode_error(bytes, vb.fingerprint()) == CheckpointError::Kind::fingerprint);
}

TEST_CASE("file bytes are deterministic") {
  const InputLayout layout{{5, 5}, 1};
  Model a(ModelSpec::preset("xdeepfm", {4}, 3), layout, 9);
  Model b(ModelSpec::preset("xdeepfm", {4}, 3), layout, 9);
  const auto ea = encode_model(a, {9, 0, 42});
  CHECK(ea == encode_model(b, {9, 0, 42}));
  CHECK(fnv1a(ea) == fnv1a(encode_model(a, {9, 0, 42})));
  CHECK(ea.substr(0, 8) == "CTRKDCKP");
}

TEST_CASE("gate round trip") {
  distill::TeacherGate g({0.1, -0.25, 3.0}, {1e-300, 0.0, -7.5});
  const auto back = decode_gate(encode_gate(g));
  CHECK(same_bits({back.w().values().begin(), back.w().values().end()}, {0.1, -0.25, 3.0}));
  CHECK(same_bits({back.b().values().begin(), back.b().values().end()}, {1e-300, 0.0, -7.5}));
  Model m(ModelSpec::preset("lr"), InputLayout{{3}, 0}, 1);
  CHECK_THROWS_AS(decode_gate(encode_model(m, {})), CheckpointError);
}
