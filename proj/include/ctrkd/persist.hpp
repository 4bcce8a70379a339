#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctrkd/distill.hpp"
#include "ctrkd/models.hpp"
#include "ctrkd/train.hpp"

namespace ctrkd::persist {

inline constexpr std::uint32_t kFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, corrupt, version, fingerprint, content };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::optional<std::uint64_t> vocab_fingerprint;
};

struct AdamSnapshot {
  std::uint64_t steps = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamSnapshot snapshot(const train::Adam& adam);

struct LoadedModel {
  models::Model model;
  CheckpointMeta meta;
  std::optional<AdamSnapshot> adam;
};

// In-memory forms; the file functions wrap these.
std::string encode_model(const models::Model& model, const CheckpointMeta& meta,
                         const train::Adam* adam = nullptr);
// Refuses a checkpoint whose stored vocabulary fingerprint differs from
// `expected_fingerprint` when both are present.
LoadedModel decode_model(std::string_view bytes,
                         std::optional<std::uint64_t> expected_fingerprint = std::nullopt);

void save_model(const models::Model& model, const std::filesystem::path& path,
                const CheckpointMeta& meta = {}, const train::Adam* adam = nullptr);
LoadedModel load_model(const std::filesystem::path& path,
                       std::optional<std::uint64_t> expected_fingerprint = std::nullopt);

std::string encode_gate(const distill::TeacherGate& gate);
distill::TeacherGate decode_gate(std::string_view bytes);
void save_gate(const distill::TeacherGate& gate, const std::filesystem::path& path);
distill::TeacherGate load_gate(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ctrkd::persist
