#include "alert/common.hpp"
#include "alert/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace alert {

std::string_view to_string(Category c) {
  switch (c) {
    case Category::kBenign: return "benign";
    case Category::kHarmful: return "harmful";
    case Category::kJailbreak: return "jailbreak";
  }
  return "?";
}

std::string_view to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

std::string_view to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::kGating: return "gating";
    case FeatureKind::kContext: return "context";
    case FeatureKind::kHidden: return "hidden";
  }
  return "?";
}

Category parse_category(std::string_view s) {
  if (s == "benign") return Category::kBenign;
  if (s == "harmful") return Category::kHarmful;
  if (s == "jailbreak") return Category::kJailbreak;
  throw Error("unknown category: " + std::string(s));
}

FeatureKind parse_feature_kind(std::string_view s) {
  if (s == "gating") return FeatureKind::kGating;
  if (s == "context") return FeatureKind::kContext;
  if (s == "hidden") return FeatureKind::kHidden;
  throw Error("unknown feature kind: " + std::string(s));
}

namespace io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace io
}  // namespace alert
