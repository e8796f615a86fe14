#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace alert {

/// Raised for invalid data, violated invariants and failed preconditions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Category : std::uint8_t { kBenign = 0, kHarmful = 1, kJailbreak = 2 };
enum class Split : std::uint8_t { kTrain = 0, kTest = 1 };
enum class FeatureKind : std::uint8_t { kGating = 0, kContext = 1, kHidden = 2 };

inline constexpr FeatureKind kAllKinds[] = {FeatureKind::kGating, FeatureKind::kContext,
                                            FeatureKind::kHidden};

std::string_view to_string(Category c);
std::string_view to_string(Split s);
std::string_view to_string(FeatureKind k);

Category parse_category(std::string_view s);
FeatureKind parse_feature_kind(std::string_view s);

// Token matrices are stored row-major: one row per token.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using TokenMatrix = RowMatrix<float>;

}  // namespace alert
