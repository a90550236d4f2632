#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sser/engine.hpp"
#include "sser/input_model.hpp"

namespace sser {

/// Series system of four branches in the standard normal plane.
double four_branch(std::span<const double> x);

/// Two piecewise-linear branches; the second carries a negligible failure probability.
double piecewise_linear(std::span<const double> x);

// ---------------------------------------------------------------------------
// Five-story, three-bay plane frame.

/// Element property sets B1..B4 (beams) and C1..C4 (columns).
enum class ElementType { B1, B2, B3, B4, C1, C2, C3, C4 };

/// Frame layout. Column and beam lines are counted from the left; stories
/// and floors from the ground up. Loads act horizontally at the left end of
/// each floor.
struct FrameGeometry {
  std::vector<double> bay_widths;      // m
  std::vector<double> story_heights;   // m
  // Per story: exterior and interior column types.
  std::vector<std::array<ElementType, 2>> columns;
  // Per floor: exterior-bay and middle-bay beam types.
  std::vector<std::array<ElementType, 2>> beams;
  // Per floor: index of the load (0 = P1, 1 = P2, 2 = P3) or -1.
  std::vector<int> floor_load;
  // Elements per member (mesh refinement check).
  int subdivisions = 1;

  /// 25/30/25 ft bays, 16 ft first story and 12 ft above. Columns C3/C4 in
  /// stories 1-2 and C1/C2 above; beams B1/B2 at the roof and B3/B4 below.
  /// Loads P1 at the roof, P2 at floor 4, P3 at floors 1 to 3.
  static FrameGeometry standard();
};

/// Material and section data per element type.
struct SectionProperties {
  double E = 0.0;
  double I = 0.0;
  double A = 0.0;
};

/// Nodal frame model assembled from a geometry.
struct FrameModel {
  std::vector<std::array<double, 2>> nodes;
  std::vector<std::array<int, 2>> elements;
  std::vector<ElementType> element_type;
  std::vector<bool> fixed;          // per node: fully clamped
  std::vector<std::pair<int, int>> loads;  // (node, load index)
  int top_node = 0;

  static FrameModel build(const FrameGeometry& geometry);

  /// Free-DOF displacement vector (3 per free node, in node order).
  std::vector<double> solve(const std::array<SectionProperties, 8>& sections, const std::array<double, 3>& loads) const;
  /// Horizontal displacement of the top-left node (m).
  double top_displacement(const std::array<SectionProperties, 8>& sections, const std::array<double, 3>& loads) const;
  /// Support reactions summed over the base (Fx, Fy, moment about origin).
  std::array<double, 3> base_reactions(const std::array<SectionProperties, 8>& sections,
                                       const std::array<double, 3>& loads) const;
};

/// Maps the 21 inputs (P1..P3, E4, E5, I6..I13, A14..A21) to section data.
std::array<SectionProperties, 8> frame_sections(std::span<const double> x);

double frame_top_displacement(std::span<const double> x);
double frame_top_displacement(std::span<const double> x, const FrameModel& model);

inline constexpr double kFrameThreshold = 0.09;  // m

/// 0.09 m minus the top-floor displacement.
double frame_lsf(std::span<const double> x);

InputModel frame_input_model();

// ---------------------------------------------------------------------------
// Registry

struct Reference {
  double pf = 0.0;
  double beta = 0.0;
  std::size_t samples = 0;
  std::string source;
};

struct BenchmarkProblem {
  std::string id;
  std::string description;
  std::shared_ptr<const InputModel> model;
  LimitState lsf;
  std::vector<Reference> references;
  RunConfig recommended;

  Problem problem() const { return {model, lsf}; }
};

std::vector<std::string> benchmark_ids();
/// Throws std::invalid_argument for unknown ids.
BenchmarkProblem make_benchmark(const std::string& id);

/// Wraps a point-wise function as a batch limit state.
LimitState pointwise(double (*g)(std::span<const double>));

}  // namespace sser
