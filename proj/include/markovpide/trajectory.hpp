#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

namespace markovpide {

enum class MeasureTag { reference, physical };

inline const char* to_string(MeasureTag m) {
    return m == MeasureTag::reference ? "reference" : "physical";
}

struct PathEvent {
    double time = 0.0;
    int mark_index = -1;
    bool accepted = true;  // always true under the reference measure
};

/// One simulated path of X = (Z, L) together with the Girsanov density xi
/// along it. Rows are grid times; an event contributes two rows at the same
/// time, the pre-jump state from the diffusion landing and the post-jump state
/// flagged as the event row. L (and xi) change only across event rows.
struct Trajectory {
    MeasureTag measure_tag = MeasureTag::reference;
    int dim_z = 1;
    std::vector<double> grid_times;
    std::vector<double> z_flat;  // n_rows * dim_z, row-major
    std::vector<double> l_path;
    std::vector<double> xi_path;  // identically 1 under the physical tag
    std::vector<std::int8_t> row_event;     // 1 on post-jump rows
    std::vector<int> row_mark;              // mark index on event rows, -1 otherwise
    std::vector<std::int8_t> row_accepted;  // acceptance flag on event rows
    std::vector<PathEvent> events;
    std::uint64_t seed = 0;
    std::uint64_t path_index = 0;
    double dt_max = 0.0;
    bool xi_hit_zero = false;  // a zero jump density was hit at an event

    std::size_t n_rows() const { return grid_times.size(); }
    std::span<const double> z_row(std::size_t i) const {
        return {z_flat.data() + i * static_cast<std::size_t>(dim_z), static_cast<std::size_t>(dim_z)};
    }

    void clear() {
        grid_times.clear();
        z_flat.clear();
        l_path.clear();
        xi_path.clear();
        row_event.clear();
        row_mark.clear();
        row_accepted.clear();
        events.clear();
        xi_hit_zero = false;
    }
};

}  // namespace markovpide
