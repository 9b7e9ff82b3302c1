#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "movi/autograd.hpp"

namespace movi {

// The displacement offsets used to build the stack of displaced frame
// differences. Horizontal and vertical offsets are kept sorted so channel
// order (and therefore bitstream compatibility) is a function of the set,
// not of listing order.
struct DisplacementSet {
    std::vector<int> horizontal;
    std::vector<int> vertical;

    static DisplacementSet standard() {
        return {{-7, -5, -3, 3, 5, 7}, {-7, -5, -3, 3, 5, 7}};
    }
    // Plain frame difference only.
    static DisplacementSet zero_only() { return {{}, {}}; }

    void canonicalize() {
        auto fix = [](std::vector<int>& v) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            // 0 is always present implicitly as the undisplaced slot.
            v.erase(std::remove(v.begin(), v.end(), 0), v.end());
        };
        fix(horizontal);
        fix(vertical);
    }

    size_t count() const { return 1 + horizontal.size() + vertical.size(); }
    int64_t channels() const { return static_cast<int64_t>(3 * count()); }

    bool operator==(const DisplacementSet& o) const {
        return horizontal == o.horizontal && vertical == o.vertical;
    }

    std::string describe() const {
        std::string s = "h{";
        for (size_t i = 0; i < horizontal.size(); ++i)
            s += (i ? "," : "") + std::to_string(horizontal[i]);
        s += "} v{";
        for (size_t i = 0; i < vertical.size(); ++i)
            s += (i ? "," : "") + std::to_string(vertical[i]);
        return s + "}";
    }
};

// One displaced difference plane: horizontal d(i,j) = x_t(i,j) - ref(i, j-s),
// vertical d(i,j) = x_t(i,j) - ref(i-s, j), with ref reads past the border
// replicating the edge. axis: 1 = horizontal, 0 = vertical.
template <typename T>
ag::Var<T> displaced_difference(const ag::Var<T>& x_t, const ag::Var<T>& ref,
                                int axis, int s) {
    if (!x_t.val().same_shape(ref.val()))
        throw std::invalid_argument("displaced_difference: frame shape mismatch");
    const Shape& sh = x_t.val().shape();
    int64_t limit = axis == 1 ? sh[3] : sh[2];
    if (std::abs(s) >= limit)
        throw std::invalid_argument("displaced_difference: |s| = " + std::to_string(std::abs(s)) +
                                    " exceeds frame dimension " + std::to_string(limit));
    return ag::sub(x_t, ag::shift2d(ref, axis, static_cast<int64_t>(-s)));
}

// Stack of displaced frame differences, the only motion signal the codec
// sees. Slot 0 is the plain difference x_t - ref; then one slot per
// horizontal offset in ascending order, then vertical offsets ascending.
// Output channels = 3 * (1 + |H| + |V|).
template <typename T>
ag::Var<T> displaced_differences(const ag::Var<T>& x_t, const ag::Var<T>& ref,
                                 const DisplacementSet& set) {
    std::vector<ag::Var<T>> slots;
    slots.reserve(set.count());
    slots.push_back(displaced_difference(x_t, ref, 1, 0));
    for (int s : set.horizontal) slots.push_back(displaced_difference(x_t, ref, 1, s));
    for (int s : set.vertical) slots.push_back(displaced_difference(x_t, ref, 0, s));
    return ag::concat_c(slots);
}

}  // namespace movi
