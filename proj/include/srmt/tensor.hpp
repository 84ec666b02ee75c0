#ifndef SRMT_TENSOR_HPP
#define SRMT_TENSOR_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace srmt {

using Index = Eigen::Index;
using TokenId = std::int32_t;

/// Row-major dense matrix: one row per token, one column per feature.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using IdMatrix = Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/*
 * A ragged batch of sequences stored back to back. Sequence b occupies rows
 * [offsets[b], offsets[b+1]) of every packed activation matrix, so padding
 * never reaches the attention kernels.
 */
struct Packing {
    std::vector<Index> offsets{0};

    Index sequences() const { return static_cast<Index>(offsets.size()) - 1; }
    Index total() const { return offsets.back(); }
    Index begin(Index b) const { return offsets[b]; }
    Index length(Index b) const { return offsets[b + 1] - offsets[b]; }

    void push(Index len) { offsets.push_back(offsets.back() + len); }

    static Packing from_lengths(const std::vector<Index>& lengths) {
        Packing p;
        for (Index len : lengths) p.push(len);
        return p;
    }
};

/// Token ids of a packed batch plus its row layout.
struct PackedIds {
    std::vector<TokenId> ids;
    Packing packing;

    void push(const std::vector<TokenId>& row) {
        ids.insert(ids.end(), row.begin(), row.end());
        packing.push(static_cast<Index>(row.size()));
    }
    std::vector<TokenId> row(Index b) const {
        auto first = ids.begin() + packing.begin(b);
        return {first, first + packing.length(b)};
    }
};

template <typename Scalar>
Matrix<Scalar> zeros_like(const Matrix<Scalar>& m) {
    return Matrix<Scalar>::Zero(m.rows(), m.cols());
}

}  // namespace srmt

#endif
