#pragma once

#include <cstdint>

#include "taxo/data.hpp"

namespace taxo::synthetic {

/// Two classes of constant series, -1 ("neg") and +1 ("pos"), lengths in [min_len, max_len].
Dataset separable_constants(std::size_t per_class, Index dim, Index min_len, Index max_len,
                            std::uint64_t seed);

/// Classes "a" and "b" share one noisy level, "c" sits far away. A model can separate c from
/// the rest but confuses a and b.
Dataset confusable_three_class(std::size_t per_class, Index dim, Index length, std::uint64_t seed);

/// Linear ramps whose slope depends on the class, plus small noise. Strongly ordered in time.
Dataset monotone_ramps(std::size_t per_class, Index num_classes, Index dim, Index length,
                       std::uint64_t seed);

/// Gaussian blobs per class (class k centred at k along every dim, scaled by `spread`) with
/// variable lengths; used as a small multi-class fixture.
Dataset blobs(std::size_t per_class, Index num_classes, Index dim, Index min_len, Index max_len,
              double spread, std::uint64_t seed);

}  // namespace taxo::synthetic
