#pragma once

#include "bevrefine/attention.hpp"

// Serial straight-line reimplementations of the grid kernels with their own
// projection and interpolation arithmetic. Kept for oracle-equivalence tests
// and as the baseline side of the kernel benchmark; never used by the
// pipeline.

namespace bevrefine::reference {

BevTensor sca_grid(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                   const std::vector<FeatureMap>& fms, const SamplingParams& params,
                   const BevTensor& queries);

BevTensor refine_and_fuse(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                          const std::vector<FeatureMap>& fms, const SamplingParams& params,
                          const BevTensor& coarse, const ForegroundMask& mask);

}  // namespace bevrefine::reference
