#pragma once

#include "b3d/core/image.hpp"
#include "b3d/core/record.hpp"
#include "b3d/core/rng.hpp"

namespace b3d {

// Separable Gaussian blur, radius ceil(3 sigma), edge-clamped. sigma = 0 is
// the identity.
Image gaussian_blur(const Image& img, double sigma);
ImageF gaussian_blur(const ImageF& img, double sigma);

// Blurs n_blurred randomly chosen views and retags the record as
// SyntheticNVS-A. With n_blurred <= 3 the conditioning view (view 0) stays
// sharp, as a novel-view synthesiser would leave its input untouched.
MultiViewRecord degrade_views(const MultiViewRecord& record, double blur_sigma, int n_blurred, Rng& rng);

}  // namespace b3d
