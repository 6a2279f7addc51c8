#include "bevrefine/reference.hpp"

#include <cmath>
#include <vector>

namespace bevrefine::reference {

namespace {

// One cell evaluation, everything inline: world anchor, pillar heights,
// projection, deformable sampling, hit-normalized aggregation.
std::vector<double> cell_value(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                               const std::vector<const FeatureMap*>& fms,
                               const SamplingParams& params, int gx, int gy, double frac_x,
                               double frac_y) {
    const int channels = fms[0]->channels;
    std::vector<double> acc(static_cast<std::size_t>(channels), 0.0);
    std::vector<double> sample(static_cast<std::size_t>(channels));

    const double csx = (spec.range_max_x - spec.range_min_x) / static_cast<double>(spec.w);
    const double csy = (spec.range_max_y - spec.range_min_y) / static_cast<double>(spec.h);
    const double px = spec.range_min_x + (static_cast<double>(gx) + frac_x) * csx;
    const double py = spec.range_min_y + (static_cast<double>(gy) + frac_y) * csy;
    const double zstep = (spec.z_max - spec.z_min) / static_cast<double>(spec.n_ref);

    int hits = 0;
    for (std::size_t ci = 0; ci < cams.size(); ++ci) {
        const CameraModel& cam = cams[ci];
        const FeatureMap& fm = *fms[ci];
        const auto& r = cam.rotation.m;
        const auto& k = cam.intrinsics.m;
        for (int j = 1; j <= spec.n_ref; ++j) {
            const double pz = spec.z_min + (static_cast<double>(j) - 0.5) * zstep;
            const double cx = r[0] * px + r[1] * py + r[2] * pz + cam.translation.x;
            const double cy = r[3] * px + r[4] * py + r[5] * pz + cam.translation.y;
            const double cz = r[6] * px + r[7] * py + r[8] * pz + cam.translation.z;
            if (!(cz > kDepthEpsilon)) continue;
            const double u = (k[0] * cx + k[1] * cy + k[2] * cz) / cz;
            const double v = (k[3] * cx + k[4] * cy + k[5] * cz) / cz;
            if (!(u >= 0.0 && u < static_cast<double>(cam.image_width) && v >= 0.0 &&
                  v < static_cast<double>(cam.image_height)))
                continue;
            ++hits;

            std::fill(sample.begin(), sample.end(), 0.0);
            for (std::size_t s = 0; s < params.offsets.size(); ++s) {
                const double su = u + static_cast<double>(fm.stride) * params.offsets[s].x;
                const double sv = v + static_cast<double>(fm.stride) * params.offsets[s].y;
                const double fu = su / static_cast<double>(fm.stride);
                const double fv = sv / static_cast<double>(fm.stride);
                if (!(fu >= 0.0 && fu <= static_cast<double>(fm.width - 1) && fv >= 0.0 &&
                      fv <= static_cast<double>(fm.height - 1)))
                    continue;
                const int x0 = static_cast<int>(std::floor(fu));
                const int y0 = static_cast<int>(std::floor(fv));
                const int x1 = x0 + 1 < fm.width ? x0 + 1 : fm.width - 1;
                const int y1 = y0 + 1 < fm.height ? y0 + 1 : fm.height - 1;
                const double wx = fu - static_cast<double>(x0);
                const double wy = fv - static_cast<double>(y0);
                const double wgt = params.weights[s];
                for (int c = 0; c < channels; ++c) {
                    const float* plane = fm.plane(c);
                    const double v00 = plane[static_cast<std::size_t>(y0) * fm.width + x0];
                    const double v01 = plane[static_cast<std::size_t>(y0) * fm.width + x1];
                    const double v10 = plane[static_cast<std::size_t>(y1) * fm.width + x0];
                    const double v11 = plane[static_cast<std::size_t>(y1) * fm.width + x1];
                    const double top = v00 + wx * (v01 - v00);
                    const double bot = v10 + wx * (v11 - v10);
                    sample[static_cast<std::size_t>(c)] += wgt * (top + wy * (bot - top));
                }
            }
            for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += sample[c];
        }
    }
    if (params.normalize_by_hits && hits > 0) {
        const double inv = 1.0 / static_cast<double>(hits);
        for (double& v : acc) v *= inv;
    }
    return acc;
}

std::vector<const FeatureMap*> align(const std::vector<CameraModel>& cams,
                                     const std::vector<FeatureMap>& fms) {
    std::vector<const FeatureMap*> aligned;
    for (const auto& cam : cams) {
        const FeatureMap* found = nullptr;
        for (const auto& fm : fms)
            if (fm.view_id == cam.view_id) found = &fm;
        if (!found) throw ConfigError("reference: no feature map for view");
        aligned.push_back(found);
    }
    return aligned;
}

}  // namespace

BevTensor sca_grid(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                   const std::vector<FeatureMap>& fms, const SamplingParams& params,
                   const BevTensor& queries) {
    const auto aligned = align(cams, fms);
    BevTensor out = queries;
    out.stage = StageTag::Coarse;
    for (int gy = 0; gy < spec.h; ++gy) {
        for (int gx = 0; gx < spec.w; ++gx) {
            const std::vector<double> v =
                cell_value(spec, cams, aligned, params, gx, gy, 0.5, 0.5);
            auto cell = out.cell(gx, gy);
            for (std::size_t c = 0; c < v.size(); ++c) cell[c] += v[c];
        }
    }
    return out;
}

BevTensor refine_and_fuse(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                          const std::vector<FeatureMap>& fms, const SamplingParams& params,
                          const BevTensor& coarse, const ForegroundMask& mask) {
    const auto aligned = align(cams, fms);
    const int r = spec.refine_r;
    BevTensor out = coarse;
    out.stage = StageTag::Refined;
    for (int gy = 0; gy < spec.h; ++gy) {
        for (int gx = 0; gx < spec.w; ++gx) {
            if (!mask.at(gx, gy)) continue;
            std::vector<double> mean(static_cast<std::size_t>(coarse.channels), 0.0);
            for (int m = 1; m <= r; ++m) {
                const double fx = (static_cast<double>(m) - 0.5) / r;
                for (int n = 1; n <= r; ++n) {
                    const double fy = (static_cast<double>(n) - 0.5) / r;
                    const std::vector<double> v =
                        cell_value(spec, cams, aligned, params, gx, gy, fx, fy);
                    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += v[c];
                }
            }
            const double inv = 1.0 / (static_cast<double>(r) * r);
            auto cell = out.cell(gx, gy);
            for (std::size_t c = 0; c < mean.size(); ++c) cell[c] += mean[c] * inv;
        }
    }
    return out;
}

}  // namespace bevrefine::reference
