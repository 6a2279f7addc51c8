#include "bevrefine/attention.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

#include "bevrefine/binio.hpp"

namespace bevrefine {

BevTensor BevTensor::zeros(int h, int w, int channels, StageTag stage) {
    BevTensor t;
    t.h = h;
    t.w = w;
    t.channels = channels;
    t.stage = stage;
    t.data.assign(static_cast<std::size_t>(h) * w * channels, 0.0);
    return t;
}

void BevTensor::validate() const {
    if (h <= 0 || w <= 0 || channels <= 0) throw ConfigError("BEV tensor dimensions must be positive");
    if (data.size() != static_cast<std::size_t>(h) * w * channels)
        throw ConfigError("BEV tensor payload size mismatch");
    for (double v : data)
        if (!std::isfinite(v)) throw ConfigError("BEV tensor contains non-finite values");
}

std::vector<SubGridOffset> sub_grid_offsets(const BevGridSpec& spec) {
    spec.validate();
    const int r = spec.refine_r;
    const double csx = spec.cell_size_x();
    const double csy = spec.cell_size_y();
    std::vector<SubGridOffset> out;
    out.reserve(static_cast<std::size_t>(r) * r);
    for (int m = 1; m <= r; ++m) {
        for (int n = 1; n <= r; ++n) {
            SubGridOffset o;
            o.m = m;
            o.n = n;
            o.delta_x = ((static_cast<double>(m) - 0.5) / r - 0.5) * csx;
            o.delta_y = ((static_cast<double>(n) - 0.5) / r - 0.5) * csy;
            out.push_back(o);
        }
    }
    return out;
}

namespace {

// Feature maps aligned to the camera list by view_id.
std::vector<const FeatureMap*> align_views(const std::vector<CameraModel>& cams,
                                           const std::vector<FeatureMap>& fms) {
    if (cams.empty()) throw ConfigError("attention: empty camera rig");
    std::unordered_map<int, const FeatureMap*> by_view;
    int channels = -1;
    for (const auto& fm : fms) {
        if (!by_view.emplace(fm.view_id, &fm).second)
            throw ConfigError("duplicate feature map for view " + std::to_string(fm.view_id));
        if (channels < 0) channels = fm.channels;
        if (fm.channels != channels)
            throw ConfigError("feature maps disagree on channel count");
    }
    std::vector<const FeatureMap*> aligned;
    aligned.reserve(cams.size());
    for (const auto& cam : cams) {
        auto it = by_view.find(cam.view_id);
        if (it == by_view.end())
            throw ConfigError("no feature map for view " + std::to_string(cam.view_id));
        aligned.push_back(it->second);
    }
    return aligned;
}

// Accumulates one cell's cross-view aggregation into acc (length C), using
// tmp as deform-sample scratch. Fixed view-then-point order keeps results
// reproducible across worker counts. Returns the valid-hit count.
int accumulate_cell(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                    const std::vector<const FeatureMap*>& fms, const SamplingParams& params,
                    int gx, int gy, double frac_x, double frac_y, const std::vector<double>& zs,
                    std::vector<double>& acc, std::vector<double>& tmp, std::uint64_t* pairs) {
    const Vec2 anchor = grid_to_world(spec, gx, gy, frac_x, frac_y);
    std::fill(acc.begin(), acc.end(), 0.0);
    int hits = 0;
    for (std::size_t ci = 0; ci < cams.size(); ++ci) {
        for (double z : zs) {
            if (pairs) ++*pairs;
            const ImagePoint pt = project(cams[ci], {anchor.x, anchor.y, z});
            if (!pt.valid) continue;
            ++hits;
            deform_sample_into(*fms[ci], pt, params, tmp);
            for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += tmp[c];
        }
    }
    if (params.normalize_by_hits && hits > 0) {
        const double inv = 1.0 / static_cast<double>(hits);
        for (double& v : acc) v *= inv;
    }
    return hits;
}

int refined_cell_into(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                      const std::vector<const FeatureMap*>& fms, const SamplingParams& params,
                      int gx, int gy, const std::vector<double>& zs, std::vector<double>& out,
                      std::vector<double>& acc, std::vector<double>& tmp, std::uint64_t* pairs) {
    const int r = spec.refine_r;
    std::fill(out.begin(), out.end(), 0.0);
    int hits = 0;
    for (int m = 1; m <= r; ++m) {
        const double fx = (static_cast<double>(m) - 0.5) / r;
        for (int n = 1; n <= r; ++n) {
            const double fy = (static_cast<double>(n) - 0.5) / r;
            hits += accumulate_cell(spec, cams, fms, params, gx, gy, fx, fy, zs, acc, tmp, pairs);
            for (std::size_t c = 0; c < out.size(); ++c) out[c] += acc[c];
        }
    }
    const double inv = 1.0 / (static_cast<double>(r) * r);
    for (double& v : out) v *= inv;
    return hits;
}

void validate_inputs(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                     const SamplingParams& params) {
    spec.validate();
    for (const auto& cam : cams) cam.validate();
    params.validate();
}

}  // namespace

std::vector<double> sca_cell(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                             const std::vector<FeatureMap>& fms, const SamplingParams& params,
                             int gx, int gy, double frac_x, double frac_y) {
    validate_inputs(spec, cams, params);
    const auto aligned = align_views(cams, fms);
    const std::vector<double> zs = pillar_z_values(spec);
    const int channels = aligned[0]->channels;
    std::vector<double> acc(static_cast<std::size_t>(channels));
    std::vector<double> tmp(static_cast<std::size_t>(channels));
    accumulate_cell(spec, cams, aligned, params, gx, gy, frac_x, frac_y, zs, acc, tmp, nullptr);
    return acc;
}

BevTensor sca(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
              const std::vector<FeatureMap>& fms, const SamplingParams& params,
              const BevTensor& queries, ScaStats* stats) {
    validate_inputs(spec, cams, params);
    const auto aligned = align_views(cams, fms);
    if (!queries.dims_match(spec) || queries.channels != aligned[0]->channels)
        throw ConfigError("sca: query tensor dimensions do not match the grid/features");
    const std::vector<double> zs = pillar_z_values(spec);
    const int cells = spec.cells();
    const int channels = queries.channels;

    BevTensor out = queries;
    out.stage = StageTag::Coarse;
    std::uint64_t pairs_total = 0;
    std::uint64_t hits_total = 0;

#pragma omp parallel reduction(+ : pairs_total, hits_total)
    {
        std::vector<double> acc(static_cast<std::size_t>(channels));
        std::vector<double> tmp(static_cast<std::size_t>(channels));
        std::uint64_t pairs = 0;
#pragma omp for schedule(static)
        for (int idx = 0; idx < cells; ++idx) {
            const int gx = idx % spec.w;
            const int gy = idx / spec.w;
            hits_total += static_cast<std::uint64_t>(accumulate_cell(
                spec, cams, aligned, params, gx, gy, 0.5, 0.5, zs, acc, tmp, &pairs));
            auto cell = out.cell(gx, gy);
            for (int c = 0; c < channels; ++c) cell[static_cast<std::size_t>(c)] += acc[static_cast<std::size_t>(c)];
        }
        pairs_total += pairs;
    }
    if (stats) {
        stats->pairs_total += pairs_total;
        stats->hits_valid += hits_total;
    }
    return out;
}

std::vector<double> refined_sca_cell(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                                     const std::vector<FeatureMap>& fms,
                                     const SamplingParams& params, int gx, int gy) {
    validate_inputs(spec, cams, params);
    const auto aligned = align_views(cams, fms);
    const std::vector<double> zs = pillar_z_values(spec);
    const int channels = aligned[0]->channels;
    std::vector<double> out(static_cast<std::size_t>(channels));
    std::vector<double> acc(static_cast<std::size_t>(channels));
    std::vector<double> tmp(static_cast<std::size_t>(channels));
    refined_cell_into(spec, cams, aligned, params, gx, gy, zs, out, acc, tmp, nullptr);
    return out;
}

BevTensor refine_and_fuse(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                          const std::vector<FeatureMap>& fms, const SamplingParams& params,
                          const BevTensor& coarse, const ForegroundMask& mask,
                          RefineStats* stats) {
    validate_inputs(spec, cams, params);
    const auto aligned = align_views(cams, fms);
    if (!coarse.dims_match(spec) || coarse.channels != aligned[0]->channels)
        throw ConfigError("refine_and_fuse: tensor dimensions do not match the grid/features");
    if (mask.h != spec.h || mask.w != spec.w)
        throw ConfigError("refine_and_fuse: mask dimensions do not match the grid");
    const std::vector<double> zs = pillar_z_values(spec);
    const int channels = coarse.channels;

    // Background cells ride along in the copy; only foreground cells are touched.
    BevTensor out = coarse;
    out.stage = StageTag::Refined;

    std::vector<int> fg;
    fg.reserve(static_cast<std::size_t>(mask.fg_count()));
    for (int idx = 0; idx < spec.cells(); ++idx)
        if (mask.values[static_cast<std::size_t>(idx)]) fg.push_back(idx);

    const int n_fg = static_cast<int>(fg.size());
    std::uint64_t pairs_total = 0;
    std::uint64_t hits_total = 0;

#pragma omp parallel reduction(+ : pairs_total, hits_total)
    {
        std::vector<double> refined(static_cast<std::size_t>(channels));
        std::vector<double> acc(static_cast<std::size_t>(channels));
        std::vector<double> tmp(static_cast<std::size_t>(channels));
        std::uint64_t pairs = 0;
#pragma omp for schedule(dynamic, 8)
        for (int i = 0; i < n_fg; ++i) {
            const int idx = fg[static_cast<std::size_t>(i)];
            const int gx = idx % spec.w;
            const int gy = idx / spec.w;
            hits_total += static_cast<std::uint64_t>(refined_cell_into(
                spec, cams, aligned, params, gx, gy, zs, refined, acc, tmp, &pairs));
            auto cell = out.cell(gx, gy);
            for (int c = 0; c < channels; ++c)
                cell[static_cast<std::size_t>(c)] += refined[static_cast<std::size_t>(c)];
        }
        pairs_total += pairs;
    }
    if (stats) {
        stats->cells_refined += static_cast<std::uint64_t>(n_fg);
        stats->sub_evals += static_cast<std::uint64_t>(n_fg) *
                            static_cast<std::uint64_t>(spec.refine_r) *
                            static_cast<std::uint64_t>(spec.refine_r);
        stats->sca.pairs_total += pairs_total;
        stats->sca.hits_valid += hits_total;
    }
    return out;
}

std::vector<std::uint8_t> bev_to_bytes(const BevTensor& t) {
    t.validate();
    std::vector<std::uint8_t> out;
    out.reserve(16 + t.data.size() * 4);
    binio::put_u32(out, static_cast<std::uint32_t>(t.stage));
    binio::put_u32(out, static_cast<std::uint32_t>(t.channels));
    binio::put_u32(out, static_cast<std::uint32_t>(t.h));
    binio::put_u32(out, static_cast<std::uint32_t>(t.w));
    // cell-major in memory -> channel planes on disk
    for (int c = 0; c < t.channels; ++c)
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x)
                binio::put_f32(out, static_cast<float>(t.at(x, y, c)));
    return out;
}

BevTensor bev_from_bytes(const std::uint8_t* data, std::size_t size) {
    binio::Reader r(data, size);
    const std::uint32_t stage = r.get_u32();
    if (stage > static_cast<std::uint32_t>(StageTag::Final))
        throw IoError("BEV container: unknown stage tag");
    const int channels = static_cast<int>(r.get_u32());
    const int h = static_cast<int>(r.get_u32());
    const int w = static_cast<int>(r.get_u32());
    if (channels <= 0 || h <= 0 || w <= 0) throw IoError("BEV container: bad dimensions");
    const std::size_t n = static_cast<std::size_t>(channels) * h * w;
    if (r.remaining() != n * 4) throw IoError("BEV container: payload size mismatch");
    BevTensor t = BevTensor::zeros(h, w, channels, static_cast<StageTag>(stage));
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                t.cell(x, y)[static_cast<std::size_t>(c)] = static_cast<double>(r.get_f32());
    return t;
}

void save_bev(const std::string& path, const BevTensor& t) {
    const auto bytes = bev_to_bytes(t);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

BevTensor load_bev(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bev_from_bytes(bytes.data(), bytes.size());
}

}  // namespace bevrefine
