#include "bevrefine/featmap.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "bevrefine/binio.hpp"

namespace bevrefine {

FeatureMap FeatureMap::zeros(int view_id, int channels, int height, int width, float stride) {
    FeatureMap fm;
    fm.view_id = view_id;
    fm.channels = channels;
    fm.height = height;
    fm.width = width;
    fm.stride = stride;
    fm.data.assign(static_cast<std::size_t>(channels) * height * width, 0.0f);
    fm.validate();
    return fm;
}

void FeatureMap::validate() const {
    if (channels <= 0 || height <= 0 || width <= 0)
        throw ConfigError("feature map dimensions must be positive");
    if (!(stride > 0.0f)) throw ConfigError("feature map stride must be positive");
    if (data.size() != static_cast<std::size_t>(channels) * height * width)
        throw ConfigError("feature map payload size mismatch");
    for (float v : data)
        if (!std::isfinite(v)) throw ConfigError("feature map contains non-finite values");
}

SamplingParams SamplingParams::identity() {
    SamplingParams p;
    p.offsets = {Vec2{0.0, 0.0}};
    p.weights = {1.0};
    return p;
}

SamplingParams SamplingParams::seeded(int n, std::uint64_t seed, double spread) {
    if (n < 1) throw std::invalid_argument("sampling pattern needs at least one offset");
    SamplingParams p;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    p.offsets.resize(static_cast<std::size_t>(n));
    std::vector<double> logits(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        p.offsets[static_cast<std::size_t>(i)] = {spread * gauss(rng), spread * gauss(rng)};
        logits[static_cast<std::size_t>(i)] = gauss(rng);
    }
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double sum = 0.0;
    p.weights.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p.weights[i] = std::exp(logits[i] - mx);
        sum += p.weights[i];
    }
    for (double& wgt : p.weights) wgt /= sum;
    return p;
}

void SamplingParams::validate() const {
    if (offsets.empty() || offsets.size() != weights.size())
        throw std::invalid_argument("sampling pattern: offsets/weights size mismatch");
    double sum = 0.0;
    for (const Vec2& o : offsets)
        if (!std::isfinite(o.x) || !std::isfinite(o.y))
            throw std::invalid_argument("sampling pattern: non-finite offset");
    for (double wgt : weights) {
        if (!(wgt >= 0.0) || !std::isfinite(wgt))
            throw std::invalid_argument("sampling pattern: weights must be non-negative");
        sum += wgt;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("sampling pattern: weights must sum to 1");
}

namespace {

struct BilinearTaps {
    bool inside = false;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double wx = 0.0, wy = 0.0;
};

BilinearTaps taps_for(const FeatureMap& fm, double u, double v) {
    BilinearTaps t;
    const double fu = u / static_cast<double>(fm.stride);
    const double fv = v / static_cast<double>(fm.stride);
    if (!(fu >= 0.0 && fu <= static_cast<double>(fm.width - 1) && fv >= 0.0 &&
          fv <= static_cast<double>(fm.height - 1)))
        return t;  // zero-padding border policy
    t.inside = true;
    t.x0 = static_cast<int>(std::floor(fu));
    t.y0 = static_cast<int>(std::floor(fv));
    t.x1 = t.x0 + 1 < fm.width ? t.x0 + 1 : fm.width - 1;
    t.y1 = t.y0 + 1 < fm.height ? t.y0 + 1 : fm.height - 1;
    t.wx = fu - static_cast<double>(t.x0);
    t.wy = fv - static_cast<double>(t.y0);
    return t;
}

// Nested-lerp form: reproduces corner values and constant fields exactly.
inline double interp(const float* plane, int width, const BilinearTaps& t) {
    const double v00 = plane[static_cast<std::size_t>(t.y0) * width + t.x0];
    const double v01 = plane[static_cast<std::size_t>(t.y0) * width + t.x1];
    const double v10 = plane[static_cast<std::size_t>(t.y1) * width + t.x0];
    const double v11 = plane[static_cast<std::size_t>(t.y1) * width + t.x1];
    const double top = v00 + t.wx * (v01 - v00);
    const double bot = v10 + t.wx * (v11 - v10);
    return top + t.wy * (bot - top);
}

}  // namespace

std::vector<double> bilinear_sample(const FeatureMap& fm, double u, double v) {
    if (!std::isfinite(u) || !std::isfinite(v))
        throw std::invalid_argument("bilinear_sample: non-finite coordinates");
    std::vector<double> out(static_cast<std::size_t>(fm.channels), 0.0);
    const BilinearTaps t = taps_for(fm, u, v);
    if (!t.inside) return out;
    for (int c = 0; c < fm.channels; ++c)
        out[static_cast<std::size_t>(c)] = interp(fm.plane(c), fm.width, t);
    return out;
}

void deform_sample_into(const FeatureMap& fm, const ImagePoint& pt, const SamplingParams& params,
                        std::vector<double>& out) {
    if (pt.view_id != fm.view_id)
        throw ConfigError("deform_sample: point from view " + std::to_string(pt.view_id) +
                          " against feature map of view " + std::to_string(fm.view_id));
    out.assign(static_cast<std::size_t>(fm.channels), 0.0);
    if (!pt.valid) return;
    for (std::size_t s = 0; s < params.offsets.size(); ++s) {
        const double u = pt.u + static_cast<double>(fm.stride) * params.offsets[s].x;
        const double v = pt.v + static_cast<double>(fm.stride) * params.offsets[s].y;
        const BilinearTaps t = taps_for(fm, u, v);
        if (!t.inside) continue;
        const double wgt = params.weights[s];
        for (int c = 0; c < fm.channels; ++c)
            out[static_cast<std::size_t>(c)] += wgt * interp(fm.plane(c), fm.width, t);
    }
}

std::vector<double> deform_sample(const FeatureMap& fm, const ImagePoint& pt,
                                  const SamplingParams& params) {
    params.validate();
    std::vector<double> out;
    deform_sample_into(fm, pt, params, out);
    return out;
}

std::vector<std::uint8_t> feature_map_to_bytes(const FeatureMap& fm) {
    fm.validate();
    std::vector<std::uint8_t> out;
    out.reserve(20 + fm.data.size() * 4);
    binio::put_u32(out, static_cast<std::uint32_t>(fm.view_id));
    binio::put_u32(out, static_cast<std::uint32_t>(fm.channels));
    binio::put_u32(out, static_cast<std::uint32_t>(fm.height));
    binio::put_u32(out, static_cast<std::uint32_t>(fm.width));
    binio::put_f32(out, fm.stride);
    for (float v : fm.data) binio::put_f32(out, v);
    return out;
}

FeatureMap feature_map_from_bytes(const std::uint8_t* data, std::size_t size) {
    binio::Reader r(data, size);
    FeatureMap fm;
    fm.view_id = static_cast<int>(r.get_u32());
    fm.channels = static_cast<int>(r.get_u32());
    fm.height = static_cast<int>(r.get_u32());
    fm.width = static_cast<int>(r.get_u32());
    fm.stride = r.get_f32();
    if (fm.channels <= 0 || fm.height <= 0 || fm.width <= 0)
        throw IoError("feature container: bad dimensions");
    const std::size_t n = static_cast<std::size_t>(fm.channels) * fm.height * fm.width;
    if (r.remaining() != n * 4) throw IoError("feature container: payload size mismatch");
    fm.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) fm.data[i] = r.get_f32();
    fm.validate();
    return fm;
}

void save_feature_map(const std::string& path, const FeatureMap& fm) {
    const std::vector<std::uint8_t> bytes = feature_map_to_bytes(fm);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

FeatureMap load_feature_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return feature_map_from_bytes(bytes.data(), bytes.size());
}

}  // namespace bevrefine
