#include "bevrefine/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

namespace bevrefine {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kNormFloor = 1e-12;
}  // namespace

void Box3D::validate() const {
    if (!(size.x > 0.0 && size.y > 0.0 && size.z > 0.0))
        throw ConfigError("3D box sizes must be positive");
    if (!(yaw > -kPi - 1e-12 && yaw <= kPi + 1e-12))
        throw ConfigError("3D box yaw must lie in (-pi, pi]");
    if (!is_finite(center) || !is_finite(size) || !std::isfinite(yaw))
        throw ConfigError("non-finite 3D box");
}

void ContrastConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
    if (n_background < 1) throw ConfigError("n_background must be >= 1");
    if (!(d_min >= 0.0)) throw ConfigError("d_min must be non-negative");
    if (pool_s < 1 || patch_b < 1) throw ConfigError("pool sides must be >= 1");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
}

ExtractorParams ExtractorParams::zeros(int channels, int embed_dim, int pool_s) {
    ExtractorParams p;
    p.channels = channels;
    p.embed_dim = embed_dim;
    p.pool_s = pool_s;
    p.w1.assign(static_cast<std::size_t>(channels) * channels, 0.0);
    p.b1.assign(static_cast<std::size_t>(channels), 0.0);
    p.w2.assign(static_cast<std::size_t>(channels), 0.0);
    p.proj.assign(static_cast<std::size_t>(embed_dim) * channels, 0.0);
    return p;
}

ExtractorParams ExtractorParams::seeded(int channels, int embed_dim, int pool_s,
                                        std::uint64_t seed) {
    ExtractorParams p = zeros(channels, embed_dim, pool_s);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
    for (double& v : p.w1) v = scale * gauss(rng);
    for (double& v : p.w2) v = scale * gauss(rng);
    for (double& v : p.proj) v = scale * gauss(rng);
    return p;
}

void ExtractorParams::validate() const {
    if (channels < 1 || embed_dim < 1 || pool_s < 1)
        throw std::invalid_argument("extractor parameters: bad dimensions");
    if (w1.size() != static_cast<std::size_t>(channels) * channels ||
        b1.size() != static_cast<std::size_t>(channels) ||
        w2.size() != static_cast<std::size_t>(channels) ||
        proj.size() != static_cast<std::size_t>(embed_dim) * channels)
        throw std::invalid_argument("extractor parameters: shape mismatch");
    auto all_finite = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!all_finite(w1) || !all_finite(b1) || !all_finite(w2) || !all_finite(proj) ||
        !std::isfinite(b2))
        throw std::invalid_argument("extractor parameters: non-finite values");
}

GridRect box_to_bev_rect(const BevGridSpec& spec, const Box3D& box) {
    spec.validate();
    box.validate();
    const double hl = 0.5 * box.size.x;
    const double hw = 0.5 * box.size.y;
    const double c = std::cos(box.yaw);
    const double s = std::sin(box.yaw);
    double min_x = box.center.x, max_x = box.center.x;
    double min_y = box.center.y, max_y = box.center.y;
    for (int corner = 0; corner < 4; ++corner) {
        const double lx = (corner & 1) ? hl : -hl;
        const double ly = (corner & 2) ? hw : -hw;
        const double wx = box.center.x + c * lx - s * ly;
        const double wy = box.center.y + s * lx + c * ly;
        min_x = std::min(min_x, wx);
        max_x = std::max(max_x, wx);
        min_y = std::min(min_y, wy);
        max_y = std::max(max_y, wy);
    }
    if (max_x < spec.range_min_x || min_x > spec.range_max_x || max_y < spec.range_min_y ||
        min_y > spec.range_max_y)
        throw std::out_of_range("box footprint lies entirely outside the perception range");

    const double csx = spec.cell_size_x();
    const double csy = spec.cell_size_y();
    auto cell_x = [&](double x) {
        return std::clamp(static_cast<int>(std::floor((x - spec.range_min_x) / csx)), 0, spec.w - 1);
    };
    auto cell_y = [&](double y) {
        return std::clamp(static_cast<int>(std::floor((y - spec.range_min_y) / csy)), 0, spec.h - 1);
    };
    GridRect rect;
    rect.x0 = cell_x(min_x);
    rect.x1 = cell_x(max_x);
    rect.y0 = cell_y(min_y);
    rect.y1 = cell_y(max_y);
    return rect;
}

std::vector<std::pair<int, int>> footprint_cells(const BevGridSpec& spec,
                                                 const std::vector<Box3D>& boxes) {
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(spec.cells()), 0);
    for (const auto& box : boxes) {
        GridRect rect;
        try {
            rect = box_to_bev_rect(spec, box);
        } catch (const std::out_of_range&) {
            continue;  // footprint outside the range contributes nothing
        }
        for (int y = rect.y0; y <= rect.y1; ++y)
            for (int x = rect.x0; x <= rect.x1; ++x)
                covered[static_cast<std::size_t>(y) * spec.w + x] = 1;
    }
    std::vector<std::pair<int, int>> cells;
    for (int y = 0; y < spec.h; ++y)
        for (int x = 0; x < spec.w; ++x)
            if (covered[static_cast<std::size_t>(y) * spec.w + x]) cells.emplace_back(x, y);
    return cells;
}

namespace {

// Adaptive average pooling of a cell rectangle to s x s bins; bin (bx, by)
// covers [floor(b*n/s), ceil((b+1)*n/s)) of the crop extent.
std::vector<double> adaptive_pool(const BevTensor& bev, const GridRect& rect, int s) {
    const int ch = bev.channels;
    const int rh = rect.height();
    const int rw = rect.width();
    std::vector<double> pooled(static_cast<std::size_t>(s) * s * ch, 0.0);
    for (int by = 0; by < s; ++by) {
        const int ys = rect.y0 + (by * rh) / s;
        const int ye = rect.y0 + static_cast<int>(std::ceil(static_cast<double>((by + 1) * rh) / s));
        for (int bx = 0; bx < s; ++bx) {
            const int xs = rect.x0 + (bx * rw) / s;
            const int xe =
                rect.x0 + static_cast<int>(std::ceil(static_cast<double>((bx + 1) * rw) / s));
            double* bin = pooled.data() + (static_cast<std::size_t>(by) * s + bx) * ch;
            int count = 0;
            for (int y = ys; y < ye; ++y) {
                for (int x = xs; x < xe; ++x) {
                    const auto cell = bev.cell(x, y);
                    for (int c = 0; c < ch; ++c) bin[c] += cell[static_cast<std::size_t>(c)];
                    ++count;
                }
            }
            const double inv = 1.0 / static_cast<double>(count);
            for (int c = 0; c < ch; ++c) bin[c] *= inv;
        }
    }
    return pooled;
}

std::vector<double> project_embed(const ExtractorParams& params, const std::vector<double>& feat,
                                  const char* what) {
    std::vector<double> e(static_cast<std::size_t>(params.embed_dim), 0.0);
    for (int d = 0; d < params.embed_dim; ++d) {
        const double* row = params.proj.data() + static_cast<std::size_t>(d) * params.channels;
        double acc = 0.0;
        for (int c = 0; c < params.channels; ++c) acc += row[c] * feat[static_cast<std::size_t>(c)];
        e[static_cast<std::size_t>(d)] = acc;
    }
    double n2 = 0.0;
    for (double v : e) n2 += v * v;
    const double n = std::sqrt(n2);
    if (!(n > kNormFloor))
        throw std::invalid_argument(std::string(what) + ": embedding has zero norm");
    for (double& v : e) v /= n;
    return e;
}

void check_rect(const BevTensor& bev, const GridRect& rect) {
    if (rect.x0 < 0 || rect.y0 < 0 || rect.x1 >= bev.w || rect.y1 >= bev.h || rect.x1 < rect.x0 ||
        rect.y1 < rect.y0)
        throw std::out_of_range("crop rectangle outside the BEV grid");
}

}  // namespace

InstanceFeature extract_instance(const BevTensor& bev, const GridRect& rect,
                                 const ExtractorParams& params, const Box3D* source) {
    params.validate();
    check_rect(bev, rect);
    if (params.channels != bev.channels)
        throw std::invalid_argument("extractor channel count does not match the BEV tensor");

    const int s = params.pool_s;
    const int ch = params.channels;
    const std::vector<double> pooled = adaptive_pool(bev, rect, s);

    // Per-location perceptron: C -> C (ReLU) -> 1 logit.
    const int locs = s * s;
    std::vector<double> logits(static_cast<std::size_t>(locs), 0.0);
    std::vector<double> hidden(static_cast<std::size_t>(ch));
    for (int l = 0; l < locs; ++l) {
        const double* f = pooled.data() + static_cast<std::size_t>(l) * ch;
        for (int i = 0; i < ch; ++i) {
            const double* row = params.w1.data() + static_cast<std::size_t>(i) * ch;
            double acc = params.b1[static_cast<std::size_t>(i)];
            for (int c = 0; c < ch; ++c) acc += row[c] * f[c];
            hidden[static_cast<std::size_t>(i)] = acc > 0.0 ? acc : 0.0;
        }
        double acc = params.b2;
        for (int c = 0; c < ch; ++c) acc += params.w2[static_cast<std::size_t>(c)] * hidden[static_cast<std::size_t>(c)];
        logits[static_cast<std::size_t>(l)] = acc;
    }

    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    std::vector<double> weights(static_cast<std::size_t>(locs));
    double sum = 0.0;
    for (int l = 0; l < locs; ++l) {
        weights[static_cast<std::size_t>(l)] = std::exp(logits[static_cast<std::size_t>(l)] - mx);
        sum += weights[static_cast<std::size_t>(l)];
    }
    for (double& wgt : weights) wgt /= sum;

    std::vector<double> feat(static_cast<std::size_t>(ch), 0.0);
    for (int l = 0; l < locs; ++l) {
        const double* f = pooled.data() + static_cast<std::size_t>(l) * ch;
        const double wgt = weights[static_cast<std::size_t>(l)];
        for (int c = 0; c < ch; ++c) feat[static_cast<std::size_t>(c)] += wgt * f[c];
    }

    InstanceFeature out;
    if (source) out.source_box = *source;
    out.crop_rect = rect;
    out.attention_weights = std::move(weights);
    out.pooled_feature = feat;
    out.embedding = project_embed(params, feat, "extract_instance");
    return out;
}

BackgroundSamples sample_background(const BevGridSpec& spec, const BevTensor& bev,
                                    const std::vector<std::pair<int, int>>& fg_cells,
                                    const ContrastConfig& cfg, const ExtractorParams& params) {
    spec.validate();
    cfg.validate();
    params.validate();
    if (!bev.dims_match(spec)) throw ConfigError("sample_background: tensor/grid dimension mismatch");

    // Foreground cell centers, world meters.
    std::vector<Vec2> fg_centers;
    fg_centers.reserve(fg_cells.size());
    for (const auto& [fx, fy] : fg_cells) fg_centers.push_back(grid_to_world(spec, fx, fy, 0.5, 0.5));

    const double d2_min = cfg.d_min * cfg.d_min;
    const int cells = spec.cells();
    std::vector<std::uint8_t> eligible(static_cast<std::size_t>(cells), 0);

#pragma omp parallel for schedule(static)
    for (int idx = 0; idx < cells; ++idx) {
        const int gx = idx % spec.w;
        const int gy = idx / spec.w;
        const Vec2 p = grid_to_world(spec, gx, gy, 0.5, 0.5);
        bool ok = true;
        for (const Vec2& f : fg_centers) {
            const double dx = p.x - f.x;
            const double dy = p.y - f.y;
            if (dx * dx + dy * dy <= d2_min) {
                ok = false;
                break;
            }
        }
        eligible[static_cast<std::size_t>(idx)] = ok ? 1 : 0;
    }

    std::vector<int> pool;
    for (int idx = 0; idx < cells; ++idx)
        if (eligible[static_cast<std::size_t>(idx)]) pool.push_back(idx);
    if (pool.empty())
        throw DegenerateSceneError("no background cell lies farther than d_min from the foreground");

    std::mt19937_64 rng(cfg.rng_seed);
    const int n = cfg.n_background;
    std::vector<int> chosen;
    chosen.reserve(static_cast<std::size_t>(n));
    bool with_replacement = n > static_cast<int>(pool.size());
    if (with_replacement) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        for (int i = 0; i < n; ++i) chosen.push_back(pool[pick(rng)]);
    } else {
        // Partial Fisher-Yates: the first n entries become the sample.
        for (int i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                            pool.size() - 1);
            std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
            chosen.push_back(pool[static_cast<std::size_t>(i)]);
        }
    }

    BackgroundSamples out;
    out.with_replacement = with_replacement;
    out.features.reserve(chosen.size());
    const int half = cfg.patch_b / 2;
    for (int idx : chosen) {
        const int gx = idx % spec.w;
        const int gy = idx / spec.w;

        GridRect patch;
        patch.x0 = std::max(0, gx - half);
        patch.x1 = std::min(spec.w - 1, patch.x0 + cfg.patch_b - 1);
        patch.x0 = std::max(0, patch.x1 - cfg.patch_b + 1);
        patch.y0 = std::max(0, gy - half);
        patch.y1 = std::min(spec.h - 1, patch.y0 + cfg.patch_b - 1);
        patch.y0 = std::max(0, patch.y1 - cfg.patch_b + 1);

        const std::vector<double> pooled = adaptive_pool(bev, patch, cfg.pool_s);
        const int locs = cfg.pool_s * cfg.pool_s;
        std::vector<double> feat(static_cast<std::size_t>(bev.channels), 0.0);
        for (int l = 0; l < locs; ++l) {
            const double* f = pooled.data() + static_cast<std::size_t>(l) * bev.channels;
            for (int c = 0; c < bev.channels; ++c) feat[static_cast<std::size_t>(c)] += f[c];
        }
        const double inv = 1.0 / static_cast<double>(locs);
        for (double& v : feat) v *= inv;

        BackgroundFeature bf;
        bf.sample_point = grid_to_world(spec, gx, gy, 0.5, 0.5);
        bf.patch_rect = patch;
        bf.embedding = project_embed(params, feat, "sample_background");

        // Constraint holds by construction; re-verify at construction time.
        for (const Vec2& f : fg_centers) {
            const double dx = bf.sample_point.x - f.x;
            const double dy = bf.sample_point.y - f.y;
            if (dx * dx + dy * dy <= d2_min)
                throw DegenerateSceneError("background sample violates the distance constraint");
        }
        out.features.push_back(std::move(bf));
    }
    return out;
}

double loss_from_similarities(const std::vector<double>& s_pos, const std::vector<double>& s_neg,
                              int n_i, int n_b) {
    if (n_i < 0 || n_b < 0) throw std::invalid_argument("negative set size");
    if (s_pos.size() != static_cast<std::size_t>(n_i) * n_i ||
        s_neg.size() != static_cast<std::size_t>(n_i) * n_b)
        throw std::invalid_argument("similarity matrix shape mismatch");
    if (n_i < 2) return 0.0;

    double total = 0.0;
    for (int i = 0; i < n_i; ++i) {
        const double* pos = s_pos.data() + static_cast<std::size_t>(i) * n_i;
        const double* neg = s_neg.data() + static_cast<std::size_t>(i) * n_b;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n_i; ++j)
            if (j != i) mx = std::max(mx, pos[j]);
        for (int k = 0; k < n_b; ++k) mx = std::max(mx, neg[k]);
        double neg_sum = 0.0;  // sum_k exp(S_ik - mx), shared across this anchor's pairs
        for (int k = 0; k < n_b; ++k) neg_sum += std::exp(neg[k] - mx);
        for (int j = 0; j < n_i; ++j) {
            if (j == i) continue;
            const double a = std::exp(pos[j] - mx);
            total += mx + std::log(a + neg_sum) - pos[j];
        }
    }
    return total / (static_cast<double>(n_i) * (n_i - 1));
}

namespace {

void validate_embeddings(const std::vector<std::vector<double>>& embs, std::size_t dim,
                         const char* what) {
    for (const auto& e : embs) {
        if (e.size() != dim) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
        double n2 = 0.0;
        for (double v : e) {
            if (!std::isfinite(v))
                throw std::invalid_argument(std::string(what) + ": non-finite embedding");
            n2 += v * v;
        }
        if (!(n2 > kNormFloor * kNormFloor))
            throw std::invalid_argument(std::string(what) + ": zero-norm embedding");
    }
}

void build_similarities(const std::vector<std::vector<double>>& inst,
                        const std::vector<std::vector<double>>& bg, double tau,
                        std::vector<double>& s_pos, std::vector<double>& s_neg) {
    const int n_i = static_cast<int>(inst.size());
    const int n_b = static_cast<int>(bg.size());
    const std::size_t dim = inst.empty() ? 0 : inst[0].size();
    validate_embeddings(inst, dim, "instances");
    validate_embeddings(bg, dim, "backgrounds");
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw std::invalid_argument("temperature must be positive and finite");

    s_pos.assign(static_cast<std::size_t>(n_i) * n_i, 0.0);
    s_neg.assign(static_cast<std::size_t>(n_i) * n_b, 0.0);
    for (int i = 0; i < n_i; ++i) {
        for (int j = 0; j < n_i; ++j) {
            double d = 0.0;
            for (std::size_t c = 0; c < dim; ++c) d += inst[static_cast<std::size_t>(i)][c] * inst[static_cast<std::size_t>(j)][c];
            s_pos[static_cast<std::size_t>(i) * n_i + j] = d / tau;
        }
        for (int k = 0; k < n_b; ++k) {
            double d = 0.0;
            for (std::size_t c = 0; c < dim; ++c) d += inst[static_cast<std::size_t>(i)][c] * bg[static_cast<std::size_t>(k)][c];
            s_neg[static_cast<std::size_t>(i) * n_b + k] = d / tau;
        }
    }
}

}  // namespace

double contrast_loss_value(const std::vector<std::vector<double>>& instance_embeddings,
                           const std::vector<std::vector<double>>& background_embeddings,
                           double tau) {
    std::vector<double> s_pos, s_neg;
    build_similarities(instance_embeddings, background_embeddings, tau, s_pos, s_neg);
    return loss_from_similarities(s_pos, s_neg, static_cast<int>(instance_embeddings.size()),
                                  static_cast<int>(background_embeddings.size()));
}

ContrastLossResult contrast_loss_grad(const std::vector<std::vector<double>>& instance_embeddings,
                                      const std::vector<std::vector<double>>& background_embeddings,
                                      double tau) {
    const int n_i = static_cast<int>(instance_embeddings.size());
    const int n_b = static_cast<int>(background_embeddings.size());
    const std::size_t dim = instance_embeddings.empty() ? 0 : instance_embeddings[0].size();

    std::vector<double> s_pos, s_neg;
    build_similarities(instance_embeddings, background_embeddings, tau, s_pos, s_neg);

    ContrastLossResult res;
    res.grad_instances.assign(static_cast<std::size_t>(n_i), std::vector<double>(dim, 0.0));
    res.grad_backgrounds.assign(static_cast<std::size_t>(n_b), std::vector<double>(dim, 0.0));
    res.loss = loss_from_similarities(s_pos, s_neg, n_i, n_b);
    if (n_i < 2) return res;

    const double inv_p = 1.0 / (static_cast<double>(n_i) * (n_i - 1));
    // d(loss)/dS accumulated per matrix entry, then mapped back through
    // dS_ab/d f = (other vector) / tau.
    std::vector<double> g_pos(s_pos.size(), 0.0);
    std::vector<double> g_neg(s_neg.size(), 0.0);

    for (int i = 0; i < n_i; ++i) {
        const double* pos = s_pos.data() + static_cast<std::size_t>(i) * n_i;
        const double* neg = s_neg.data() + static_cast<std::size_t>(i) * n_b;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n_i; ++j)
            if (j != i) mx = std::max(mx, pos[j]);
        for (int k = 0; k < n_b; ++k) mx = std::max(mx, neg[k]);
        double neg_sum = 0.0;
        for (int k = 0; k < n_b; ++k) neg_sum += std::exp(neg[k] - mx);

        double denom_recip_sum = 0.0;  // sum_j 1 / (exp(S_ij - mx) + neg_sum)
        for (int j = 0; j < n_i; ++j) {
            if (j == i) continue;
            const double a = std::exp(pos[j] - mx);
            const double denom = a + neg_sum;
            g_pos[static_cast<std::size_t>(i) * n_i + j] += inv_p * (a / denom - 1.0);
            denom_recip_sum += 1.0 / denom;
        }
        for (int k = 0; k < n_b; ++k)
            g_neg[static_cast<std::size_t>(i) * n_b + k] +=
                inv_p * std::exp(neg[k] - mx) * denom_recip_sum;
    }

    const double inv_tau = 1.0 / tau;
    for (int i = 0; i < n_i; ++i) {
        for (int j = 0; j < n_i; ++j) {
            if (j == i) continue;
            const double g = g_pos[static_cast<std::size_t>(i) * n_i + j] * inv_tau;
            if (g == 0.0) continue;
            for (std::size_t c = 0; c < dim; ++c) {
                res.grad_instances[static_cast<std::size_t>(i)][c] +=
                    g * instance_embeddings[static_cast<std::size_t>(j)][c];
                res.grad_instances[static_cast<std::size_t>(j)][c] +=
                    g * instance_embeddings[static_cast<std::size_t>(i)][c];
            }
        }
        for (int k = 0; k < n_b; ++k) {
            const double g = g_neg[static_cast<std::size_t>(i) * n_b + k] * inv_tau;
            if (g == 0.0) continue;
            for (std::size_t c = 0; c < dim; ++c) {
                res.grad_instances[static_cast<std::size_t>(i)][c] +=
                    g * background_embeddings[static_cast<std::size_t>(k)][c];
                res.grad_backgrounds[static_cast<std::size_t>(k)][c] +=
                    g * instance_embeddings[static_cast<std::size_t>(i)][c];
            }
        }
    }
    return res;
}

ContrastLossResult contrast_loss(const std::vector<InstanceFeature>& instances,
                                 const std::vector<BackgroundFeature>& backgrounds,
                                 const ContrastConfig& cfg) {
    cfg.validate();
    std::vector<std::vector<double>> inst;
    inst.reserve(instances.size());
    for (const auto& f : instances) inst.push_back(f.embedding);
    std::vector<std::vector<double>> bg;
    bg.reserve(backgrounds.size());
    for (const auto& f : backgrounds) bg.push_back(f.embedding);

    if (!cfg.class_conditional_positives) return contrast_loss_grad(inst, bg, cfg.tau);

    // Class-conditional variant: anchors only pair with same-label instances.
    // Implemented as one loss per label group against the shared backgrounds,
    // averaged over groups that have at least one pair.
    std::vector<int> labels;
    for (const auto& f : instances) labels.push_back(f.source_box ? f.source_box->label : 0);
    std::vector<int> uniq = labels;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    ContrastLossResult total;
    total.grad_instances.assign(inst.size(), std::vector<double>(inst.empty() ? 0 : inst[0].size(), 0.0));
    total.grad_backgrounds.assign(bg.size(), std::vector<double>(inst.empty() ? 0 : inst[0].size(), 0.0));
    int groups = 0;
    for (int lab : uniq) {
        std::vector<std::vector<double>> group;
        std::vector<std::size_t> index;
        for (std::size_t i = 0; i < inst.size(); ++i)
            if (labels[i] == lab) {
                group.push_back(inst[i]);
                index.push_back(i);
            }
        if (group.size() < 2) continue;
        const ContrastLossResult part = contrast_loss_grad(group, bg, cfg.tau);
        total.loss += part.loss;
        for (std::size_t gi = 0; gi < index.size(); ++gi)
            for (std::size_t c = 0; c < part.grad_instances[gi].size(); ++c)
                total.grad_instances[index[gi]][c] += part.grad_instances[gi][c];
        for (std::size_t k = 0; k < bg.size(); ++k)
            for (std::size_t c = 0; c < part.grad_backgrounds[k].size(); ++c)
                total.grad_backgrounds[k][c] += part.grad_backgrounds[k][c];
        ++groups;
    }
    if (groups > 0) {
        const double inv = 1.0 / static_cast<double>(groups);
        total.loss *= inv;
        for (auto& g : total.grad_instances)
            for (double& v : g) v *= inv;
        for (auto& g : total.grad_backgrounds)
            for (double& v : g) v *= inv;
    }
    return total;
}

ContrastLossResult finite_difference_gradient(
    const std::vector<std::vector<double>>& instance_embeddings,
    const std::vector<std::vector<double>>& background_embeddings, double tau, double h) {
    ContrastLossResult res;
    res.loss = contrast_loss_value(instance_embeddings, background_embeddings, tau);
    auto inst = instance_embeddings;
    auto bg = background_embeddings;
    const double inv_2h = 0.5 / h;

    res.grad_instances.assign(inst.size(), {});
    for (std::size_t i = 0; i < inst.size(); ++i) {
        res.grad_instances[i].assign(inst[i].size(), 0.0);
        for (std::size_t c = 0; c < inst[i].size(); ++c) {
            const double keep = inst[i][c];
            inst[i][c] = keep + h;
            const double up = contrast_loss_value(inst, bg, tau);
            inst[i][c] = keep - h;
            const double dn = contrast_loss_value(inst, bg, tau);
            inst[i][c] = keep;
            res.grad_instances[i][c] = (up - dn) * inv_2h;
        }
    }
    res.grad_backgrounds.assign(bg.size(), {});
    for (std::size_t k = 0; k < bg.size(); ++k) {
        res.grad_backgrounds[k].assign(bg[k].size(), 0.0);
        for (std::size_t c = 0; c < bg[k].size(); ++c) {
            const double keep = bg[k][c];
            bg[k][c] = keep + h;
            const double up = contrast_loss_value(inst, bg, tau);
            bg[k][c] = keep - h;
            const double dn = contrast_loss_value(inst, bg, tau);
            bg[k][c] = keep;
            res.grad_backgrounds[k][c] = (up - dn) * inv_2h;
        }
    }
    return res;
}

GradCheckReport run_gradient_check(std::uint64_t seed, int n_configs, double h) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double taus[] = {0.05, 0.1, 1.0};
    const int dims[] = {4, 8, 16};

    auto random_unit = [&](int dim) {
        std::vector<double> v(static_cast<std::size_t>(dim));
        double n2 = 0.0;
        do {
            n2 = 0.0;
            for (double& x : v) {
                x = gauss(rng);
                n2 += x * x;
            }
        } while (n2 < 1e-12);
        const double inv = 1.0 / std::sqrt(n2);
        for (double& x : v) x *= inv;
        return v;
    };

    GradCheckReport report;
    report.configs = n_configs;
    for (int cfg = 0; cfg < n_configs; ++cfg) {
        const int n_i = 2 + static_cast<int>(rng() % 9);    // 2..10
        const int n_b = 5 + static_cast<int>(rng() % 196);  // 5..200
        const double tau = taus[rng() % 3];
        const int dim = dims[rng() % 3];

        std::vector<std::vector<double>> inst, bg;
        for (int i = 0; i < n_i; ++i) inst.push_back(random_unit(dim));
        for (int k = 0; k < n_b; ++k) bg.push_back(random_unit(dim));

        const ContrastLossResult analytic = contrast_loss_grad(inst, bg, tau);
        const ContrastLossResult numeric = finite_difference_gradient(inst, bg, tau, h);

        auto track = [&](const std::vector<std::vector<double>>& a,
                         const std::vector<std::vector<double>>& f) {
            for (std::size_t i = 0; i < a.size(); ++i) {
                for (std::size_t c = 0; c < a[i].size(); ++c) {
                    // Absolute floor above the h=1e-5 central-difference noise
                    // (~1e-9); near-zero components otherwise divide noise by
                    // noise.
                    const double denom = std::max(1e-4, std::abs(a[i][c]) + std::abs(f[i][c]));
                    report.max_rel_err =
                        std::max(report.max_rel_err, std::abs(a[i][c] - f[i][c]) / denom);
                    ++report.components;
                }
            }
        };
        track(analytic.grad_instances, numeric.grad_instances);
        track(analytic.grad_backgrounds, numeric.grad_backgrounds);
    }
    return report;
}

std::string instance_to_json(const InstanceFeature& f) {
    nlohmann::json j;
    j["embedding"] = f.embedding;
    nlohmann::json src;
    src["crop_rect"] = {{"x0", f.crop_rect.x0},
                        {"y0", f.crop_rect.y0},
                        {"x1", f.crop_rect.x1},
                        {"y1", f.crop_rect.y1}};
    if (f.source_box) {
        const Box3D& b = *f.source_box;
        src["box"] = {{"center", {b.center.x, b.center.y, b.center.z}},
                      {"size", {b.size.x, b.size.y, b.size.z}},
                      {"yaw", b.yaw},
                      {"label", b.label}};
    }
    j["source"] = src;
    return j.dump();
}

std::string background_to_json(const BackgroundFeature& f) {
    nlohmann::json j;
    j["embedding"] = f.embedding;
    j["source"] = {{"sample_point", {f.sample_point.x, f.sample_point.y}},
                   {"patch_rect",
                    {{"x0", f.patch_rect.x0},
                     {"y0", f.patch_rect.y0},
                     {"x1", f.patch_rect.x1},
                     {"y1", f.patch_rect.y1}}}};
    return j.dump();
}

}  // namespace bevrefine
