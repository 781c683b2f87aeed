#include "kinofe/embeddings.hpp"

#include "kinofe/detail/binio.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace kinofe {

void PatchConfig::validate() const {
  if (size < 2 || stride < 1 || size % stride != 0 || (size / stride) % 2 != 0) {
    throw InvalidArgument("PatchConfig: size must be divisible by stride with an even sample count");
  }
  if (!(resolution > 0.0)) throw InvalidArgument("PatchConfig: resolution must be positive");
}

TerrainPatch extract_patch(const EnvironmentSpec& env, const PoseState& pose, Modality modality,
                           const PatchConfig& cfg) {
  cfg.validate();
  if (!pose.vec().allFinite()) throw InvalidArgument("extract_patch: non-finite pose");
  const int n = cfg.samples();
  const int center = n / 2;
  const double step = cfg.resolution * cfg.stride;
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  const double w = env.height.width(), h = env.height.height();
  TerrainPatch patch;
  patch.modality = modality;
  patch.values.resize(n, n);
  const double ref = modality == Modality::Elevation ? env.height_at(pose.x, pose.y) : 0.0;
  for (int j = 0; j < n; ++j) {
    const double by = (j - center) * step;
    for (int i = 0; i < n; ++i) {
      const double bx = (i - center) * step;
      const double wx = pose.x + c * bx - s * by;
      const double wy = pose.y + s * bx + c * by;
      if (wx < 0.0 || wy < 0.0 || wx > w || wy > h) patch.padded = true;
      patch.values(i, j) = modality == Modality::Elevation ? env.height_at(wx, wy) - ref
                                                           : env.nominal_at(wx, wy);
    }
  }
  return patch;
}

Vec8 handcrafted_stats(const TerrainPatch& patch, double spacing) {
  const MatX& v = patch.values;
  const Eigen::Index n = v.rows();
  if (n < 2 || v.cols() != n) throw InvalidArgument("handcrafted_stats: patch must be square");
  if (!v.allFinite()) throw InvalidArgument("handcrafted_stats: non-finite patch");
  Vec8 out;
  const double mean = v.mean();
  out[0] = mean;
  out[1] = std::sqrt((v.array() - mean).square().mean());
  out[2] = v.minCoeff();
  out[3] = v.maxCoeff();
  out[4] = (v.bottomRows(n - 1) - v.topRows(n - 1)).cwiseAbs().mean() / spacing;
  out[5] = (v.rightCols(n - 1) - v.leftCols(n - 1)).cwiseAbs().mean() / spacing;
  const Eigen::Index center = n / 2;
  out[6] = v(center, center);
  // least-squares slope of value against distance from the center pixel
  double sr = 0.0, srr = 0.0, sv = 0.0, srv = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = spacing * std::hypot(static_cast<double>(i - center), static_cast<double>(j - center));
      sr += r;
      srr += r * r;
      sv += v(i, j);
      srv += r * v(i, j);
    }
  }
  const double m = static_cast<double>(n * n);
  const double var_r = srr / m - (sr / m) * (sr / m);
  out[7] = (srv / m - (sr / m) * (sv / m)) / var_r;
  return out;
}

Standardization fit_standardization(const std::vector<Vec8>& stats) {
  Standardization s;
  if (stats.empty()) return s;
  for (const auto& v : stats) s.mean += v;
  s.mean /= static_cast<double>(stats.size());
  Vec8 var = Vec8::Zero();
  for (const auto& v : stats) var += (v - s.mean).cwiseAbs2();
  var /= static_cast<double>(stats.size());
  for (int i = 0; i < kEmbedDim; ++i) s.scale[i] = var[i] > 1e-18 ? std::sqrt(var[i]) : 1.0;
  return s;
}

double sliced_wasserstein_distance(const Eigen::Ref<const MatX>& a, const Eigen::Ref<const MatX>& b,
                                   int n_projections, std::mt19937_64& rng, MatX* grad_a) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument("sliced_wasserstein_distance: sets must have equal shape");
  }
  if (n_projections < 1) throw InvalidArgument("sliced_wasserstein_distance: need >= 1 projection");
  const Eigen::Index d = a.rows(), n = a.cols();
  if (grad_a) *grad_a = MatX::Zero(d, n);
  if (n == 0) return 0.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::Index> ia(n), ib(n);
  double total = 0.0;
  for (int p = 0; p < n_projections; ++p) {
    VecX dir(d);
    for (Eigen::Index i = 0; i < d; ++i) dir[i] = normal(rng);
    const double len = dir.norm();
    if (len == 0.0) {
      dir.setZero();
      dir[0] = 1.0;
    } else {
      dir /= len;
    }
    const VecX pa = a.transpose() * dir;
    const VecX pb = b.transpose() * dir;
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), 0);
    std::stable_sort(ia.begin(), ia.end(), [&](auto l, auto r) { return pa[l] < pa[r]; });
    std::stable_sort(ib.begin(), ib.end(), [&](auto l, auto r) { return pb[l] < pb[r]; });
    double w2 = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double diff = pa[ia[k]] - pb[ib[k]];
      w2 += diff * diff;
      if (grad_a) grad_a->col(ia[k]) += (2.0 * diff / (static_cast<double>(n) * n_projections)) * dir;
    }
    total += w2 / static_cast<double>(n);
  }
  return total / n_projections;
}

void SwaeConfig::validate() const {
  if (latent != kLatentDim) throw InvalidArgument("SwaeConfig: latent dimension must be 64");
  if (pool < 1 || kPatchPixels % pool != 0) throw InvalidArgument("SwaeConfig: pool must divide 128");
  if (hidden < 1 || projections < 1 || epochs < 0 || batch < 1 || compressor_epochs < 0)
    throw InvalidArgument("SwaeConfig: sizes must be positive");
  if (!(lr > 0.0) || beta < 0.0) throw InvalidArgument("SwaeConfig: lr must be positive, beta >= 0");
}

namespace {

VecX pool_patch(const MatX& values, int pool) {
  if (values.rows() != kPatchPixels || values.cols() != kPatchPixels) {
    throw InvalidArgument("SWAE: patches must be 128x128");
  }
  const int m = kPatchPixels / pool;
  VecX out(m * m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) out[r * m + c] = values.block(r * pool, c * pool, pool, pool).mean();
  return out;
}

MatX upsample(const VecX& pooled, int pool) {
  const int m = kPatchPixels / pool;
  MatX out(kPatchPixels, kPatchPixels);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) out.block(r * pool, c * pool, pool, pool).setConstant(pooled[r * m + c]);
  return out;
}

}  // namespace

VecX SwaeModel::pooled(const TerrainPatch& patch) const {
  return (pool_patch(patch.values, cfg.pool).array() - input_mean) / input_scale;
}

VecX SwaeModel::latent(const TerrainPatch& patch) const { return encoder.forward(pooled(patch)); }

Vec8 SwaeModel::embed(const TerrainPatch& patch) const {
  return compressor.forward(latent(patch));
}

MatX SwaeModel::reconstruct(const TerrainPatch& patch) const {
  const VecX rec = decoder.forward(latent(patch));
  return upsample((rec.array() * input_scale + input_mean).matrix(), cfg.pool);
}

double reconstruction_mse(const SwaeModel& model, const std::vector<TerrainPatch>& patches) {
  if (patches.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : patches) total += (model.reconstruct(p) - p.values).squaredNorm() / p.values.size();
  return total / static_cast<double>(patches.size());
}

SwaeModel train_swae(const std::vector<TerrainPatch>& patches, const SwaeConfig& cfg,
                     SwaeReport* report) {
  cfg.validate();
  if (patches.size() < 1000) throw InvalidArgument("train_swae: need at least 1000 patches");
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed);
  SwaeModel model;
  model.cfg = cfg;
  model.modality = patches.front().modality;
  const int pooled_dim = (kPatchPixels / cfg.pool) * (kPatchPixels / cfg.pool);

  const auto n = static_cast<Eigen::Index>(patches.size());
  MatX raw(pooled_dim, n);
  for (Eigen::Index i = 0; i < n; ++i) raw.col(i) = pool_patch(patches[i].values, cfg.pool);
  model.input_mean = raw.mean();
  const double sd = std::sqrt((raw.array() - model.input_mean).square().mean());
  model.input_scale = sd > 1e-12 ? sd : 1.0;
  const MatX data = (raw.array() - model.input_mean) / model.input_scale;

  model.encoder = Net::he_uniform({pooled_dim, cfg.hidden, cfg.latent}, rng);
  model.decoder = Net::he_uniform({cfg.latent, cfg.hidden, pooled_dim}, rng);
  model.compressor = Net::he_uniform({cfg.latent, 32, 16, kEmbedDim}, rng);
  model.decompressor = Net::he_uniform({kEmbedDim, 16, 32, cfg.latent}, rng);

  SwaeReport local;
  local.initial_mse = reconstruction_mse(model, patches);

  AdamState<double> enc_opt(model.encoder.param_count());
  AdamState<double> dec_opt(model.decoder.param_count());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  SwaeModel last_good = model;
  Net::Cache enc_cache, dec_cache;
  for (int epoch = 0; epoch < cfg.epochs && !local.diverged; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (Eigen::Index off = 0; off < n; off += cfg.batch) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch, n - off);
      MatX x(pooled_dim, b);
      for (Eigen::Index j = 0; j < b; ++j) x.col(j) = data.col(order[off + j]);
      const MatX z = model.encoder.forward(x, enc_cache);
      const MatX xr = model.decoder.forward(z, dec_cache);
      const MatX diff = xr - x;
      const double rec = diff.squaredNorm() / static_cast<double>(diff.size());
      MatX prior(cfg.latent, b);
      for (Eigen::Index j = 0; j < prior.size(); ++j) prior.data()[j] = normal(rng);
      MatX sw_grad;
      const double sw = sliced_wasserstein_distance(z, prior, cfg.projections, rng, &sw_grad);
      const double loss = rec + cfg.beta * sw;
      if (!std::isfinite(loss)) {
        local.diverged = true;
        model = last_good;
        break;
      }
      VecX g_dec = VecX::Zero(model.decoder.param_count());
      VecX g_enc = VecX::Zero(model.encoder.param_count());
      const MatX dz = model.decoder.backward(dec_cache, (2.0 / static_cast<double>(diff.size())) * diff, g_dec);
      model.encoder.backward(enc_cache, dz + cfg.beta * sw_grad, g_enc);
      adam_step<double>(model.decoder.params(), g_dec, dec_opt, cfg.lr);
      adam_step<double>(model.encoder.params(), g_enc, enc_opt, cfg.lr);
      epoch_loss += loss;
      ++batches;
    }
    if (!local.diverged) {
      local.epoch_loss.push_back(epoch_loss / std::max(1, batches));
      last_good = model;
    }
  }

  // compressor: bottleneck autoencoder on the frozen latents
  const MatX latents = model.encoder.forward(data);
  AdamState<double> c_opt(model.compressor.param_count());
  AdamState<double> d_opt(model.decompressor.param_count());
  Net::Cache c_cache, d_cache;
  for (int epoch = 0; epoch < cfg.compressor_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index off = 0; off < n; off += cfg.batch) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch, n - off);
      MatX z(cfg.latent, b);
      for (Eigen::Index j = 0; j < b; ++j) z.col(j) = latents.col(order[off + j]);
      const MatX code = model.compressor.forward(z, c_cache);
      const MatX zr = model.decompressor.forward(code, d_cache);
      const MatX diff = zr - z;
      if (!diff.allFinite()) break;
      VecX g_d = VecX::Zero(model.decompressor.param_count());
      VecX g_c = VecX::Zero(model.compressor.param_count());
      const MatX dcode = model.decompressor.backward(d_cache, (2.0 / static_cast<double>(diff.size())) * diff, g_d);
      model.compressor.backward(c_cache, dcode, g_c);
      adam_step<double>(model.decompressor.params(), g_d, d_opt, cfg.lr);
      adam_step<double>(model.compressor.params(), g_c, c_opt, cfg.lr);
    }
  }

  local.final_mse = reconstruction_mse(model, patches);
  local.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (report) *report = local;
  return model;
}

bool EmbeddingPipeline::ready() const {
  return mode == EmbeddingMode::Handcrafted || (elevation_model && semantic_model);
}

Vec8 embed(const EmbeddingPipeline& pipeline, const TerrainPatch& patch) {
  const bool elev = patch.modality == Modality::Elevation;
  if (pipeline.mode == EmbeddingMode::Handcrafted) {
    const double spacing = 12.8 / static_cast<double>(patch.values.rows());
    const Vec8 stats = handcrafted_stats(patch, spacing);
    return (elev ? pipeline.elevation_std : pipeline.semantic_std).apply(stats);
  }
  const auto& model = elev ? pipeline.elevation_model : pipeline.semantic_model;
  if (!model) throw InvalidArgument("embed: SWAE pipeline has not been trained");
  return model->embed(patch);
}

EmbeddingProvider make_embedding_provider(const EnvironmentSpec& env,
                                          const EmbeddingPipeline& pipeline,
                                          const PatchConfig& patch) {
  if (!pipeline.ready()) throw InvalidArgument("make_embedding_provider: pipeline not ready");
  return [&env, pipeline, patch](const PoseState& pose) {
    return std::make_pair(embed(pipeline, extract_patch(env, pose, Modality::Elevation, patch)),
                          embed(pipeline, extract_patch(env, pose, Modality::Semantic, patch)));
  };
}

namespace {
constexpr std::string_view kPipelineMagic{"KFEEMBED", 8};
constexpr std::uint32_t kPipelineVersion = 1;

void write_std(std::ostream& os, const Standardization& s) {
  detail::write_bytes(os, s.mean.data(), sizeof(double) * kEmbedDim);
  detail::write_bytes(os, s.scale.data(), sizeof(double) * kEmbedDim);
}
Standardization read_std(std::istream& is) {
  Standardization s;
  detail::read_bytes(is, s.mean.data(), sizeof(double) * kEmbedDim, "standardization");
  detail::read_bytes(is, s.scale.data(), sizeof(double) * kEmbedDim, "standardization");
  return s;
}
void write_model(std::ostream& os, const SwaeModel& m) {
  detail::write_pod<std::int32_t>(os, m.cfg.pool);
  detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(m.modality));
  detail::write_pod<double>(os, m.input_mean);
  detail::write_pod<double>(os, m.input_scale);
  write_checkpoint(os, m.encoder);
  write_checkpoint(os, m.decoder);
  write_checkpoint(os, m.compressor);
  write_checkpoint(os, m.decompressor);
}
SwaeModel read_model(std::istream& is) {
  SwaeModel m;
  m.cfg.pool = detail::read_pod<std::int32_t>(is, "pool");
  m.modality = static_cast<Modality>(detail::read_pod<std::uint8_t>(is, "modality"));
  m.input_mean = detail::read_pod<double>(is, "input mean");
  m.input_scale = detail::read_pod<double>(is, "input scale");
  m.encoder = read_checkpoint<double>(is);
  m.decoder = read_checkpoint<double>(is);
  m.compressor = read_checkpoint<double>(is);
  m.decompressor = read_checkpoint<double>(is);
  m.cfg.hidden = m.encoder.layer_sizes()[1];
  return m;
}
}  // namespace

void write_pipeline(const std::string& path, const EmbeddingPipeline& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os.write(kPipelineMagic.data(), static_cast<std::streamsize>(kPipelineMagic.size()));
  detail::write_pod<std::uint32_t>(os, kPipelineVersion);
  detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(p.mode));
  write_std(os, p.elevation_std);
  write_std(os, p.semantic_std);
  const bool models = p.elevation_model && p.semantic_model;
  detail::write_pod<std::uint8_t>(os, models ? 1 : 0);
  if (models) {
    write_model(os, *p.elevation_model);
    write_model(os, *p.semantic_model);
  }
}

EmbeddingPipeline read_pipeline(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  detail::expect_magic(is, kPipelineMagic);
  const auto version = detail::read_pod<std::uint32_t>(is, "pipeline version");
  if (version != kPipelineVersion) throw FormatError("embedding pipeline: unsupported version");
  EmbeddingPipeline p;
  const auto mode = detail::read_pod<std::uint8_t>(is, "mode");
  if (mode > 1) throw FormatError("embedding pipeline: unknown mode");
  p.mode = static_cast<EmbeddingMode>(mode);
  p.elevation_std = read_std(is);
  p.semantic_std = read_std(is);
  if (detail::read_pod<std::uint8_t>(is, "model flag")) {
    p.elevation_model = read_model(is);
    p.semantic_model = read_model(is);
  }
  return p;
}

}  // namespace kinofe
