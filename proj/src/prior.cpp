#include "hgen/prior.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hgen/gan.hpp"

namespace hgen::prior {
namespace {

std::string record_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d", prefix, i);
  return buf;
}

const char* source_name(Source s) { return s == Source::kCorpus ? "corpus" : "synthesized"; }

Source parse_source(const std::string& s) {
  if (s == "corpus") return Source::kCorpus;
  if (s == "synthesized") return Source::kSynthesized;
  throw IoError("unknown pseudo-GT source '" + s + "'");
}

std::vector<corpus::CorpusEntry> training_entries(const corpus::CorpusManifest& corpus, const char* who) {
  auto train = corpus.split(false);
  if (train.size() < 500)
    throw ContractError(std::string(who) + ": needs at least 500 training samples, corpus has " +
                        std::to_string(train.size()));
  return train;
}

}  // namespace

Reconstructor::Reconstructor(const ModelConfig& model, Rng& rng)
    : image_size_(model.image_size), feature_size_(model.feature_size) {
  const int w = model.prior_width;
  stem_ = nn::Conv2d(3, w, 3, rng);
  for (int res = image_size_; res > feature_size_; res /= 2) {
    downs_.emplace_back(w, w, 3, rng);
    ups_.emplace_back(2 * w, w, 3, rng);
  }
  hourglass_ = nn::Hourglass(w, w, w, rng);
  head_sv_ = nn::Conv2d(w, model.c_sv, 1, rng);
  head_tv_ = nn::Conv2d(w, model.c_tv, 1, rng);
  head_out_ = nn::Conv2d(w, 4, 1, rng, 1, 0.5);
  f_s = FieldDecoder(model.c_sv, model.decoder_hidden, FieldKind::kShape, rng);
  f_t = FieldDecoder(model.c_tv + model.c_sv, model.decoder_hidden, FieldKind::kTexture, rng);
}

Reconstructor::Trunk Reconstructor::trunk(const ag::Var& image) const {
  if (image.value().rank() != 4 || image.dim(1) != 3 || image.dim(2) != image_size_ || image.dim(3) != image_size_)
    throw ContractError("Reconstructor: expected [N,3," + std::to_string(image_size_) + "," +
                        std::to_string(image_size_) + "] image, got " + shape_str(image.shape()));
  Trunk t;
  ag::Var h = ag::leaky_relu(stem_.forward(ag::add_scalar(ag::scale(image, 2.0), -1.0)));
  t.skips.push_back(h);
  for (const auto& d : downs_) {
    h = ag::leaky_relu(d.forward(ag::avgpool2x(h)));
    t.skips.push_back(h);
  }
  t.taps = hourglass_.taps(h);
  t.features = ag::leaky_relu(hourglass_.head(t.taps.back()));
  return t;
}

ReconstructorOutput Reconstructor::forward(const ag::Var& image) const {
  const Trunk t = trunk(image);
  ReconstructorOutput out;
  out.f_sv = head_sv_.forward(t.features);
  out.f_tv = head_tv_.forward(t.features);
  ag::Var x = t.features;
  for (int i = static_cast<int>(ups_.size()) - 1; i >= 0; --i) {
    const ag::Var parts[2] = {ag::upsample2x(x), t.skips[i]};
    x = ag::leaky_relu(ups_[i].forward(ag::concat_channels(parts)));
  }
  const ag::Var o = head_out_.forward(x);
  out.normal = ag::tanh(ag::slice_channels(o, 0, 3));
  out.depth = ag::tanh(ag::slice_channels(o, 3, 4));
  return out;
}

std::vector<ag::Var> Reconstructor::perceptual_taps(const ag::Var& image) const {
  const Trunk t = trunk(image);
  return {t.skips.front(), t.taps[1], t.features};
}

ag::Var Reconstructor::pooled_features(const ag::Var& image) const { return ag::global_avg_pool(trunk(image).features); }

void Reconstructor::collect(nn::ParamRefs& out, const std::string& prefix) {
  stem_.collect(out, prefix + "stem.");
  for (std::size_t i = 0; i < downs_.size(); ++i) downs_[i].collect(out, prefix + "down" + std::to_string(i) + ".");
  hourglass_.collect(out, prefix + "hourglass.");
  head_sv_.collect(out, prefix + "head_sv.");
  head_tv_.collect(out, prefix + "head_tv.");
  for (std::size_t i = 0; i < ups_.size(); ++i) ups_[i].collect(out, prefix + "up" + std::to_string(i) + ".");
  head_out_.collect(out, prefix + "head_out.");
  f_s.collect(out, prefix + "f_s.");
  f_t.collect(out, prefix + "f_t.");
}

Toy2DGenerator::Toy2DGenerator(const ModelConfig& model, Rng& rng)
    : net_(model.latent_dim, model.style_dim, model.generator_width, 3, model.image_size, rng) {}

ag::Var Toy2DGenerator::forward(const ag::Var& z) const { return ag::sigmoid(net_.forward(z)); }

void Toy2DGenerator::collect(nn::ParamRefs& out, const std::string& prefix) { net_.collect(out, prefix); }

CorpusBatchItem load_item(const corpus::CorpusManifest& manifest, const corpus::CorpusEntry& entry) {
  CorpusBatchItem item;
  item.sample = corpus::load_corpus_sample(manifest, entry);
  const int R = manifest.resolution;
  item.image = hwc_to_chw(item.sample.rgb, R, R, 3);
  item.normal = hwc_to_chw(item.sample.normal, R, R, 3);
  item.depth = Tensor({1, R, R}, item.sample.depth);
  return item;
}

ReconstructorLoss reconstructor_step(Reconstructor& r, Adam& opt, const std::vector<CorpusBatchItem>& batch,
                                     const PriorConfig& cfg, Rng& rng) {
  std::vector<Tensor> images, normals, depths;
  for (const auto& b : batch) {
    images.push_back(b.image);
    normals.push_back(b.normal);
    depths.push_back(b.depth);
  }
  const auto out = r.forward(ag::constant(stack(images)));
  const ag::Var l_normal = ag::l1_mean(out.normal, stack(normals));
  const ag::Var l_depth = ag::l1_mean(out.depth, stack(depths));

  const Camera cam = Camera::frontal(r.image_size());
  std::vector<PointQuery> pts, near;
  std::vector<double> sdf_gt, color_gt;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const corpus::Body body(batch[n].sample.params);
    const auto tp = sample_training_points(batch[n].sample.depth, batch[n].sample.mask, cam, cfg.points, cfg.sigma, rng);
    for (std::size_t i = 0; i < tp.points.size(); ++i) {
      const Vec3& p = tp.points[i];
      pts.push_back({static_cast<int>(n), p});
      sdf_gt.push_back(body.sdf(p));
      if (tp.near_surface[i]) {
        near.push_back({static_cast<int>(n), p});
        const Vec3 c = body.color(p);
        color_gt.insert(color_gt.end(), {c.x(), c.y(), c.z()});
      }
    }
  }
  const ag::Var sdf_map[1] = {out.f_sv};
  const ag::Var l_sdf = ag::l1_mean(decode_points(r.f_s, sdf_map, cam, pts),
                                    Tensor({static_cast<int>(pts.size()), 1}, std::move(sdf_gt)));
  std::vector<ag::Var> parts{l_normal, l_depth, l_sdf};
  std::vector<double> weights{cfg.weight_normal, cfg.weight_depth, cfg.weight_sdf};
  if (!near.empty()) {
    const ag::Var tex_maps[2] = {out.f_tv, out.f_sv};
    parts.push_back(ag::l1_mean(decode_points(r.f_t, tex_maps, cam, near),
                                Tensor({static_cast<int>(near.size()), 3}, std::move(color_gt))));
    weights.push_back(cfg.weight_color);
  }
  const ag::Var total = ag::weighted_sum(parts, weights);
  ReconstructorLoss loss{l_normal.item(), l_depth.item(), l_sdf.item(), near.empty() ? 0.0 : parts[3].item(),
                         total.item()};
  if (!std::isfinite(loss.total)) return loss;
  opt.zero_grad();
  ag::backward(total);
  opt.step();
  return loss;
}

Reconstructor train_reconstructor(const corpus::CorpusManifest& corpus, const RunConfig& config,
                                  const TrainHooks& hooks) {
  const auto train = training_entries(corpus, "train_reconstructor");
  if (corpus.resolution != config.model.image_size)
    throw ContractError("train_reconstructor: corpus resolution differs from model.image_size");
  Rng init = stage_rng(config.seed, "prior.reconstructor.init");
  Rng rng = stage_rng(config.seed, "prior.reconstructor.train");
  Reconstructor r(config.model, init);
  Adam opt(r.parameters(), config.prior.reconstructor_optim.adam());
  const NamedModules modules{{"reconstructor", &r}};
  for (int step = 1; step <= config.prior.reconstructor_steps; ++step) {
    std::vector<CorpusBatchItem> batch;
    for (int b = 0; b < config.prior.batch; ++b) batch.push_back(load_item(corpus, train[rng.below(train.size())]));
    const auto loss = reconstructor_step(r, opt, batch, config.prior, rng);
    hooks.record(step, "normal", loss.normal);
    hooks.record(step, "depth", loss.depth);
    hooks.record(step, "sdf", loss.sdf);
    hooks.record(step, "color", loss.color);
    hooks.record(step, "total", loss.total);
    require_finite(loss.total, "reconstructor total", step, hooks, modules);
    hooks.maybe_checkpoint(step, modules);
  }
  r.set_trainable(false);
  return r;
}

std::vector<Reconstruction> reconstruct_batch(const Reconstructor& r, const Tensor& images) {
  const auto out = r.forward(ag::constant(images));
  std::vector<Reconstruction> recs;
  for (int n = 0; n < images.dim(0); ++n) {
    Reconstruction rec;
    rec.normal = unstack(out.normal.value(), n);
    rec.depth = unstack(out.depth.value(), n);
    rec.f_sv = FeatureMap::from_batch(out.f_sv.value(), n, FeatureRole::kFsv);
    rec.f_tv = FeatureMap::from_batch(out.f_tv.value(), n, FeatureRole::kFtv);
    recs.push_back(std::move(rec));
  }
  return recs;
}

Reconstruction reconstruct(const Reconstructor& r, const Tensor& image) {
  if (image.rank() != 3) throw ContractError("reconstruct: expected [3,H,W], got " + shape_str(image.shape));
  return std::move(reconstruct_batch(r, stack({image}))[0]);
}

Toy2DGenerator train_2d_generator(const corpus::CorpusManifest& corpus, const RunConfig& config,
                                  const TrainHooks& hooks) {
  const auto train = training_entries(corpus, "train_2d_generator");
  if (corpus.resolution != config.model.image_size)
    throw ContractError("train_2d_generator: corpus resolution differs from model.image_size");
  const auto& m = config.model;
  const auto& p = config.prior;
  Rng init = stage_rng(config.seed, "prior.generator.init");
  Rng rng = stage_rng(config.seed, "prior.generator.train");
  Toy2DGenerator g(m, init);
  nn::Discriminator d(3, m.discriminator_width, m.image_size, init);
  Adam opt_g(g.parameters(), p.generator_optim.adam());
  Adam opt_d(d.parameters(), p.generator_optim.adam(p.lr_discriminator));
  const auto d_params = d.parameters();
  const Critic critic = [&d](const ag::Var& x) { return d.forward(x); };
  const NamedModules modules{{"generator2d", &g}, {"discriminator2d", &d}};

  for (int step = 1; step <= p.generator_steps; ++step) {
    std::vector<Tensor> reals;
    for (int b = 0; b < p.batch; ++b) reals.push_back(load_item(corpus, train[rng.below(train.size())]).image);
    Tensor z({p.batch, m.latent_dim});
    for (auto& v : z.data) v = rng.normal();
    const ag::Var fake = g.forward(ag::constant(std::move(z)));

    const auto dl = discriminator_backward(critic, d_params, stack(reals), fake.value(), p.lambda_reg,
                                           step % p.r1_every == 0);
    require_finite(dl.total(), "discriminator2d", step, hooks, modules);
    opt_d.step();

    d.set_trainable(false);
    opt_g.zero_grad();
    const ag::Var lg = loss_adversarial_g(d.forward(fake));
    require_finite(lg.item(), "generator2d", step, hooks, modules);
    ag::backward(lg);
    opt_g.step();
    d.set_trainable(true);

    hooks.record(step, "d_real", dl.real);
    hooks.record(step, "d_fake", dl.fake);
    hooks.record(step, "r1", dl.r1);
    hooks.record(step, "g_adv", lg.item());
    hooks.maybe_checkpoint(step, modules);
  }
  g.set_trainable(false);
  return g;
}

std::vector<std::uint8_t> PseudoGT::mask() const {
  std::vector<std::uint8_t> m(depth.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = depth.data[i] < kForegroundDepth;
  return m;
}

double PseudoGT::foreground_fraction() const {
  const auto m = mask();
  return static_cast<double>(std::count(m.begin(), m.end(), std::uint8_t{1})) / std::max<std::size_t>(m.size(), 1);
}

void write_pseudo_gt(const fs::path& dir, const PseudoGT& rec, const std::string& config_hash) {
  if (rec.latent.has_value() != (rec.source == Source::kSynthesized))
    throw ContractError("write_pseudo_gt: a latent must be present exactly for synthesized records");
  ensure_directory(dir);
  write_f32(dir / "image.f32", rec.image.data);
  write_f32(dir / "normal.f32", rec.normal.data);
  write_f32(dir / "depth.f32", rec.depth.data);
  write_f32(dir / "f_sv.f32", rec.f_sv_gt.data.data);
  write_f32(dir / "f_tv.f32", rec.f_tv_gt.data.data);
  Json j = {{"source", source_name(rec.source)},
            {"seed", rec.seed},
            {"split", rec.eval ? "eval" : "train"},
            {"config_hash", config_hash},
            {"image_shape", rec.image.shape},
            {"f_sv_shape", rec.f_sv_gt.data.shape},
            {"f_tv_shape", rec.f_tv_gt.data.shape}};
  if (rec.latent) {
    write_f32(dir / "latent.f32", *rec.latent);
    j["latent_dim"] = rec.latent->size();
  }
  write_json(dir / "record.json", j);
}

PseudoGT read_pseudo_gt(const fs::path& dir) {
  const Json j = read_json(dir / "record.json");
  PseudoGT rec;
  rec.source = parse_source(j.at("source").get<std::string>());
  rec.seed = j.at("seed").get<std::uint64_t>();
  rec.eval = j.at("split").get<std::string>() == "eval";
  const auto image_shape = j.at("image_shape").get<std::vector<int>>();
  const auto sv_shape = j.at("f_sv_shape").get<std::vector<int>>();
  const auto tv_shape = j.at("f_tv_shape").get<std::vector<int>>();
  const int H = image_shape[1], W = image_shape[2];
  rec.image = Tensor(image_shape, read_f32(dir / "image.f32", numel(image_shape)));
  rec.normal = Tensor(image_shape, read_f32(dir / "normal.f32", numel(image_shape)));
  rec.depth = Tensor({1, H, W}, read_f32(dir / "depth.f32", static_cast<std::size_t>(H) * W));
  rec.f_sv_gt = {Tensor(sv_shape, read_f32(dir / "f_sv.f32", numel(sv_shape))), FeatureRole::kFsv};
  rec.f_tv_gt = {Tensor(tv_shape, read_f32(dir / "f_tv.f32", numel(tv_shape))), FeatureRole::kFtv};
  if (rec.source == Source::kSynthesized)
    rec.latent = read_f32(dir / "latent.f32", j.at("latent_dim").get<std::size_t>());
  return rec;
}

PseudoGTDataset PseudoGTDataset::open(const fs::path& dir) {
  PseudoGTDataset ds;
  ds.root_ = dir;
  ds.manifest_ = read_json(dir / "manifest.json");
  if (ds.manifest_.value("format", "") != "hgen-pseudo-gt") throw IoError(dir.string() + ": not a pseudo-GT dataset");
  for (const auto& r : ds.manifest_.at("records"))
    ds.entries_.push_back({r.at("dir").get<std::string>(), parse_source(r.at("source").get<std::string>()),
                           r.at("split").get<std::string>() == "eval", r.at("seed").get<std::uint64_t>()});
  return ds;
}

PseudoGT PseudoGTDataset::load(std::size_t i) const { return read_pseudo_gt(root_ / entries_.at(i).dir); }

std::vector<std::size_t> PseudoGTDataset::select(std::optional<Source> source, std::optional<bool> eval) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if ((!source || entries_[i].source == *source) && (!eval || entries_[i].eval == *eval)) out.push_back(i);
  return out;
}

PseudoGTBatch load_batch(const PseudoGTDataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("load_batch: no records requested");
  PseudoGTBatch b;
  std::vector<Tensor> normal, depth, f_sv, f_tv;
  bool all_latents = true;
  for (std::size_t i : indices) {
    b.records.push_back(data.load(i));
    const PseudoGT& r = b.records.back();
    normal.push_back(r.normal);
    depth.push_back(r.depth);
    f_sv.push_back(r.f_sv_gt.data);
    f_tv.push_back(r.f_tv_gt.data);
    all_latents = all_latents && r.latent.has_value();
  }
  b.normal = stack(normal);
  b.depth = stack(depth);
  b.f_sv = stack(f_sv);
  b.f_tv = stack(f_tv);
  if (all_latents) {
    const int L = static_cast<int>(b.records[0].latent->size());
    b.latents = Tensor({b.size(), L});
    for (int n = 0; n < b.size(); ++n) {
      if (static_cast<int>(b.records[n].latent->size()) != L) throw IoError("load_batch: latent lengths differ");
      std::copy(b.records[n].latent->begin(), b.records[n].latent->end(), b.latents.data.begin() + n * L);
    }
  }
  return b;
}

std::vector<std::size_t> validation_indices(const PseudoGTDataset& data, int n) {
  auto out = data.select(Source::kSynthesized, true);
  const auto train = data.select(Source::kSynthesized, false);
  for (auto it = train.rbegin(); it != train.rend() && static_cast<int>(out.size()) < n; ++it) out.push_back(*it);
  if (static_cast<int>(out.size()) > n) out.resize(n);
  return out;
}

PseudoGTDataset extract_pseudo_gt(const Reconstructor& r, const Toy2DGenerator& g2d,
                                  const corpus::CorpusManifest& corpus, int n_corpus, int n_synth,
                                  std::uint64_t seed, const fs::path& out_dir, const RunConfig& config) {
  const auto train = corpus.split(false);
  if (n_corpus < 0 || n_synth < 0) throw ContractError("extract_pseudo_gt: counts must be >= 0");
  if (static_cast<std::size_t>(n_corpus) > train.size())
    throw ContractError("extract_pseudo_gt: requested " + std::to_string(n_corpus) + " corpus records, training split has " +
                        std::to_string(train.size()));
  ensure_directory(out_dir);
  const std::string hash = config.hash();
  Json records = Json::array();
  auto add = [&](const std::string& dir, const PseudoGT& rec) {
    write_pseudo_gt(out_dir / dir, rec, hash);
    records.push_back({{"dir", dir}, {"source", source_name(rec.source)}, {"split", rec.eval ? "eval" : "train"},
                       {"seed", rec.seed}});
  };

  const int corpus_eval = corpus::eval_count(n_corpus);
  for (int i = 0; i < n_corpus; ++i) {
    const auto item = load_item(corpus, train[i]);
    auto rec = reconstruct(r, item.image);
    PseudoGT p{item.image, rec.normal, rec.depth, rec.f_sv, rec.f_tv, std::nullopt, Source::kCorpus, train[i].seed,
               i >= n_corpus - corpus_eval};
    add(record_name("corpus", i), p);
  }

  Rng rng = stage_rng(seed, "pseudo_gt.latents");
  const int synth_eval = corpus::eval_count(n_synth);
  const int max_attempts = config.prior.max_attempts_per_synth * std::max(n_synth, 1);
  const int latent_dim = g2d.latent_dim();
  int accepted = 0, attempts = 0;
  constexpr int kBatch = 8;
  while (accepted < n_synth) {
    if (attempts >= max_attempts)
      throw std::runtime_error("extract_pseudo_gt: only " + std::to_string(accepted) + " of " + std::to_string(n_synth) +
                               " synthesized images passed the foreground filter after " + std::to_string(attempts) +
                               " draws");
    const int b = std::min(kBatch, max_attempts - attempts);
    Tensor z({b, latent_dim});
    for (auto& v : z.data) v = to_f32(rng.normal());
    const Tensor images = g2d.forward(ag::constant(z)).value();
    const auto recs = reconstruct_batch(r, images);
    for (int k = 0; k < b && accepted < n_synth; ++k) {
      const int draw = attempts + k;
      PseudoGT p{unstack(images, k), recs[k].normal, recs[k].depth, recs[k].f_sv, recs[k].f_tv,
                 std::vector<double>(z.data.begin() + k * latent_dim, z.data.begin() + (k + 1) * latent_dim),
                 Source::kSynthesized, static_cast<std::uint64_t>(draw), accepted >= n_synth - synth_eval};
      const double fg = p.foreground_fraction();
      if (fg <= config.prior.fg_min || fg >= config.prior.fg_max) continue;
      add(record_name("synth", accepted), p);
      ++accepted;
    }
    attempts += b;
  }

  Json manifest = {{"format", "hgen-pseudo-gt"},
                   {"config_hash", hash},
                   {"seed", seed},
                   {"n_corpus", n_corpus},
                   {"n_synth", n_synth},
                   {"synth_draws", attempts},
                   {"foreground_depth", kForegroundDepth},
                   {"records", records}};
  write_json(out_dir / "manifest.json", manifest);
  return PseudoGTDataset::open(out_dir);
}

}  // namespace hgen::prior
