#include "g2/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>

namespace g2::train {

namespace fs = std::filesystem;
using nn::Ten;

DataView DataView::split(const synth::Dataset& ds, double val_fraction) {
  DataView v;
  v.data = &ds;
  int n = int(ds.samples.size());
  int n_val = std::max(1, int(n * val_fraction));
  for (int i = 0; i < n - n_val; ++i) v.train_idx.push_back(i);
  for (int i = n - n_val; i < n; ++i) v.val_idx.push_back(i);
  return v;
}

void TrainState::init(const TrainConfig& cfg) {
  config = cfg;
  rng.reseed(cfg.seed);
  Rng init_rng = rng.fork();
  system.init(init_rng, cfg.net(), cfg.model_seed, cfg.model_vertices);
}

void configure_optimizers(TrainState& st) {
  nn::ParamMap backbone, other, disc;
  st.system.generator.collect_trunk(backbone, "generator");
  st.system.generator.collect_rest(other, "generator");
  st.system.mappers.collect(other, "mappers");
  st.system.encoder.collect(other, "encoder");
  st.system.dummy.collect(other, "dummy");
  st.system.extractor.collect(other, "extractor");
  st.system.discriminator.collect(disc, "discriminator");

  auto only_trainable = [](const nn::ParamMap& in) {
    nn::ParamMap out;
    for (const auto& [n, p] : in)
      if (p->trainable) out.emplace_back(n, p);
    return out;
  };
  st.opt_gen = std::make_unique<nn::Adam>(
      std::vector<nn::Adam::GroupSpec>{
          {"backbone", only_trainable(backbone), st.config.lr_backbone},
          {"other", only_trainable(other), st.config.lr_other}},
      st.config.beta1, st.config.beta2);
  st.opt_disc = std::make_unique<nn::Adam>(
      std::vector<nn::Adam::GroupSpec>{
          {"disc", only_trainable(disc), st.config.lr_backbone}},
      st.config.beta1, st.config.beta2);
}

namespace {

Ten batch_tensor(const std::vector<const synth::SyntheticSample*>& batch) {
  std::vector<ImageTensor> imgs;
  imgs.reserve(batch.size());
  for (const auto* s : batch) imgs.push_back(s->image);
  return nn::batch_images(imgs);
}

std::vector<const synth::SyntheticSample*> draw_batch(const DataView& data, Rng& rng,
                                                      int n) {
  std::vector<const synth::SyntheticSample*> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    int idx = data.train_idx[rng.uniform_int(int(data.train_idx.size()))];
    out.push_back(&data.data->samples[idx]);
  }
  return out;
}

void set_module_trainable(const nn::ParamMap& params, bool trainable) {
  for (const auto& [name, p] : params) nn::set_trainable(p, trainable);
}

double mean_val(const Ten& t) {
  double acc = 0;
  for (float v : t->val) acc += v;
  return acc / double(t->val.size());
}

}  // namespace

AuxMetrics pretrain_auxiliaries(TrainState& st, const DataView& data, std::ostream* log) {
  auto& sys = st.system;
  const auto& cfg = st.config;
  AuxMetrics metrics;

  // ---- identity embedder: cosine-margin classification over the pool ----
  {
    const float scale = 16.0f, margin = 0.2f;
    Rng head_rng = st.rng.fork();
    Ten head = nn::param_randn(head_rng, {data.data->pool, cfg.d_id},
                               std::sqrt(1.0f / float(cfg.d_id)));
    nn::ParamMap emb_params;
    sys.embedder.collect(emb_params, "embedder");
    emb_params.emplace_back("head", head);
    nn::Adam opt({{"embedder", emb_params, 1e-3f}}, cfg.beta1, cfg.beta2);

    for (int it = 0; it < cfg.embedder_steps; ++it) {
      auto batch = draw_batch(data, st.rng, cfg.aux_batch);
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (const auto* s : batch) labels.push_back(s->identity_id);
      Ten f = sys.embedder.forward(batch_tensor(batch));
      Ten wn = nn::l2_normalize_rows(head);
      Ten cos = nn::matmul(f, wn, /*transpose_b=*/true);
      std::vector<float> margins(std::size_t(batch.size()) * data.data->pool, 0.0f);
      for (size_t i = 0; i < batch.size(); ++i)
        margins[i * data.data->pool + labels[i]] = margin;
      Ten adj = nn::sub(cos, nn::constant({int(batch.size()), data.data->pool},
                                          std::move(margins)));
      Ten loss = nn::softmax_xent(nn::mul_scalar(adj, scale), labels);
      nn::backward(loss);
      opt.step();
      opt.zero_grad();
      if (log && (it % 200 == 0))
        (*log) << "[aux] embedder step " << it << " loss " << nn::item(loss) << "\n";
    }
    sys.embedder.freeze();

    // validation pairs drawn from the held-out slice, grouped by identity
    std::map<int, std::vector<int>> by_id;
    for (int idx : data.val_idx) by_id[data.data->samples[idx].identity_id].push_back(idx);
    auto embed_of = [&](int idx) {
      return identity::embed_identity(data.data->samples[idx].image, sys.embedder);
    };
    double same = 0, cross = 0;
    int n_same = 0, n_cross = 0;
    std::vector<std::pair<int, identity::IdentityEmbedding>> firsts;
    for (auto& [id, idxs] : by_id) {
      auto e0 = embed_of(idxs[0]);
      for (size_t k = 1; k < idxs.size(); ++k) {
        same += identity::cosine_similarity(e0, embed_of(idxs[k]));
        ++n_same;
      }
      firsts.emplace_back(id, std::move(e0));
    }
    for (size_t i = 0; i < firsts.size(); ++i)
      for (size_t j = i + 1; j < firsts.size(); ++j) {
        cross += identity::cosine_similarity(firsts[i].second, firsts[j].second);
        ++n_cross;
      }
    metrics.same_id_cos = n_same ? same / n_same : 0.0;
    metrics.cross_id_cos = n_cross ? cross / n_cross : 0.0;
    if (log)
      (*log) << "[aux] embedder frozen: same-ID cos " << metrics.same_id_cos
             << ", cross-ID cos " << metrics.cross_id_cos << "\n";
  }

  // ---- geometry estimator: sigma-normalized regression ----
  {
    synth::SynthConfig scfg;
    std::vector<float> sigma;
    for (int i = 0; i < cfg.d_s; ++i) sigma.push_back(scfg.sigma_shape);
    for (int i = 0; i < cfg.d_e; ++i) sigma.push_back(scfg.sigma_expr);
    sigma.push_back(scfg.sigma_rot_xy);
    sigma.push_back(scfg.sigma_rot_xy);
    sigma.push_back(scfg.sigma_rot_z);
    sigma.push_back(scfg.sigma_trans);
    sigma.push_back(scfg.sigma_trans);
    sigma.push_back(scfg.sigma_logscale);
    const int n_geo = int(sigma.size());
    for (int c = 0; c < 3; ++c) {
      sigma.push_back(scfg.gamma_dc_sigma);
      for (int b = 1; b <= 3; ++b) sigma.push_back(scfg.gamma_lin_sigma);
      for (int b = 4; b <= 8; ++b) sigma.push_back(scfg.gamma_quad_sigma);
    }
    std::vector<float> inv_sigma(sigma.size());
    for (size_t i = 0; i < sigma.size(); ++i) inv_sigma[i] = 1.0f / sigma[i];

    auto target_of = [&](const synth::SyntheticSample& s) {
      std::vector<float> t = s.spec.geom.flat();
      t.insert(t.end(), s.spec.gamma.gamma.begin(), s.spec.gamma.gamma.end());
      return t;
    };

    nn::ParamMap est_params;
    sys.estimator.collect(est_params, "estimator");
    nn::Adam opt({{"estimator", est_params, 1e-3f}}, cfg.beta1, cfg.beta2);

    const int out_dim = sys.estimator.out_dim();
    for (int it = 0; it < cfg.estimator_steps; ++it) {
      auto batch = draw_batch(data, st.rng, cfg.aux_batch);
      std::vector<float> targets, scales;
      targets.reserve(batch.size() * out_dim);
      for (const auto* s : batch) {
        auto t = target_of(*s);
        targets.insert(targets.end(), t.begin(), t.end());
        scales.insert(scales.end(), inv_sigma.begin(), inv_sigma.end());
      }
      Ten pred = sys.estimator.forward(batch_tensor(batch));
      Ten diff = nn::mul(nn::sub(pred, nn::constant({int(batch.size()), out_dim},
                                                    std::move(targets))),
                         nn::constant({int(batch.size()), out_dim}, std::move(scales)));
      Ten loss = nn::mean_all(nn::square(diff));
      nn::backward(loss);
      opt.step();
      opt.zero_grad();
      if (log && (it % 200 == 0))
        (*log) << "[aux] estimator step " << it << " loss " << nn::item(loss) << "\n";
    }
    sys.estimator.freeze();

    // mean sigma-normalized L2 over the geometry dims, held-out slice
    double err = 0;
    for (int idx : data.val_idx) {
      const auto& s = data.data->samples[idx];
      auto out = sys.estimator.forward(nn::batch_images({s.image}));
      auto t = target_of(s);
      double acc = 0;
      for (int j = 0; j < n_geo; ++j) {
        double d = (out->val[j] - t[j]) * inv_sigma[j];
        acc += d * d;
      }
      err += std::sqrt(acc / n_geo);
    }
    metrics.coeff_err = data.val_idx.empty() ? 0.0 : err / double(data.val_idx.size());
    if (log)
      (*log) << "[aux] estimator frozen: normalized coeff err " << metrics.coeff_err
             << "\n";
  }
  return metrics;
}

void pretrain_generator_prior(TrainState& st, const DataView& data, std::ostream* log) {
  auto& sys = st.system;
  const auto& cfg = st.config;
  require(sys.embedder.frozen && sys.estimator.frozen,
          "pretrain_generator_prior: auxiliaries must be frozen first");

  nn::ParamMap params;
  sys.generator.collect_trunk(params, "generator");
  sys.mappers.collect(params, "mappers");
  nn::Adam opt({{"prior", params, 1e-3f}}, cfg.beta1, cfg.beta2);

  // decoder-only: no fusion, all-zero password
  const bool iff_saved = sys.generator.cfg.iff;
  sys.generator.cfg.iff = false;
  password::PasswordBits zero_bits;
  zero_bits.bits.assign(cfg.net().n_bits(), 0);

  const int n_geo = cfg.d_s + cfg.d_e + 6;
  for (int it = 0; it < cfg.prior_steps; ++it) {
    auto batch = draw_batch(data, st.rng, cfg.batch_size);
    Ten x = batch_tensor(batch);
    Ten e_id = sys.embedder.forward(x);
    Ten est = sys.estimator.forward(x);
    Ten geo = cfg.geop
                  ? nn::slice_cols(est, 0, n_geo)
                  : nn::constant({int(batch.size()), n_geo},
                                 std::vector<float>(batch.size() * n_geo, 0.0f));
    Ten e_g = nn::concat_axis1({e_id, geo});
    auto lat = dpim::map_latents(sys.mappers, e_g);
    std::vector<password::PasswordBits> bits(batch.size(), zero_bits);
    Ten y = dpim::generate(sys.generator, {}, lat, bits);
    Ten loss = losses::reconstruction_loss(y, x, sys.embedder);
    nn::backward(loss);
    opt.step();
    opt.zero_grad();
    if (log && (it % 100 == 0))
      (*log) << "[prior] step " << it << " recon " << nn::item(loss) << "\n";
  }
  sys.generator.cfg.iff = iff_saved;
}

std::pair<losses::LossReport, losses::LossReport> train_step(
    const std::vector<const synth::SyntheticSample*>& batch, TrainState& st) {
  auto& sys = st.system;
  const auto& cfg = st.config;
  const auto& w = cfg.weights;
  const int n = int(batch.size());
  require(n >= 2, "train_step: batch must have at least 2 samples");

  nn::ParamMap disc_params;
  sys.discriminator.collect(disc_params, "discriminator");

  Ten x = batch_tensor(batch);

  // ---------------- anonymization stage ----------------
  Ten z = nn::constant({n, cfg.d_z}, nn::randn_vec(st.rng, std::int64_t(n) * cfg.d_z, 1.0f));
  Ten e_id = sys.embedder.forward(x);  // frozen + constant input: no grads

  std::vector<password::PasswordBits> bits(n);
  for (int i = 0; i < n; ++i) {
    identity::IdentityEmbedding e;
    e.values.assign(e_id->val.begin() + std::int64_t(i) * cfg.d_id,
                    e_id->val.begin() + std::int64_t(i + 1) * cfg.d_id);
    bits[i] = password::encode_identity_to_bits(e);
  }

  const int n_geo = cfg.d_s + cfg.d_e + 6;
  Ten est_x = sys.estimator.forward(x);
  Ten geo_x = cfg.geop ? nn::slice_cols(est_x, 0, n_geo)
                       : nn::constant({n, n_geo}, std::vector<float>(
                                                      std::size_t(n) * n_geo, 0.0f));

  Ten e_dummy = sys.dummy.forward(z);
  Ten e_g = nn::concat_axis1({e_dummy, geo_x});

  // the generator pass must not spend effort on discriminator weight grads
  set_module_trainable(disc_params, false);

  auto lat = dpim::map_latents(sys.mappers, e_g);
  auto pyramid = sys.encoder.forward(x);
  Ten y = dpim::generate(sys.generator, pyramid, lat, bits);

  Ten zero = nn::scalar(0.0f);
  losses::AnonParts anon;
  anon.div = w.lambda_div > 0 ? losses::diversity_loss(e_dummy) : zero;
  anon.adv = w.lambda_adv > 0 ? losses::adversarial_loss_g(y, sys.discriminator) : zero;
  anon.id = w.lambda_id > 0
                ? losses::identity_loss_anon(y, e_id, e_dummy, sys.embedder)
                : zero;
  anon.geo = w.lambda_geo > 0
                 ? losses::geometry_loss(x, y, sys.model, sys.estimator, w.lambda_lm)
                 : zero;
  anon.hide = w.lambda_hide > 0
                  ? losses::hiding_loss(y, bits, sys.extractor, cfg.eps_sigma, st.rng)
                  : zero;
  auto anon_total = losses::total_anon(anon, w);

  // ---------------- recovery stage ----------------
  // extracted password, decoded to the recovery identity (discrete: no grads)
  Ten logits_y = sys.extractor.forward(y);
  std::vector<float> e_id_y(std::size_t(n) * cfg.d_id);
  {
    password::PasswordBits by;
    by.bits.resize(cfg.net().n_bits());
    for (int i = 0; i < n; ++i) {
      const float* l = logits_y->val.data() + std::int64_t(i) * by.size();
      for (int b = 0; b < by.size(); ++b) by.bits[b] = std::uint8_t(l[b] > 0.0f);
      auto dec = password::decode_bits_to_identity(by);
      std::copy(dec.embedding.values.begin(), dec.embedding.values.end(),
                e_id_y.begin() + std::int64_t(i) * cfg.d_id);
    }
  }
  Ten e_id_y_t = nn::constant({n, cfg.d_id}, std::move(e_id_y));

  Ten est_y = sys.estimator.forward(y);  // frozen, but grads flow into y
  Ten geo_y = cfg.geop ? nn::slice_cols(est_y, 0, n_geo)
                       : nn::constant({n, n_geo}, std::vector<float>(
                                                      std::size_t(n) * n_geo, 0.0f));
  Ten e_g_y = nn::concat_axis1({e_id_y_t, geo_y});
  auto lat_rec = dpim::map_latents(sys.mappers, e_g_y);
  auto pyramid_y = sys.encoder.forward(y);
  Ten x_hat = dpim::generate(sys.generator, pyramid_y, lat_rec, bits);

  losses::RecParts rec;
  rec.rec = w.lambda_rec > 0 ? losses::reconstruction_loss(x_hat, x, sys.embedder) : zero;
  rec.adv = w.lambda_adv > 0 ? losses::adversarial_loss_g(x_hat, sys.discriminator) : zero;
  rec.id = w.lambda_id > 0 ? losses::identity_loss_rec(x_hat, e_id, sys.embedder) : zero;
  rec.geo = w.lambda_geo > 0
                ? losses::geometry_loss(x, x_hat, sys.model, sys.estimator, w.lambda_lm)
                : zero;
  rec.hide = w.lambda_hide > 0
                 ? losses::hiding_loss(x_hat, bits, sys.extractor, cfg.eps_sigma, st.rng)
                 : zero;
  auto rec_total = losses::total_rec(rec, w);

  for (const auto& rep : {anon_total.report, rec_total.report}) {
    for (const auto& [name, v] : rep.parts)
      if (!std::isfinite(v))
        throw std::runtime_error("train_step: non-finite loss '" + name + "' (" +
                                 rep.stage + ") at step " + std::to_string(st.step));
  }

  // single combined generator-side update over both stages
  Ten total = nn::add(anon_total.total, rec_total.total);
  nn::backward(total);
#ifndef NDEBUG
  {
    nn::ParamMap frozen;
    sys.embedder.collect(frozen, "embedder");
    sys.estimator.collect(frozen, "estimator");
    for (auto& [name, p] : frozen) assert(p->grad.empty());
  }
#endif
  st.opt_gen->step();
  st.opt_gen->zero_grad();

  // ---------------- discriminator update (1:1 alternation) ----------------
  set_module_trainable(disc_params, true);
  if (w.lambda_adv > 0) {
    st.opt_disc->zero_grad();
    losses::AdvDOptions opts;
    opts.apply_r1 = cfg.r1_every > 0 && (st.step % cfg.r1_every == 0);
    opts.r1_gamma = cfg.r1_gamma;
    Ten d_loss = losses::adversarial_loss_d(
        x, {nn::stop_grad(y), nn::stop_grad(x_hat)}, sys.discriminator, opts);
    if (!std::isfinite(nn::item(d_loss)))
      throw std::runtime_error("train_step: non-finite discriminator loss at step " +
                               std::to_string(st.step));
    nn::backward(d_loss);
    st.opt_disc->step();
    st.opt_disc->zero_grad();
  }

  ++st.step;
  return {anon_total.report, rec_total.report};
}

CheckpointContainer snapshot(const TrainState& st) {
  CheckpointContainer ck;
  ck.config_hash = st.config.hash();
  ck.config_text = st.config.serialize();
  ck.step = std::uint32_t(st.step);
  ck.rng_state = st.rng.state();
  nn::ParamMap all;
  st.system.collect_all(all);
  for (const auto& [name, p] : all) ck.params.emplace_back(name, p->val);
  if (st.opt_gen) {
    ck.adam_t_gen = st.opt_gen->t();
    ck.m_gen = st.opt_gen->moments_m();
    ck.v_gen = st.opt_gen->moments_v();
  }
  if (st.opt_disc) {
    ck.adam_t_disc = st.opt_disc->t();
    ck.m_disc = st.opt_disc->moments_m();
    ck.v_disc = st.opt_disc->moments_v();
  }
  return ck;
}

void load_system(dpim::SystemState& system, const CheckpointContainer& ck) {
  nn::ParamMap all;
  system.collect_all(all);
  std::map<std::string, const std::vector<float>*> by_name;
  for (const auto& [name, data] : ck.params) by_name[name] = &data;
  for (auto& [name, p] : all) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing parameter " + name);
    require(it->second->size() == p->val.size(),
            "checkpoint: size mismatch for " + name);
    p->val = *it->second;
  }
  system.embedder.freeze();
  system.estimator.freeze();
}

void restore(TrainState& st, const CheckpointContainer& ck) {
  require(ck.config_hash == st.config.hash(),
          "restore: checkpoint was produced by a different config");
  load_system(st.system, ck);
  configure_optimizers(st);
  st.opt_gen->set_t(ck.adam_t_gen);
  st.opt_gen->moments_m() = ck.m_gen;
  st.opt_gen->moments_v() = ck.v_gen;
  st.opt_disc->set_t(ck.adam_t_disc);
  st.opt_disc->moments_m() = ck.m_disc;
  st.opt_disc->moments_v() = ck.v_disc;
  st.rng.set_state(ck.rng_state);
  st.step = int(ck.step);
}

namespace {

nlohmann::json report_json(const losses::LossReport& rep) {
  nlohmann::json j;
  j["stage"] = rep.stage;
  j["total"] = rep.total;
  for (const auto& [k, v] : rep.parts) j[k] = v;
  return j;
}

}  // namespace

CheckpointContainer train(const TrainConfig& config, std::ostream* log,
                          const std::string& resume_path) {
  require(!config.data_dir.empty(), "train: config.data_dir is required");
  auto dataset = synth::load_dataset(config.data_dir);
  auto data = DataView::split(dataset);

  TrainState st;
  st.init(config);

  fs::create_directories(config.out_dir);
  std::ofstream metrics(fs::path(config.out_dir) / "metrics.jsonl",
                        resume_path.empty() ? std::ios::trunc : std::ios::app);

  if (!resume_path.empty()) {
    restore(st, load_checkpoint(resume_path));
    if (log) (*log) << "[train] resumed at step " << st.step << "\n";
  } else {
    auto aux = pretrain_auxiliaries(st, data, log);
    nlohmann::json aj{{"event", "auxiliaries"},
                      {"same_id_cos", aux.same_id_cos},
                      {"cross_id_cos", aux.cross_id_cos},
                      {"coeff_err", aux.coeff_err}};
    metrics << aj.dump() << "\n";
    if (config.genp) pretrain_generator_prior(st, data, log);
    configure_optimizers(st);
  }

  for (; st.step < config.steps;) {
    int step_before = st.step;
    auto batch = draw_batch(data, st.rng, config.batch_size);
    auto [anon_rep, rec_rep] = train_step(batch, st);
    nlohmann::json j{{"step", step_before},
                     {"anon", report_json(anon_rep)},
                     {"rec", report_json(rec_rep)}};
    metrics << j.dump() << "\n";
    if (log && (st.step % 25 == 0))
      (*log) << "[train] step " << st.step << " anon " << anon_rep.total << " rec "
             << rec_rep.total << "\n";
    if (config.checkpoint_every > 0 && st.step % config.checkpoint_every == 0)
      save_checkpoint(snapshot(st),
                      (fs::path(config.out_dir) / ("ck_" + std::to_string(st.step) +
                                                   ".g2ck")).string());
  }
  auto final_ck = snapshot(st);
  save_checkpoint(final_ck, (fs::path(config.out_dir) / "ck_final.g2ck").string());
  return final_ck;
}

}  // namespace g2::train
