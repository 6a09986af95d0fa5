// Command-line entry point: preprocess, pretrain, finetune, sweep, gradcam,
// stats. One command per process; `--threads 1` (the default) guarantees
// bit-reproducible runs.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "sslct/augment.hpp"
#include "sslct/checkpoint.hpp"
#include "sslct/config.hpp"
#include "sslct/contrastive.hpp"
#include "sslct/downstream.hpp"
#include "sslct/explain.hpp"
#include "sslct/spark.hpp"

namespace fs = std::filesystem;
using namespace sslct;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string resume;
  std::int64_t seed = -1;  // -1: take the config's seed
  int threads = 1;
};

void add_common_flags(CLI::App* cmd, CommonArgs& args, bool need_config = true) {
  auto* c = cmd->add_option("--config", args.config_path, "run configuration file");
  if (need_config) c->required();
  cmd->add_option("--out", args.out_dir, "output directory")->required();
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--threads", args.threads, "worker threads (1 = bit-reproducible)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--resume", args.resume, "checkpoint to resume from");
}

// Resolve the config with command-line overrides folded in; the result is
// what gets frozen into the run directory.
KeyValueConfig resolve_config(const CommonArgs& args) {
  KeyValueConfig cfg = args.config_path.empty() ? KeyValueConfig{}
                                                : KeyValueConfig::parse_file(args.config_path);
  if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
  if (!cfg.has("seed")) cfg.set("seed", "0");
  cfg.set("threads", std::to_string(args.threads));
  return cfg;
}

void freeze_config(const KeyValueConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "config.txt", std::ios::trunc);
  if (!f) throw IoError("cannot write frozen config in " + out_dir);
  f << cfg.to_string();
}

EncoderConfig encoder_config_from(const KeyValueConfig& cfg) {
  EncoderConfig ec;
  ec.blocks = cfg.get_int_list("encoder.blocks", ec.blocks);
  ec.widths = cfg.get_int_list("encoder.widths", ec.widths);
  ec.validate();
  return ec;
}

OptimizerConfig optimizer_config_from(const KeyValueConfig& cfg) {
  OptimizerConfig opt;
  opt.kind = optimizer_kind_from_string(cfg.get_or("optim.kind", "lamb"));
  opt.lr = cfg.get_double("optim.lr", 1e-3);
  opt.weight_decay = cfg.get_double("optim.weight_decay", 0.0);
  opt.momentum = cfg.get_double("optim.momentum", 0.9);
  opt.validate();
  return opt;
}

ContrastiveHeadConfig heads_config_from(const KeyValueConfig& cfg) {
  ContrastiveHeadConfig h;
  h.proj_hidden = (int)cfg.get_int("heads.proj_hidden", h.proj_hidden);
  h.proj_out = (int)cfg.get_int("heads.proj_out", h.proj_out);
  h.byol_hidden = (int)cfg.get_int("heads.byol_hidden", h.byol_hidden);
  h.byol_out = (int)cfg.get_int("heads.byol_out", h.byol_out);
  return h;
}

// ---------------------------------------------------------------------------
// dataset loading
// ---------------------------------------------------------------------------

LabeledData load_split(const std::string& manifest_path, const DatasetStats& stats,
                       const std::string& split) {
  const Manifest manifest = load_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  LabeledData data;
  for (const auto& rec : manifest.split(split)) {
    GrayImage img = read_png8((base / rec.image_path).string());
    if (data.images.empty()) {
      data.h = img.h;
      data.w = img.w;
    }
    check_cfg(img.h == data.h && img.w == data.w,
              "dataset: image extent mismatch in " + rec.image_path);
    data.images.push_back(normalize<float>(img, stats));
    data.labels.push_back(rec.label);
  }
  data.validate();
  return data;
}

int num_classes_of(const std::string& manifest_path) {
  return load_manifest(manifest_path).num_classes();
}

// ---------------------------------------------------------------------------
// checkpoint packing
// ---------------------------------------------------------------------------

void pack_params(PretrainCheckpoint& ck, const ParamSet<float>& ps, const std::string& prefix) {
  for (const auto& [n, p] : ps.params) ck.add(prefix + n, p->shape, p->value);
}

void unpack_params(const PretrainCheckpoint& ck, ParamSet<float>& ps, const std::string& prefix) {
  for (auto& [n, p] : ps.params) {
    const NamedTensor& t = ck.require(prefix + n);
    check_cfg((std::int64_t)t.data.size() == p->size(),
              "checkpoint: tensor " + prefix + n + " size mismatch");
    p->value = t.data;
  }
}

using BufferList = std::vector<std::pair<std::string, std::vector<float>*>>;

void pack_buffers(PretrainCheckpoint& ck, const BufferList& bufs, const std::string& prefix) {
  for (const auto& [n, v] : bufs) ck.add(prefix + n, {(int)v->size()}, *v);
}

void unpack_buffers(const PretrainCheckpoint& ck, BufferList& bufs, const std::string& prefix) {
  for (auto& [n, v] : bufs) {
    const NamedTensor& t = ck.require(prefix + n);
    check_cfg(t.data.size() == v->size(), "checkpoint: buffer " + prefix + n + " size mismatch");
    *v = t.data;
  }
}

void pack_opt_state(PretrainCheckpoint& ck, const OptimizerState<float>& state) {
  for (const auto& [n, v] : state.m) ck.add("opt.m." + n, {(int)v.size()}, v);
  for (const auto& [n, v] : state.v) ck.add("opt.v." + n, {(int)v.size()}, v);
}

void unpack_opt_state(const PretrainCheckpoint& ck, OptimizerState<float>& state) {
  state.m.clear();
  state.v.clear();
  for (const auto& t : ck.tensors) {
    if (t.name.rfind("opt.m.", 0) == 0) state.m[t.name.substr(6)] = t.data;
    if (t.name.rfind("opt.v.", 0) == 0) state.v[t.name.substr(6)] = t.data;
  }
}

Encoder<float> encoder_from_checkpoint(const PretrainCheckpoint& ck) {
  const KeyValueConfig cfg = KeyValueConfig::parse_string(ck.config_text, "checkpoint config");
  Encoder<float> enc(encoder_config_from(cfg), 0);
  unpack_params(ck, enc.params, "param.encoder.");
  BufferList bufs;
  enc.collect_buffers(bufs, "encoder.");
  unpack_buffers(ck, bufs, "buf.");
  return enc;
}

// ---------------------------------------------------------------------------
// pretraining driver
// ---------------------------------------------------------------------------

struct PretrainSession {
  std::string method;
  KeyValueConfig cfg;
  std::uint64_t seed = 0;
  OptimizerConfig opt;
  OptimizerState<float> state;
  std::int64_t step = 0;

  SparkModel<float> spark;
  MocoModel<float> moco;
  SwavModel<float> swav;
  ByolModel<float> byol;

  int patch = 32;
  double mask_ratio = 0.6;
  bool mask_exact = false;
  AugmentConfig aug;

  explicit PretrainSession(const KeyValueConfig& config) : cfg(config) {
    method = cfg.get("method");
    seed = (std::uint64_t)cfg.get_int("seed", 0);
    opt = optimizer_config_from(cfg);
    const EncoderConfig ec = encoder_config_from(cfg);
    const ContrastiveHeadConfig heads = heads_config_from(cfg);

    const int view = (int)cfg.get_int("augment.view", 64);
    const double min_scale = cfg.get_double("augment.min_scale", 0.2);
    const double max_scale = cfg.get_double("augment.max_scale", 1.0);
    aug = two_view_config(view, min_scale, max_scale);
    aug.blur_kernel = (int)cfg.get_int("augment.blur_kernel", 23);
    aug.blur_prob = cfg.get_double("augment.blur_prob", 0.5);

    if (method == "spark") {
      patch = (int)cfg.get_int("spark.patch", 32);
      mask_ratio = cfg.get_double("spark.mask_ratio", 0.6);
      mask_exact = cfg.get_bool("spark.mask_exact", false);
      DecoderConfig dc;
      dc.widths = cfg.get_int_list("spark.decoder_widths", dc.widths);
      dc.head_width = (int)cfg.get_int("spark.decoder_head", dc.head_width);
      spark = SparkModel<float>(ec, dc, seed);
    } else if (method == "moco") {
      MocoConfig mc;
      mc.queue_capacity = (int)cfg.get_int("moco.queue", mc.queue_capacity);
      mc.tau = cfg.get_double("moco.tau", mc.tau);
      mc.ema_momentum = cfg.get_double("moco.ema", mc.ema_momentum);
      mc.heads = heads;
      moco = MocoModel<float>(ec, mc, seed);
    } else if (method == "swav") {
      SwavConfig sc;
      sc.num_prototypes = (int)cfg.get_int("swav.prototypes", sc.num_prototypes);
      sc.tau = cfg.get_double("swav.tau", sc.tau);
      sc.epsilon = cfg.get_double("swav.epsilon", sc.epsilon);
      sc.sinkhorn_iterations = (int)cfg.get_int("swav.sinkhorn_iters", sc.sinkhorn_iterations);
      sc.freeze_prototypes_iters = cfg.get_int("swav.freeze_iters", sc.freeze_prototypes_iters);
      sc.heads = heads;
      swav = SwavModel<float>(ec, sc, seed);
      const int small = (int)cfg.get_int("swav.small", 32);
      const int small_count = (int)cfg.get_int("swav.small_count", 6);
      aug.groups = {CropGroup{view, 2, 0.9, 1.0}, CropGroup{small, small_count, 0.10, 0.33}};
    } else if (method == "byol") {
      ByolConfig bc;
      bc.ema_momentum = cfg.get_double("byol.ema", bc.ema_momentum);
      bc.heads = heads;
      byol = ByolModel<float>(ec, bc, seed);
    } else {
      throw ConfigError("pretrain: unknown method `" + method +
                        "` (expected spark, moco, swav, or byol)");
    }
    aug.validate();
  }

  ParamSet<float>& params() {
    if (method == "spark") return spark.params;
    if (method == "moco") return moco.twins.trainable;
    if (method == "swav") return swav.trainable;
    return byol.trainable;
  }

  PretrainCheckpoint to_checkpoint(std::int64_t epoch) {
    PretrainCheckpoint ck;
    ck.method = method;
    ck.epoch = epoch;
    ck.step = step;
    ck.config_text = cfg.to_string();
    pack_params(ck, params(), "param.");
    BufferList bufs;
    if (method == "spark") {
      spark.collect_buffers(bufs);
    } else if (method == "swav") {
      swav.encoder.collect_buffers(bufs, "encoder.");
    } else {
      TwinEncoders<float>& tw = method == "moco" ? moco.twins : byol.twins;
      tw.online.collect_buffers(bufs, "encoder.");
      pack_params(ck, tw.target_params, "target.");
      BufferList tbufs;
      tw.target.collect_buffers(tbufs, "encoder.");
      pack_buffers(ck, tbufs, "tbuf.");
    }
    pack_buffers(ck, bufs, "buf.");
    if (method == "moco") {
      std::vector<float> flat;
      for (const auto& k : moco.queue.keys) flat.insert(flat.end(), k.begin(), k.end());
      ck.add("queue", {moco.queue.size(), moco.queue.dim}, flat);
    }
    pack_opt_state(ck, state);
    return ck;
  }

  void restore(const PretrainCheckpoint& ck) {
    if (ck.method != method)
      throw ConfigError("resume: checkpoint method " + ck.method +
                        " does not match configured method " + method);
    step = ck.step;
    unpack_params(ck, params(), "param.");
    BufferList bufs;
    if (method == "spark") {
      spark.collect_buffers(bufs);
    } else if (method == "swav") {
      // Prototypes were saved already row-normalized; renormalizing here
      // would perturb their last bits and break bitwise resume.
      swav.encoder.collect_buffers(bufs, "encoder.");
    } else {
      TwinEncoders<float>& tw = method == "moco" ? moco.twins : byol.twins;
      tw.online.collect_buffers(bufs, "encoder.");
      unpack_params(ck, tw.target_params, "target.");
      BufferList tbufs;
      tw.target.collect_buffers(tbufs, "encoder.");
      unpack_buffers(ck, tbufs, "tbuf.");
    }
    unpack_buffers(ck, bufs, "buf.");
    if (method == "moco") {
      const NamedTensor& q = ck.require("queue");
      moco.queue.keys.clear();
      const int M = q.shape[0], D = q.shape[1];
      check_cfg(D == moco.queue.dim, "resume: queue dim mismatch");
      for (int i = 0; i < M; ++i)
        moco.queue.keys.emplace_back(q.data.begin() + (size_t)i * D,
                                     q.data.begin() + (size_t)(i + 1) * D);
    }
    unpack_opt_state(ck, state);
  }

  // One optimizer update on a batch of images; the epoch/step labels pin the
  // augmentation and mask streams so a resumed run replays them exactly.
  float train_step(const LabeledData& data, const std::vector<int>& idx, std::int64_t epoch,
                   std::int64_t step_in_epoch) {
    const std::string tag = std::to_string(epoch) + "." + std::to_string(step_in_epoch);
    ++step;
    if (method == "spark") {
      auto images = batch_images<float>(data, idx);
      std::vector<PatchMask> masks;
      for (size_t i = 0; i < idx.size(); ++i)
        masks.push_back(generate_patch_mask(data.h, data.w, patch, mask_ratio,
                                            derive_seed(seed, "mask." + tag, i), mask_exact));
      return spark_pretrain_step(spark, images, masks, opt, state, step);
    }
    std::vector<std::vector<Ptr<float>>> per_image;
    for (size_t i = 0; i < idx.size(); ++i) {
      auto img = make_node<float>({1, data.h, data.w}, std::vector<float>(data.images[idx[i]]));
      auto rng = make_rng(seed, "aug." + tag, i);
      per_image.push_back(make_views(img, aug, rng));
    }
    auto views = stack_views(per_image);
    if (method == "moco") return moco.step(views[0], views[1], opt, state, step);
    if (method == "swav") return swav.step(views, opt, state, step);
    return byol.step(views[0], views[1], opt, state, step);
  }
};

// Rewrites the loss log keeping only rows at or before `resume_epoch`, so an
// interrupted-and-resumed run reproduces the uninterrupted file.
void trim_loss_csv(const std::string& path, std::int64_t resume_epoch) {
  std::ifstream in(path);
  std::vector<std::string> keep{"epoch,step,loss"};
  if (in) {
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const size_t comma = line.find(',');
      if (comma == std::string::npos) continue;
      if (std::stoll(line.substr(0, comma)) <= resume_epoch) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

int cmd_pretrain(const CommonArgs& args) {
  KeyValueConfig cfg = resolve_config(args);
  PretrainSession session(cfg);

  const DatasetStats stats = load_stats(cfg.get("data.stats"));
  const LabeledData data = load_split(cfg.get("data.manifest"), stats, "train");
  check_cfg(data.size() >= 1, "pretrain: empty train split");

  const std::int64_t epochs = cfg.get_int("train.epochs", 900);
  const std::int64_t cadence = cfg.get_int("train.cadence", 50);
  check_cfg(epochs >= 1 && cadence >= 1, "pretrain: epochs and cadence must be >= 1");
  const int batch = std::min<int>((int)cfg.get_int("train.batch", 64), data.size());

  std::int64_t start_epoch = 0;
  if (!args.resume.empty()) {
    const PretrainCheckpoint ck = load_checkpoint(args.resume);
    session.restore(ck);
    start_epoch = ck.epoch;
  }

  freeze_config(cfg, args.out_dir);
  const std::string loss_path = (fs::path(args.out_dir) / "loss.csv").string();
  if (!args.resume.empty()) {
    trim_loss_csv(loss_path, start_epoch);
  } else {
    std::ofstream f(loss_path, std::ios::trunc);
    f << "epoch,step,loss\n";
  }

  const std::int64_t steps_per_epoch = data.size() / batch;

  for (std::int64_t epoch = start_epoch + 1; epoch <= epochs; ++epoch) {
    // The permutation is a function of (seed, epoch) alone — starting from
    // identity every epoch keeps resumed runs on the original batch order.
    std::vector<int> order(data.size());
    for (int i = 0; i < data.size(); ++i) order[i] = i;
    auto erng = make_rng(session.seed, "pretrain_shuffle", (std::uint64_t)epoch);
    std::shuffle(order.begin(), order.end(), erng);
    std::ofstream loss_out(loss_path, std::ios::app);
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<int> idx(order.begin() + s * batch, order.begin() + (s + 1) * batch);
      const float loss = session.train_step(data, idx, epoch, s);
      loss_out << epoch << "," << session.step << "," << std::setprecision(9) << loss << "\n";
    }
    if (epoch % cadence == 0 || epoch == epochs) {
      const std::string path =
          (fs::path(args.out_dir) / ("ckpt_" + std::to_string(epoch) + ".ckpt")).string();
      save_checkpoint(path, session.to_checkpoint(epoch));
      std::cerr << "[sslct] epoch " << epoch << "/" << epochs << " -> " << path << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

int cmd_preprocess(const CommonArgs& args) {
  KeyValueConfig cfg = resolve_config(args);
  const fs::path input = cfg.get("preprocess.input");
  if (!fs::is_directory(input)) throw ConfigError("preprocess: input is not a directory: " +
                                                  input.string());
  const int target = (int)cfg.get_int("preprocess.size", 0);
  const bool windowed = cfg.has("preprocess.window_level");
  const double level = cfg.get_double("preprocess.window_level", 0.0);
  const double width = cfg.get_double("preprocess.window_width", 0.0);

  // Either an explicit manifest naming PGM slices, or a bare directory scan
  // (label 0, split train, subject from the sidecar).
  std::vector<ManifestRecord> inputs;
  const fs::path in_manifest = input / "manifest.csv";
  if (fs::exists(in_manifest)) {
    inputs = load_manifest(in_manifest.string()).records;
  } else {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(input))
      if (e.path().extension() == ".pgm") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& n : names) inputs.push_back({n, 0, "", "train"});
  }
  if (inputs.empty())
    std::cerr << "[sslct] warning: no input slices found in " << input << "\n";

  fs::create_directories(fs::path(args.out_dir) / "images");
  freeze_config(cfg, args.out_dir);

  std::vector<ManifestRecord> rows;
  std::vector<GrayImage> train_images;
  int failures = 0;
  for (const auto& rec : inputs) {
    try {
      HuSlice slice = read_pgm16((input / rec.image_path).string());
      GrayImage img = windowed ? apply_window(slice, level, width) : hu_interval_map(slice);
      if (target > 0 && (img.h != target || img.w != target))
        img = resize_gray(img, target, target);
      const std::string stem = fs::path(rec.image_path).stem().string();
      write_png8((fs::path(args.out_dir) / "images" / (stem + ".png")).string(), img);
      ManifestRecord out = rec;
      out.image_path = "images/" + stem + ".png";
      if (out.subject_id.empty()) out.subject_id = slice.subject_id;
      if (out.subject_id.empty()) out.subject_id = stem;
      rows.push_back(out);
      if (out.split == "train") train_images.push_back(std::move(img));
    } catch (const std::exception& e) {
      std::cerr << "[sslct] skipping " << rec.image_path << ": " << e.what() << "\n";
      ++failures;
    }
  }

  {
    std::ofstream m(fs::path(args.out_dir) / "manifest.csv", std::ios::trunc);
    m << "image_path,label,subject_id,split\n";
    for (const auto& r : rows)
      m << r.image_path << "," << r.label << "," << r.subject_id << "," << r.split << "\n";
  }
  if (!train_images.empty())
    save_stats((fs::path(args.out_dir) / "stats.txt").string(), compute_stats(train_images));
  if (failures > 0) {
    std::cerr << "[sslct] preprocess finished with " << failures << " unreadable input(s)\n";
    return 1;
  }
  return 0;
}

int cmd_stats(const CommonArgs& args) {
  KeyValueConfig cfg = resolve_config(args);
  const std::string manifest_path = cfg.get("data.manifest");
  const Manifest manifest = load_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<GrayImage> images;
  for (const auto& rec : manifest.split("train"))
    images.push_back(read_png8((base / rec.image_path).string()));
  check_cfg(!images.empty(), "stats: train split is empty");
  fs::create_directories(args.out_dir);
  const DatasetStats stats = compute_stats(images);
  save_stats((fs::path(args.out_dir) / "stats.txt").string(), stats);
  std::cout << "mean " << stats.mean << " std " << stats.stddev << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fine-tuning, sweeps, heatmaps
// ---------------------------------------------------------------------------

FinetuneConfig finetune_config_from(const KeyValueConfig& cfg) {
  FinetuneConfig fc;
  fc.lr = cfg.get_double("finetune.lr", fc.lr);
  fc.batch_size = (int)cfg.get_int("finetune.batch", fc.batch_size);
  fc.head_only_epochs = (int)cfg.get_int("finetune.head_only", fc.head_only_epochs);
  fc.total_epochs = (int)cfg.get_int("finetune.total", fc.total_epochs);
  fc.early_stop_patience = (int)cfg.get_int("finetune.patience", fc.early_stop_patience);
  fc.repeats = (int)cfg.get_int("finetune.repeats", fc.repeats);
  fc.seed = (std::uint64_t)cfg.get_int("seed", 0);
  fc.validate();
  return fc;
}

Encoder<float> load_pretrained(const std::string& spec_str, const KeyValueConfig& cfg) {
  if (spec_str == "none")
    return Encoder<float>(encoder_config_from(cfg),
                          derive_seed((std::uint64_t)cfg.get_int("seed", 0), "scratch_encoder"));
  if (!fs::exists(spec_str)) throw ConfigError("checkpoint not found: " + spec_str);
  return encoder_from_checkpoint(load_checkpoint(spec_str));
}

// "name:path" pairs; the literal path `none` denotes a randomly initialized
// baseline encoder.
std::vector<std::pair<std::string, Encoder<float>>> load_method_list(
    const std::vector<std::string>& entries, const KeyValueConfig& cfg) {
  check_cfg(!entries.empty(), "expected a non-empty method list of name:path entries");
  std::vector<std::pair<std::string, Encoder<float>>> out;
  for (const auto& e : entries) {
    const size_t colon = e.find(':');
    if (colon == std::string::npos || colon == 0)
      throw ConfigError("malformed method entry `" + e + "` (expected name:path)");
    out.emplace_back(e.substr(0, colon), load_pretrained(e.substr(colon + 1), cfg));
  }
  return out;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, RunMetrics>>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write metrics: " + path);
  f << "method,seed_count,acc_mean,acc_std,auc_mean,auc_std,f1_mean,f1_std\n";
  f << std::setprecision(6) << std::fixed;
  for (const auto& [name, m] : rows)
    f << name << "," << m.seed_count << "," << m.acc_mean << "," << m.acc_std << ","
      << m.auc_mean << "," << m.auc_std << "," << m.f1_mean << "," << m.f1_std << "\n";
}

int cmd_finetune(const CommonArgs& args) {
  KeyValueConfig cfg = resolve_config(args);
  const DatasetStats stats = load_stats(cfg.get("data.stats"));
  const std::string manifest = cfg.get("data.manifest");
  const LabeledData train = load_split(manifest, stats, "train");
  const LabeledData val = load_split(manifest, stats, "val");
  const LabeledData test = load_split(manifest, stats, "test");
  const int num_classes = num_classes_of(manifest);

  const std::string ckpt = cfg.get_or("finetune.checkpoint", "none");
  Encoder<float> enc = load_pretrained(ckpt, cfg);
  const FinetuneConfig fc = finetune_config_from(cfg);

  freeze_config(cfg, args.out_dir);
  const RunMetrics m = finetune(enc, train, val, test, num_classes, fc);
  write_metrics_csv((fs::path(args.out_dir) / "finetune.csv").string(),
                    {{ckpt == "none" ? "none" : "pretrained", m}});
  std::cout << "f1 " << m.f1_mean << " +- " << m.f1_std << " over " << m.seed_count
            << " seeds\n";
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  KeyValueConfig cfg = resolve_config(args);
  const DatasetStats stats = load_stats(cfg.get("data.stats"));
  const std::string manifest = cfg.get("data.manifest");
  const LabeledData train = load_split(manifest, stats, "train");
  const LabeledData val = load_split(manifest, stats, "val");
  const LabeledData test = load_split(manifest, stats, "test");
  const int num_classes = num_classes_of(manifest);

  auto methods = load_method_list(cfg.get_string_list("sweep.checkpoints"), cfg);
  SweepConfig sc;
  sc.fractions = cfg.get_double_list("sweep.fractions", sc.fractions);
  sc.stop_f1 = cfg.get_double("sweep.stop_f1", sc.stop_f1);
  sc.finetune = finetune_config_from(cfg);

  std::vector<std::pair<std::string, const Encoder<float>*>> refs;
  for (auto& [name, enc] : methods) refs.emplace_back(name, &enc);

  freeze_config(cfg, args.out_dir);
  const auto rows = run_sweep(refs, train, val, test, num_classes, sc);
  write_sweep_csv((fs::path(args.out_dir) / "sweep.csv").string(), rows);
  std::cout << rows.size() << " sweep rows written\n";
  return 0;
}

int cmd_gradcam(const CommonArgs& args) {
  KeyValueConfig cfg = resolve_config(args);
  const DatasetStats stats = load_stats(cfg.get("data.stats"));
  const std::string manifest = cfg.get("data.manifest");
  const LabeledData test = load_split(manifest, stats, "test");
  const int num_classes = std::max(2, num_classes_of(manifest));
  const int count = std::min<int>((int)cfg.get_int("gradcam.count", 4), test.size());
  const int cls = (int)cfg.get_int("gradcam.class", 1);
  check_cfg(count >= 1, "gradcam: no test images available");
  check_cfg(cls >= 0 && cls < num_classes, "gradcam: class index out of range");
  const std::uint64_t seed = (std::uint64_t)cfg.get_int("seed", 0);

  auto methods = load_method_list(cfg.get_string_list("gradcam.checkpoints"), cfg);
  freeze_config(cfg, args.out_dir);

  // heatmaps[m][i] for method m, image i
  std::vector<std::vector<Heatmap>> heatmaps;
  for (auto& [name, enc] : methods) {
    Classifier<float> model = attach_head(enc, num_classes, derive_seed(seed, "gradcam_head"));
    std::vector<Heatmap> per_method;
    for (int i = 0; i < count; ++i) {
      auto img = make_node<float>({1, 1, test.h, test.w}, std::vector<float>(test.images[i]));
      Heatmap hm = gradcam(model, img, cls);
      hm.method = name;
      hm.image_id = "test" + std::to_string(i);
      save_heatmap(
          (fs::path(args.out_dir) / ("heatmap_" + name + "_" + hm.image_id + ".png")).string(),
          hm);
      per_method.push_back(std::move(hm));
    }
    heatmaps.push_back(std::move(per_method));
  }

  const size_t M = methods.size();
  std::vector<double> matrix(M * M, 1.0);
  std::vector<std::string> names;
  for (const auto& [name, enc] : methods) names.push_back(name);
  for (size_t a = 0; a < M; ++a)
    for (size_t b = a + 1; b < M; ++b) {
      double sum = 0;
      int valid = 0;
      for (int i = 0; i < count; ++i) {
        try {
          sum += heatmap_correlation(heatmaps[a][i], heatmaps[b][i]);
          ++valid;
        } catch (const ValidationError&) {
          // zero-variance map: this image contributes nothing
        }
      }
      matrix[a * M + b] = matrix[b * M + a] =
          valid > 0 ? sum / valid : std::numeric_limits<double>::quiet_NaN();
    }
  write_correlation_csv((fs::path(args.out_dir) / "correlations.csv").string(), names, matrix);
  std::cout << M * count << " heatmaps written\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised pre-training toolkit for 2D CT slices"};
  app.require_subcommand(1);

  CommonArgs args;
  auto* preprocess = app.add_subcommand("preprocess", "convert HU slices to 8-bit PNGs");
  auto* pretrain = app.add_subcommand("pretrain", "run self-supervised pre-training");
  auto* finetune_cmd = app.add_subcommand("finetune", "two-phase fine-tuning on a labeled task");
  auto* sweep = app.add_subcommand("sweep", "dataset-reduction sweep over methods");
  auto* gradcam_cmd = app.add_subcommand("gradcam", "attention heatmaps and correlations");
  auto* stats = app.add_subcommand("stats", "dataset mean/std over the train split");
  for (auto* c : {preprocess, pretrain, finetune_cmd, sweep, gradcam_cmd, stats})
    add_common_flags(c, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (preprocess->parsed()) return cmd_preprocess(args);
    if (pretrain->parsed()) return cmd_pretrain(args);
    if (finetune_cmd->parsed()) return cmd_finetune(args);
    if (sweep->parsed()) return cmd_sweep(args);
    if (gradcam_cmd->parsed()) return cmd_gradcam(args);
    if (stats->parsed()) return cmd_stats(args);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
