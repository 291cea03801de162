#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "surgicam/explain.hpp"
#include "surgicam/io.hpp"
#include "surgicam/metrics.hpp"
#include "surgicam/pipeline.hpp"
#include "surgicam/synth.hpp"

namespace surgicam::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Runs fn(i) for i in [0, n) on at most `jobs` threads; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  workers.clear();
  if (failure) std::rethrow_exception(failure);
}

std::string sanitize(const std::string& label) {
  std::string out;
  for (char ch : label) {
    out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '.') ? ch : '_';
  }
  return out.empty() ? "_" : out;
}

std::string stem_of(const RunConfig& cfg, std::size_t i) {
  if (!cfg.image_paths.empty()) return cfg.image_paths[i].stem().string();
  return cfg.mask_paths[i].stem().string();
}

fs::path map_path(const fs::path& dir, const std::string& stem, const std::string& label,
                  bool raw) {
  return dir / (stem + "_" + sanitize(label) + (raw ? "_raw" : "") + ".pgm");
}

fs::path output_dir(const RunConfig& cfg) {
  fs::path dir = cfg.output_dir;
  if (dir.empty()) {
    const char* env = std::getenv("SURGICAM_OUTPUT_DIR");
    dir = env && *env ? fs::path(env) : fs::path("surgicam_out");
  }
  fs::create_directories(dir);
  return dir;
}

json flags_to_json(const RunConfig& cfg) {
  auto paths = [](const std::vector<fs::path>& ps) {
    json arr = json::array();
    for (const auto& p : ps) arr.push_back(p.string());
    return arr;
  };
  return {{"model", cfg.model_path.string()},
          {"texts", cfg.text_features_path.string()},
          {"preprocess", cfg.preprocess_path.string()},
          {"images", paths(cfg.image_paths)},
          {"masks", paths(cfg.mask_paths)},
          {"heatmaps", cfg.heatmap_dir.string()},
          {"out", cfg.output_dir.string()},
          {"depth", cfg.depth},
          {"tau", cfg.tau},
          {"no_surgery", cfg.no_surgery},
          {"mode", cfg.mode},
          {"point_threshold", cfg.point_threshold},
          {"miou_threshold", cfg.miou_threshold},
          {"size", cfg.out_size},
          {"also_raw", cfg.also_raw},
          {"mfsr", cfg.with_mfsr},
          {"segment_source", cfg.segment_source},
          {"ignore_index", cfg.ignore_index},
          {"jobs", cfg.jobs},
          {"model_tag", cfg.model_tag}};
}

io::ReportDocument new_report(const RunConfig& cfg, const std::string& command) {
  io::ReportDocument doc;
  doc.tool_version = kToolVersion;
  doc.model_tag = cfg.model_tag.empty() ? cfg.model_path.stem().string() : cfg.model_tag;
  doc.surgery = {!cfg.no_surgery, cfg.depth, cfg.tau, cfg.mode};
  doc.flags = flags_to_json(cfg);
  doc.flags["command"] = command;
  return doc;
}

void emit_report(const io::ReportDocument& doc, const fs::path& dir) {
  io::write_report(doc, dir / "report.json");
  std::cout << (dir / "report.json").string() << '\n';
}

void validate_common(const RunConfig& cfg, bool need_masks) {
  if (cfg.image_paths.empty()) throw UsageError("no input images given");
  if (need_masks && cfg.mask_paths.empty()) throw UsageError("this command needs --masks");
  if (!cfg.mask_paths.empty() && cfg.mask_paths.size() != cfg.image_paths.size()) {
    throw UsageError(std::to_string(cfg.image_paths.size()) + " images but " +
                     std::to_string(cfg.mask_paths.size()) + " masks");
  }
  if (!(cfg.point_threshold > 0.0f && cfg.point_threshold < 1.0f)) {
    throw UsageError("--point-threshold must lie in (0, 1)");
  }
  if (cfg.model_path.empty()) throw UsageError("--model is required");
  if (cfg.text_features_path.empty()) throw UsageError("--texts is required");
}

// Loaded model, texts and options shared read-only by all workers.
struct Session {
  ModelBundle model;
  TextFeatureSet texts;
  io::PreprocessConfig preprocess;
  PipelineOptions options;

  explicit Session(const RunConfig& cfg) {
    model = io::load_model(cfg.model_path);
    texts = io::load_text_features(cfg.text_features_path);
    if (!cfg.preprocess_path.empty()) preprocess = io::load_preprocess_config(cfg.preprocess_path);
    options.surgery = {cfg.depth, !cfg.no_surgery};
    options.feature = {cfg.tau, parse_surgery_mode(cfg.mode)};
    if (cfg.segment_source == "surgery") {
      options.segment_source = SegmentSource::surgery;
    } else if (cfg.segment_source == "original") {
      options.segment_source = SegmentSource::original;
    } else {
      throw UsageError("--segment-source must be 'surgery' or 'original'");
    }
    if (!(cfg.tau >= 0.0f)) throw UsageError("--tau must be non-negative");
    if (!cfg.no_surgery && (cfg.depth < 1 || cfg.depth > model.config.num_layers)) {
      throw UsageError("--depth " + std::to_string(cfg.depth) + " outside [1, " +
                       std::to_string(model.config.num_layers) + "]");
    }
  }
};

struct LoadedImage {
  Tensor raw;  // [3 x H x W] in [0, 1]
  std::optional<LabelGrid> labels;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

LoadedImage load_image(const RunConfig& cfg, std::size_t i) {
  LoadedImage li;
  li.raw = io::read_image_ppm(cfg.image_paths[i]);
  li.out_h = li.raw.dim(1);
  li.out_w = li.raw.dim(2);
  if (cfg.out_size) li.out_h = li.out_w = cfg.out_size;
  if (!cfg.mask_paths.empty()) {
    li.labels = io::read_label_pgm(cfg.mask_paths[i]);
    li.out_h = li.labels->height;
    li.out_w = li.labels->width;
  }
  return li;
}

ImageAnalysis analyze(const Session& s, const LoadedImage& li) {
  const Tensor input = io::preprocess_image(li.raw, s.preprocess, s.model.config.image_size);
  return analyze_image(input, s.model, s.texts, s.options);
}

// Class indices present in a label grid, excluding the ignore value.
std::vector<std::size_t> positive_classes(const LabelGrid& labels, int ignore,
                                          std::size_t num_classes, const fs::path& source) {
  std::set<std::int32_t> present;
  for (auto v : labels.labels) {
    if (v == ignore) continue;
    if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
      throw UsageError("'" + source.string() + "' holds label " + std::to_string(v) +
                       " but only " + std::to_string(num_classes) + " classes are defined");
    }
    present.insert(v);
  }
  return {present.begin(), present.end()};
}

GroundTruthMask binary_mask(const LabelGrid& labels, std::size_t cls, const std::string& name) {
  GroundTruthMask m{labels.height, labels.width, {}, name};
  m.mask.reserve(labels.labels.size());
  for (auto v : labels.labels) m.mask.push_back(v == static_cast<std::int32_t>(cls) ? 1 : 0);
  return m;
}

std::size_t argmax_token(const Tensor& scores, std::size_t cls) {
  std::size_t best = 0;
  for (std::size_t t = 1; t < scores.dim(0); ++t) {
    if (scores.at(t, cls) > scores.at(best, cls)) best = t;
  }
  return best;
}

double macro(const std::vector<std::pair<std::string, double>>& samples) {
  return aggregate_msc(samples);
}

}  // namespace

int cmd_cam(const RunConfig& cfg) {
  validate_common(cfg, false);
  const Session s(cfg);
  const fs::path dir = output_dir(cfg);
  std::vector<json> rows(cfg.image_paths.size());

  parallel_for(cfg.image_paths.size(), cfg.jobs, [&](std::size_t i) {
    const LoadedImage li = load_image(cfg, i);
    const ImageAnalysis a = analyze(s, li);
    const std::string stem = stem_of(cfg, i);
    const std::size_t grid = s.model.config.grid_side();
    json entries = json::array();
    for (const auto& m : similarity_map(a.explain_scores(), grid, li.out_h, li.out_w,
                                        s.texts.labels, a.explain_source())) {
      const fs::path p = map_path(dir, stem, m.class_label, false);
      io::write_heatmap_pgm(m, p);
      entries.push_back({{"image", cfg.image_paths[i].string()}, {"class", m.class_label},
                         {"source", to_string(m.source)}, {"file", p.string()}});
    }
    if (cfg.also_raw && a.explain_source() != MapSource::raw_clip) {
      for (const auto& m : similarity_map(a.raw_scores, grid, li.out_h, li.out_w, s.texts.labels,
                                          MapSource::raw_clip)) {
        const fs::path p = map_path(dir, stem, m.class_label, true);
        io::write_heatmap_pgm(m, p);
        entries.push_back({{"image", cfg.image_paths[i].string()}, {"class", m.class_label},
                           {"source", to_string(m.source)}, {"file", p.string()}});
      }
    }
    rows[i] = std::move(entries);
  });

  io::ReportDocument doc = new_report(cfg, "cam");
  for (auto& r : rows)
    for (auto& e : r) doc.per_sample.push_back(std::move(e));
  doc.metrics = {{"maps_written", doc.per_sample.size()}};
  emit_report(doc, dir);
  return kOk;
}

int cmd_eval(const RunConfig& cfg) {
  const bool from_heatmaps = !cfg.heatmap_dir.empty();
  if (cfg.mask_paths.empty()) throw UsageError("eval needs at least one image/mask pair");
  if (!from_heatmaps) {
    validate_common(cfg, true);
  } else if (!cfg.image_paths.empty() && cfg.image_paths.size() != cfg.mask_paths.size()) {
    throw UsageError("image and mask counts differ");
  }
  if (from_heatmaps && cfg.with_mfsr) throw UsageError("--mfsr needs the model, not --heatmaps");

  std::optional<Session> session;
  std::vector<std::string> labels;
  if (!from_heatmaps) {
    session.emplace(cfg);
    labels = session->texts.labels;
  } else {
    labels = io::load_text_features(cfg.text_features_path).labels;
  }
  const std::size_t n = cfg.mask_paths.size();
  const fs::path dir = output_dir(cfg);

  struct Sample {
    std::string cls;
    SimilarityMap map;
    std::optional<SimilarityMap> raw;
    GroundTruthMask gt;
    std::optional<double> mfsr_raw, mfsr_con;
    std::size_t image = 0;
  };
  std::vector<std::vector<Sample>> per_image(n);

  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    const LabelGrid grid_labels = io::read_label_pgm(cfg.mask_paths[i]);
    const auto classes =
        positive_classes(grid_labels, cfg.ignore_index, labels.size(), cfg.mask_paths[i]);
    std::optional<ImageAnalysis> a;
    if (session) {
      LoadedImage li = load_image(cfg, i);
      a = analyze(*session, li);
    }
    for (const std::size_t c : classes) {
      Sample smp;
      smp.image = i;
      smp.cls = labels[c];
      smp.gt = binary_mask(grid_labels, c, labels[c]);
      if (a) {
        const std::size_t grid = session->model.config.grid_side();
        const Tensor col = a->explain_scores().slice_rows(0, grid * grid);
        smp.map = std::move(similarity_map(col, grid, grid_labels.height, grid_labels.width,
                                           labels, a->explain_source())[c]);
        if (cfg.also_raw) {
          smp.raw = std::move(similarity_map(a->raw_scores, grid, grid_labels.height,
                                             grid_labels.width, labels, MapSource::raw_clip)[c]);
        }
        if (cfg.with_mfsr) {
          const Tensor g = mask_to_grid(smp.gt, grid);
          const std::size_t token = argmax_token(a->explain_scores(), c) + 1;
          smp.mfsr_raw = mfsr(a->forward.attn_raw_per_layer.back(), token, g);
          if (!a->forward.attn_vv_per_layer.empty()) {
            smp.mfsr_con = mfsr(a->forward.attn_vv_per_layer.back(), token, g);
          }
        }
      } else {
        smp.map = io::read_heatmap_pgm(map_path(cfg.heatmap_dir, stem_of(cfg, i), labels[c], false),
                                       labels[c]);
      }
      per_image[i].push_back(std::move(smp));
    }
  });

  ExplainabilityAccumulator acc, raw_acc;
  std::vector<std::pair<std::string, double>> fsr_raw, fsr_con;
  io::ReportDocument doc = new_report(cfg, "eval");
  for (auto& samples : per_image) {
    for (auto& smp : samples) {
      acc.add(smp.map, smp.gt, cfg.miou_threshold);
      json row = {{"image", (cfg.image_paths.empty() ? cfg.mask_paths : cfg.image_paths)[smp.image].string()},
                  {"class", smp.cls},
                  {"IoU", miou_binary(smp.map, smp.gt, cfg.miou_threshold)}};
      try {
        row["SC"] = score_contrast(smp.map, smp.gt);
      } catch (const DegenerateSampleError&) {
        row["SC"] = nullptr;
      }
      if (smp.raw) {
        raw_acc.add(*smp.raw, smp.gt, cfg.miou_threshold);
        try {
          row["SC_raw"] = score_contrast(*smp.raw, smp.gt);
        } catch (const DegenerateSampleError&) {
          row["SC_raw"] = nullptr;
        }
      }
      if (smp.mfsr_raw) {
        fsr_raw.emplace_back(smp.cls, *smp.mfsr_raw);
        row["FSR_raw"] = *smp.mfsr_raw;
      }
      if (smp.mfsr_con) {
        fsr_con.emplace_back(smp.cls, *smp.mfsr_con);
        row["FSR_consistent"] = *smp.mfsr_con;
      }
      doc.per_sample.push_back(std::move(row));
    }
  }
  if (acc.empty()) throw UsageError("no positive labels found in the given masks");

  EvalReport report = acc.report();
  if (!fsr_con.empty()) {
    report.aggregate.mfsr = macro(fsr_con);
  } else if (!fsr_raw.empty()) {
    report.aggregate.mfsr = macro(fsr_raw);
  }
  doc.metrics = io::report_metrics_to_json(report);
  doc.metrics["miou_threshold"] = cfg.miou_threshold;
  if (!raw_acc.empty()) doc.metrics["raw"] = io::report_metrics_to_json(raw_acc.report());
  if (!fsr_raw.empty()) doc.metrics["mFSR_raw"] = macro(fsr_raw);
  if (!fsr_con.empty()) doc.metrics["mFSR_consistent"] = macro(fsr_con);
  emit_report(doc, dir);
  return kOk;
}

int cmd_points(const RunConfig& cfg) {
  validate_common(cfg, false);
  const Session s(cfg);
  const fs::path dir = output_dir(cfg);
  struct Row {
    json entry;
    std::string cls;
    std::optional<double> accuracy;
  };
  std::vector<std::vector<Row>> per_image(cfg.image_paths.size());

  parallel_for(cfg.image_paths.size(), cfg.jobs, [&](std::size_t i) {
    const LoadedImage li = load_image(cfg, i);
    const ImageAnalysis a = analyze(s, li);
    const std::size_t grid = s.model.config.grid_side();
    const auto maps = similarity_map(a.explain_scores(), grid, li.out_h, li.out_w, s.texts.labels,
                                     a.explain_source());
    std::vector<std::size_t> classes;
    if (li.labels) {
      classes = positive_classes(*li.labels, cfg.ignore_index, s.texts.size(), cfg.mask_paths[i]);
    } else {
      for (std::size_t c = 0; c < s.texts.size(); ++c) classes.push_back(c);
    }
    for (const std::size_t c : classes) {
      const PointPromptSet pts = text_to_points(maps[c], cfg.point_threshold);
      const fs::path p = dir / (stem_of(cfg, i) + "_" + sanitize(s.texts.labels[c]) + "_points.json");
      io::write_points_json(pts, p);
      Row row;
      row.cls = s.texts.labels[c];
      row.entry = {{"image", cfg.image_paths[i].string()}, {"class", row.cls}, {"file", p.string()},
                   {"foreground", pts.foreground.size()}, {"background", pts.background.size()}};
      if (li.labels && !pts.empty()) {
        row.accuracy = points_accuracy(pts, binary_mask(*li.labels, c, row.cls));
        row.entry["accuracy"] = *row.accuracy;
      }
      per_image[i].push_back(std::move(row));
    }
  });

  io::ReportDocument doc = new_report(cfg, "points");
  std::vector<std::pair<std::string, double>> accs;
  std::size_t empty_sets = 0;
  for (auto& rows : per_image) {
    for (auto& r : rows) {
      if (r.accuracy) accs.emplace_back(r.cls, *r.accuracy);
      if (r.entry["foreground"].get<std::size_t>() == 0) ++empty_sets;
      doc.per_sample.push_back(std::move(r.entry));
    }
  }
  doc.metrics = {{"point_threshold", cfg.point_threshold}, {"empty_prompt_sets", empty_sets}};
  if (!accs.empty()) doc.metrics["aggregate"] = {{"points_accuracy", macro(accs)}};
  emit_report(doc, dir);
  return kOk;
}

int cmd_segment(const RunConfig& cfg) {
  validate_common(cfg, false);
  const Session s(cfg);
  if (s.texts.size() > 255) throw UsageError("segmentation output supports at most 255 classes");
  const fs::path dir = output_dir(cfg);
  std::vector<LabelMap> preds(cfg.image_paths.size());
  std::vector<std::optional<LabelGrid>> gts(cfg.image_paths.size());

  parallel_for(cfg.image_paths.size(), cfg.jobs, [&](std::size_t i) {
    LoadedImage li = load_image(cfg, i);
    const ImageAnalysis a = analyze(s, li);
    preds[i] = segment_argmax(a.segment_scores, s.model.config.grid_side(), li.out_h, li.out_w,
                              s.texts.labels);
    io::write_label_pgm(dir / (stem_of(cfg, i) + "_seg.pgm"),
                        {preds[i].height, preds[i].width, preds[i].labels});
    gts[i] = std::move(li.labels);
  });

  io::ReportDocument doc = new_report(cfg, "segment");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    doc.per_sample.push_back({{"image", cfg.image_paths[i].string()},
                              {"file", (dir / (stem_of(cfg, i) + "_seg.pgm")).string()}});
  }
  if (!cfg.mask_paths.empty()) {
    // Dataset-level confusion: stack every image's pixels.
    LabelMap all_pred;
    LabelGrid all_gt;
    all_pred.width = all_gt.width = 1;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      all_pred.labels.insert(all_pred.labels.end(), preds[i].labels.begin(), preds[i].labels.end());
      all_gt.labels.insert(all_gt.labels.end(), gts[i]->labels.begin(), gts[i]->labels.end());
    }
    all_pred.height = all_gt.height = all_pred.labels.size();
    const MulticlassIou iou = multiclass_iou(all_pred, all_gt, s.texts.size(), cfg.ignore_index);
    json per_class = json::object();
    for (const auto& [c, v] : iou.per_class) per_class[s.texts.labels[static_cast<std::size_t>(c)]] = v;
    doc.metrics = {{"aggregate", {{"mIoU", iou.miou}}}, {"per_class_iou", per_class}};
  }
  emit_report(doc, dir);
  return kOk;
}

int cmd_multilabel(const RunConfig& cfg) {
  validate_common(cfg, false);
  const Session s(cfg);
  const fs::path dir = output_dir(cfg);
  std::vector<Tensor> scores(cfg.image_paths.size());
  std::vector<std::vector<std::uint8_t>> positives(cfg.image_paths.size());

  parallel_for(cfg.image_paths.size(), cfg.jobs, [&](std::size_t i) {
    const LoadedImage li = load_image(cfg, i);
    const DualForwardResult fwd =
        forward_dual(io::preprocess_image(li.raw, s.preprocess, s.model.config.image_size), s.model,
                     {cfg.depth, false});
    scores[i] = multilabel_scores(fwd.original_class_embed, s.texts, s.options.feature);
    if (li.labels) {
      positives[i].assign(s.texts.size(), 0);
      for (auto c : positive_classes(*li.labels, cfg.ignore_index, s.texts.size(), cfg.mask_paths[i])) {
        positives[i][c] = 1;
      }
    }
  });

  io::ReportDocument doc = new_report(cfg, "multilabel");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    json per_class = json::object();
    for (std::size_t c = 0; c < s.texts.size(); ++c) per_class[s.texts.labels[c]] = scores[i][c];
    doc.per_sample.push_back({{"image", cfg.image_paths[i].string()}, {"scores", per_class}});
  }
  if (!cfg.mask_paths.empty()) {
    doc.metrics = {{"aggregate", {{"mAP", mean_average_precision(scores, positives)}}}};
  }
  emit_report(doc, dir);
  return kOk;
}

int cmd_affinity(const RunConfig& cfg) {
  validate_common(cfg, false);
  const Session s(cfg);
  const fs::path dir = output_dir(cfg);
  const std::size_t layers = s.model.config.num_layers;
  std::vector<std::vector<double>> per_image(cfg.image_paths.size());
  std::vector<double> final_affinity(cfg.image_paths.size());

  parallel_for(cfg.image_paths.size(), cfg.jobs, [&](std::size_t i) {
    const LoadedImage li = load_image(cfg, i);
    const DualForwardResult fwd =
        forward_dual(io::preprocess_image(li.raw, s.preprocess, s.model.config.image_size), s.model,
                     {cfg.depth, false});
    Tensor texts = s.texts.features;
    if (li.labels) {
      const auto classes =
          positive_classes(*li.labels, cfg.ignore_index, s.texts.size(), cfg.mask_paths[i]);
      if (!classes.empty()) {
        texts = Tensor({classes.size(), s.texts.features.dim(1)});
        for (std::size_t k = 0; k < classes.size(); ++k) {
          const auto src = s.texts.features.row(classes[k]);
          std::copy(src.begin(), src.end(), texts.row(k).begin());
        }
      }
    }
    for (const auto& rec : fwd.per_block_class_records) {
      per_image[i].push_back(affinity(texts, rec.value, s.model));
    }
    double total = 0.0;
    for (std::size_t t = 0; t < texts.dim(0); ++t) {
      const auto r = texts.row(t);
      for (std::size_t j = 0; j < r.size(); ++j) total += static_cast<double>(r[j]) * fwd.original_class_embed[j];
    }
    final_affinity[i] = total / static_cast<double>(texts.dim(0));
  });

  io::ReportDocument doc = new_report(cfg, "affinity");
  std::ofstream csv(dir / "affinity.csv");
  if (!csv) throw io::IoError("cannot write '" + (dir / "affinity.csv").string() + "'");
  csv << "layer,module,affinity\n";
  for (std::size_t r = 0; r < 2 * layers; ++r) {
    double mean = 0.0;
    for (const auto& row : per_image) mean += row[r];
    mean /= static_cast<double>(per_image.size());
    const std::size_t layer = r / 2 + 1;
    const char* module = r % 2 == 0 ? "attention" : "ffn";
    csv << layer << ',' << module << ',' << mean << '\n';
    doc.per_sample.push_back({{"layer", layer}, {"module", module}, {"affinity", mean}});
  }
  double final_mean = 0.0;
  for (double v : final_affinity) final_mean += v;
  doc.metrics = {{"rows", 2 * layers},
                 {"final_affinity", final_mean / static_cast<double>(final_affinity.size())}};
  emit_report(doc, dir);
  return kOk;
}

int cmd_synth(const SynthConfig& cfg) {
  if (cfg.output_dir.empty()) throw UsageError("--out is required");
  if (cfg.classes < 2) throw UsageError("--classes must be at least 2");
  if (cfg.classes > 254) throw UsageError("--classes must fit a label byte");
  fs::create_directories(cfg.output_dir);

  const ModelConfig mc = synth::tiny_config(cfg.layers, cfg.dim, cfg.heads, cfg.image_size,
                                            cfg.patch_size, cfg.proj_dim);
  io::save_model(cfg.output_dir / "model.json", synth::random_model(mc, cfg.seed));
  io::save_text_features(cfg.output_dir / "texts.json",
                         synth::random_texts(cfg.classes, cfg.proj_dim, cfg.seed + 1));
  io::write_json_file({{"mean", {0.5, 0.5, 0.5}}, {"std", {0.25, 0.25, 0.25}}},
                      cfg.output_dir / "preprocess.json");

  synth::Rng rng(cfg.seed + 2);
  for (std::size_t i = 0; i < cfg.images; ++i) {
    // One or two objects of distinct classes per image.
    std::vector<std::int32_t> classes{static_cast<std::int32_t>(rng() % cfg.classes)};
    if (rng() % 2) {
      const auto second = static_cast<std::int32_t>(rng() % cfg.classes);
      if (second != classes[0]) classes.push_back(second);
    }
    const auto scene = synth::random_scene(cfg.scene_size, classes, 255, cfg.seed + 100 + i);
    const std::string stem = "image_" + std::to_string(i);
    io::write_image_ppm(cfg.output_dir / (stem + ".ppm"), scene.image);
    io::write_label_pgm(cfg.output_dir / (stem + ".pgm"), scene.labels);
  }
  std::cout << cfg.output_dir.string() << '\n';
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Dual-path ViT explainability maps, point prompts and metrics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  RunConfig cfg;
  SynthConfig synth_cfg;

  auto add_common = [&](CLI::App* sub, bool model_required) {
    auto* model = sub->add_option("--model", cfg.model_path, "Model manifest (.json)");
    auto* texts = sub->add_option("--texts", cfg.text_features_path, "Text feature manifest (.json)");
    if (model_required) {
      model->required();
    }
    texts->required();
    sub->add_option("--preprocess", cfg.preprocess_path, "Preprocessing mean/std JSON");
    sub->add_option("--images", cfg.image_paths, "Input P6 PPM images");
    sub->add_option("--masks", cfg.mask_paths, "P5 PGM label masks, paired with --images");
    sub->add_option("--out", cfg.output_dir, "Output directory (default $SURGICAM_OUTPUT_DIR)");
    sub->add_option("--depth", cfg.depth, "Layer where the surgery path starts (1-based)")
        ->capture_default_str();
    sub->add_option("--tau", cfg.tau, "Class-weight softmax scale")->capture_default_str();
    sub->add_flag("--no-surgery", cfg.no_surgery, "Use the unmodified model only");
    sub->add_option("--mode", cfg.mode, "multi-class | single-text-empty")->capture_default_str();
    sub->add_option("--point-threshold", cfg.point_threshold, "Foreground point threshold")
        ->capture_default_str();
    sub->add_option("--miou-threshold", cfg.miou_threshold, "Map binarization threshold")
        ->capture_default_str();
    sub->add_option("--size", cfg.out_size, "Square output resolution (default: image size)");
    sub->add_option("--ignore-index", cfg.ignore_index, "Mask value to ignore")->capture_default_str();
    sub->add_option("--segment-source", cfg.segment_source, "surgery | original")
        ->capture_default_str();
    sub->add_option("--jobs", cfg.jobs, "Worker threads (default: all cores)");
    sub->add_option("--model-tag", cfg.model_tag, "Backbone tag echoed in reports");
  };

  auto* cam = app.add_subcommand("cam", "Write similarity-map heatmaps");
  add_common(cam, true);
  cam->add_flag("--also-raw", cfg.also_raw, "Also write unmodified-model maps");

  auto* eval = app.add_subcommand("eval", "Explainability metrics against masks");
  add_common(eval, false);
  eval->add_flag("--also-raw", cfg.also_raw, "Also score unmodified-model maps");
  eval->add_flag("--mfsr", cfg.with_mfsr, "Report foreground self-attention ratios");
  eval->add_option("--heatmaps", cfg.heatmap_dir, "Evaluate heatmaps written by 'cam' instead");

  auto* points = app.add_subcommand("points", "Point prompts from similarity maps");
  add_common(points, true);
  auto* segment = app.add_subcommand("segment", "Argmax segmentation");
  add_common(segment, true);
  auto* multilabel = app.add_subcommand("multilabel", "Class-token multi-label scores");
  add_common(multilabel, true);
  auto* affinity_cmd = app.add_subcommand("affinity", "Per-module class-token affinity table");
  add_common(affinity_cmd, true);

  auto* synth_sub = app.add_subcommand("synth", "Generate a seeded tiny model and fixtures");
  synth_sub->add_option("--out", synth_cfg.output_dir, "Output directory")->required();
  synth_sub->add_option("--seed", synth_cfg.seed, "Random seed")->required();
  synth_sub->add_option("--layers", synth_cfg.layers)->capture_default_str();
  synth_sub->add_option("--dim", synth_cfg.dim)->capture_default_str();
  synth_sub->add_option("--heads", synth_cfg.heads)->capture_default_str();
  synth_sub->add_option("--image-size", synth_cfg.image_size)->capture_default_str();
  synth_sub->add_option("--patch-size", synth_cfg.patch_size)->capture_default_str();
  synth_sub->add_option("--proj-dim", synth_cfg.proj_dim)->capture_default_str();
  synth_sub->add_option("--classes", synth_cfg.classes)->capture_default_str();
  synth_sub->add_option("--images", synth_cfg.images)->capture_default_str();
  synth_sub->add_option("--scene-size", synth_cfg.scene_size)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (*cam) return cmd_cam(cfg);
    if (*eval) return cmd_eval(cfg);
    if (*points) return cmd_points(cfg);
    if (*segment) return cmd_segment(cfg);
    if (*multilabel) return cmd_multilabel(cfg);
    if (*affinity_cmd) return cmd_affinity(cfg);
    if (*synth_sub) return cmd_synth(synth_cfg);
  } catch (const io::ContainerError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const io::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const io::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return kInternalError;
  }
  return kInternalError;
}

}  // namespace surgicam::cli
