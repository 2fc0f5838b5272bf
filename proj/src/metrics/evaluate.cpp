#include <algorithm>
#include <memory>

#include "gprinv/error.hpp"
#include "gprinv/metrics.hpp"

namespace gprinv::metrics {

namespace {

bool selected(const std::vector<std::string>& groups, const std::string& g) {
  return groups.empty() || std::find(groups.begin(), groups.end(), g) != groups.end();
}

}  // namespace

MetricsReport evaluate_predictions(const dataset::DatasetManifest& manifest,
                                   const std::filesystem::path& root, dataset::Split split,
                                   const Predictor& predict, const EvaluateOptions& opts) {
  std::vector<const dataset::SampleRecord*> recs;
  for (const auto* r : manifest.split(split)) {
    if (selected(opts.groups, r->group)) recs.push_back(r);
  }
  if (recs.empty()) {
    fail(ErrorCode::DataUnavailable,
         std::string("no ") + dataset::to_string(split) + " samples to evaluate");
  }
  const auto& norm = manifest.norm;
  const MetricConfig perm_cfg = MetricConfig::permittivity(norm);
  const MetricConfig bscan_cfg = MetricConfig::bscan(norm);
  const std::size_t batch = std::max<std::size_t>(opts.batch, 1);

  MetricsReport rep;
  std::vector<SampleMetrics> stage1;
  for (std::size_t start = 0; start < recs.size(); start += batch) {
    const std::size_t end = std::min(recs.size(), start + batch);
    std::vector<dataset::SampleTriplet> samples;
    samples.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      samples.push_back(dataset::load_sample(manifest, root, recs[i]->id));
    }
    std::vector<const dataset::SampleTriplet*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    const auto preds = predict(ptrs);
    if (preds.size() != samples.size()) {
      fail(ErrorCode::ShapeMismatch, "predictor returned " + std::to_string(preds.size()) +
                                         " results for " + std::to_string(samples.size()) +
                                         " samples");
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      try {
        const Image truth = dataset::inverse_normalize(s.perm_map, norm.perm_lo, norm.perm_hi);
        rep.rows.push_back(compare(s.meta.id, s.meta.group, 2, truth, preds[i].perm_value,
                                   perm_cfg, opts.windowed));
        if (preds[i].denoised_field) {
          const Image clean = dataset::inverse_normalize(s.denoised, norm.bscan_lo, norm.bscan_hi);
          stage1.push_back(compare(s.meta.id, s.meta.group, 1, clean, *preds[i].denoised_field,
                                   bscan_cfg, opts.windowed));
        }
      } catch (const Error& e) {
        throw Error(e.code(), "sample " + s.meta.id + ": " + e.what());
      }
    }
    if (opts.progress) opts.progress(end, recs.size());
  }
  // Stage-1 rows after the stage-2 rows, each in split order.
  rep.rows.insert(rep.rows.end(), stage1.begin(), stage1.end());
  return rep;
}

MetricsReport evaluate(const dmrf::Checkpoint& ckpt, const dataset::DatasetManifest& manifest,
                       const std::filesystem::path& root, dataset::Split split,
                       const EvaluateOptions& opts) {
  if (ckpt.norm != manifest.norm || ckpt.image_rows != manifest.image_rows ||
      ckpt.image_cols != manifest.image_cols) {
    fail(ErrorCode::IncompatibleCheckpoint,
         "checkpoint normalization or image size differs from the dataset");
  }
  const Predictor predict = [&ckpt](const std::vector<const dataset::SampleTriplet*>& batch) {
    std::vector<Image> noisy;
    for (const auto* s : batch) noisy.push_back(s->noisy);
    const auto out = dmrf::infer(ckpt, noisy, noisy.size());
    std::vector<Prediction> preds;
    for (const auto& o : out) preds.push_back({o.denoised_field, o.perm_value});
    return preds;
  };
  return evaluate_predictions(manifest, root, split, predict, opts);
}

Predictor oracle_predictor(const dataset::NormalizationSpec& norm) {
  return [norm](const std::vector<const dataset::SampleTriplet*>& batch) {
    std::vector<Prediction> preds;
    for (const auto* s : batch) {
      preds.push_back({dataset::inverse_normalize(s->denoised, norm.bscan_lo, norm.bscan_hi),
                       dataset::inverse_normalize(s->perm_map, norm.perm_lo, norm.perm_hi)});
    }
    return preds;
  };
}

}  // namespace gprinv::metrics
