#pragma once

#include <map>
#include <vector>

#include "mpnet/grouping.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

struct SemanticReport {
  double oacc = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  std::vector<double> class_iou;      // 0 where the class never appears
  std::vector<double> class_recall;   // over ground-truth points
  std::vector<bool> class_in_gt;
};

// Class means run over classes present in the ground truth; a class that
// appears only in predictions drags nothing into the mean but still wastes
// its points' overall accuracy.
inline SemanticReport semantic_metrics(const std::vector<int>& pred,
                                       const std::vector<int>& gt,
                                       int num_classes) {
  check_arg(pred.size() == gt.size() && !pred.empty(),
            "semantic_metrics: arrays must align");
  std::vector<long long> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  long long correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    check_arg(pred[i] >= 0 && pred[i] < num_classes &&
                  gt[i] >= 0 && gt[i] < num_classes,
              "semantic_metrics: label out of range");
    if (pred[i] == gt[i]) {
      ++tp[gt[i]];
      ++correct;
    } else {
      ++fp[pred[i]];
      ++fn[gt[i]];
    }
  }
  SemanticReport rep;
  rep.oacc = static_cast<double>(correct) / pred.size();
  rep.class_iou.assign(num_classes, 0.0);
  rep.class_recall.assign(num_classes, 0.0);
  rep.class_in_gt.assign(num_classes, false);
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    const long long unions = tp[c] + fp[c] + fn[c];
    if (unions > 0) rep.class_iou[c] = static_cast<double>(tp[c]) / unions;
    if (tp[c] + fn[c] == 0) continue;
    rep.class_in_gt[c] = true;
    rep.class_recall[c] = static_cast<double>(tp[c]) / (tp[c] + fn[c]);
    rep.macc += rep.class_recall[c];
    rep.miou += rep.class_iou[c];
    ++present;
  }
  check_arg(present > 0, "semantic_metrics: empty ground truth");
  rep.macc /= present;
  rep.miou /= present;
  return rep;
}

struct InstanceReport {
  double mcov = 0.0;
  double mwcov = 0.0;
  double mprec = 0.0;
  double mrec = 0.0;
  std::vector<double> class_cov, class_wcov, class_prec, class_rec;
  std::vector<int> class_tp, class_num_pred, class_num_gt;
};

namespace detail {

struct InstanceIndex {
  std::vector<int> ids;      // per point, dense
  std::vector<int> classes;  // per instance
  std::vector<int> sizes;
  int count = 0;
};

inline InstanceIndex index_instances(const std::vector<int>& point_ids,
                                     const std::vector<int>& point_classes,
                                     int num_classes) {
  InstanceIndex idx;
  idx.ids = point_ids;
  for (int id : point_ids) {
    check_arg(id >= 0, "instance index: negative id");
    idx.count = std::max(idx.count, id + 1);
  }
  idx.classes.assign(idx.count, -1);
  idx.sizes.assign(idx.count, 0);
  for (std::size_t i = 0; i < point_ids.size(); ++i) {
    const int id = point_ids[i], c = point_classes[i];
    check_arg(c >= 0 && c < num_classes, "instance index: class out of range");
    check_arg(idx.classes[id] < 0 || idx.classes[id] == c,
              "instance index: instance spans classes");
    idx.classes[id] = c;
    ++idx.sizes[id];
  }
  for (int s : idx.sizes) check_arg(s > 0, "instance index: ids not dense");
  return idx;
}

}  // namespace detail

// Coverage is the ground-truth-side best IoU; precision and recall come from
// a one-to-one matching over same-class pairs with IoU >= iou_threshold,
// greedily by descending IoU. All four means run over classes present in the
// ground truth: a missed class contributes zeros, a purely spurious class is
// reported per class but stays out of the means.
inline InstanceReport instance_metrics(const InstancePrediction& pred,
                                       const std::vector<int>& gt_instance,
                                       const std::vector<int>& gt_semantic,
                                       int num_classes,
                                       double iou_threshold = 0.5) {
  const std::size_t P = gt_instance.size();
  check_arg(pred.point_instance_ids.size() == P && gt_semantic.size() == P && P > 0,
            "instance_metrics: arrays must align");
  pred.validate(num_classes);
  const auto gt = detail::index_instances(gt_instance, gt_semantic, num_classes);

  // pairwise intersection counts
  std::map<std::pair<int, int>, int> inter;
  for (std::size_t i = 0; i < P; ++i)
    ++inter[{pred.point_instance_ids[i], gt_instance[i]}];
  auto iou = [&](int p, int g) {
    auto it = inter.find({p, g});
    const int shared = it == inter.end() ? 0 : it->second;
    return static_cast<double>(shared) /
           (pred.instance_sizes[p] + gt.sizes[g] - shared);
  };

  InstanceReport rep;
  rep.class_cov.assign(num_classes, 0.0);
  rep.class_wcov.assign(num_classes, 0.0);
  rep.class_prec.assign(num_classes, 0.0);
  rep.class_rec.assign(num_classes, 0.0);
  rep.class_tp.assign(num_classes, 0);
  rep.class_num_pred.assign(num_classes, 0);
  rep.class_num_gt.assign(num_classes, 0);

  int gt_classes = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<int> preds, gts;
    for (int p = 0; p < pred.num_instances(); ++p)
      if (pred.instance_classes[p] == c) preds.push_back(p);
    for (int g = 0; g < gt.count; ++g)
      if (gt.classes[g] == c) gts.push_back(g);
    rep.class_num_pred[c] = static_cast<int>(preds.size());
    rep.class_num_gt[c] = static_cast<int>(gts.size());
    if (preds.empty() && gts.empty()) continue;

    if (!gts.empty()) {
      long long total_size = 0;
      for (int g : gts) total_size += gt.sizes[g];
      for (int g : gts) {
        double best = 0.0;
        for (int p : preds) best = std::max(best, iou(p, g));
        rep.class_cov[c] += best / gts.size();
        rep.class_wcov[c] += best * gt.sizes[g] / total_size;
      }
    }

    struct Pair {
      double v;
      int p, g;
    };
    std::vector<Pair> pairs;
    for (int p : preds)
      for (int g : gts) {
        const double v = iou(p, g);
        if (v >= iou_threshold) pairs.push_back({v, p, g});
      }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.v != b.v) return a.v > b.v;
      if (a.p != b.p) return a.p < b.p;
      return a.g < b.g;
    });
    std::vector<char> p_used(pred.num_instances(), 0), g_used(gt.count, 0);
    int tp = 0;
    for (const auto& pr : pairs)
      if (!p_used[pr.p] && !g_used[pr.g]) {
        p_used[pr.p] = g_used[pr.g] = 1;
        ++tp;
      }
    rep.class_tp[c] = tp;
    if (!preds.empty())
      rep.class_prec[c] = static_cast<double>(tp) / preds.size();
    if (!gts.empty())
      rep.class_rec[c] = static_cast<double>(tp) / gts.size();

    if (!gts.empty()) {
      rep.mcov += rep.class_cov[c];
      rep.mwcov += rep.class_wcov[c];
      rep.mprec += rep.class_prec[c];
      rep.mrec += rep.class_rec[c];
      ++gt_classes;
    }
  }
  check_arg(gt_classes > 0, "instance_metrics: empty ground truth");
  rep.mcov /= gt_classes;
  rep.mwcov /= gt_classes;
  rep.mprec /= gt_classes;
  rep.mrec /= gt_classes;
  return rep;
}

}  // namespace mpnet
