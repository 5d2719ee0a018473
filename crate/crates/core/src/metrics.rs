//! Object-discovery metrics over predicted vs. ground-truth label maps:
//! adjusted Rand index (full and foreground-only), mean best overlap, and
//! mean IoU under an optimal one-to-one matching.
//!
//! Conventions: the foreground restriction drops positions whose
//! ground-truth label is 0; mBO lets every ground-truth instance take its
//! best-overlapping predicted mask (reuse allowed); mIoU matches predictions
//! to ground-truth instances one-to-one (Hungarian) and unmatched instances
//! score 0. Degenerate partitions (at most one cluster on both sides) have
//! ARI 1 by convention. All metrics are invariant under relabeling of
//! predicted ids.

use std::collections::BTreeMap;

use crate::scene::SyntheticScene;
use crate::{CoreError, Real, Result};

fn compact_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    (labels.iter().map(|l| map[l]).collect(), map.len())
}

fn choose2(n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        (n as f64) * (n as f64 - 1.0) / 2.0
    }
}

/// Adjusted Rand index between two equal-length label maps. With
/// `foreground_only`, positions whose ground-truth label is 0 are excluded
/// before comparison.
pub fn adjusted_rand_index(pred: &[usize], gt: &[usize], foreground_only: bool) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(CoreError::shape("adjusted_rand_index", "length mismatch"));
    }
    let (pred, gt): (Vec<usize>, Vec<usize>) = if foreground_only {
        pred.iter()
            .zip(gt)
            .filter(|(_, &g)| g != 0)
            .map(|(&p, &g)| (p, g))
            .unzip()
    } else {
        (pred.to_vec(), gt.to_vec())
    };
    if gt.is_empty() {
        return Err(CoreError::invalid(
            "adjusted_rand_index",
            "no positions left after foreground filtering",
        ));
    }
    let (pred_c, np) = compact_labels(&pred);
    let (gt_c, ng) = compact_labels(&gt);
    if np <= 1 && ng <= 1 {
        return Ok(1.0);
    }
    let mut contingency = vec![0usize; np * ng];
    let mut pred_sizes = vec![0usize; np];
    let mut gt_sizes = vec![0usize; ng];
    for (&p, &g) in pred_c.iter().zip(&gt_c) {
        contingency[p * ng + g] += 1;
        pred_sizes[p] += 1;
        gt_sizes[g] += 1;
    }
    let sum_cells: f64 = contingency.iter().map(|&c| choose2(c)).sum();
    let sum_pred: f64 = pred_sizes.iter().map(|&c| choose2(c)).sum();
    let sum_gt: f64 = gt_sizes.iter().map(|&c| choose2(c)).sum();
    let total = choose2(gt.len());
    let expected = sum_pred * sum_gt / total;
    let max_index = (sum_pred + sum_gt) / 2.0;
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

fn masks_of(labels: &[usize], skip_background: bool) -> Vec<(usize, Vec<bool>)> {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .filter(|&id| !(skip_background && id == 0))
        .map(|id| (id, labels.iter().map(|&l| l == id).collect()))
        .collect()
}

fn iou(a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean over ground-truth instances of the best IoU against any predicted
/// mask (background instances excluded; predicted masks may be reused).
pub fn mean_best_overlap(pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(CoreError::shape("mean_best_overlap", "length mismatch"));
    }
    let gt_masks = masks_of(gt, true);
    if gt_masks.is_empty() {
        return Err(CoreError::invalid(
            "mean_best_overlap",
            "no foreground ground-truth instance",
        ));
    }
    let pred_masks = masks_of(pred, false);
    let mut total = 0.0;
    for (_, g) in &gt_masks {
        let best = pred_masks
            .iter()
            .map(|(_, p)| iou(p, g))
            .fold(0.0, f64::max);
        total += best;
    }
    Ok(total / gt_masks.len() as f64)
}

/// Minimum-cost assignment on a square cost matrix (Hungarian algorithm with
/// potentials). Returns, for each row, its assigned column.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-indexed potentials over rows (u) and columns (v)
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut match_col = vec![0usize; n + 1]; // column -> row
    for row in 1..=n {
        match_col[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = match_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if match_col[j] != 0 {
            assignment[match_col[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Mean IoU under the total-IoU-maximizing one-to-one matching between
/// predicted masks and foreground ground-truth instances; ground-truth
/// instances left unmatched score 0.
pub fn mean_iou(pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(CoreError::shape("mean_iou", "length mismatch"));
    }
    let gt_masks = masks_of(gt, true);
    if gt_masks.is_empty() {
        return Err(CoreError::invalid(
            "mean_iou",
            "no foreground ground-truth instance",
        ));
    }
    let pred_masks = masks_of(pred, false);
    let n = gt_masks.len().max(pred_masks.len());
    // square cost matrix, padded entries carry IoU 0
    let mut cost = vec![vec![1.0f64; n]; n];
    for (gi, (_, g)) in gt_masks.iter().enumerate() {
        for (pi, (_, p)) in pred_masks.iter().enumerate() {
            cost[gi][pi] = 1.0 - iou(g, p);
        }
    }
    let assignment = hungarian(&cost);
    let mut total = 0.0;
    for (gi, (_, g)) in gt_masks.iter().enumerate() {
        let pi = assignment[gi];
        if pi < pred_masks.len() {
            total += iou(g, &pred_masks[pi].1);
        }
    }
    Ok(total / gt_masks.len() as f64)
}

/// Model predictions for one evaluated scene.
#[derive(Clone, Debug)]
pub struct SceneEval {
    pub pred_labels: Vec<usize>,
    pub active_count: usize,
}

#[derive(Clone, Debug)]
pub struct SceneMetrics {
    pub scene: usize,
    pub ari: f64,
    pub fg_ari: f64,
    pub mbo: f64,
    pub miou: f64,
    pub active_count: usize,
    pub object_count: usize,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsAggregate {
    pub count: usize,
    pub ari_mean: f64,
    pub ari_std: f64,
    pub fg_ari_mean: f64,
    pub fg_ari_std: f64,
    pub mbo_mean: f64,
    pub mbo_std: f64,
    pub miou_mean: f64,
    pub miou_std: f64,
    pub active_count_mean: f64,
    /// Mean absolute difference between active slots and true object count.
    pub count_abs_err_mean: f64,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub per_scene: Vec<SceneMetrics>,
    pub aggregate: MetricsAggregate,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-scene metrics plus aggregate mean/std over a split.
pub fn evaluate_split<T: Real>(
    outputs: &[SceneEval],
    scenes: &[SyntheticScene<T>],
) -> Result<MetricsReport> {
    if outputs.is_empty() {
        return Err(CoreError::invalid("evaluate_split", "empty split"));
    }
    if outputs.len() != scenes.len() {
        return Err(CoreError::shape("evaluate_split", "outputs vs scenes length"));
    }
    let mut per_scene = Vec::with_capacity(outputs.len());
    for (i, (out, scene)) in outputs.iter().zip(scenes).enumerate() {
        per_scene.push(SceneMetrics {
            scene: i,
            ari: adjusted_rand_index(&out.pred_labels, &scene.gt_labels, false)?,
            fg_ari: adjusted_rand_index(&out.pred_labels, &scene.gt_labels, true)?,
            mbo: mean_best_overlap(&out.pred_labels, &scene.gt_labels)?,
            miou: mean_iou(&out.pred_labels, &scene.gt_labels)?,
            active_count: out.active_count,
            object_count: scene.object_count,
        });
    }
    let (ari_mean, ari_std) = mean_std(per_scene.iter().map(|m| m.ari));
    let (fg_ari_mean, fg_ari_std) = mean_std(per_scene.iter().map(|m| m.fg_ari));
    let (mbo_mean, mbo_std) = mean_std(per_scene.iter().map(|m| m.mbo));
    let (miou_mean, miou_std) = mean_std(per_scene.iter().map(|m| m.miou));
    let (active_count_mean, _) = mean_std(per_scene.iter().map(|m| m.active_count as f64));
    let (count_abs_err_mean, _) = mean_std(
        per_scene
            .iter()
            .map(|m| (m.active_count as f64 - m.object_count as f64).abs()),
    );
    let count = per_scene.len();
    Ok(MetricsReport {
        per_scene,
        aggregate: MetricsAggregate {
            count,
            ari_mean,
            ari_std,
            fg_ari_mean,
            fg_ari_std,
            mbo_mean,
            mbo_std,
            miou_mean,
            miou_std,
            active_count_mean,
            count_abs_err_mean,
        },
    })
}

impl MetricsReport {
    /// Line-delimited rendering: one record per scene followed by one
    /// aggregate record. Field names are fixed.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for m in &self.per_scene {
            out.push_str(&format!(
                "scene={} ari={:.6} fg_ari={:.6} mbo={:.6} miou={:.6} active_count={} object_count={}\n",
                m.scene, m.ari, m.fg_ari, m.mbo, m.miou, m.active_count, m.object_count
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "aggregate n={} ari_mean={:.6} ari_std={:.6} fg_ari_mean={:.6} fg_ari_std={:.6} mbo_mean={:.6} mbo_std={:.6} miou_mean={:.6} miou_std={:.6} active_count_mean={:.6} count_abs_err_mean={:.6}\n",
            a.count,
            a.ari_mean,
            a.ari_std,
            a.fg_ari_mean,
            a.fg_ari_std,
            a.mbo_mean,
            a.mbo_std,
            a.miou_mean,
            a.miou_std,
            a.active_count_mean,
            a.count_abs_err_mean
        ));
        out
    }
}
