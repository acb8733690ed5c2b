//! Rank-based fractile extraction, set-style perturbation, preservation and
//! deletion curves with trapezoidal AUC, a brute-force influence oracle for
//! tiny inputs, and multi-method AUC comparison reports.

use crate::error::{Error, Result};
use crate::nn::clip::ClipMode;
use crate::nn::{forward, NetworkModel};
use crate::optimizer::{
    make_reference, optimize_attribution, FractileSchedule, Objective, OptMode, OptimizerConfig,
    ReferenceKind, ReferenceSpec,
};
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-pixel salience scores for one (input, prediction) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionMap {
    /// `[h, w]` tensor of finite scores; higher means more salient.
    pub values: Tensor,
    pub method: String,
    pub seed: u64,
}

impl AttributionMap {
    pub fn new(values: Tensor, method: impl Into<String>, seed: u64) -> Result<AttributionMap> {
        if values.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                location: "attribution map".into(),
                expected: "[h, w]".into(),
                got: format!("{:?}", values.shape()),
            });
        }
        values.ensure_finite("attribution map")?;
        Ok(AttributionMap {
            values,
            method: method.into(),
            seed,
        })
    }

    fn dims(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }
}

/// Duplicate-free pixel coordinates in increasing row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSet {
    coords: Vec<(usize, usize)>,
}

impl PixelSet {
    pub fn new(mut coords: Vec<(usize, usize)>) -> PixelSet {
        coords.sort_unstable();
        coords.dedup();
        PixelSet { coords }
    }

    pub fn empty() -> PixelSet {
        PixelSet { coords: Vec::new() }
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn contains(&self, coord: (usize, usize)) -> bool {
        self.coords.binary_search(&coord).is_ok()
    }
}

/// Flat pixel indices ordered by ascending attribution, ties broken by
/// row-major index (smaller index first).
fn ranked_indices(map: &AttributionMap) -> Vec<usize> {
    let data = map.values.data();
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_unstable_by(|&a, &b| {
        data[a]
            .partial_cmp(&data[b])
            .expect("finite attribution values")
            .then(a.cmp(&b))
    });
    idx
}

fn fractile_size(f: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in [0, 1], got {f}"
        )));
    }
    Ok(((f * n as f64).floor() as usize).min(n))
}

/// The `floor(f * N)` least salient pixels.
pub fn lower_fractile(map: &AttributionMap, f: f64) -> Result<PixelSet> {
    let (_, w) = map.dims();
    let k = fractile_size(f, map.values.len())?;
    let ranked = ranked_indices(map);
    Ok(PixelSet::new(
        ranked[..k].iter().map(|&i| (i / w, i % w)).collect(),
    ))
}

/// The `floor(f * N)` most salient pixels; on ties the smaller row-major
/// index wins inclusion.
pub fn upper_fractile(map: &AttributionMap, f: f64) -> Result<PixelSet> {
    let (_, w) = map.dims();
    let n = map.values.len();
    let k = fractile_size(f, n)?;
    let data = map.values.data();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| {
        data[b]
            .partial_cmp(&data[a])
            .expect("finite attribution values")
            .then(a.cmp(&b))
    });
    Ok(PixelSet::new(
        idx[..k].iter().map(|&i| (i / w, i % w)).collect(),
    ))
}

/// Replaces the pixels of `s` (all channels) with the reference's values.
pub fn perturb(x: &Tensor, s: &PixelSet, reference: &Tensor) -> Result<Tensor> {
    x.ensure_same_shape(reference, "perturb reference")?;
    let [c, h, w] = match x.shape() {
        [c, h, w] => [*c, *h, *w],
        other => {
            return Err(Error::ShapeMismatch {
                location: "perturb input".into(),
                expected: "[c, h, w]".into(),
                got: format!("{other:?}"),
            })
        }
    };
    let mut out = x.clone();
    for &(y, xx) in s.coords() {
        if y >= h || xx >= w {
            return Err(Error::InvalidArgument(format!(
                "pixel ({y}, {xx}) outside {h}x{w} image"
            )));
        }
        for ch in 0..c {
            let i = (ch * h + y) * w + xx;
            out.data_mut()[i] = reference.data()[i];
        }
    }
    Ok(out)
}

/// Influence of a pixel set: target score after perturbation minus before.
pub fn influence(
    model: &NetworkModel,
    x: &Tensor,
    s: &PixelSet,
    reference: &Tensor,
    target: usize,
) -> Result<f64> {
    let base = forward(model, x)?.prob_of(target);
    let perturbed = forward(model, &perturb(x, s, reference)?)?.prob_of(target);
    Ok(perturbed - base)
}

/// Brute-force per-pixel influence: for each pixel, the sum of `influence`
/// over every subset containing it. Exponential; test oracle only.
pub fn pixel_influence_oracle(
    model: &NetworkModel,
    x: &Tensor,
    reference: &Tensor,
    target: usize,
    max_pixels: usize,
) -> Result<Tensor> {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let n = h * w;
    if n > max_pixels {
        return Err(Error::InvalidArgument(format!(
            "oracle limited to {max_pixels} pixels, image has {n}"
        )));
    }
    let base = forward(model, x)?.prob_of(target);
    let mut scores = Tensor::zeros(&[h, w]);
    for mask in 1u32..(1 << n) {
        let coords: Vec<(usize, usize)> = (0..n)
            .filter(|p| mask & (1 << p) != 0)
            .map(|p| (p / w, p % w))
            .collect();
        let set = PixelSet::new(coords);
        let score = forward(model, &perturb(x, &set, reference)?)?.prob_of(target) - base;
        for &(y, xx) in set.coords() {
            scores.data_mut()[y * w + xx] += score;
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaithfulnessCurve {
    pub kind: Objective,
    pub fractions: Vec<f64>,
    pub scores: Vec<f64>,
    pub auc: f64,
}

impl FaithfulnessCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,score\n");
        for (f, s) in self.fractions.iter().zip(&self.scores) {
            out.push_str(&format!("{f:.6},{s:.6}\n"));
        }
        out
    }
}

/// Trapezoidal integral of `ys` over `xs`.
pub fn trapezoid_auc(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Sweeps the masking fraction over a uniform grid. Preservation masks the
/// lower fractile (least salient first), deletion the upper.
pub fn faithfulness_curve(
    model: &NetworkModel,
    x: &Tensor,
    map: &AttributionMap,
    kind: Objective,
    ref_spec: &ReferenceSpec,
    target: usize,
    grid_step: f64,
) -> Result<FaithfulnessCurve> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "grid step must lie in (0, 1], got {grid_step}"
        )));
    }
    let n = (1.0 / grid_step).round();
    if (n * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "grid step {grid_step} does not divide 1"
        )));
    }
    let n = n as usize;
    let reference = make_reference(ref_spec, x, 0)?;
    let mut fractions = Vec::with_capacity(n + 1);
    let mut scores = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let f = i as f64 / n as f64;
        let set = match kind {
            Objective::Preservation => lower_fractile(map, f)?,
            Objective::Deletion => upper_fractile(map, f)?,
        };
        let perturbed = perturb(x, &set, &reference)?;
        scores.push(forward(model, &perturbed)?.prob_of(target));
        fractions.push(f);
    }
    let auc = trapezoid_auc(&fractions, &scores);
    Ok(FaithfulnessCurve {
        kind,
        fractions,
        scores,
        auc,
    })
}

/// One attribution method entry for [`compare_methods`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub clip: ClipMode,
    pub objective: Objective,
    pub mode: OptMode,
}

impl MethodSpec {
    pub fn new(name: impl Into<String>, clip: ClipMode, mode: OptMode) -> MethodSpec {
        MethodSpec {
            name: name.into(),
            clip,
            objective: Objective::Preservation,
            mode,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub seeds: Vec<u64>,
    pub schedule: FractileSchedule,
    pub grid_step: f64,
    pub preservation_reference: ReferenceKind,
    pub deletion_reference: ReferenceKind,
    pub optimization_reference: ReferenceKind,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            seeds: vec![1, 2, 3],
            schedule: FractileSchedule::default_ensemble(),
            grid_step: 0.05,
            preservation_reference: ReferenceKind::GaussianBlur { sigma: 2.0 },
            deletion_reference: ReferenceKind::Gray,
            optimization_reference: ReferenceKind::RandomMonotone,
        }
    }
}

/// Schedule actually used for a method, honoring its ablation mode.
pub fn schedule_for_mode(base: &FractileSchedule, mode: OptMode) -> FractileSchedule {
    match mode {
        OptMode::Ensemble => base.clone(),
        OptMode::SingleMapNoArea => FractileSchedule {
            fractions: vec![0.5],
            ..base.clone()
        },
        OptMode::SingleMapL1 => FractileSchedule {
            fractions: vec![1.0],
            ..base.clone()
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub clip_mode: ClipMode,
    pub objective: Objective,
    pub metric: Objective,
    /// Mean AUC over the image set.
    pub auc: f64,
    pub image_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub clip_mode: ClipMode,
    pub objective: Objective,
    pub preservation_mean: f64,
    pub preservation_std: f64,
    pub deletion_mean: f64,
    pub deletion_std: f64,
    pub image_count: usize,
    pub seed_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub summaries: Vec<MethodSummary>,
}

impl CompareReport {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("method,clip_mode,objective,metric,auc,image_count,seed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{},{}\n",
                r.method,
                r.clip_mode.name(),
                r.objective.name(),
                r.metric.name(),
                r.auc,
                r.image_count,
                r.seed
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "method,clip_mode,objective,preservation_mean,preservation_std,deletion_mean,deletion_std,image_count,seeds\n",
        );
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
                s.method,
                s.clip_mode.name(),
                s.objective.name(),
                s.preservation_mean,
                s.preservation_std,
                s.deletion_mean,
                s.deletion_std,
                s.image_count,
                s.seed_count
            ));
        }
        out
    }

    /// Seed-averaged mean AUC for one (method, metric) pair.
    pub fn mean_auc(&self, method: &str, metric: Objective) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.metric == metric)
            .map(|r| r.auc)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

fn sample_std(vals: &[f64], mean: f64) -> f64 {
    if vals.len() < 2 {
        return 0.0;
    }
    (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
}

/// Optimizes every method on every image for every seed, evaluates both
/// metrics on the resulting maps, and aggregates per-seed rows plus
/// per-method summaries. Targets are each image's predicted class.
pub fn compare_methods(
    model: &NetworkModel,
    images: &[Tensor],
    methods: &[MethodSpec],
    cfg: &CompareConfig,
) -> Result<CompareReport> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("need at least one image".into()));
    }
    struct Cell {
        method_idx: usize,
        seed_idx: usize,
        pres_auc: f64,
        del_auc: f64,
    }
    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    for mi in 0..methods.len() {
        for si in 0..cfg.seeds.len() {
            for ii in 0..images.len() {
                cells.push((mi, si, ii));
            }
        }
    }
    let results: Vec<Cell> = cells
        .par_iter()
        .map(|&(mi, si, ii)| -> Result<Cell> {
            let method = &methods[mi];
            let seed = cfg.seeds[si];
            let image = &images[ii];
            let target = forward(model, image)?.argmax();
            let schedule = schedule_for_mode(&cfg.schedule, method.mode);
            // The stream depends on (seed, image) but not on the method's
            // list position, so duplicated method entries give equal rows.
            let opt_cfg = OptimizerConfig::new(
                method.clip,
                method.objective,
                method.mode,
                derive_seed(seed, ii as u64, 0),
            );
            let ref_spec = ReferenceSpec::new(
                cfg.optimization_reference,
                derive_seed(seed, ii as u64, 1),
            );
            let outcome =
                optimize_attribution(model, image, target, &schedule, &opt_cfg, &ref_spec)?;
            let map = AttributionMap::new(outcome.ensemble.map, method.name.clone(), seed)?;
            let pres = faithfulness_curve(
                model,
                image,
                &map,
                Objective::Preservation,
                &ReferenceSpec::new(cfg.preservation_reference, 0),
                target,
                cfg.grid_step,
            )?;
            let del = faithfulness_curve(
                model,
                image,
                &map,
                Objective::Deletion,
                &ReferenceSpec::new(cfg.deletion_reference, 0),
                target,
                cfg.grid_step,
            )?;
            Ok(Cell {
                method_idx: mi,
                seed_idx: si,
                pres_auc: pres.auc,
                del_auc: del.auc,
            })
        })
        .collect::<Result<Vec<Cell>>>()?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (mi, method) in methods.iter().enumerate() {
        let mut pres_by_seed = Vec::with_capacity(cfg.seeds.len());
        let mut del_by_seed = Vec::with_capacity(cfg.seeds.len());
        for (si, &seed) in cfg.seeds.iter().enumerate() {
            let cell_aucs: Vec<(f64, f64)> = results
                .iter()
                .filter(|c| c.method_idx == mi && c.seed_idx == si)
                .map(|c| (c.pres_auc, c.del_auc))
                .collect();
            let n = cell_aucs.len() as f64;
            let pres = cell_aucs.iter().map(|c| c.0).sum::<f64>() / n;
            let del = cell_aucs.iter().map(|c| c.1).sum::<f64>() / n;
            pres_by_seed.push(pres);
            del_by_seed.push(del);
            for (metric, auc) in [(Objective::Preservation, pres), (Objective::Deletion, del)] {
                rows.push(CompareRow {
                    method: method.name.clone(),
                    clip_mode: method.clip,
                    objective: method.objective,
                    metric,
                    auc,
                    image_count: images.len(),
                    seed,
                });
            }
        }
        let pres_mean = pres_by_seed.iter().sum::<f64>() / pres_by_seed.len() as f64;
        let del_mean = del_by_seed.iter().sum::<f64>() / del_by_seed.len() as f64;
        summaries.push(MethodSummary {
            method: method.name.clone(),
            clip_mode: method.clip,
            objective: method.objective,
            preservation_mean: pres_mean,
            preservation_std: sample_std(&pres_by_seed, pres_mean),
            deletion_mean: del_mean,
            deletion_std: sample_std(&del_by_seed, del_mean),
            image_count: images.len(),
            seed_count: cfg.seeds.len(),
        });
    }
    Ok(CompareReport { rows, summaries })
}
