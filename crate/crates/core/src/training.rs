//! Triplet sampling, the hinge + regression loss, and the epoch loop.
//!
//! Each epoch every training trajectory serves once as an anchor. Two
//! trajectories are drawn from the anchor's `k` nearest true neighbours; the
//! closer one becomes the positive. With `d` the Euclidean distance between
//! embeddings and `f` the true distance, the per-triplet loss is
//!
//! ```text
//! L_T = max(0, d_ap - d_an - (f_ap - f_an))
//! L_M = |d_ap - f_ap| + |d_an - f_an|
//! ```
//!
//! and a batch minimises the mean of `L_T + L_M`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::Trajectory;
use crate::measures::{DistanceMatrix, MeasureKind};
use crate::model::{ConvTraj, Encoder, ModelInput};
use crate::tensor::{AdamConfig, AdamState, Gradients, Graph, Tensor};

/// Indices refer to rows of the training distance matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub f_ap: f64,
    pub f_an: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    Triplet,
    Mse,
    #[default]
    Both,
}

impl LossKind {
    fn uses_triplet(self) -> bool {
        matches!(self, LossKind::Triplet | LossKind::Both)
    }

    fn uses_regression(self) -> bool {
        matches!(self, LossKind::Mse | LossKind::Both)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "triplet" => Ok(LossKind::Triplet),
            "mse" => Ok(LossKind::Mse),
            "both" => Ok(LossKind::Both),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss `{other}` (expected triplet, mse or both)"
            ))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Triplet => "triplet",
            LossKind::Mse => "mse",
            LossKind::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub neighbor_pool_k: usize,
    pub seed: u64,
    pub measure: MeasureKind,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn new(measure: MeasureKind, seed: u64) -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            neighbor_pool_k: 200,
            seed,
            measure,
            loss: LossKind::Both,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.neighbor_pool_k == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and neighbor_pool_k must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.measure.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub triplet_term: f64,
    pub regression_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Combines the two terms. A term switched off by `kind` is reported as 0.
    pub fn of(d_ap: f64, d_an: f64, f_ap: f64, f_an: f64, kind: LossKind) -> Self {
        let t = if kind.uses_triplet() { triplet_loss(d_ap, d_an, f_ap, f_an) } else { 0.0 };
        let r = if kind.uses_regression() { regression_loss(d_ap, d_an, f_ap, f_an) } else { 0.0 };
        LossBreakdown {
            triplet_term: t,
            regression_term: r,
            total: t + r,
        }
    }
}

pub fn triplet_loss(d_ap: f64, d_an: f64, f_ap: f64, f_an: f64) -> f64 {
    let eta = f_ap - f_an;
    (d_ap - d_an - eta).max(0.0)
}

pub fn regression_loss(d_ap: f64, d_an: f64, f_ap: f64, f_an: f64) -> f64 {
    (d_ap - f_ap).abs() + (d_an - f_an).abs()
}

/// `(dL/dd_ap, dL/dd_an)` for the active terms. The hinge and `|.|` take
/// subgradient 0 at their kinks.
fn loss_grad(d_ap: f64, d_an: f64, f_ap: f64, f_an: f64, kind: LossKind) -> (f64, f64) {
    let (mut ga, mut gn) = (0.0, 0.0);
    if kind.uses_triplet() && d_ap - d_an - (f_ap - f_an) > 0.0 {
        ga += 1.0;
        gn -= 1.0;
    }
    if kind.uses_regression() {
        ga += sign(d_ap - f_ap);
        gn += sign(d_an - f_an);
    }
    (ga, gn)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Each anchor's nearest neighbours by true distance, ties by id.
#[derive(Debug, Clone)]
pub struct NeighborPools {
    pools: Vec<Vec<usize>>,
}

impl NeighborPools {
    /// `k` is clamped to `n - 1` when the set is smaller than the pool.
    pub fn new(dm: &DistanceMatrix, k: usize) -> Result<Self> {
        if dm.row_ids != dm.col_ids {
            return Err(Error::InvalidArgument(
                "triplet selection needs a square train x train matrix".into(),
            ));
        }
        let n = dm.rows();
        if n < 3 {
            return Err(Error::InvalidArgument(format!(
                "triplet selection needs at least 3 trajectories, got {n}"
            )));
        }
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "neighbour pool k must be >= 2, got {k}"
            )));
        }
        let k = k.min(n - 1);
        let ids = &dm.row_ids;
        let pools = (0..n)
            .map(|a| {
                let row = dm.row(a);
                let mut others: Vec<usize> = (0..n).filter(|&j| j != a).collect();
                others.sort_by(|&x, &y| row[x].total_cmp(&row[y]).then_with(|| ids[x].cmp(&ids[y])));
                others.truncate(k);
                others
            })
            .collect();
        Ok(NeighborPools { pools })
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }

    /// One triplet per anchor, in anchor order.
    pub fn sample(&self, dm: &DistanceMatrix, epoch_seed: u64) -> Vec<Triplet> {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        let ids = &dm.row_ids;
        self.pools
            .iter()
            .enumerate()
            .map(|(a, pool)| {
                let i = rng.gen_range(0..pool.len());
                let mut j = rng.gen_range(0..pool.len() - 1);
                if j >= i {
                    j += 1;
                }
                let (u, v) = (pool[i], pool[j]);
                let (fu, fv) = (dm.get(a, u), dm.get(a, v));
                let u_first = match fu.total_cmp(&fv) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => ids[u] < ids[v],
                };
                let (p, q) = if u_first { (u, v) } else { (v, u) };
                Triplet {
                    anchor: a,
                    positive: p,
                    negative: q,
                    f_ap: dm.get(a, p),
                    f_an: dm.get(a, q),
                }
            })
            .collect()
    }
}

pub fn select_triplets(dm: &DistanceMatrix, k: usize, epoch_seed: u64) -> Result<Vec<Triplet>> {
    Ok(NeighborPools::new(dm, k)?.sample(dm, epoch_seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's triplets, measured before each batch's update.
    pub loss: LossBreakdown,
    pub seconds: f64,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Adds `scale * (a - b) / |a - b|` to `ga` and subtracts it from `gb`.
fn push_distance_grad(ga: &mut [f64], gb: &mut [f64], a: &[f64], b: &[f64], d: f64, scale: f64) {
    if d == 0.0 || scale == 0.0 {
        return;
    }
    let s = scale / d;
    for ((x, y), (p, q)) in ga.iter_mut().zip(gb.iter_mut()).zip(a.iter().zip(b)) {
        let g = s * (p - q);
        *x += g;
        *y -= g;
    }
}

/// One optimisation step over `batch`. Returns the summed (not averaged)
/// per-triplet breakdown.
fn train_batch(
    model: &mut ConvTraj,
    adam: &mut AdamState,
    inputs: &[ModelInput],
    batch: &[Triplet],
    kind: LossKind,
) -> Result<LossBreakdown> {
    let unique: Vec<usize> = batch
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let slot = |i: usize| unique.binary_search(&i).expect("index in batch");

    let grads: Vec<Gradients>;
    let mut sum = LossBreakdown::default();
    {
        let params = &model.params;
        let model_ref: &ConvTraj = model;
        let recorded: Vec<(Graph<'_>, crate::tensor::NodeId)> = unique
            .par_iter()
            .map(|&i| {
                let mut g = Graph::new(params);
                let v = model_ref.record(&mut g, &inputs[i])?;
                Ok((g, v))
            })
            .collect::<Result<_>>()?;
        let emb: Vec<&[f64]> = recorded.iter().map(|(g, v)| g.value(*v).data()).collect();
        let dim = emb[0].len();
        let mut seeds = vec![vec![0.0; dim]; unique.len()];
        let scale = 1.0 / batch.len() as f64;

        for t in batch {
            let (a, p, n) = (slot(t.anchor), slot(t.positive), slot(t.negative));
            let d_ap = euclid(emb[a], emb[p]);
            let d_an = euclid(emb[a], emb[n]);
            let lb = LossBreakdown::of(d_ap, d_an, t.f_ap, t.f_an, kind);
            sum.triplet_term += lb.triplet_term;
            sum.regression_term += lb.regression_term;
            sum.total += lb.total;
            let (ga, gn) = loss_grad(d_ap, d_an, t.f_ap, t.f_an, kind);
            let mut sa = std::mem::take(&mut seeds[a]);
            if p != a {
                push_distance_grad(&mut sa, &mut seeds[p], emb[a], emb[p], d_ap, ga * scale);
            }
            if n != a {
                push_distance_grad(&mut sa, &mut seeds[n], emb[a], emb[n], d_an, gn * scale);
            }
            seeds[a] = sa;
        }

        grads = recorded
            .into_par_iter()
            .zip(seeds)
            .map(|((mut g, v), seed)| {
                if seed.iter().all(|&s| s == 0.0) {
                    return Ok(Gradients::default());
                }
                let shape = g.value(v).shape().to_vec();
                g.backward_with_seed(v, &Tensor::new(shape, seed)?)
            })
            .collect::<Result<_>>()?;
    }

    model.params.zero_grad();
    for g in &grads {
        model.params.accumulate(g);
    }
    adam.step(&mut model.params);
    Ok(sum)
}

/// Runs the full schedule, calling `on_epoch` after every epoch with the
/// current weights.
pub fn train<F>(
    encoder: &mut Encoder,
    trajectories: &[Trajectory],
    dm: &DistanceMatrix,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochLog>>
where
    F: FnMut(&EpochLog, &ConvTraj) -> Result<()>,
{
    cfg.validate()?;
    if dm.measure != cfg.measure {
        return Err(Error::InvalidArgument(format!(
            "distance matrix was computed with {}, training config says {}",
            dm.measure, cfg.measure
        )));
    }
    let same_ids = dm.rows() == trajectories.len()
        && dm.row_ids.iter().zip(trajectories).all(|(id, t)| *id == t.id);
    if !same_ids {
        return Err(Error::InvalidArgument(
            "distance matrix rows do not match the training trajectories".into(),
        ));
    }
    let pools = NeighborPools::new(dm, cfg.neighbor_pool_k)?;
    let inputs: Vec<ModelInput> = trajectories
        .par_iter()
        .map(|t| encoder.prepare(t))
        .collect::<Result<_>>()?;

    let mut adam = AdamState::new(
        &encoder.model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let ids = &dm.row_ids;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let epoch_seed = cfg.seed.wrapping_add(epoch as u64);
        let mut triplets = pools.sample(dm, epoch_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed ^ 0x5EED_5EED_5EED_5EED);
        triplets.shuffle(&mut rng);

        let mut total = LossBreakdown::default();
        for (b, chunk) in triplets.chunks(cfg.batch_size).enumerate() {
            let mut batch = chunk.to_vec();
            batch.sort_by(|x, y| ids[x.anchor].cmp(&ids[y.anchor]));
            let s = train_batch(&mut encoder.model, &mut adam, &inputs, &batch, cfg.loss)?;
            if !s.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total.triplet_term += s.triplet_term;
            total.regression_term += s.regression_term;
            total.total += s.total;
        }
        let n = triplets.len() as f64;
        let entry = EpochLog {
            epoch,
            loss: LossBreakdown {
                triplet_term: total.triplet_term / n,
                regression_term: total.regression_term / n,
                total: total.total / n,
            },
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry, &encoder.model)?;
        log.push(entry);
    }
    Ok(log)
}

/// Trailing `window`-epoch moving average of the total loss; entry `i`
/// averages epochs `i + 1 - window ..= i` and is defined from `window - 1`.
pub fn moving_average(log: &[EpochLog], window: usize) -> Vec<f64> {
    if window == 0 || log.len() < window {
        return Vec::new();
    }
    log.windows(window)
        .map(|w| w.iter().map(|e| e.loss.total).sum::<f64>() / window as f64)
        .collect()
}
