//! Empirical checks of the distance bounds for the network's building blocks:
//!
//! * a single-output 1D convolution over a 2-row trajectory moves the discrete
//!   Fréchet distance by at most `sqrt(S0^2 + S1^2) * d_xy + Delta`, and no
//!   less than the endpoint gaps;
//! * window-k max pooling moves it by at most the summed widest group
//!   envelopes of the two sequences;
//! * for trajectories whose bounding rectangles are more than `2 sqrt(2)`
//!   cells apart, a positive 3x3 convolution of their rasters stays at least
//!   `sqrt((n + m) * sum k^2)` apart.
//!
//! The last statement is not unconditional: a gap above `2 sqrt(2)` cells
//! still allows two pixels to sit only two rows and two columns apart, and
//! then their 3x3 supports share cells and the outputs partly cancel. Such
//! pairs are reported as unsatisfied.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{self, GeoPoint, Mbr, Trajectory};
use crate::measures::{dfd_by, euclidean_slices};
use crate::tensor::{self, Tensor};

pub const REL_TOL: f64 = 1e-9;

fn within(lower: f64, value: f64, upper: f64) -> bool {
    let tol = |a: f64, b: f64| REL_TOL * a.abs().max(b.abs());
    lower - tol(lower, value) <= value && value <= upper + tol(upper, value)
}

fn columns(t: &Tensor) -> Vec<Vec<f64>> {
    let (rows, len) = (t.shape()[0], t.shape()[1]);
    let d = t.data();
    (0..len)
        .map(|j| (0..rows).map(|r| d[r * len + j]).collect())
        .collect()
}

fn dfd_columns(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    dfd_by(a, b, |p, q| euclidean_slices(p, q))
}

fn dfd_scalar(a: &[f64], b: &[f64]) -> Result<f64> {
    dfd_by(a, b, |p, q| (p - q).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dBoundReport {
    pub pair_id: String,
    pub d_xy: f64,
    pub lower: f64,
    pub actual: f64,
    pub upper: f64,
    pub s0: f64,
    pub s1: f64,
    pub delta: f64,
    pub satisfied: bool,
}

fn check_two_rows(t: &Tensor, what: &'static str) -> Result<usize> {
    match t.shape() {
        [2, n] if *n >= 1 => Ok(*n),
        s => Err(Error::ShapeMismatch {
            op: what,
            left: s.to_vec(),
            right: vec![2, 1],
        }),
    }
}

/// `B_i = sum_m k_m0 * dx_{m,i} - k_m2 * dx_{m,i+1}` for `i in 0..len`, where
/// `dx_{m,i} = x_{m,i} - x_{m,i-1}` with zeros beyond both ends.
fn residual_terms(x: &[f64], len: usize, k: &[f64]) -> Vec<f64> {
    let at = |m: usize, i: isize| -> f64 {
        if i < 0 || i as usize >= len {
            0.0
        } else {
            x[m * len + i as usize]
        }
    };
    let diff = |m: usize, i: isize| at(m, i) - at(m, i - 1);
    (0..len as isize)
        .map(|i| {
            (0..2)
                .map(|m| k[m * 3] * diff(m, i) - k[m * 3 + 2] * diff(m, i + 1))
                .sum()
        })
        .collect()
}

/// Bound check for a `[2 x 3]` kernel applied to `[2 x M]` and `[2 x N]`
/// inputs with stride 1 and zero padding 1.
pub fn conv1d_bound(pair_id: &str, x: &Tensor, y: &Tensor, kernel: &Tensor) -> Result<Conv1dBoundReport> {
    let m = check_two_rows(x, "conv1d bound X")?;
    let n = check_two_rows(y, "conv1d bound Y")?;
    if kernel.shape() != [2, 3] {
        return Err(Error::ShapeMismatch {
            op: "conv1d bound kernel",
            left: kernel.shape().to_vec(),
            right: vec![2, 3],
        });
    }
    let k = kernel.data();
    let k3 = kernel.clone().reshape(vec![1, 2, 3])?;
    let cx = tensor::conv1d(x, &k3)?;
    let cy = tensor::conv1d(y, &k3)?;
    let (cx, cy) = (cx.data(), cy.data());

    let d_xy = dfd_columns(&columns(x), &columns(y))?;
    let actual = dfd_scalar(cx, cy)?;
    let lower = (cx[0] - cy[0]).abs().max((cx[m - 1] - cy[n - 1]).abs());
    let s0 = k[0] + k[1] + k[2];
    let s1 = k[3] + k[4] + k[5];

    // Delta_ij = A_j - B_i, so max |Delta| needs only the extremes of A and B.
    let b = residual_terms(x.data(), m, k);
    let a = residual_terms(y.data(), n, k);
    let (amin, amax) = min_max(&a);
    let (bmin, bmax) = min_max(&b);
    let delta = (amax - bmin).max(bmax - amin);

    let upper = (s0 * s0 + s1 * s1).sqrt() * d_xy + delta;
    Ok(Conv1dBoundReport {
        pair_id: pair_id.to_string(),
        d_xy,
        lower,
        actual,
        upper,
        s0,
        s1,
        delta,
        satisfied: within(lower, actual, upper),
    })
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolBoundReport {
    pub pair_id: String,
    pub d_before: f64,
    pub d_after: f64,
    pub bound: f64,
    /// Trailing elements dropped from each input so the lengths divide by k.
    pub trimmed_x: usize,
    pub trimmed_y: usize,
    pub satisfied: bool,
}

/// Widest group envelope `max_g |min_g - max_g|` over consecutive groups of `k`.
fn envelope_width(cols: &[Vec<f64>], k: usize) -> f64 {
    cols.chunks_exact(k)
        .map(|g| {
            let l = g[0].len();
            let lo: Vec<f64> = (0..l).map(|d| g.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min)).collect();
            let hi: Vec<f64> = (0..l).map(|d| g.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max)).collect();
            euclidean_slices(&lo, &hi)
        })
        .fold(0.0, f64::max)
}

fn maxpool_cols(cols: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    cols.chunks_exact(k)
        .map(|g| {
            (0..g[0].len())
                .map(|d| g.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max))
                .collect()
        })
        .collect()
}

/// Bound check for window-`k`, stride-`k` max pooling of `[l x M]` and
/// `[l x N]` sequences. Lengths are first trimmed down to multiples of `k`;
/// `d_before` is measured on the trimmed sequences.
pub fn maxpool_bound(pair_id: &str, x: &Tensor, y: &Tensor, k: usize) -> Result<PoolBoundReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("pool size must be positive".into()));
    }
    if x.shape().len() != 2 || y.shape().len() != 2 || x.shape()[0] != y.shape()[0] || x.shape()[0] == 0 {
        return Err(Error::ShapeMismatch {
            op: "maxpool bound",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    let (m, n) = (x.shape()[1], y.shape()[1]);
    if m < k || n < k {
        return Err(Error::InvalidArgument(format!(
            "sequence lengths {m}, {n} are shorter than the pool size {k}"
        )));
    }
    let mut xc = columns(x);
    let mut yc = columns(y);
    let (tx, ty) = (m % k, n % k);
    xc.truncate(m - tx);
    yc.truncate(n - ty);

    let d_before = dfd_columns(&xc, &yc)?;
    let d_after = dfd_columns(&maxpool_cols(&xc, k), &maxpool_cols(&yc, k))?;
    let bound = envelope_width(&xc, k) + envelope_width(&yc, k);
    let gap = (d_after - d_before).abs();
    Ok(PoolBoundReport {
        pair_id: pair_id.to_string(),
        d_before,
        d_after,
        bound,
        trimmed_x: tx,
        trimmed_y: ty,
        satisfied: within(0.0, gap, bound),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dBoundReport {
    pub pair_id: String,
    /// Rectangle gap in meters.
    pub mbr_gap: f64,
    pub delta: f64,
    pub n: usize,
    pub m: usize,
    pub kernel_norm_term: f64,
    pub actual_euclidean: f64,
    /// Discrete Fréchet distance of the raw trajectories in meters.
    pub dfd: f64,
    pub bound_holds: bool,
    pub dfd_holds: bool,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Conv2dOutcome {
    PremiseNotMet { mbr_gap: f64 },
    Checked(Conv2dBoundReport),
}

/// Grid covering both trajectories with a margin of two and a half cells on
/// every side: no 3x3 support is cut off by the border, and points on the
/// rectangle's edge land mid-cell instead of on a cell boundary.
fn shared_grid(x: &Trajectory, y: &Trajectory, delta_m: f64) -> Result<geo::RasterConfig> {
    let u = x.mbr().union(&y.mbr());
    let mid = 0.5 * (u.min_lat + u.max_lat);
    let dlat = 2.5 * delta_m / geo::METERS_PER_DEG_LAT;
    let dlon = 2.5 * delta_m / (geo::METERS_PER_DEG_LAT * mid.to_radians().cos());
    let grown = Mbr::new(u.min_lat - dlat, u.max_lat + dlat, u.min_lon - dlon, u.max_lon + dlon)?;
    geo::RasterConfig::new(grown, delta_m)
}

/// Bound check for a strictly positive 3x3 kernel on the two rasters.
pub fn conv2d_bound(
    pair_id: &str,
    x: &Trajectory,
    y: &Trajectory,
    kernel: &Tensor,
    delta_m: f64,
) -> Result<Conv2dOutcome> {
    if kernel.shape() != [3, 3] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bound kernel",
            left: kernel.shape().to_vec(),
            right: vec![3, 3],
        });
    }
    if let Some(bad) = kernel.data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "kernel entries must be positive, found {bad}"
        )));
    }
    let grid = shared_grid(x, y, delta_m)?;
    let mbr_gap = grid.mbr_gap_meters(&x.mbr(), &y.mbr());
    let threshold = 2.0 * std::f64::consts::SQRT_2 * delta_m;
    if !(mbr_gap > threshold) {
        return Ok(Conv2dOutcome::PremiseNotMet { mbr_gap });
    }

    let bx = geo::rasterize(x, &grid)?;
    let by = geo::rasterize(y, &grid)?;
    let k4 = kernel.clone().reshape(vec![1, 1, 3, 3])?;
    let shape = vec![1, grid.rows, grid.cols];
    let cx = tensor::conv2d(&Tensor::new(shape.clone(), bx.to_f64())?, &k4)?;
    let cy = tensor::conv2d(&Tensor::new(shape, by.to_f64())?, &k4)?;
    let actual = euclidean_slices(cx.data(), cy.data());
    let ksq: f64 = kernel.data().iter().map(|v| v * v).sum();
    let term = (((bx.nonzero_count + by.nonzero_count) as f64) * ksq).sqrt();

    let proj = |t: &Trajectory| -> Vec<[f64; 2]> { t.points.iter().map(|p| grid.project(p)).collect() };
    let (px, py) = (proj(x), proj(y));
    let dfd = dfd_by(&px, &py, |a, b| euclidean_slices(a, b))?;

    let bound_holds = actual + REL_TOL * actual.max(term) >= term;
    let dfd_holds = dfd > threshold;
    Ok(Conv2dOutcome::Checked(Conv2dBoundReport {
        pair_id: pair_id.to_string(),
        mbr_gap,
        delta: delta_m,
        n: bx.nonzero_count,
        m: by.nonzero_count,
        kernel_norm_term: term,
        actual_euclidean: actual,
        dfd,
        bound_holds,
        dfd_holds,
        satisfied: bound_holds && dfd_holds,
    }))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0 + 1.0;
            for &i in &idx[s..=e] {
                r[i] = avg;
            }
            s = e + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    /// Pairs for the convolution and pooling checks.
    pub pairs: usize,
    /// Premise-meeting pairs wanted for the raster check.
    pub far_pairs: usize,
    pub seed: u64,
    pub delta_m: f64,
    pub pool_k: usize,
}

impl SuiteConfig {
    pub fn new(pairs: usize, seed: u64) -> Self {
        SuiteConfig {
            pairs,
            far_pairs: pairs.min(200),
            seed,
            delta_m: 250.0,
            pool_k: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    pub thm1_rate: f64,
    pub thm2_rate: f64,
    pub thm3_rate: f64,
    pub thm3_checked: usize,
    pub thm3_premise_not_met: usize,
    pub spearman_conv1d: f64,
    pub median_pool_change: f64,
    pub max_pool_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSuite {
    pub kernel1d: Tensor,
    pub kernel2d: Tensor,
    pub conv1d: Vec<Conv1dBoundReport>,
    pub pool: Vec<PoolBoundReport>,
    pub conv2d: Vec<Conv2dBoundReport>,
    pub summary: SuiteSummary,
}

/// Unordered pairs `(i, j)`, `i < j`, drawn without replacement.
fn sample_pairs(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    sample(rng, total, count.min(total))
        .into_iter()
        .map(|p| decode_pair(p, n))
        .collect()
}

/// Inverse of the row-major upper-triangle enumeration.
fn decode_pair(mut p: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    while p >= n - 1 - i {
        p -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + p)
}

fn rate(flags: impl Iterator<Item = bool>) -> f64 {
    let (mut ok, mut all) = (0usize, 0usize);
    for f in flags {
        all += 1;
        ok += usize::from(f);
    }
    if all == 0 {
        f64::NAN
    } else {
        ok as f64 / all as f64
    }
}

/// Runs all three checks over pairs sampled from `dataset`. The convolution
/// and pooling checks use min-max normalized coordinates; the raster check
/// uses the raw trajectories.
pub fn bound_suite(dataset: &[Trajectory], cfg: &SuiteConfig) -> Result<BoundSuite> {
    if dataset.len() < 2 {
        return Err(Error::InvalidArgument("bound suite needs at least two trajectories".into()));
    }
    let stats = geo::compute_dataset_stats(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kernel1d = Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let kernel2d = Tensor::new(vec![3, 3], (0..9).map(|_| rng.gen_range(0.1..1.0)).collect())?;

    let as_tensor = |t: &Trajectory| -> Result<Tensor> {
        let pts = geo::normalize(t, &stats.norm).points;
        let mut d: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        d.extend(pts.iter().map(|p| p[1]));
        Tensor::new(vec![2, pts.len()], d)
    };
    let pid = |i: usize, j: usize| format!("{}:{}", dataset[i].id, dataset[j].id);

    let pairs = sample_pairs(&mut rng, dataset.len(), cfg.pairs);
    let per_pair: Vec<(Conv1dBoundReport, Option<PoolBoundReport>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (x, y) = (as_tensor(&dataset[i])?, as_tensor(&dataset[j])?);
            let c = conv1d_bound(&pid(i, j), &x, &y, &kernel1d)?;
            let p = if x.shape()[1] >= cfg.pool_k && y.shape()[1] >= cfg.pool_k {
                Some(maxpool_bound(&pid(i, j), &x, &y, cfg.pool_k)?)
            } else {
                None
            };
            Ok((c, p))
        })
        .collect::<Result<_>>()?;
    let (conv1d, pool): (Vec<_>, Vec<_>) = per_pair.into_iter().unzip();
    let pool: Vec<PoolBoundReport> = pool.into_iter().flatten().collect();

    // Walk a seeded permutation of all pairs until enough meet the premise.
    let n = dataset.len();
    let total = n * (n - 1) / 2;
    let order = sample(&mut rng, total, total).into_vec();
    let mut conv2d = Vec::new();
    let mut skipped = 0;
    for chunk in order.chunks(256) {
        if conv2d.len() >= cfg.far_pairs {
            break;
        }
        let outcomes: Vec<Conv2dOutcome> = chunk
            .par_iter()
            .map(|&p| {
                let (i, j) = decode_pair(p, n);
                conv2d_bound(&pid(i, j), &dataset[i], &dataset[j], &kernel2d, cfg.delta_m)
            })
            .collect::<Result<_>>()?;
        for o in outcomes {
            if conv2d.len() >= cfg.far_pairs {
                break;
            }
            match o {
                Conv2dOutcome::Checked(r) => conv2d.push(r),
                Conv2dOutcome::PremiseNotMet { .. } => skipped += 1,
            }
        }
    }

    let changes: Vec<f64> = pool.iter().map(|r| (r.d_after - r.d_before).abs()).collect();
    let summary = SuiteSummary {
        thm1_rate: rate(conv1d.iter().map(|r| r.satisfied)),
        thm2_rate: rate(pool.iter().map(|r| r.satisfied)),
        thm3_rate: rate(conv2d.iter().map(|r| r.satisfied)),
        thm3_checked: conv2d.len(),
        thm3_premise_not_met: skipped,
        spearman_conv1d: spearman(
            &conv1d.iter().map(|r| r.d_xy).collect::<Vec<_>>(),
            &conv1d.iter().map(|r| r.actual).collect::<Vec<_>>(),
        ),
        median_pool_change: median(changes.clone()),
        max_pool_change: changes.iter().copied().fold(0.0, f64::max),
    };
    Ok(BoundSuite {
        kernel1d,
        kernel2d,
        conv1d,
        pool,
        conv2d,
        summary,
    })
}

fn kernel_line(t: &Tensor) -> String {
    t.data().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

impl BoundSuite {
    pub fn thm1_csv(&self) -> String {
        let mut s = format!(
            "# kernel-range: uniform(-1,1)\n# kernel: {}\npair_id,d_xy,lower,actual,upper,satisfied\n",
            kernel_line(&self.kernel1d)
        );
        for r in &self.conv1d {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.pair_id, r.d_xy, r.lower, r.actual, r.upper, r.satisfied);
        }
        s
    }

    pub fn thm2_csv(&self) -> String {
        let mut s = String::from("pair_id,d_before,d_after,bound,trimmed_x,trimmed_y,satisfied\n");
        for r in &self.pool {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.pair_id, r.d_before, r.d_after, r.bound, r.trimmed_x, r.trimmed_y, r.satisfied
            );
        }
        s
    }

    pub fn thm3_csv(&self) -> String {
        let mut s = format!(
            "# kernel-range: uniform(0.1,1)\n# kernel: {}\npair_id,mbr_gap,delta,n,m,kernel_norm_term,actual_euclidean,dfd,satisfied\n",
            kernel_line(&self.kernel2d)
        );
        for r in &self.conv2d {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.pair_id, r.mbr_gap, r.delta, r.n, r.m, r.kernel_norm_term, r.actual_euclidean, r.dfd, r.satisfied
            );
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        format!(
            "conv1d pairs: {}\nconv1d satisfied: {:.4}\nconv1d spearman(d_xy, actual): {:.4}\n\
             pool pairs: {}\npool satisfied: {:.4}\npool median |d_after - d_before|: {}\n\
             pool max |d_after - d_before|: {}\nconv2d pairs checked: {}\nconv2d premise not met: {}\n\
             conv2d satisfied: {:.4}\n",
            self.conv1d.len(),
            s.thm1_rate,
            s.spearman_conv1d,
            self.pool.len(),
            s.thm2_rate,
            s.median_pool_change,
            s.max_pool_change,
            s.thm3_checked,
            s.thm3_premise_not_met,
            s.thm3_rate,
        )
    }

    /// Writes `thm1.csv`, `thm2.csv`, `thm3.csv` and `summary.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("thm1.csv", self.thm1_csv()),
            ("thm2.csv", self.thm2_csv()),
            ("thm3.csv", self.thm3_csv()),
            ("summary.txt", self.summary_text()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Single-point trajectory helper for raster checks.
pub fn point_trajectory(id: &str, lat: f64, lon: f64) -> Result<Trajectory> {
    Trajectory::new(id, vec![GeoPoint::new(lat, lon)?])
}
