//! Exact trajectory distance measures over normalized points.
//!
//! All four measures use quadratic dynamic programs (Hausdorff uses an
//! early-abandoning double scan). [`oracle`] holds exponential reference
//! implementations for small inputs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{NormalizedTrajectory, Point};

/// Default EDR match threshold in normalized units.
pub const DEFAULT_EDR_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureKind {
    Dfd,
    Dtw,
    Hausdorff,
    Edr { epsilon: f64 },
}

impl MeasureKind {
    /// Parses `dfd`, `dtw`, `hausdorff` or `edr`; `epsilon` only applies to EDR.
    pub fn parse(name: &str, epsilon: f64) -> Result<Self> {
        let kind = match name.to_ascii_lowercase().as_str() {
            "dfd" | "frechet" => MeasureKind::Dfd,
            "dtw" => MeasureKind::Dtw,
            "hausdorff" => MeasureKind::Hausdorff,
            "edr" => MeasureKind::Edr { epsilon },
            other => return Err(Error::InvalidArgument(format!("unknown measure `{other}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        if let MeasureKind::Edr { epsilon } = *self {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "EDR threshold must be positive, got {epsilon}"
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            MeasureKind::Dfd => "dfd",
            MeasureKind::Dtw => "dtw",
            MeasureKind::Hausdorff => "hausdorff",
            MeasureKind::Edr { .. } => "edr",
        }
    }

    pub fn tag(&self) -> u32 {
        match self {
            MeasureKind::Dfd => 0,
            MeasureKind::Dtw => 1,
            MeasureKind::Hausdorff => 2,
            MeasureKind::Edr { .. } => 3,
        }
    }

    /// The measure's numeric parameter (EDR threshold, zero otherwise).
    pub fn param(&self) -> f64 {
        match self {
            MeasureKind::Edr { epsilon } => *epsilon,
            _ => 0.0,
        }
    }

    pub fn from_tag(tag: u32, param: f64) -> Result<Self> {
        match tag {
            0 => Ok(MeasureKind::Dfd),
            1 => Ok(MeasureKind::Dtw),
            2 => Ok(MeasureKind::Hausdorff),
            3 => {
                let kind = MeasureKind::Edr { epsilon: param };
                kind.validate()?;
                Ok(kind)
            }
            t => Err(Error::Format(format!("unknown measure tag {t}"))),
        }
    }

    pub fn distance(&self, a: &[Point], b: &[Point]) -> Result<f64> {
        match *self {
            MeasureKind::Dfd => dfd(a, b),
            MeasureKind::Dtw => dtw(a, b),
            MeasureKind::Hausdorff => hausdorff(a, b),
            MeasureKind::Edr { epsilon } => edr(a, b, epsilon).map(|c| c as f64),
        }
    }
}

impl std::fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeasureKind::Edr { epsilon } => write!(f, "edr(eps={epsilon})"),
            other => f.write_str(other.name()),
        }
    }
}

#[inline]
pub fn euclidean(p: &Point, q: &Point) -> f64 {
    let a = p[0] - q[0];
    let b = p[1] - q[1];
    (a * a + b * b).sqrt()
}

/// Euclidean distance between equal-length slices.
#[inline]
pub fn euclidean_slices(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn check_nonempty<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        Err(Error::EmptyTrajectory(None))
    } else {
        Ok(())
    }
}

/// Discrete Fréchet distance under an arbitrary ground distance.
pub fn dfd_by<T, F>(a: &[T], b: &[T], dist: F) -> Result<f64>
where
    F: Fn(&T, &T) -> f64,
{
    check_nonempty(a, b)?;
    let m = b.len();
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = dist(p, q);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => d.max(cur[j - 1]),
                (_, 0) => d.max(prev[0]),
                _ => d.max(prev[j].min(cur[j - 1]).min(prev[j - 1])),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

pub fn dfd(a: &[Point], b: &[Point]) -> Result<f64> {
    dfd_by(a, b, euclidean)
}

pub fn dtw(a: &[Point], b: &[Point]) -> Result<f64> {
    check_nonempty(a, b)?;
    let m = b.len();
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = euclidean(p, q);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => d + cur[j - 1],
                (_, 0) => d + prev[0],
                _ => d + prev[j].min(cur[j - 1]).min(prev[j - 1]),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Directed Hausdorff distance with early abandoning: the inner scan stops
/// once a point closer than the running maximum is found.
fn directed_hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let mut cmax = 0.0f64;
    for p in a {
        let mut cmin = f64::INFINITY;
        for q in b {
            let d = euclidean(p, q);
            if d < cmin {
                cmin = d;
                if cmin < cmax {
                    break;
                }
            }
        }
        if cmin > cmax {
            cmax = cmin;
        }
    }
    cmax
}

pub fn hausdorff(a: &[Point], b: &[Point]) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

#[inline]
pub(crate) fn edr_match(p: &Point, q: &Point, epsilon: f64) -> bool {
    (p[0] - q[0]).abs() <= epsilon && (p[1] - q[1]).abs() <= epsilon
}

/// Edit distance on real sequences with a per-axis match threshold.
pub fn edr(a: &[Point], b: &[Point], epsilon: f64) -> Result<usize> {
    MeasureKind::Edr { epsilon }.validate()?;
    let m = b.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for (i, p) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, q) in b.iter().enumerate() {
            let sub = if edr_match(p, q, epsilon) { 0 } else { 1 };
            cur[j + 1] = (prev[j] + sub).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Dense ground-truth distances between two trajectory sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub measure: MeasureKind,
    /// Row-major, `row_ids.len() * col_ids.len()` entries.
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }
}

/// Computes every `(row, col)` distance, parallel over rows. The result does
/// not depend on scheduling.
pub fn pairwise_matrix(
    rows: &[NormalizedTrajectory],
    cols: &[NormalizedTrajectory],
    measure: MeasureKind,
) -> Result<DistanceMatrix> {
    measure.validate()?;
    let per_row: Vec<Result<Vec<f64>>> = rows
        .par_iter()
        .enumerate()
        .map(|(r, a)| {
            cols.iter()
                .enumerate()
                .map(|(c, b)| {
                    measure.distance(&a.points, &b.points).map_err(|e| Error::Pair {
                        row: r,
                        col: c,
                        source: Box::new(e),
                    })
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(rows.len() * cols.len());
    for row in per_row {
        data.extend(row?);
    }
    Ok(DistanceMatrix {
        row_ids: rows.iter().map(|t| t.id.clone()).collect(),
        col_ids: cols.iter().map(|t| t.id.clone()).collect(),
        measure,
        data,
    })
}

/// Distances within one set. Every measure here is symmetric, so only the
/// upper triangle is computed and mirrored; entries are bit-identical to
/// [`pairwise_matrix`] on the same set.
pub fn pairwise_within(set: &[NormalizedTrajectory], measure: MeasureKind) -> Result<DistanceMatrix> {
    measure.validate()?;
    let n = set.len();
    let upper: Vec<Result<Vec<f64>>> = set
        .par_iter()
        .enumerate()
        .map(|(r, a)| {
            set[r + 1..]
                .iter()
                .enumerate()
                .map(|(o, b)| {
                    measure.distance(&a.points, &b.points).map_err(|e| Error::Pair {
                        row: r,
                        col: r + 1 + o,
                        source: Box::new(e),
                    })
                })
                .collect()
        })
        .collect();
    let mut data = vec![0.0; n * n];
    for (r, row) in upper.into_iter().enumerate() {
        for (o, v) in row?.into_iter().enumerate() {
            let c = r + 1 + o;
            data[r * n + c] = v;
            data[c * n + r] = v;
        }
    }
    // the diagonal is a self-distance, which every measure defines as 0
    let ids: Vec<String> = set.iter().map(|t| t.id.clone()).collect();
    Ok(DistanceMatrix {
        row_ids: ids.clone(),
        col_ids: ids,
        measure,
        data,
    })
}

/// Exponential reference implementations that evaluate each measure's
/// definition directly, without memoization.
pub mod oracle {
    use super::*;

    pub const MAX_LEN: usize = 8;

    /// Visits every coupling from `(0, 0)` to `(n-1, m-1)`, folding the point
    /// costs along the path with `fold`, and returns the minimum over paths.
    fn min_over_couplings(
        a: &[Point],
        b: &[Point],
        fold: &dyn Fn(f64, f64) -> f64,
    ) -> f64 {
        fn walk(
            a: &[Point],
            b: &[Point],
            i: usize,
            j: usize,
            acc: f64,
            fold: &dyn Fn(f64, f64) -> f64,
        ) -> f64 {
            if i == a.len() - 1 && j == b.len() - 1 {
                return acc;
            }
            let mut best = f64::INFINITY;
            for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
                let (ni, nj) = (i + di, j + dj);
                if ni < a.len() && nj < b.len() {
                    let next = fold(acc, euclidean(&a[ni], &b[nj]));
                    best = best.min(walk(a, b, ni, nj, next, fold));
                }
            }
            best
        }
        walk(a, b, 0, 0, euclidean(&a[0], &b[0]), fold)
    }

    fn edr_rec(a: &[Point], b: &[Point], eps: f64) -> usize {
        match (a.len(), b.len()) {
            (0, m) => m,
            (n, 0) => n,
            (n, m) => {
                let sub = if edr_match(&a[n - 1], &b[m - 1], eps) { 0 } else { 1 };
                (edr_rec(&a[..n - 1], &b[..m - 1], eps) + sub)
                    .min(edr_rec(&a[..n - 1], b, eps) + 1)
                    .min(edr_rec(a, &b[..m - 1], eps) + 1)
            }
        }
    }

    pub fn brute_force(a: &[Point], b: &[Point], measure: MeasureKind) -> Result<f64> {
        check_nonempty(a, b)?;
        if a.len() > MAX_LEN || b.len() > MAX_LEN {
            return Err(Error::OracleCap {
                n: a.len(),
                m: b.len(),
                cap: MAX_LEN,
            });
        }
        measure.validate()?;
        Ok(match measure {
            MeasureKind::Dfd => min_over_couplings(a, b, &|acc, d| acc.max(d)),
            MeasureKind::Dtw => min_over_couplings(a, b, &|acc, d| acc + d),
            MeasureKind::Hausdorff => {
                let directed = |x: &[Point], y: &[Point]| {
                    let mut worst = 0.0f64;
                    for p in x {
                        let mut best = f64::INFINITY;
                        for q in y {
                            best = best.min(euclidean(p, q));
                        }
                        worst = worst.max(best);
                    }
                    worst
                };
                directed(a, b).max(directed(b, a))
            }
            MeasureKind::Edr { epsilon } => edr_rec(a, b, epsilon) as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Point> {
        let n = rng.gen_range(1..=max_len);
        (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
    }

    #[test]
    fn dfd_examples() {
        let t = vec![[0.1, 0.2], [0.4, 0.3], [0.9, 0.9]];
        assert_eq!(dfd(&t, &t).unwrap(), 0.0);
        let a = [[0.0, 0.0], [1.0, 0.0]];
        let b = [[0.0, 1.0], [1.0, 1.0]];
        assert_eq!(dfd(&a, &b).unwrap(), 1.0);
        assert_eq!(oracle::brute_force(&a, &b, MeasureKind::Dfd).unwrap(), 1.0);
        let a = [[0.0, 0.0]];
        let b = [[0.0, 0.0], [0.0, 2.0]];
        assert_eq!(dfd(&a, &b).unwrap(), 2.0);
        assert_eq!(oracle::brute_force(&a, &b, MeasureKind::Dfd).unwrap(), 2.0);
        assert!(dfd(&[], &b).is_err());
    }

    #[test]
    fn dtw_examples() {
        let t = vec![[0.1, 0.2], [0.4, 0.3]];
        assert_eq!(dtw(&t, &t).unwrap(), 0.0);
        assert_eq!(dtw(&[[0.0, 0.0]], &[[3.0, 4.0]]).unwrap(), 5.0);
        let a = [[0.0, 0.0], [0.0, 1.0]];
        let b = [[0.0, 0.0]];
        assert_eq!(dtw(&a, &b).unwrap(), 1.0);
        assert_eq!(oracle::brute_force(&a, &b, MeasureKind::Dtw).unwrap(), 1.0);
        assert!(dtw(&a, &[]).is_err());
    }

    #[test]
    fn hausdorff_examples() {
        let t = vec![[0.1, 0.2], [0.4, 0.3]];
        assert_eq!(hausdorff(&t, &t).unwrap(), 0.0);
        assert_eq!(hausdorff(&[[0.0, 0.0]], &[[3.0, 4.0]]).unwrap(), 5.0);
        let a = [[0.0, 0.0], [0.0, 2.0]];
        let b = [[0.0, 1.0]];
        assert_eq!(hausdorff(&a, &b).unwrap(), 1.0);
        assert!(hausdorff(&[], &b).is_err());
    }

    #[test]
    fn edr_examples() {
        let t = vec![[0.1, 0.2], [0.4, 0.3], [0.5, 0.5]];
        assert_eq!(edr(&t, &t, 0.01).unwrap(), 0);
        assert_eq!(edr(&t[..1], &t[..1], 1e-6).unwrap(), 0);
        let a = [[0.0, 0.0], [1.0, 1.0]];
        let b = [[0.0, 0.0], [2.0, 2.0]];
        assert_eq!(edr(&a, &b, 0.5).unwrap(), 1);
        assert_eq!(
            oracle::brute_force(&a, &b, MeasureKind::Edr { epsilon: 0.5 }).unwrap(),
            1.0
        );
        assert!(edr(&a, &b, 0.0).is_err());
        assert!(edr(&a, &b, -1.0).is_err());
    }

    #[test]
    fn measure_parsing() {
        assert_eq!(MeasureKind::parse("DFD", 0.0).unwrap(), MeasureKind::Dfd);
        assert_eq!(
            MeasureKind::parse("edr", 0.02).unwrap(),
            MeasureKind::Edr { epsilon: 0.02 }
        );
        assert!(MeasureKind::parse("edr", 0.0).is_err());
        assert!(MeasureKind::parse("lcss", 0.1).is_err());
        for kind in [
            MeasureKind::Dfd,
            MeasureKind::Dtw,
            MeasureKind::Hausdorff,
            MeasureKind::Edr { epsilon: 0.3 },
        ] {
            assert_eq!(MeasureKind::from_tag(kind.tag(), kind.param()).unwrap(), kind);
        }
    }

    #[test]
    fn oracle_cap() {
        let long = vec![[0.0, 0.0]; 9];
        assert!(matches!(
            oracle::brute_force(&long, &long, MeasureKind::Dfd),
            Err(Error::OracleCap { .. })
        ));
    }

    #[test]
    fn oracles_match_dp_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let measures = [
            MeasureKind::Dfd,
            MeasureKind::Dtw,
            MeasureKind::Hausdorff,
            MeasureKind::Edr { epsilon: 0.25 },
        ];
        for _ in 0..200 {
            let a = random_traj(&mut rng, 6);
            let b = random_traj(&mut rng, 6);
            for m in measures {
                assert_eq!(
                    m.distance(&a, &b).unwrap(),
                    oracle::brute_force(&a, &b, m).unwrap(),
                    "{m} on {a:?} vs {b:?}"
                );
            }
        }
    }

    #[test]
    fn pairwise_examples() {
        let t = |id: &str, p: Vec<Point>| NormalizedTrajectory { id: id.into(), points: p };
        let a = t("a", vec![[0.0, 0.0], [1.0, 0.0]]);
        let b = t("b", vec![[0.0, 1.0], [1.0, 1.0]]);
        let single = pairwise_matrix(std::slice::from_ref(&a), std::slice::from_ref(&a), MeasureKind::Dfd).unwrap();
        assert_eq!(single.data, vec![0.0]);
        let m = pairwise_matrix(&[a.clone(), b.clone()], &[a, b], MeasureKind::Dfd).unwrap();
        assert_eq!(m.data, vec![0.0, 1.0, 1.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set: Vec<_> = (0..5)
            .map(|i| t(&format!("r{i}"), random_traj(&mut rng, 12)))
            .collect();
        for kind in [MeasureKind::Dtw, MeasureKind::Hausdorff, MeasureKind::Edr { epsilon: 0.1 }] {
            let m = pairwise_matrix(&set, &set, kind).unwrap();
            for r in 0..5 {
                assert_eq!(m.get(r, r), 0.0);
                for c in 0..5 {
                    assert_eq!(m.get(r, c), m.get(c, r));
                    assert_eq!(m.get(r, c), kind.distance(&set[r].points, &set[c].points).unwrap());
                }
            }
        }
    }

    #[test]
    fn pairwise_attaches_indices() {
        let a = NormalizedTrajectory { id: "a".into(), points: vec![[0.0, 0.0]] };
        let empty = NormalizedTrajectory { id: "e".into(), points: vec![] };
        let err = pairwise_matrix(std::slice::from_ref(&a), &[a.clone(), empty], MeasureKind::Dfd).unwrap_err();
        assert!(matches!(err, Error::Pair { row: 0, col: 1, .. }));
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| [a, b]), 1..max)
    }

    proptest! {
        #[test]
        fn measures_symmetric_and_reflexive(a in arb_points(15), b in arb_points(15)) {
            for m in [MeasureKind::Dfd, MeasureKind::Dtw, MeasureKind::Hausdorff, MeasureKind::Edr { epsilon: 0.05 }] {
                prop_assert_eq!(m.distance(&a, &b).unwrap(), m.distance(&b, &a).unwrap());
                prop_assert_eq!(m.distance(&a, &a).unwrap(), 0.0);
            }
        }

        #[test]
        fn dfd_triangle_and_hausdorff_order(a in arb_points(12), b in arb_points(12), c in arb_points(12)) {
            let ab = dfd(&a, &b).unwrap();
            let ac = dfd(&a, &c).unwrap();
            let cb = dfd(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
            prop_assert!(ab >= hausdorff(&a, &b).unwrap());
            prop_assert!(ab <= 2f64.sqrt());
            prop_assert!(hausdorff(&a, &b).unwrap() <= 2f64.sqrt());
        }

        #[test]
        fn edr_bounded_by_longer_length(a in arb_points(15), b in arb_points(15)) {
            let e = edr(&a, &b, 0.05).unwrap();
            prop_assert!(e <= a.len().max(b.len()));
        }

        #[test]
        fn dp_matches_oracle_up_to_eight(a in arb_points(9), b in arb_points(9)) {
            for m in [MeasureKind::Dfd, MeasureKind::Dtw, MeasureKind::Hausdorff, MeasureKind::Edr { epsilon: 0.3 }] {
                prop_assert_eq!(m.distance(&a, &b).unwrap(), oracle::brute_force(&a, &b, m).unwrap());
            }
        }
    }

    #[test]
    fn within_matches_full_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let set: Vec<NormalizedTrajectory> = (0..9)
            .map(|i| NormalizedTrajectory {
                id: format!("n{i}"),
                points: (0..rng.gen_range(1..12)).map(|_| [rng.gen(), rng.gen()]).collect(),
            })
            .collect();
        for m in [MeasureKind::Dfd, MeasureKind::Dtw, MeasureKind::Hausdorff, MeasureKind::Edr { epsilon: 0.2 }] {
            let full = pairwise_matrix(&set, &set, m).unwrap();
            let half = pairwise_within(&set, m).unwrap();
            let bits = |d: &DistanceMatrix| d.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&full), bits(&half), "{m}");
        }
    }
}
