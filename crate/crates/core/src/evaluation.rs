//! kNN evaluation: exact ground truth from a distance measure, Euclidean
//! linear scan in embedding space, and the HR@k and R10@50 overlap metrics.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::{self, NormalizationParams, NormalizedTrajectory, Trajectory};
use crate::io::{self, EmbeddingSet};
use crate::measures::{pairwise_matrix, DistanceMatrix, MeasureKind};
use crate::model::Encoder;

/// Candidates in ascending distance to the query, ties broken by smaller id.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_id: String,
    pub ranked: Vec<(String, f64)>,
}

impl QueryResult {
    pub fn ids(&self) -> Vec<&str> {
        self.ranked.iter().map(|(id, _)| id.as_str()).collect()
    }
}

/// Top `k` of `(id, distance)` pairs.
pub fn rank_top_k(query_id: &str, ids: &[String], dists: &[f64], k: usize) -> Result<QueryResult> {
    if k > ids.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} candidates",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let cmp = |&a: &usize, &b: &usize| dists[a].total_cmp(&dists[b]).then_with(|| ids[a].cmp(&ids[b]));
    if k < order.len() && k > 0 {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    order.truncate(k);
    Ok(QueryResult {
        query_id: query_id.to_string(),
        ranked: order.into_iter().map(|i| (ids[i].clone(), dists[i])).collect(),
    })
}

pub fn ground_truth_topk(
    query: &NormalizedTrajectory,
    candidates: &[NormalizedTrajectory],
    measure: MeasureKind,
    k: usize,
) -> Result<QueryResult> {
    let dists = candidates
        .iter()
        .map(|c| measure.distance(&query.points, &c.points))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = candidates.iter().map(|c| c.id.clone()).collect();
    rank_top_k(&query.id, &ids, &dists, k)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn embedding_distances(query: &[f64], candidates: &EmbeddingSet) -> Vec<f64> {
    (0..candidates.len()).map(|i| euclid(query, candidates.row(i))).collect()
}

pub fn embedding_topk(query_id: &str, query: &[f64], candidates: &EmbeddingSet, k: usize) -> Result<QueryResult> {
    if query.len() != candidates.dim {
        return Err(Error::ShapeMismatch {
            op: "embedding_topk",
            left: vec![query.len()],
            right: vec![candidates.dim],
        });
    }
    rank_top_k(query_id, &candidates.ids, &embedding_distances(query, candidates), k)
}

fn overlap<S: AsRef<str>, T: AsRef<str>>(truth: &[S], predicted: &[T]) -> usize {
    truth
        .iter()
        .filter(|t| predicted.iter().any(|p| p.as_ref() == t.as_ref()))
        .count()
}

/// Share of `truth` found in `predicted`; `k` is `truth.len()`.
pub fn hit_rate<S: AsRef<str>, T: AsRef<str>>(truth: &[S], predicted: &[T]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    overlap(truth, predicted) as f64 / truth.len() as f64
}

/// Share of the true top 10 recovered by the predicted top 50.
pub fn recall_10_at_50<S: AsRef<str>, T: AsRef<str>>(truth_top10: &[S], predicted_top50: &[T]) -> f64 {
    hit_rate(truth_top10, predicted_top50)
}

/// Anything that maps a trajectory to a fixed-length vector.
pub trait TrajectoryEncoder: Sync {
    fn embed(&self, t: &Trajectory) -> Result<Vec<f64>>;
}

impl TrajectoryEncoder for Encoder {
    fn embed(&self, t: &Trajectory) -> Result<Vec<f64>> {
        self.encode(t)
    }
}

pub fn embed_all<E: TrajectoryEncoder + ?Sized>(enc: &E, ts: &[Trajectory]) -> Result<EmbeddingSet> {
    let rows: Vec<Vec<f64>> = ts.par_iter().map(|t| enc.embed(t)).collect::<Result<_>>()?;
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidArgument("encoder produced vectors of differing length".into()));
    }
    EmbeddingSet::new(ts.iter().map(|t| t.id.clone()).collect(), dim, rows.concat())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: String,
    /// One entry per requested k, same order as [`EvalReport::ks`].
    pub hr: Vec<f64>,
    pub r10at50: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub measure: MeasureKind,
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub r10at50: f64,
    pub per_query: Vec<QueryMetrics>,
    /// Exact measure over all query/candidate pairs plus ranking.
    pub gt_seconds: f64,
    pub gt_cached: bool,
    /// Encoding the queries plus the linear scans.
    pub emb_seconds: f64,
    /// Encoding the candidate set once.
    pub index_seconds: f64,
}

impl EvalReport {
    /// `measure,k,hr,r10at50` with no timing columns.
    pub fn csv(&self) -> String {
        let mut s = String::from("measure,k,hr,r10at50\n");
        for (k, hr) in self.ks.iter().zip(&self.hr) {
            let _ = writeln!(s, "{},{},{},{}", self.measure.name(), k, hr, self.r10at50);
        }
        s
    }

    /// `measure,k,hr,r10at50,gt_seconds,emb_seconds`.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("measure,k,hr,r10at50,gt_seconds,emb_seconds\n");
        for (k, hr) in self.ks.iter().zip(&self.hr) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                self.measure.name(),
                k,
                hr,
                self.r10at50,
                self.gt_seconds,
                self.emb_seconds
            );
        }
        s
    }

    pub fn text(&self) -> String {
        let mut s = format!("measure: {}\nqueries: {}\n", self.measure, self.per_query.len());
        for (k, hr) in self.ks.iter().zip(&self.hr) {
            let _ = writeln!(s, "HR@{k}: {hr:.4}");
        }
        let _ = writeln!(s, "R10@50: {:.4}", self.r10at50);
        let _ = writeln!(
            s,
            "ground truth: {:.3}s{}\nembedding search: {:.3}s (candidate encoding {:.3}s)",
            self.gt_seconds,
            if self.gt_cached { " (cached)" } else { "" },
            self.emb_seconds,
            self.index_seconds
        );
        s
    }

    pub fn per_query_csv(&self) -> String {
        let mut s = String::from("query_id");
        for k in &self.ks {
            let _ = write!(s, ",hr@{k}");
        }
        s.push_str(",r10at50\n");
        for q in &self.per_query {
            s.push_str(&q.query_id);
            for v in &q.hr {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{}", q.r10at50);
        }
        s
    }
}

pub struct EvalOptions<'a> {
    pub measure: MeasureKind,
    pub ks: Vec<usize>,
    /// Normalization applied before the exact measure.
    pub norm: NormalizationParams,
    /// A precomputed query x candidate matrix to use instead of recomputing.
    pub ground_truth: Option<&'a DistanceMatrix>,
}

pub fn evaluate<E: TrajectoryEncoder + ?Sized>(
    encoder: &E,
    queries: &[Trajectory],
    candidates: &[Trajectory],
    opts: &EvalOptions<'_>,
) -> Result<EvalReport> {
    if queries.is_empty() || candidates.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if opts.ks.is_empty() {
        return Err(Error::InvalidArgument("no k values to evaluate".into()));
    }
    let max_k = *opts.ks.iter().max().expect("nonempty");
    if max_k > candidates.len() || max_k == 0 {
        return Err(Error::InvalidArgument(format!(
            "k = {max_k} is out of range for {} candidates",
            candidates.len()
        )));
    }
    let cand_ids: Vec<String> = candidates.iter().map(|t| t.id.clone()).collect();
    let truth_k = max_k.max(10).min(candidates.len());
    let pred_k = max_k.max(50).min(candidates.len());

    let start = Instant::now();
    let computed;
    let gt = match opts.ground_truth {
        Some(dm) => {
            let rows_ok = dm.rows() == queries.len() && dm.row_ids.iter().zip(queries).all(|(a, b)| *a == b.id);
            if !rows_ok || dm.col_ids != cand_ids || dm.measure != opts.measure {
                return Err(Error::InvalidArgument(
                    "cached ground truth does not match the query/candidate sets".into(),
                ));
            }
            dm
        }
        None => {
            let nq: Vec<_> = queries.iter().map(|t| geo::normalize(t, &opts.norm)).collect();
            let nc: Vec<_> = candidates.iter().map(|t| geo::normalize(t, &opts.norm)).collect();
            computed = pairwise_matrix(&nq, &nc, opts.measure)?;
            &computed
        }
    };
    let truth: Vec<QueryResult> = (0..queries.len())
        .into_par_iter()
        .map(|i| rank_top_k(&queries[i].id, &cand_ids, gt.row(i), truth_k))
        .collect::<Result<_>>()?;
    let gt_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let index = embed_all(encoder, candidates)?;
    let index_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let predicted: Vec<QueryResult> = queries
        .par_iter()
        .map(|q| {
            let v = encoder.embed(q)?;
            embedding_topk(&q.id, &v, &index, pred_k)
        })
        .collect::<Result<_>>()?;
    let emb_seconds = start.elapsed().as_secs_f64();

    let per_query: Vec<QueryMetrics> = queries
        .iter()
        .zip(truth.iter().zip(&predicted))
        .map(|(q, (t, p))| {
            let (t, p) = (t.ids(), p.ids());
            QueryMetrics {
                query_id: q.id.clone(),
                hr: opts.ks.iter().map(|&k| hit_rate(&t[..k], &p[..k])).collect(),
                r10at50: recall_10_at_50(&t[..10.min(t.len())], &p),
            }
        })
        .collect();
    let n = per_query.len() as f64;
    let hr = (0..opts.ks.len())
        .map(|j| per_query.iter().map(|q| q.hr[j]).sum::<f64>() / n)
        .collect();
    let r10at50 = per_query.iter().map(|q| q.r10at50).sum::<f64>() / n;
    Ok(EvalReport {
        measure: opts.measure,
        ks: opts.ks.clone(),
        hr,
        r10at50,
        per_query,
        gt_seconds,
        gt_cached: opts.ground_truth.is_some(),
        emb_seconds,
        index_seconds,
    })
}

/// Hex SHA-256 over the normalized coordinates of both sets and the measure.
pub fn ground_truth_key(rows: &[NormalizedTrajectory], cols: &[NormalizedTrajectory], measure: MeasureKind) -> String {
    let mut h = Sha256::new();
    for set in [rows, cols] {
        h.update((set.len() as u64).to_le_bytes());
        for t in set {
            h.update((t.id.len() as u64).to_le_bytes());
            h.update(t.id.as_bytes());
            h.update((t.points.len() as u64).to_le_bytes());
            for p in &t.points {
                h.update(p[0].to_le_bytes());
                h.update(p[1].to_le_bytes());
            }
        }
    }
    h.update(measure.tag().to_le_bytes());
    h.update(measure.param().to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads `<cache_dir>/<key>.tsdm` if present, otherwise computes and stores
/// it. The flag is true on a cache hit.
pub fn cached_pairwise(
    cache_dir: &Path,
    rows: &[NormalizedTrajectory],
    cols: &[NormalizedTrajectory],
    measure: MeasureKind,
) -> Result<(DistanceMatrix, bool)> {
    let key = ground_truth_key(rows, cols, measure);
    let path = cache_dir.join(format!("{key}.tsdm"));
    if path.exists() {
        let dm = io::load_distance_matrix(&path)?;
        return Ok((dm, true));
    }
    let dm = pairwise_matrix(rows, cols, measure)?;
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    io::save_distance_matrix(&path, &dm)?;
    Ok((dm, false))
}
