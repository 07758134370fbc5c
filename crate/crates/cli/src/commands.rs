//! One function per subcommand. Every file is written under `out_dir`.
//!
//! Layout:
//!
//! ```text
//! synthetic.txt                      gen-synthetic
//! dataset/{all,train,query,candidate}.txt, dataset/stats.txt
//! ground_truth/{train,eval}.tsdm
//! model.bin, train_log.csv, checkpoints/epoch_NNNN.bin (epochs completed)
//! embeddings/{train,query,candidate}.tsem
//! eval.csv, eval_per_query.csv
//! bounds/{thm1,thm2,thm3}.csv, bounds/summary.txt
//! timings/*                           wall-clock numbers only
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajsim::bounds::{bound_suite, SuiteConfig};
use trajsim::evaluation::{self, embed_all, EvalOptions};
use trajsim::geo::{self, compute_dataset_stats, DatasetStats, Mbr, NormalizationParams, RasterConfig};
use trajsim::io::{self, IngestFilter};
use trajsim::model::{init_model, load_model, save_model};
use trajsim::synthetic::{generate, SyntheticConfig};
use trajsim::training::{moving_average, train};
use trajsim::{measures, DistanceMatrix, Encoder, Trajectory};

use crate::config::ExperimentConfig;

pub const SPLITS: [&str; 3] = ["train", "query", "candidate"];

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Layout {
            root: cfg.out_dir.clone(),
        }
    }
    pub fn synthetic(&self) -> PathBuf {
        self.root.join("synthetic.txt")
    }
    pub fn dataset(&self, name: &str) -> PathBuf {
        self.root.join("dataset").join(format!("{name}.txt"))
    }
    pub fn stats(&self) -> PathBuf {
        self.root.join("dataset").join("stats.txt")
    }
    pub fn ground_truth(&self, name: &str) -> PathBuf {
        self.root.join("ground_truth").join(format!("{name}.tsdm"))
    }
    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.bin")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.csv")
    }
    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("epoch_{epoch:04}.bin"))
    }
    pub fn embeddings(&self, split: &str) -> PathBuf {
        self.root.join("embeddings").join(format!("{split}.tsem"))
    }
    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval.csv")
    }
    pub fn eval_per_query(&self) -> PathBuf {
        self.root.join("eval_per_query.csv")
    }
    pub fn bounds(&self) -> PathBuf {
        self.root.join("bounds")
    }
    pub fn timing(&self, name: &str) -> PathBuf {
        self.root.join("timings").join(name)
    }
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn require(path: &Path, hint: &str) -> Result<()> {
    ensure!(path.exists(), "missing {} (run `{hint}` first)", path.display());
    Ok(())
}

fn read_split(layout: &Layout, name: &str) -> Result<Vec<Trajectory>> {
    let p = layout.dataset(name);
    require(&p, "ingest")?;
    Ok(io::read_trajectories(&p)?)
}

/// Dataset rectangle and longest length as recorded by `ingest`.
pub fn read_stats(layout: &Layout) -> Result<DatasetStats> {
    let p = layout.stats();
    require(&p, "ingest")?;
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    let get = |key: &str| -> Result<&str> {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| anyhow!("{}: missing `{key}`", p.display()))
    };
    let f = |key: &str| -> Result<f64> { Ok(get(key)?.parse::<f64>()?) };
    let mbr = Mbr::new(f("min_lat")?, f("max_lat")?, f("min_lon")?, f("max_lon")?)?;
    Ok(DatasetStats {
        mbr,
        norm: NormalizationParams::from_mbr(&mbr)?,
        max_length: get("max_length")?.parse()?,
    })
}

pub fn gen_synthetic(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let syn = SyntheticConfig::new(cfg.syn_count, cfg.syn_min_len, cfg.syn_max_len, cfg.seed);
    let ts = generate(&syn)?;
    let path = Layout::new(cfg).synthetic();
    ensure_parent(&path)?;
    io::save_trajectories(&path, &ts)?;
    Ok(path)
}

pub fn ingest(cfg: &ExperimentConfig) -> Result<String> {
    let layout = Layout::new(cfg);
    let raw = cfg
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("no input file; set `data=` or pass --data"))?;
    let all = io::read_trajectories(raw).with_context(|| format!("ingesting {}", raw.display()))?;
    let read = all.len();
    let filter = IngestFilter {
        min_len: cfg.min_len,
        area: cfg.area,
    };
    let short = all.iter().filter(|t| t.len() < cfg.min_len).count();
    let kept = filter.apply(all);
    if kept.is_empty() {
        bail!("no trajectories left after filtering {read} records");
    }
    let wanted = cfg.train_size + cfg.query_size + cfg.candidate_size;
    ensure!(
        wanted <= kept.len(),
        "split sizes {}+{}+{} exceed the {} trajectories kept",
        cfg.train_size,
        cfg.query_size,
        cfg.candidate_size,
        kept.len()
    );
    let mut ids: Vec<String> = kept.iter().map(|t| t.id.clone()).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("duplicate trajectory id `{}`", w[0]);
    }

    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let sizes = [cfg.train_size, cfg.query_size, cfg.candidate_size];
    let mut at = 0;
    ensure_parent(&layout.dataset("all"))?;
    for (name, size) in SPLITS.iter().zip(sizes) {
        let part: Vec<Trajectory> = order[at..at + size].iter().map(|&i| kept[i].clone()).collect();
        io::save_trajectories(&layout.dataset(name), &part)?;
        at += size;
    }
    io::save_trajectories(&layout.dataset("all"), &kept)?;

    let stats = compute_dataset_stats(&kept)?;
    let m = stats.mbr;
    let raster = RasterConfig::new(m, cfg.delta_m)?;
    let mut s = String::new();
    for (k, v) in [
        ("read", read.to_string()),
        ("dropped_short", short.to_string()),
        ("dropped_area", (read - short - kept.len()).to_string()),
        ("kept", kept.len().to_string()),
        ("train", cfg.train_size.to_string()),
        ("query", cfg.query_size.to_string()),
        ("candidate", cfg.candidate_size.to_string()),
        ("max_length", stats.max_length.to_string()),
        ("min_lat", m.min_lat.to_string()),
        ("max_lat", m.max_lat.to_string()),
        ("min_lon", m.min_lon.to_string()),
        ("max_lon", m.max_lon.to_string()),
        ("grid_rows", raster.rows.to_string()),
        ("grid_cols", raster.cols.to_string()),
    ] {
        let _ = writeln!(s, "{k}={v}");
    }
    write_file(&layout.stats(), &s)?;
    Ok(s)
}

fn normalized(ts: &[Trajectory], norm: &NormalizationParams) -> Vec<geo::NormalizedTrajectory> {
    ts.iter().map(|t| geo::normalize(t, norm)).collect()
}

pub fn ground_truth(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(cfg);
    let measure = cfg.measure_kind()?;
    let stats = read_stats(&layout)?;
    let train_set = read_split(&layout, "train")?;
    let queries = read_split(&layout, "query")?;
    let candidates = read_split(&layout, "candidate")?;

    let start = Instant::now();
    let dm = measures::pairwise_within(&normalized(&train_set, &stats.norm), measure)?;
    let train_s = start.elapsed().as_secs_f64();
    save_matrix(&layout.ground_truth("train"), &dm)?;

    let start = Instant::now();
    let dm = measures::pairwise_matrix(
        &normalized(&queries, &stats.norm),
        &normalized(&candidates, &stats.norm),
        measure,
    )?;
    let eval_s = start.elapsed().as_secs_f64();
    save_matrix(&layout.ground_truth("eval"), &dm)?;

    write_file(
        &layout.timing("ground_truth.csv"),
        format!("matrix,seconds\ntrain,{train_s}\neval,{eval_s}\n"),
    )
}

fn save_matrix(path: &Path, dm: &DistanceMatrix) -> Result<()> {
    ensure_parent(path)?;
    Ok(io::save_distance_matrix(path, dm)?)
}

fn load_matching_matrix(path: &Path, rows: &[Trajectory], cols: &[Trajectory], cfg: &ExperimentConfig) -> Result<DistanceMatrix> {
    let dm = io::load_distance_matrix(path)?;
    let measure = cfg.measure_kind()?;
    ensure!(
        dm.measure == measure,
        "{} holds {} distances but the config asks for {}",
        path.display(),
        dm.measure,
        measure
    );
    let same = |ids: &[String], ts: &[Trajectory]| ids.len() == ts.len() && ids.iter().zip(ts).all(|(a, t)| *a == t.id);
    ensure!(
        same(&dm.row_ids, rows) && same(&dm.col_ids, cols),
        "{} does not match the current splits; rerun `ground-truth`",
        path.display()
    );
    Ok(dm)
}

pub fn train_cmd(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let layout = Layout::new(cfg);
    let tcfg = cfg.train_config()?;
    let stats = read_stats(&layout)?;
    let train_set = read_split(&layout, "train")?;
    let gt_path = layout.ground_truth("train");
    require(&gt_path, "ground-truth")?;
    let dm = load_matching_matrix(&gt_path, &train_set, &train_set, cfg)?;

    let raster = RasterConfig::new(stats.mbr, cfg.delta_m)?;
    let mcfg = cfg.model_config(stats.max_length, raster.rows, raster.cols)?;
    let mut encoder = Encoder::new(init_model(mcfg)?, stats.norm, raster)?;

    let every = cfg.checkpoint_every;
    if every > 0 {
        ensure_parent(&layout.checkpoint(0))?;
    }
    let log = train(&mut encoder, &train_set, &dm, &tcfg, |e, model| {
        let done = e.epoch + 1;
        if every > 0 && done % every == 0 {
            let snap = Encoder {
                model: model.clone(),
                norm: stats.norm,
                raster,
            };
            save_model(&snap, &layout.checkpoint(done))?;
        }
        eprintln!("epoch {:>4}  loss {:.6}  ({:.2}s)", e.epoch, e.loss.total, e.seconds);
        Ok(())
    })?;
    save_model(&encoder, &layout.model())?;

    let mut csv = String::from("epoch,triplet_loss,regression_loss,total_loss\n");
    let mut times = String::from("epoch,seconds\n");
    for e in &log {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            e.epoch, e.loss.triplet_term, e.loss.regression_term, e.loss.total
        );
        let _ = writeln!(times, "{},{}", e.epoch, e.seconds);
    }
    write_file(&layout.train_log(), csv)?;
    write_file(&layout.timing("train.csv"), times)?;
    Ok(moving_average(&log, 10))
}

fn load_encoder(layout: &Layout) -> Result<Encoder> {
    let p = layout.model();
    require(&p, "train")?;
    Ok(load_model(&p)?)
}

pub fn embed(cfg: &ExperimentConfig, splits: &[String]) -> Result<()> {
    let layout = Layout::new(cfg);
    let encoder = load_encoder(&layout)?;
    let mut times = String::from("split,count,seconds\n");
    for name in splits {
        ensure!(SPLITS.contains(&name.as_str()), "unknown split `{name}`");
        let ts = read_split(&layout, name)?;
        let start = Instant::now();
        let set = embed_all(&encoder, &ts)?;
        let _ = writeln!(times, "{name},{},{}", ts.len(), start.elapsed().as_secs_f64());
        let p = layout.embeddings(name);
        ensure_parent(&p)?;
        io::save_embeddings(&p, &set)?;
    }
    write_file(&layout.timing("embed.csv"), times)
}

/// Ranks the candidate embeddings by distance to the freshly encoded query.
pub fn search(cfg: &ExperimentConfig, query_id: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let layout = Layout::new(cfg);
    let encoder = load_encoder(&layout)?;
    let emb_path = layout.embeddings("candidate");
    require(&emb_path, "embed")?;
    let candidates = io::load_embeddings(&emb_path)?;
    let all = read_split(&layout, "all")?;
    let query = all
        .iter()
        .find(|t| t.id == query_id)
        .ok_or_else(|| anyhow!("no trajectory with id `{query_id}` in the dataset"))?;
    let v = encoder.encode(query)?;
    let r = evaluation::embedding_topk(query_id, &v, &candidates, k)?;
    Ok(r.ranked)
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<trajsim::evaluation::EvalReport> {
    let layout = Layout::new(cfg);
    let measure = cfg.measure_kind()?;
    let encoder = load_encoder(&layout)?;
    let queries = read_split(&layout, "query")?;
    let candidates = read_split(&layout, "candidate")?;
    let gt_path = layout.ground_truth("eval");
    let gt = if gt_path.exists() {
        Some(load_matching_matrix(&gt_path, &queries, &candidates, cfg)?)
    } else {
        let stats = read_stats(&layout)?;
        std::fs::create_dir_all(layout.cache())?;
        let (dm, _) = evaluation::cached_pairwise(
            &layout.cache(),
            &normalized(&queries, &stats.norm),
            &normalized(&candidates, &stats.norm),
            measure,
        )?;
        Some(dm)
    };
    let opts = EvalOptions {
        measure,
        ks: cfg.ks.clone(),
        norm: encoder.norm,
        ground_truth: gt.as_ref(),
    };
    let report = evaluation::evaluate(&encoder, &queries, &candidates, &opts)?;
    write_file(&layout.eval_csv(), report.csv())?;
    write_file(&layout.eval_per_query(), report.per_query_csv())?;
    write_file(&layout.timing("eval.csv"), report.timing_csv())?;
    write_file(&layout.timing("eval.txt"), report.text())?;
    Ok(report)
}

pub fn verify_bounds(cfg: &ExperimentConfig) -> Result<trajsim::bounds::BoundSuite> {
    let layout = Layout::new(cfg);
    let dataset = read_split(&layout, "all")?;
    let scfg = SuiteConfig {
        pairs: cfg.pairs,
        far_pairs: cfg.far_pairs,
        seed: cfg.seed,
        delta_m: cfg.delta_m,
        pool_k: cfg.pool_k,
    };
    let start = Instant::now();
    let suite = bound_suite(&dataset, &scfg)?;
    let secs = start.elapsed().as_secs_f64();
    suite.write_to(&layout.bounds())?;
    write_file(&layout.timing("bounds.csv"), format!("seconds\n{secs}\n"))?;
    Ok(suite)
}
