//! Flat `key=value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use trajsim::geo::Mbr;
use trajsim::synthetic::porto_area;
use trajsim::training::{LossKind, TrainConfig};
use trajsim::{MeasureKind, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Raw trajectory file read by `ingest`.
    pub data: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub area: Option<Mbr>,
    pub min_len: usize,
    pub delta_m: f64,
    pub measure: String,
    pub epsilon: f64,
    pub seed: u64,
    pub threads: usize,

    pub train_size: usize,
    pub query_size: usize,
    pub candidate_size: usize,

    pub point_embed_dim: usize,
    pub conv1d_channels: usize,
    /// 0 picks `floor(log2(max_length))`.
    pub conv1d_blocks: usize,
    pub conv2d_channels: usize,
    pub conv2d_blocks: usize,
    pub fusion_hidden: usize,
    pub embed_dim: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub neighbor_pool_k: usize,
    pub loss: LossKind,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,

    pub ks: Vec<usize>,

    pub pairs: usize,
    pub far_pairs: usize,
    pub pool_k: usize,

    pub syn_count: usize,
    pub syn_min_len: usize,
    pub syn_max_len: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: None,
            out_dir: PathBuf::from("out"),
            area: None,
            min_len: 10,
            delta_m: 250.0,
            measure: "dfd".into(),
            epsilon: trajsim::measures::DEFAULT_EDR_EPSILON,
            seed: 42,
            threads: 0,
            train_size: 300,
            query_size: 100,
            candidate_size: 200,
            point_embed_dim: 16,
            conv1d_channels: 32,
            conv1d_blocks: 0,
            conv2d_channels: 4,
            conv2d_blocks: 4,
            fusion_hidden: 128,
            embed_dim: 128,
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            neighbor_pool_k: 200,
            loss: LossKind::Both,
            checkpoint_every: 50,
            ks: vec![1, 5, 10, 50],
            pairs: 500,
            far_pairs: 200,
            pool_k: 2,
            syn_count: 600,
            syn_min_len: 10,
            syn_max_len: 200,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| anyhow!("bad value `{v}` for `{key}`: {e}"))
}

fn parse_area(v: &str) -> Result<Option<Mbr>> {
    match v {
        "none" | "" => Ok(None),
        "porto" => Ok(Some(porto_area())),
        _ => {
            let parts = v
                .split(',')
                .map(|s| parse_num::<f64>("area", s.trim()))
                .collect::<Result<Vec<_>>>()?;
            let [a, b, c, d] = parts[..] else {
                bail!("area needs `none`, `porto` or min_lat,max_lat,min_lon,max_lon");
            };
            Ok(Some(Mbr::new(a, b, c, d)?))
        }
    }
}

fn format_area(a: &Option<Mbr>) -> String {
    match a {
        None => "none".into(),
        Some(m) => format!("{},{},{},{}", m.min_lat, m.max_lat, m.min_lon, m.max_lon),
    }
}

impl ExperimentConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data" => self.data = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "area" => self.area = parse_area(v)?,
            "min_len" => self.min_len = parse_num(key, v)?,
            "delta" | "delta_m" => self.delta_m = parse_num(key, v)?,
            "measure" => self.measure = v.to_ascii_lowercase(),
            "epsilon" => self.epsilon = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            "train_size" => self.train_size = parse_num(key, v)?,
            "query_size" => self.query_size = parse_num(key, v)?,
            "candidate_size" => self.candidate_size = parse_num(key, v)?,
            "point_embed_dim" => self.point_embed_dim = parse_num(key, v)?,
            "conv1d_channels" => self.conv1d_channels = parse_num(key, v)?,
            "conv1d_blocks" => self.conv1d_blocks = parse_num(key, v)?,
            "conv2d_channels" => self.conv2d_channels = parse_num(key, v)?,
            "conv2d_blocks" => self.conv2d_blocks = parse_num(key, v)?,
            "fusion_hidden" => self.fusion_hidden = parse_num(key, v)?,
            "embed_dim" => self.embed_dim = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "neighbor_pool_k" => self.neighbor_pool_k = parse_num(key, v)?,
            "loss" => self.loss = v.parse()?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "ks" => {
                self.ks = v
                    .split(',')
                    .map(|s| parse_num::<usize>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "pairs" => self.pairs = parse_num(key, v)?,
            "far_pairs" => self.far_pairs = parse_num(key, v)?,
            "pool_k" => self.pool_k = parse_num(key, v)?,
            "syn_count" => self.syn_count = parse_num(key, v)?,
            "syn_min_len" => self.syn_min_len = parse_num(key, v)?,
            "syn_max_len" => self.syn_max_len = parse_num(key, v)?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    /// Parses config text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key=value", i + 1))?;
            self.set(k, v).with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn measure_kind(&self) -> Result<MeasureKind> {
        Ok(MeasureKind::parse(&self.measure, self.epsilon)?)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            neighbor_pool_k: self.neighbor_pool_k,
            seed: self.seed,
            measure: self.measure_kind()?,
            loss: self.loss,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, max_length: usize, rows: usize, cols: usize) -> Result<ModelConfig> {
        let mut m = ModelConfig::for_dataset(max_length, rows, cols, self.seed);
        m.point_embed_dim = self.point_embed_dim;
        m.conv1d_channels = self.conv1d_channels;
        if self.conv1d_blocks > 0 {
            m.conv1d_blocks = self.conv1d_blocks;
        }
        m.conv2d_channels = self.conv2d_channels;
        m.conv2d_blocks = self.conv2d_blocks;
        m.fusion_hidden = self.fusion_hidden;
        m.embed_dim = self.embed_dim;
        m.validate()?;
        Ok(m)
    }

    /// Every key in a form `apply_text` reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data={}", d.display());
        }
        let ks: Vec<String> = self.ks.iter().map(|k| k.to_string()).collect();
        for (k, v) in [
            ("out_dir", self.out_dir.display().to_string()),
            ("area", format_area(&self.area)),
            ("min_len", self.min_len.to_string()),
            ("delta", self.delta_m.to_string()),
            ("measure", self.measure.clone()),
            ("epsilon", self.epsilon.to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("train_size", self.train_size.to_string()),
            ("query_size", self.query_size.to_string()),
            ("candidate_size", self.candidate_size.to_string()),
            ("point_embed_dim", self.point_embed_dim.to_string()),
            ("conv1d_channels", self.conv1d_channels.to_string()),
            ("conv1d_blocks", self.conv1d_blocks.to_string()),
            ("conv2d_channels", self.conv2d_channels.to_string()),
            ("conv2d_blocks", self.conv2d_blocks.to_string()),
            ("fusion_hidden", self.fusion_hidden.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("neighbor_pool_k", self.neighbor_pool_k.to_string()),
            ("loss", self.loss.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("ks", ks.join(",")),
            ("pairs", self.pairs.to_string()),
            ("far_pairs", self.far_pairs.to_string()),
            ("pool_k", self.pool_k.to_string()),
            ("syn_count", self.syn_count.to_string()),
            ("syn_min_len", self.syn_min_len.to_string()),
            ("syn_max_len", self.syn_max_len.to_string()),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}
