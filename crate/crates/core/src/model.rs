//! The ConvTraj encoder.
//!
//! A trajectory enters through two branches:
//!
//! * **sequence**: each normalized point goes through a shared affine+ReLU
//!   lift to `point_embed_dim` channels, then `conv1d_blocks` residual
//!   blocks `maxpool(relu(conv(x)) + skip(x))`, then flatten;
//! * **image**: the trajectory's binary raster goes through `conv2d_blocks`
//!   residual blocks `avgpool(relu(conv(x)) + skip(x))`, then flatten.
//!
//! The first block of each branch uses a learned 1x1 channel projection as
//! its skip path; later blocks use identity. The two flattened vectors are
//! concatenated and mapped by affine -> ReLU -> affine to the embedding.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geo::{self, BinaryImage, Mbr, NormalizationParams, Point, RasterConfig, Trajectory};
use crate::tensor::{self, kernels::pooled_len, Graph, NodeId, ParamId, ParamStore, Tensor};

const MODEL_MAGIC: &str = "convtraj-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub point_embed_dim: usize,
    pub conv1d_channels: usize,
    pub conv1d_blocks: usize,
    pub conv2d_channels: usize,
    pub conv2d_blocks: usize,
    pub fusion_hidden: usize,
    pub embed_dim: usize,
    pub padded_length: usize,
    pub image_rows: usize,
    pub image_cols: usize,
    pub seed: u64,
}

/// `floor(log2(n))`, or 0 for `n <= 1`.
pub fn conv1d_blocks_for(max_length: usize) -> usize {
    if max_length <= 1 {
        0
    } else {
        (usize::BITS - 1 - max_length.leading_zeros()) as usize
    }
}

impl ModelConfig {
    /// Default architecture sized for a dataset: 16-d point lift, 32 sequence
    /// channels over `floor(log2(max_length))` blocks, 4 image channels over 4
    /// blocks and a 128-d embedding.
    pub fn for_dataset(max_length: usize, image_rows: usize, image_cols: usize, seed: u64) -> Self {
        ModelConfig {
            point_embed_dim: 16,
            conv1d_channels: 32,
            conv1d_blocks: conv1d_blocks_for(max_length),
            conv2d_channels: 4,
            conv2d_blocks: 4,
            fusion_hidden: 128,
            embed_dim: 128,
            padded_length: max_length,
            image_rows,
            image_cols,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("point_embed_dim", self.point_embed_dim),
            ("conv1d_channels", self.conv1d_channels),
            ("conv1d_blocks", self.conv1d_blocks),
            ("conv2d_channels", self.conv2d_channels),
            ("conv2d_blocks", self.conv2d_blocks),
            ("fusion_hidden", self.fusion_hidden),
            ("embed_dim", self.embed_dim),
            ("padded_length", self.padded_length),
            ("image_rows", self.image_rows),
            ("image_cols", self.image_cols),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("model config: {name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn seq_final_len(&self) -> usize {
        (0..self.conv1d_blocks).fold(self.padded_length, |l, _| pooled_len(l))
    }

    pub fn image_final_dims(&self) -> (usize, usize) {
        (0..self.conv2d_blocks).fold((self.image_rows, self.image_cols), |(h, w), _| {
            (pooled_len(h), pooled_len(w))
        })
    }

    pub fn v1d_dim(&self) -> usize {
        self.conv1d_channels * self.seq_final_len()
    }

    pub fn v2d_dim(&self) -> usize {
        let (h, w) = self.image_final_dims();
        self.conv2d_channels * h * w
    }

    fn to_pairs(self) -> Vec<(&'static str, String)> {
        vec![
            ("point_embed_dim", self.point_embed_dim.to_string()),
            ("conv1d_channels", self.conv1d_channels.to_string()),
            ("conv1d_blocks", self.conv1d_blocks.to_string()),
            ("conv2d_channels", self.conv2d_channels.to_string()),
            ("conv2d_blocks", self.conv2d_blocks.to_string()),
            ("fusion_hidden", self.fusion_hidden.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("padded_length", self.padded_length.to_string()),
            ("image_rows", self.image_rows.to_string()),
            ("image_cols", self.image_cols.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ParamIds {
    point_w: ParamId,
    point_b: ParamId,
    conv1d: Vec<ParamId>,
    skip1d: ParamId,
    conv2d: Vec<ParamId>,
    skip2d: ParamId,
    fuse1_w: ParamId,
    fuse1_b: ParamId,
    fuse2_w: ParamId,
    fuse2_b: ParamId,
}

/// Model weights plus the handles that wire them into the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTraj {
    pub config: ModelConfig,
    pub params: ParamStore,
    ids: ParamIds,
}

fn xavier(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Draws every weight uniformly from `±sqrt(6 / (fan_in + fan_out))`; biases
/// start at zero.
pub fn init_model(config: ModelConfig) -> Result<ConvTraj> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ps = ParamStore::new();
    let (pe, c1, c2) = (config.point_embed_dim, config.conv1d_channels, config.conv2d_channels);

    let point_w = ps.add("point.w", xavier(&mut rng, vec![pe, 2], 2, pe));
    let point_b = ps.add("point.b", Tensor::zeros(vec![pe]));
    let conv1d = (0..config.conv1d_blocks)
        .map(|i| {
            let cin = if i == 0 { pe } else { c1 };
            ps.add(
                format!("conv1d.{i}"),
                xavier(&mut rng, vec![c1, cin, 3], cin * 3, c1 * 3),
            )
        })
        .collect();
    let skip1d = ps.add("conv1d.skip", xavier(&mut rng, vec![c1, pe], pe, c1));
    let conv2d = (0..config.conv2d_blocks)
        .map(|i| {
            let cin = if i == 0 { 1 } else { c2 };
            ps.add(
                format!("conv2d.{i}"),
                xavier(&mut rng, vec![c2, cin, 3, 3], cin * 9, c2 * 9),
            )
        })
        .collect();
    let skip2d = ps.add("conv2d.skip", xavier(&mut rng, vec![c2, 1], 1, c2));
    let fin = config.v1d_dim() + config.v2d_dim();
    let (hid, out) = (config.fusion_hidden, config.embed_dim);
    let fuse1_w = ps.add("fuse.0.w", xavier(&mut rng, vec![hid, fin], fin, hid));
    let fuse1_b = ps.add("fuse.0.b", Tensor::zeros(vec![hid]));
    let fuse2_w = ps.add("fuse.1.w", xavier(&mut rng, vec![out, hid], hid, out));
    let fuse2_b = ps.add("fuse.1.b", Tensor::zeros(vec![out]));

    Ok(ConvTraj {
        config,
        params: ps,
        ids: ParamIds {
            point_w,
            point_b,
            conv1d,
            skip1d,
            conv2d,
            skip2d,
            fuse1_w,
            fuse1_b,
            fuse2_w,
            fuse2_b,
        },
    })
}

/// Preprocessed network input for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// `[2 x padded_length]`, rows are normalized lat and lon.
    pub sequence: Tensor,
    /// `[1 x rows x cols]` binary raster.
    pub image: Tensor,
}

impl ModelInput {
    pub fn new(padded: &[Point], image: &BinaryImage) -> Result<Self> {
        let len = padded.len();
        let mut seq = Vec::with_capacity(2 * len);
        seq.extend(padded.iter().map(|p| p[0]));
        seq.extend(padded.iter().map(|p| p[1]));
        Ok(ModelInput {
            sequence: Tensor::new(vec![2, len], seq)?,
            image: Tensor::new(vec![1, image.rows, image.cols], image.to_f64())?,
        })
    }
}

impl ConvTraj {
    fn check_sequence(&self, seq: &Tensor) -> Result<()> {
        let want = [2, self.config.padded_length];
        if seq.shape() != want {
            return Err(Error::ShapeMismatch {
                op: "encode_1d input",
                left: seq.shape().to_vec(),
                right: want.to_vec(),
            });
        }
        Ok(())
    }

    fn check_image(&self, img: &Tensor) -> Result<()> {
        let want = [1, self.config.image_rows, self.config.image_cols];
        if img.shape() != want {
            return Err(Error::ShapeMismatch {
                op: "encode_2d input",
                left: img.shape().to_vec(),
                right: want.to_vec(),
            });
        }
        Ok(())
    }

    /// Records the sequence branch; returns the flattened `V_1D` node.
    pub fn record_1d(&self, g: &mut Graph, sequence: Tensor) -> Result<NodeId> {
        self.check_sequence(&sequence)?;
        let ids = &self.ids;
        let x = g.input(sequence);
        let (w, b) = (g.param(ids.point_w), g.param(ids.point_b));
        let lifted = g.channel_mix(x, w, Some(b))?;
        let mut h = g.relu(lifted);
        for (i, &k) in ids.conv1d.iter().enumerate() {
            let kn = g.param(k);
            let c = g.conv1d(h, kn)?;
            let r = g.relu(c);
            let skip = if i == 0 {
                let p = g.param(ids.skip1d);
                g.channel_mix(h, p, None)?
            } else {
                h
            };
            let sum = g.add(r, skip)?;
            h = g.maxpool1d(sum)?;
        }
        Ok(g.flatten(h))
    }

    /// Records the image branch; returns the flattened `V_2D` node.
    pub fn record_2d(&self, g: &mut Graph, image: Tensor) -> Result<NodeId> {
        self.check_image(&image)?;
        let ids = &self.ids;
        let mut h = g.input(image);
        for (i, &k) in ids.conv2d.iter().enumerate() {
            let kn = g.param(k);
            let c = g.conv2d(h, kn)?;
            let r = g.relu(c);
            let skip = if i == 0 {
                let p = g.param(ids.skip2d);
                g.channel_mix(h, p, None)?
            } else {
                h
            };
            let sum = g.add(r, skip)?;
            h = g.avgpool2d(sum)?;
        }
        Ok(g.flatten(h))
    }

    /// Records the full encoder; returns the embedding node.
    pub fn record(&self, g: &mut Graph, input: &ModelInput) -> Result<NodeId> {
        let v1 = self.record_1d(g, input.sequence.clone())?;
        let v2 = self.record_2d(g, input.image.clone())?;
        let cat = g.concat(v1, v2);
        let ids = &self.ids;
        let (w1, b1) = (g.param(ids.fuse1_w), g.param(ids.fuse1_b));
        let h = g.affine(cat, w1, b1)?;
        let h = g.relu(h);
        let (w2, b2) = (g.param(ids.fuse2_w), g.param(ids.fuse2_b));
        g.affine(h, w2, b2)
    }

    /// `V_1D` for a padded normalized trajectory.
    pub fn encode_1d(&self, padded: &[Point]) -> Result<Vec<f64>> {
        let mut seq = Vec::with_capacity(2 * padded.len());
        seq.extend(padded.iter().map(|p| p[0]));
        seq.extend(padded.iter().map(|p| p[1]));
        let seq = Tensor::new(vec![2, padded.len()], seq)?;
        let mut g = Graph::new(&self.params);
        let v = self.record_1d(&mut g, seq)?;
        Ok(g.value(v).data().to_vec())
    }

    /// `V_2D` for a rasterized trajectory.
    pub fn encode_2d(&self, image: &BinaryImage) -> Result<Vec<f64>> {
        let img = Tensor::new(vec![1, image.rows, image.cols], image.to_f64())?;
        let mut g = Graph::new(&self.params);
        let v = self.record_2d(&mut g, img)?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn encode_input(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let v = self.record(&mut g, input)?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }
}

/// A trained model together with the dataset preprocessing it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub model: ConvTraj,
    pub norm: NormalizationParams,
    pub raster: RasterConfig,
}

impl Encoder {
    pub fn new(model: ConvTraj, norm: NormalizationParams, raster: RasterConfig) -> Result<Self> {
        if (raster.rows, raster.cols) != (model.config.image_rows, model.config.image_cols) {
            return Err(Error::ShapeMismatch {
                op: "encoder raster",
                left: vec![raster.rows, raster.cols],
                right: vec![model.config.image_rows, model.config.image_cols],
            });
        }
        Ok(Encoder { model, norm, raster })
    }

    pub fn prepare(&self, t: &Trajectory) -> Result<ModelInput> {
        let norm = geo::normalize(t, &self.norm);
        let padded = geo::pad_to_length(&norm.points, self.model.config.padded_length)?;
        let image = geo::rasterize(t, &self.raster)?;
        ModelInput::new(&padded, &image)
    }

    pub fn encode(&self, t: &Trajectory) -> Result<Vec<f64>> {
        self.model.encode_input(&self.prepare(t)?)
    }
}

fn header_pairs(enc: &Encoder) -> Vec<(&'static str, String)> {
    let mut pairs = enc.model.config.to_pairs();
    let m = &enc.raster.mbr;
    pairs.extend([
        ("norm_lat_min", enc.norm.lat_min.to_string()),
        ("norm_lat_max", enc.norm.lat_max.to_string()),
        ("norm_lon_min", enc.norm.lon_min.to_string()),
        ("norm_lon_max", enc.norm.lon_max.to_string()),
        ("raster_min_lat", m.min_lat.to_string()),
        ("raster_max_lat", m.max_lat.to_string()),
        ("raster_min_lon", m.min_lon.to_string()),
        ("raster_max_lon", m.max_lon.to_string()),
        ("raster_delta_m", enc.raster.delta_m.to_string()),
    ]);
    pairs
}

/// Writes a `key=value` header block, a blank line, then a `TSNN` parameter
/// checkpoint.
pub fn write_model<W: Write>(enc: &Encoder, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{MODEL_MAGIC}")?;
    writeln!(w, "version={MODEL_VERSION}")?;
    for (k, v) in header_pairs(enc) {
        writeln!(w, "{k}={v}")?;
    }
    writeln!(w)?;
    tensor::write_checkpoint(&enc.model.params, w)
}

pub fn read_model<R: BufRead>(r: &mut R) -> Result<Encoder> {
    let mut line = String::new();
    let next_line = |r: &mut R, line: &mut String| -> Result<()> {
        line.clear();
        r.read_line(line)
            .map_err(|e| Error::Format(format!("model header: {e}")))?;
        Ok(())
    };
    next_line(r, &mut line)?;
    if line.trim_end() != MODEL_MAGIC {
        return Err(Error::Format(format!(
            "not a model file (header {:?})",
            line.trim_end()
        )));
    }
    let mut kv = std::collections::HashMap::new();
    loop {
        next_line(r, &mut line)?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line {l:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String> {
        kv.get(k)
            .ok_or_else(|| Error::Format(format!("model header missing `{k}`")))
    };
    let version: u32 = get("version")?
        .parse()
        .map_err(|_| Error::Format("bad version".into()))?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let u = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("bad integer for `{k}`")))
    };
    let f = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("bad number for `{k}`")))
    };
    let config = ModelConfig {
        point_embed_dim: u("point_embed_dim")?,
        conv1d_channels: u("conv1d_channels")?,
        conv1d_blocks: u("conv1d_blocks")?,
        conv2d_channels: u("conv2d_channels")?,
        conv2d_blocks: u("conv2d_blocks")?,
        fusion_hidden: u("fusion_hidden")?,
        embed_dim: u("embed_dim")?,
        padded_length: u("padded_length")?,
        image_rows: u("image_rows")?,
        image_cols: u("image_cols")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::Format("bad seed".into()))?,
    };
    let norm = NormalizationParams {
        lat_min: f("norm_lat_min")?,
        lat_max: f("norm_lat_max")?,
        lon_min: f("norm_lon_min")?,
        lon_max: f("norm_lon_max")?,
    };
    let mbr = Mbr::new(
        f("raster_min_lat")?,
        f("raster_max_lat")?,
        f("raster_min_lon")?,
        f("raster_max_lon")?,
    )?;
    let raster = RasterConfig::new(mbr, f("raster_delta_m")?)?;

    let mut model = init_model(config)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)
        .map_err(|e| Error::Format(format!("model body: {e}")))?;
    let stored = tensor::read_checkpoint(&mut rest.as_slice())?;
    model.params.load_values(&stored)?;
    Encoder::new(model, norm, raster)
}

pub fn save_model(enc: &Encoder, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(enc, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Encoder> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&mut bytes.as_slice())
}
