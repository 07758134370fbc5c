//! Trajectory similarity learning with convolutional embeddings.
//!
//! Trajectories are embedded by a two-branch network: a 1D convolution
//! stack over the min-max normalized point sequence and a 2D convolution
//! stack over a binary raster of the visited grid cells. Embeddings are
//! trained so that Euclidean distance between vectors tracks an exact
//! measure (discrete Fréchet, DTW, Hausdorff or EDR), which turns quadratic
//! pairwise comparisons into linear vector scans.
//!
//! ```no_run
//! use trajsim::{geo, measures, model, synthetic, training};
//!
//! let data = synthetic::generate(&synthetic::SyntheticConfig::new(100, 10, 50, 1))?;
//! let stats = geo::compute_dataset_stats(&data)?;
//! let raster = geo::RasterConfig::new(stats.mbr, 250.0)?;
//! let cfg = model::ModelConfig::for_dataset(stats.max_length, raster.rows, raster.cols, 1);
//! let mut enc = model::Encoder::new(model::init_model(cfg)?, stats.norm, raster)?;
//! let norm: Vec<_> = data.iter().map(|t| geo::normalize(t, &stats.norm)).collect();
//! let dm = measures::pairwise_within(&norm, measures::MeasureKind::Dfd)?;
//! let tc = training::TrainConfig::new(measures::MeasureKind::Dfd, 1);
//! training::train(&mut enc, &data, &dm, &tc, |_, _| Ok(()))?;
//! let v = enc.encode(&data[0])?;
//! # Ok::<(), trajsim::Error>(())
//! ```

pub mod bounds;
pub mod error;
pub mod evaluation;
pub mod geo;
pub mod io;
pub mod measures;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use geo::{GeoPoint, Trajectory};
pub use measures::{DistanceMatrix, MeasureKind};
pub use model::{ConvTraj, Encoder, ModelConfig};
