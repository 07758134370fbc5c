//! Seeded random-walk trajectories for offline experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, Mbr, Trajectory, METERS_PER_DEG_LAT};

/// The central Porto rectangle used for the taxi dataset.
pub fn porto_area() -> Mbr {
    Mbr {
        min_lat: 41.10,
        max_lat: 41.24,
        min_lon: -8.73,
        max_lon: -8.50,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub area: Mbr,
    /// Mean step length in meters; each step draws from `[0.5, 1.5] x` this.
    pub step_m: f64,
    /// Largest heading change per step, radians.
    pub max_turn: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(count: usize, min_len: usize, max_len: usize, seed: u64) -> Self {
        SyntheticConfig {
            count,
            min_len,
            max_len,
            area: porto_area(),
            step_m: 100.0,
            max_turn: 0.35,
            seed,
        }
    }
}

/// Walks with smoothly drifting heading that reflect off the area border.
/// Ids are `syn00000`, `syn00001`, ...
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<Trajectory>> {
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::InvalidArgument(format!(
            "bad length range {}..={}",
            cfg.min_len, cfg.max_len
        )));
    }
    if !(cfg.step_m > 0.0) {
        return Err(Error::InvalidArgument("step length must be positive".into()));
    }
    let a = cfg.area;
    let mid = 0.5 * (a.min_lat + a.max_lat);
    let m_lat = METERS_PER_DEG_LAT;
    let m_lon = METERS_PER_DEG_LAT * mid.to_radians().cos();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let reflect = |v: f64, lo: f64, hi: f64| -> (f64, bool) {
        if v < lo {
            ((2.0 * lo - v).min(hi), true)
        } else if v > hi {
            ((2.0 * hi - v).max(lo), true)
        } else {
            (v, false)
        }
    };

    (0..cfg.count)
        .map(|i| {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let mut lat = rng.gen_range(a.min_lat..a.max_lat);
            let mut lon = rng.gen_range(a.min_lon..a.max_lon);
            let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut pts = Vec::with_capacity(len);
            for _ in 0..len {
                pts.push(GeoPoint::new(lat, lon)?);
                heading += rng.gen_range(-cfg.max_turn..=cfg.max_turn);
                let step = cfg.step_m * rng.gen_range(0.5..1.5);
                let (nlat, flip_lat) =
                    reflect(lat + step * heading.cos() / m_lat, a.min_lat, a.max_lat);
                let (nlon, flip_lon) =
                    reflect(lon + step * heading.sin() / m_lon, a.min_lon, a.max_lon);
                if flip_lat {
                    heading = std::f64::consts::PI - heading;
                }
                if flip_lon {
                    heading = -heading;
                }
                lat = nlat;
                lon = nlon;
            }
            Trajectory::new(format!("syn{i:05}"), pts)
        })
        .collect()
}
