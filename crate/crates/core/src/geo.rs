//! Trajectory representation and the geometric preprocessing shared by both
//! encoder branches: dataset statistics, min-max normalization, bounding
//! rectangles and rasterization onto a fixed-width grid.
//!
//! Normalized points are stored as `[lat, lon]` pairs scaled into the unit
//! square by the dataset-wide [`NormalizationParams`]. Rasterization works on
//! raw degrees against the dataset [`Mbr`]; the two views differ only by an
//! affine map.

use crate::error::{Error, Result};

/// Meters per degree of latitude under the equirectangular approximation.
pub const METERS_PER_DEG_LAT: f64 = 111_320.0;

/// A point in normalized `[lat, lon]` space.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidCoordinate(format!(
                "non-finite coordinate ({lat}, {lon})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate(format!(
                "latitude {lat} outside [-90, 90]"
            )));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidCoordinate(format!(
                "longitude {lon} outside [-180, 180]"
            )));
        }
        Ok(GeoPoint { lat, lon })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub points: Vec<GeoPoint>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, points: Vec<GeoPoint>) -> Result<Self> {
        let id = id.into();
        if points.is_empty() {
            return Err(Error::EmptyTrajectory(Some(id)));
        }
        Ok(Trajectory { id, points })
    }

    /// Builds a trajectory from `(lat, lon)` tuples, validating every point.
    pub fn from_lat_lon(id: impl Into<String>, coords: &[(f64, f64)]) -> Result<Self> {
        let points = coords
            .iter()
            .map(|&(lat, lon)| GeoPoint::new(lat, lon))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(id, points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mbr(&self) -> Mbr {
        Mbr::of_points(&self.points).expect("trajectory is nonempty")
    }
}

/// A trajectory after min-max normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrajectory {
    pub id: String,
    pub points: Vec<Point>,
}

/// Axis-aligned bounding rectangle in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mbr {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl Mbr {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self> {
        if !(min_lat <= max_lat && min_lon <= max_lon) {
            return Err(Error::InvalidArgument(format!(
                "MBR bounds out of order: lat [{min_lat}, {max_lat}], lon [{min_lon}, {max_lon}]"
            )));
        }
        Ok(Mbr {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        })
    }

    pub fn of_points(points: &[GeoPoint]) -> Option<Self> {
        let first = points.first()?;
        let mut mbr = Mbr {
            min_lat: first.lat,
            max_lat: first.lat,
            min_lon: first.lon,
            max_lon: first.lon,
        };
        for p in &points[1..] {
            mbr.include(p);
        }
        Some(mbr)
    }

    /// Bounding rectangle of normalized `[lat, lon]` points.
    pub fn of_normalized(points: &[Point]) -> Option<Self> {
        let geo: Vec<GeoPoint> = points
            .iter()
            .map(|p| GeoPoint { lat: p[0], lon: p[1] })
            .collect();
        Mbr::of_points(&geo)
    }

    fn include(&mut self, p: &GeoPoint) {
        self.min_lat = self.min_lat.min(p.lat);
        self.max_lat = self.max_lat.max(p.lat);
        self.min_lon = self.min_lon.min(p.lon);
        self.max_lon = self.max_lon.max(p.lon);
    }

    pub fn union(&self, other: &Mbr) -> Mbr {
        Mbr {
            min_lat: self.min_lat.min(other.min_lat),
            max_lat: self.max_lat.max(other.max_lat),
            min_lon: self.min_lon.min(other.min_lon),
            max_lon: self.max_lon.max(other.max_lon),
        }
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat)
            && (self.min_lon..=self.max_lon).contains(&p.lon)
    }

    /// Per-axis separation `(lat_gap, lon_gap)`; zero on an axis where the
    /// projections overlap or touch.
    pub fn axis_gaps(&self, other: &Mbr) -> (f64, f64) {
        let gap = |lo_a: f64, hi_a: f64, lo_b: f64, hi_b: f64| {
            (lo_b - hi_a).max(lo_a - hi_b).max(0.0)
        };
        (
            gap(self.min_lat, self.max_lat, other.min_lat, other.max_lat),
            gap(self.min_lon, self.max_lon, other.min_lon, other.max_lon),
        )
    }
}

/// Minimum Euclidean distance between any point of `a` and any point of `b`,
/// in the rectangles' own units.
pub fn mbr_distance(a: &Mbr, b: &Mbr) -> f64 {
    let (dlat, dlon) = a.axis_gaps(b);
    (dlat * dlat + dlon * dlon).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationParams {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl NormalizationParams {
    pub fn from_mbr(mbr: &Mbr) -> Result<Self> {
        if mbr.max_lat <= mbr.min_lat {
            return Err(Error::DegenerateAxis {
                axis: "latitude",
                value: mbr.min_lat,
            });
        }
        if mbr.max_lon <= mbr.min_lon {
            return Err(Error::DegenerateAxis {
                axis: "longitude",
                value: mbr.min_lon,
            });
        }
        Ok(NormalizationParams {
            lat_min: mbr.min_lat,
            lat_max: mbr.max_lat,
            lon_min: mbr.min_lon,
            lon_max: mbr.max_lon,
        })
    }

    pub fn normalize_point(&self, p: &GeoPoint) -> Point {
        [
            (p.lat - self.lat_min) / (self.lat_max - self.lat_min),
            (p.lon - self.lon_min) / (self.lon_max - self.lon_min),
        ]
    }

    pub fn denormalize_point(&self, p: &Point) -> GeoPoint {
        GeoPoint {
            lat: self.lat_min + p[0] * (self.lat_max - self.lat_min),
            lon: self.lon_min + p[1] * (self.lon_max - self.lon_min),
        }
    }
}

/// Min-max normalizes every point. Points outside the dataset rectangle map
/// outside the unit square.
pub fn normalize(trajectory: &Trajectory, params: &NormalizationParams) -> NormalizedTrajectory {
    NormalizedTrajectory {
        id: trajectory.id.clone(),
        points: trajectory
            .points
            .iter()
            .map(|p| params.normalize_point(p))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub mbr: Mbr,
    pub norm: NormalizationParams,
    pub max_length: usize,
}

pub fn compute_dataset_stats(trajectories: &[Trajectory]) -> Result<DatasetStats> {
    let mut mbr: Option<Mbr> = None;
    let mut max_length = 0;
    for t in trajectories {
        let m = Mbr::of_points(&t.points).ok_or_else(|| Error::EmptyTrajectory(Some(t.id.clone())))?;
        mbr = Some(match mbr {
            Some(acc) => acc.union(&m),
            None => m,
        });
        max_length = max_length.max(t.len());
    }
    let mbr = mbr.ok_or(Error::EmptyDataset)?;
    let norm = NormalizationParams::from_mbr(&mbr)?;
    Ok(DatasetStats {
        mbr,
        norm,
        max_length,
    })
}

/// Extends `points` to `target_len` by repeating the final point.
pub fn pad_to_length(points: &[Point], target_len: usize) -> Result<Vec<Point>> {
    let last = *points.last().ok_or(Error::EmptyTrajectory(None))?;
    if target_len < points.len() {
        return Err(Error::PadTooShort {
            target: target_len,
            len: points.len(),
        });
    }
    let mut out = Vec::with_capacity(target_len);
    out.extend_from_slice(points);
    out.resize(target_len, last);
    Ok(out)
}

/// Grid layout over the dataset rectangle with square cells of side
/// `delta_m` meters. Rows run along latitude, columns along longitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    pub mbr: Mbr,
    pub delta_m: f64,
    pub rows: usize,
    pub cols: usize,
    pub m_per_deg_lat: f64,
    pub m_per_deg_lon: f64,
}

impl RasterConfig {
    pub fn new(mbr: Mbr, delta_m: f64) -> Result<Self> {
        if !(delta_m > 0.0 && delta_m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid width must be positive, got {delta_m}"
            )));
        }
        let mid_lat = 0.5 * (mbr.min_lat + mbr.max_lat);
        let m_per_deg_lat = METERS_PER_DEG_LAT;
        let m_per_deg_lon = METERS_PER_DEG_LAT * mid_lat.to_radians().cos();
        let extent_lat = (mbr.max_lat - mbr.min_lat) * m_per_deg_lat;
        let extent_lon = (mbr.max_lon - mbr.min_lon) * m_per_deg_lon;
        let rows = ((extent_lat / delta_m).ceil() as usize).max(1);
        let cols = ((extent_lon / delta_m).ceil() as usize).max(1);
        Ok(RasterConfig {
            mbr,
            delta_m,
            rows,
            cols,
            m_per_deg_lat,
            m_per_deg_lon,
        })
    }

    /// Local planar coordinates in meters, `[north, east]` from the rectangle's
    /// minimum corner.
    pub fn project(&self, p: &GeoPoint) -> [f64; 2] {
        [
            (p.lat - self.mbr.min_lat) * self.m_per_deg_lat,
            (p.lon - self.mbr.min_lon) * self.m_per_deg_lon,
        ]
    }

    /// Cell holding `p`. Cells are half-open `[low, high)`; the rectangle's
    /// max edge and anything beyond the border clamp into the border cell.
    pub fn cell_of(&self, p: &GeoPoint) -> (usize, usize) {
        let [north, east] = self.project(p);
        let bin = |v: f64, n: usize| -> usize {
            let idx = (v / self.delta_m).floor();
            if idx.is_nan() || idx < 0.0 {
                0
            } else {
                (idx as usize).min(n - 1)
            }
        };
        (bin(north, self.rows), bin(east, self.cols))
    }

    /// Gap between two rectangles in meters.
    pub fn mbr_gap_meters(&self, a: &Mbr, b: &Mbr) -> f64 {
        let (dlat, dlon) = a.axis_gaps(b);
        let (n, e) = (dlat * self.m_per_deg_lat, dlon * self.m_per_deg_lon);
        (n * n + e * e).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub nonzero_count: usize,
}

impl BinaryImage {
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.cols + c]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }
}

pub fn rasterize(trajectory: &Trajectory, config: &RasterConfig) -> Result<BinaryImage> {
    if trajectory.is_empty() {
        return Err(Error::EmptyTrajectory(Some(trajectory.id.clone())));
    }
    let mut pixels = vec![0u8; config.rows * config.cols];
    let mut nonzero_count = 0;
    for p in &trajectory.points {
        let (r, c) = config.cell_of(p);
        let px = &mut pixels[r * config.cols + c];
        if *px == 0 {
            *px = 1;
            nonzero_count += 1;
        }
    }
    Ok(BinaryImage {
        rows: config.rows,
        cols: config.cols,
        pixels,
        nonzero_count,
    })
}
