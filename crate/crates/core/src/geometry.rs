//! Cell layout, link placement and large-scale (path loss + shadowing) gains.
//!
//! Cells are regular hexagons on a triangular lattice whose adjacent centers
//! sit `2R` apart, so `R` is the hexagon inradius. Transmitters are at the cell
//! centers; receivers are uniform over the hexagon minus a disk of radius `r`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Shadowing standard deviation in dB.
pub const SHADOWING_STD_DB: f64 = 8.0;

const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// How many links each cell carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinksPerCell {
    Fixed(usize),
    /// Uniform in `1..=max`, drawn independently per cell.
    Random { max: usize },
}

impl Default for LinksPerCell {
    fn default() -> Self {
        LinksPerCell::Fixed(1)
    }
}

impl std::str::FromStr for LinksPerCell {
    type Err = Error;

    /// Accepts `"k"` for a fixed count or `"random:k"` / `"1-k"` for a random count.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad links-per-cell spec '{s}'"));
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("random:") {
            let max: usize = rest.parse().map_err(|_| bad())?;
            return Ok(LinksPerCell::Random { max });
        }
        if let Some(rest) = s.strip_prefix("1-") {
            let max: usize = rest.parse().map_err(|_| bad())?;
            return Ok(LinksPerCell::Random { max });
        }
        s.parse().map(LinksPerCell::Fixed).map_err(|_| bad())
    }
}

/// Positions of every transmitter/receiver pair in the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub n_cells: usize,
    /// Half transmitter-to-transmitter distance `R` (m).
    pub half_spacing: f64,
    /// Receiver-free inner radius `r` (m).
    pub inner_radius: f64,
    pub links_per_cell: LinksPerCell,
    pub cell_centers: Vec<Point>,
    pub tx_positions: Vec<Point>,
    pub rx_positions: Vec<Point>,
    pub cell_of_link: Vec<usize>,
    /// Seed the layout was generated from, when generated through [`NetworkLayout::generate`].
    pub seed: Option<u64>,
}

impl NetworkLayout {
    pub fn n_links(&self) -> usize {
        self.tx_positions.len()
    }

    /// Pure function of `(n_cells, R, r, links_per_cell, seed)`.
    pub fn generate(
        n_cells: usize,
        half_spacing: f64,
        inner_radius: f64,
        links_per_cell: LinksPerCell,
        seed: u64,
    ) -> Result<Self> {
        let centers = build_hex_layout(n_cells, half_spacing)?;
        let mut rng = stream_rng(seed, Stream::Layout);
        let mut layout = place_links(&centers, half_spacing, inner_radius, links_per_cell, &mut rng)?;
        layout.seed = Some(seed);
        Ok(layout)
    }

    /// Transmitter `i` to receiver `j` distance in meters.
    pub fn distance_m(&self, tx: usize, rx: usize) -> f64 {
        self.tx_positions[tx].distance(&self.rx_positions[rx])
    }
}

// axial-coordinate neighbor directions, in ring-walk order
const AXIAL_DIRS: [(i64, i64); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

fn axial_to_point(q: i64, r: i64, half_spacing: f64) -> Point {
    let (q, r) = (q as f64, r as f64);
    Point::new(
        2.0 * half_spacing * q + half_spacing * r,
        3f64.sqrt() * half_spacing * r,
    )
}

/// Cell centers filled center-outward in concentric hexagonal rings and
/// truncated to `n_cells` (spiral order).
pub fn build_hex_layout(n_cells: usize, half_spacing: f64) -> Result<Vec<Point>> {
    if n_cells == 0 {
        return Err(Error::InvalidConfig("n_cells must be at least 1".into()));
    }
    if !(half_spacing > 0.0) {
        return Err(Error::InvalidConfig(format!("R must be positive, got {half_spacing}")));
    }
    let mut centers = vec![Point::new(0.0, 0.0)];
    let mut ring = 1i64;
    while centers.len() < n_cells {
        let (dq, dr) = AXIAL_DIRS[4];
        let (mut q, mut r) = (dq * ring, dr * ring);
        'walk: for &(sq, sr) in &AXIAL_DIRS {
            for _ in 0..ring {
                centers.push(axial_to_point(q, r, half_spacing));
                if centers.len() == n_cells {
                    break 'walk;
                }
                q += sq;
                r += sr;
            }
        }
        ring += 1;
    }
    Ok(centers)
}

/// Whether `p` lies in the hexagon of inradius `half_spacing` centered at `c`
/// (flat sides facing the six lattice neighbors).
pub fn in_hexagon(p: &Point, c: &Point, half_spacing: f64) -> bool {
    let (dx, dy) = (p.x - c.x, p.y - c.y);
    let s3 = 3f64.sqrt() / 2.0;
    dx.abs() <= half_spacing
        && (0.5 * dx + s3 * dy).abs() <= half_spacing
        && (-0.5 * dx + s3 * dy).abs() <= half_spacing
}

/// Places transmitters at the cell centers and draws each receiver uniformly
/// over its hexagon minus the inner disk by rejection from the bounding box.
pub fn place_links<R: Rng + ?Sized>(
    centers: &[Point],
    half_spacing: f64,
    inner_radius: f64,
    links_per_cell: LinksPerCell,
    rng: &mut R,
) -> Result<NetworkLayout> {
    if !(inner_radius >= 0.0 && inner_radius < half_spacing) {
        return Err(Error::InvalidConfig(format!(
            "inner radius {inner_radius} must be in [0, R={half_spacing})"
        )));
    }
    let circumradius = 2.0 * half_spacing / 3f64.sqrt();
    let mut tx_positions = Vec::new();
    let mut rx_positions = Vec::new();
    let mut cell_of_link = Vec::new();
    for (cell, center) in centers.iter().enumerate() {
        let count = match links_per_cell {
            LinksPerCell::Fixed(k) if k >= 1 => k,
            LinksPerCell::Random { max } if max >= 1 => rng.random_range(1..=max),
            _ => return Err(Error::InvalidConfig("links per cell must be at least 1".into())),
        };
        for _ in 0..count {
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let p = Point::new(
                    center.x + rng.random_range(-half_spacing..=half_spacing),
                    center.y + rng.random_range(-circumradius..=circumradius),
                );
                if in_hexagon(&p, center, half_spacing) && p.distance(center) >= inner_radius {
                    placed = Some(p);
                    break;
                }
            }
            let rx = placed.ok_or(Error::PlacementFailed { cell, attempts: MAX_PLACEMENT_ATTEMPTS })?;
            tx_positions.push(*center);
            rx_positions.push(rx);
            cell_of_link.push(cell);
        }
    }
    Ok(NetworkLayout {
        n_cells: centers.len(),
        half_spacing,
        inner_radius,
        links_per_cell,
        cell_centers: centers.to_vec(),
        tx_positions,
        rx_positions,
        cell_of_link,
        seed: None,
    })
}

/// Distance-dependent path loss in dB, `d` in km.
pub fn path_loss_db(d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) {
        return Err(Error::NonPositiveDistance(d_km));
    }
    Ok(120.9 + 37.6 * d_km.log10())
}

/// Linear gain from a total loss in dB.
pub fn db_loss_to_gain(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Per ordered pair large-scale gains. Indexed `[tx, rx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleGains {
    pub alpha: Array2<f64>,
    pub shadow_db: Array2<f64>,
}

impl LargeScaleGains {
    pub fn n_links(&self) -> usize {
        self.alpha.nrows()
    }
}

/// Path loss plus i.i.d. log-normal shadowing per ordered `(tx, rx)` pair,
/// drawn once.
pub fn compose_large_scale<R: Rng + ?Sized>(
    layout: &NetworkLayout,
    shadow_std_db: f64,
    rng: &mut R,
) -> Result<LargeScaleGains> {
    let n = layout.n_links();
    let normal = Normal::new(0.0, shadow_std_db)
        .map_err(|e| Error::InvalidConfig(format!("shadowing std: {e}")))?;
    let mut alpha = Array2::zeros((n, n));
    let mut shadow_db = Array2::zeros((n, n));
    for tx in 0..n {
        for rx in 0..n {
            let pl = path_loss_db(layout.distance_m(tx, rx) / 1000.0)?;
            let x = normal.sample(rng);
            shadow_db[[tx, rx]] = x;
            alpha[[tx, rx]] = db_loss_to_gain(pl + x);
        }
    }
    Ok(LargeScaleGains { alpha, shadow_db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    #[test]
    fn single_cell_at_origin() {
        let c = build_hex_layout(1, 500.0).unwrap();
        assert_eq!(c, vec![Point::new(0.0, 0.0)]);
    }

    #[test]
    fn nineteen_cells_form_two_rings() {
        let c = build_hex_layout(19, 500.0).unwrap();
        assert_eq!(c.len(), 19);
        let origin = Point::new(0.0, 0.0);
        let first = c.iter().filter(|p| (p.distance(&origin) - 1000.0).abs() < 1e-9).count();
        // second ring: 6 corners at 2000 m and 6 edge midpoints at 2*sqrt(3)*R
        let second_far = c.iter().filter(|p| (p.distance(&origin) - 2000.0).abs() < 1e-9).count();
        let second_mid = c
            .iter()
            .filter(|p| (p.distance(&origin) - 1000.0 * 3f64.sqrt()).abs() < 1e-9)
            .count();
        assert_eq!((first, second_far, second_mid), (6, 6, 6));
        for (i, a) in c.iter().enumerate() {
            for b in &c[i + 1..] {
                assert!(a.distance(b) > 1000.0 - 1e-9, "centers closer than 2R");
            }
        }
    }

    #[test]
    fn seven_cells_nearest_neighbor_spacing() {
        let c = build_hex_layout(7, 100.0).unwrap();
        for (i, a) in c.iter().enumerate() {
            let nearest = c
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| a.distance(b))
                .fold(f64::INFINITY, f64::min);
            assert!((nearest - 200.0).abs() < 1e-9);
        }
        // ring cells are adjacent to their ring neighbors
        for k in 1..7 {
            let next = if k == 6 { 1 } else { k + 1 };
            assert!((c[k].distance(&c[next]) - 200.0).abs() < 1e-9);
        }
    }

    #[test]
    fn receivers_respect_cell_and_inner_disk() {
        let layout = NetworkLayout::generate(19, 500.0, 10.0, LinksPerCell::Fixed(1), 3).unwrap();
        assert_eq!(layout.n_links(), 19);
        let max = 500.0 * 2.0 / 3f64.sqrt();
        for i in 0..19 {
            let d = layout.distance_m(i, i);
            assert!((10.0..=max).contains(&d), "distance {d}");
            let cell = layout.cell_of_link[i];
            assert!(in_hexagon(&layout.rx_positions[i], &layout.cell_centers[cell], 500.0));
        }
        let mut cells = layout.cell_of_link.clone();
        cells.sort();
        assert_eq!(cells, (0..19).collect::<Vec<_>>());
    }

    #[test]
    fn random_links_per_cell_in_range() {
        let layout = NetworkLayout::generate(19, 500.0, 10.0, LinksPerCell::Random { max: 4 }, 11).unwrap();
        let mut counts = vec![0usize; 19];
        for &c in &layout.cell_of_link {
            counts[c] += 1;
        }
        assert!(counts.iter().all(|&k| (1..=4).contains(&k)));
        // co-located transmitters
        for i in 0..layout.n_links() {
            assert_eq!(layout.tx_positions[i], layout.cell_centers[layout.cell_of_link[i]]);
        }
    }

    #[test]
    fn layout_is_deterministic() {
        let a = NetworkLayout::generate(19, 500.0, 200.0, LinksPerCell::Fixed(2), 5).unwrap();
        let b = NetworkLayout::generate(19, 500.0, 200.0, LinksPerCell::Fixed(2), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wide_inner_disk_still_places() {
        let layout = NetworkLayout::generate(7, 500.0, 499.0, LinksPerCell::Fixed(1), 2).unwrap();
        for i in 0..7 {
            assert!(layout.distance_m(i, i) >= 499.0);
        }
    }

    #[test]
    fn inner_radius_at_inradius_is_rejected() {
        let c = build_hex_layout(1, 100.0).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        assert!(place_links(&c, 100.0, 100.0, LinksPerCell::Fixed(1), &mut rng).is_err());
    }

    #[test]
    fn path_loss_values() {
        assert!((path_loss_db(1.0).unwrap() - 120.9).abs() < 1e-12);
        assert!((path_loss_db(0.1).unwrap() - 83.3).abs() < 1e-12);
        assert!((path_loss_db(0.01).unwrap() - 45.7).abs() < 1e-12);
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-1.0).is_err());
    }

    #[test]
    fn gain_inversion() {
        let pl = path_loss_db(1.0).unwrap();
        assert!((db_loss_to_gain(pl) / 10f64.powf(-12.09) - 1.0).abs() < 1e-12);
        assert!((db_loss_to_gain(pl + 8.0) / 10f64.powf(-12.89) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shadowing_std_monte_carlo() {
        // 316 x 316 ~ 1e5 draws through the real composition path
        let centers: Vec<Point> = (0..316).map(|k| Point::new(k as f64 * 2000.0, 0.0)).collect();
        let mut rng = SimRng::seed_from_u64(9);
        let layout = place_links(&centers, 500.0, 10.0, LinksPerCell::Fixed(1), &mut rng).unwrap();
        let lsg = compose_large_scale(&layout, SHADOWING_STD_DB, &mut rng).unwrap();
        let xs: Vec<f64> = lsg.shadow_db.iter().copied().collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 8.0).abs() < 0.1, "std {}", var.sqrt());
        assert!(lsg.alpha.iter().all(|a| a.is_finite() && *a >= 0.0));
    }

    #[test]
    fn links_per_cell_parse() {
        assert_eq!("2".parse::<LinksPerCell>().unwrap(), LinksPerCell::Fixed(2));
        assert_eq!("random:4".parse::<LinksPerCell>().unwrap(), LinksPerCell::Random { max: 4 });
        assert_eq!("1-4".parse::<LinksPerCell>().unwrap(), LinksPerCell::Random { max: 4 });
        assert!("x".parse::<LinksPerCell>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn path_loss_increasing(a in 1e-4f64..10.0, b in 1e-4f64..10.0) {
            proptest::prop_assume!(a < b);
            proptest::prop_assert!(path_loss_db(a).unwrap() < path_loss_db(b).unwrap());
            proptest::prop_assert!(db_loss_to_gain(path_loss_db(a).unwrap()) > db_loss_to_gain(path_loss_db(b).unwrap()));
        }
    }
}
