//! Samplers for the test manifolds and point-cloud I/O.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AtlasError, Result};
use crate::rng;

/// Side length of the square line patches.
pub const PATCH_SIDE: usize = 10;

/// A finite sample of a manifold embedded in `R^N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec<f64>>,
    pub ambient_dim: usize,
    /// Parameter tuples used to generate each point. Kept for plotting and
    /// ground-truth checks only.
    pub intrinsic: Option<Vec<Vec<f64>>>,
    pub label: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>, intrinsic: Option<Vec<Vec<f64>>>, label: impl Into<String>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| AtlasError::EmptyInput("point cloud has no points".into()))?;
        let ambient_dim = first.len();
        if ambient_dim == 0 {
            return Err(AtlasError::Parameter("ambient dimension must be positive".into()));
        }
        if let Some(bad) = points.iter().find(|p| p.len() != ambient_dim) {
            return Err(AtlasError::Dimension {
                expected: ambient_dim,
                got: bad.len(),
            });
        }
        if let Some(params) = &intrinsic {
            if params.len() != points.len() {
                return Err(AtlasError::Dimension {
                    expected: points.len(),
                    got: params.len(),
                });
            }
        }
        Ok(Self {
            points,
            ambient_dim,
            intrinsic,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.points[index]
    }

    /// CSV with one row per point: ambient coordinates, then intrinsic columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = (0..self.ambient_dim).map(|c| format!("x{c}")).collect();
        let n_params = self
            .intrinsic
            .as_ref()
            .and_then(|p| p.first().map(Vec::len))
            .unwrap_or(0);
        header.extend((0..n_params).map(|c| format!("t{c}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for (idx, p) in self.points.iter().enumerate() {
            let mut fields: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            if let Some(params) = &self.intrinsic {
                fields.extend(params[idx].iter().map(|v| v.to_string()));
            }
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the layout written by [`PointCloud::to_csv`]. Columns named
    /// `t*` are read back as intrinsic parameters.
    pub fn from_csv(text: &str, label: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| AtlasError::EmptyInput("csv has no header".into()))?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        let ambient = columns.iter().take_while(|c| !c.starts_with('t')).count();
        let has_params = ambient < columns.len();
        let mut points = Vec::new();
        let mut params = Vec::new();
        for (row, line) in lines.enumerate() {
            let values = line
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| AtlasError::Parameter(format!("csv row {row}: cannot parse {f:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != columns.len() {
                return Err(AtlasError::Dimension {
                    expected: columns.len(),
                    got: values.len(),
                });
            }
            points.push(values[..ambient].to_vec());
            params.push(values[ambient..].to_vec());
        }
        PointCloud::new(points, has_params.then_some(params), label)
    }
}

fn require_points(n: usize) -> Result<()> {
    if n == 0 {
        Err(AtlasError::EmptyInput("sample count must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Uniform sample of the unit sphere `S^2 ⊂ R^3` (normalized Gaussians).
pub fn sample_sphere(n: usize, seed: u64) -> Result<PointCloud> {
    require_points(n)?;
    let mut rng = rng::seeded(seed);
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let g: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if norm < 1e-12 {
            continue;
        }
        points.push(g.iter().map(|c| c / norm).collect());
    }
    PointCloud::new(points, None, "sphere")
}

/// Möbius band embedding for `u ∈ [0, 2π)`, `v ∈ [-1, 1]`.
pub fn mobius_point(u: f64, v: f64) -> [f64; 3] {
    let r = 1.0 + 0.5 * v * (0.5 * u).cos();
    [r * u.cos(), r * u.sin(), 0.5 * v * (0.5 * u).sin()]
}

/// Möbius band sampled uniformly in parameter space.
pub fn sample_mobius(n: usize, seed: u64) -> Result<PointCloud> {
    require_points(n)?;
    let mut rng = rng::seeded(seed);
    let mut points = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random_range(0.0..2.0 * PI);
        let v = rng.random_range(-1.0..=1.0);
        points.push(mobius_point(u, v).to_vec());
        params.push(vec![u, v]);
    }
    PointCloud::new(points, Some(params), "mobius")
}

/// Klein bottle immersion in `R^4` with tube offset `m`.
pub fn klein_point(u: f64, v: f64, m: f64) -> [f64; 4] {
    let r = m + v.cos();
    [
        r * u.cos(),
        r * u.sin(),
        v.sin() * (0.5 * u).cos(),
        v.sin() * (0.5 * u).sin(),
    ]
}

/// Klein bottle sampled uniformly in `(u, v) ∈ [0, 2π)^2`. Requires `m > 1`
/// so that the immersion is injective on the quotient.
pub fn sample_klein(n: usize, m: f64, seed: u64) -> Result<PointCloud> {
    require_points(n)?;
    if !(m > 1.0) {
        return Err(AtlasError::Parameter(format!(
            "klein scale m = {m} must exceed 1 for an injective immersion"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut points = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random_range(0.0..2.0 * PI);
        let v = rng.random_range(0.0..2.0 * PI);
        points.push(klein_point(u, v, m).to_vec());
        params.push(vec![u, v]);
    }
    PointCloud::new(points, Some(params), "klein")
}

/// Renders one blurred line as a unit-norm `PATCH_SIDE × PATCH_SIDE` image,
/// flattened row-major.
///
/// The patch spans `[-0.5, 0.5]^2`; the line is `{p : p·(cos θ, sin θ) = offset}`
/// and pixel intensity is a Gaussian in the distance from the pixel centre to
/// the line, with standard deviation `blur` (in patch widths).
pub fn render_line_patch(theta: f64, offset: f64, blur: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    let step = 1.0 / PATCH_SIDE as f64;
    let mut pixels = Vec::with_capacity(PATCH_SIDE * PATCH_SIDE);
    for row in 0..PATCH_SIDE {
        let py = 0.5 - (row as f64 + 0.5) * step;
        for col in 0..PATCH_SIDE {
            let px = -0.5 + (col as f64 + 0.5) * step;
            let dist = px * c + py * s - offset;
            pixels.push((-dist * dist / (2.0 * blur * blur)).exp());
        }
    }
    let norm = pixels.iter().map(|v| v * v).sum::<f64>().sqrt();
    pixels.iter_mut().for_each(|v| *v /= norm);
    pixels
}

/// Grid of line patches: angles `θ_a = π a / n_angles` and offsets at the
/// centres of `n_offsets` equal cells of `[-0.5, 0.5]`.
pub fn sample_line_patches(n_angles: usize, n_offsets: usize, blur: f64) -> Result<PointCloud> {
    require_points(n_angles * n_offsets)?;
    if !(blur > 0.0) {
        return Err(AtlasError::Parameter(format!("blur {blur} must be positive")));
    }
    let mut points = Vec::with_capacity(n_angles * n_offsets);
    let mut params = Vec::with_capacity(n_angles * n_offsets);
    for a in 0..n_angles {
        let theta = PI * a as f64 / n_angles as f64;
        for b in 0..n_offsets {
            let offset = -0.5 + (b as f64 + 0.5) / n_offsets as f64;
            points.push(render_line_patch(theta, offset, blur));
            params.push(vec![theta, offset]);
        }
    }
    PointCloud::new(points, Some(params), "rp2_patches")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(p: &[f64]) -> f64 {
        p.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn sphere_points_are_unit() {
        let cloud = sample_sphere(1000, 42).unwrap();
        assert_eq!(cloud.len(), 1000);
        assert_eq!(cloud.ambient_dim, 3);
        for p in &cloud.points {
            assert!((norm(p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_mean_is_near_origin() {
        let cloud = sample_sphere(10_000, 7).unwrap();
        for c in 0..3 {
            let mean: f64 = cloud.points.iter().map(|p| p[c]).sum::<f64>() / 10_000.0;
            assert!(mean.abs() < 0.05, "coordinate {c} mean {mean}");
        }
    }

    #[test]
    fn empty_samples_are_rejected() {
        assert!(matches!(sample_sphere(0, 1), Err(AtlasError::EmptyInput(_))));
        assert!(matches!(sample_mobius(0, 1), Err(AtlasError::EmptyInput(_))));
        assert!(matches!(
            sample_line_patches(0, 5, 0.25),
            Err(AtlasError::EmptyInput(_))
        ));
    }

    #[test]
    fn mobius_parameterization_values() {
        let p = mobius_point(0.0, 0.0);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15 && p[2].abs() < 1e-15);
        let q = mobius_point(PI, 1.0);
        assert!((q[0] + 1.0).abs() < 1e-12);
        assert!(q[1].abs() < 1e-12);
        assert!((q[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mobius_radius_band() {
        let cloud = sample_mobius(1500, 42).unwrap();
        assert_eq!(cloud.len(), 1500);
        for p in &cloud.points {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((0.5 - 1e-12..=1.5 + 1e-12).contains(&r));
        }
        assert_eq!(cloud.intrinsic.as_ref().unwrap().len(), 1500);
    }

    #[test]
    fn klein_parameterization_values() {
        assert_eq!(klein_point(0.0, 0.0, 4.0), [5.0, 0.0, 0.0, 0.0]);
        let p = klein_point(0.0, PI, 4.0);
        assert!((p[0] - 3.0).abs() < 1e-15);
        assert!(p[1].abs() < 1e-15 && p[2].abs() < 1e-15 && p[3].abs() < 1e-15);
    }

    #[test]
    fn klein_requires_scale_above_one() {
        assert!(matches!(sample_klein(10, 1.0, 0), Err(AtlasError::Parameter(_))));
        assert!(matches!(sample_klein(10, 0.5, 0), Err(AtlasError::Parameter(_))));
        let cloud = sample_klein(1000, 4.0, 42).unwrap();
        assert_eq!(cloud.len(), 1000);
        assert_eq!(cloud.ambient_dim, 4);
    }

    /// Distance in the Klein quotient `(u, v) ~ (u + 2π, 2π - v)`, `v ~ v + 2π`.
    fn klein_quotient_distance(a: &[f64], b: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for k in -1i32..=1 {
            let bv = if k % 2 == 0 { b[1] } else { 2.0 * PI - b[1] };
            let bu = b[0] + 2.0 * PI * k as f64;
            for l in -1i32..=1 {
                let d = (a[0] - bu).hypot(a[1] - bv - 2.0 * PI * l as f64);
                best = best.min(d);
            }
        }
        best
    }

    #[test]
    fn klein_immersion_separates_distinct_parameters() {
        use rand::Rng;
        let mut rng = rng::seeded(11);
        let mut checked = 0;
        while checked < 10_000 {
            let a = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
            let b = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
            if klein_quotient_distance(&a, &b) <= 1e-3 {
                continue;
            }
            let pa = klein_point(a[0], a[1], 4.0);
            let pb = klein_point(b[0], b[1], 4.0);
            let gap: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(gap > 1e-9, "{a:?} and {b:?} collide");
            checked += 1;
        }
    }

    #[test]
    fn samplers_are_deterministic() {
        assert_eq!(sample_sphere(50, 3).unwrap(), sample_sphere(50, 3).unwrap());
        assert_eq!(sample_mobius(50, 3).unwrap(), sample_mobius(50, 3).unwrap());
        assert_eq!(sample_klein(50, 4.0, 3).unwrap(), sample_klein(50, 4.0, 3).unwrap());
        assert_ne!(sample_sphere(50, 3).unwrap(), sample_sphere(50, 4).unwrap());
    }

    #[test]
    fn line_patch_grid() {
        let cloud = sample_line_patches(75, 75, 0.25).unwrap();
        assert_eq!(cloud.len(), 5625);
        assert_eq!(cloud.ambient_dim, 100);
        for p in &cloud.points {
            assert!((norm(p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn line_patch_flip_symmetry() {
        for &(theta, offset) in &[(0.3, 0.1), (1.2, -0.35), (2.9, 0.0)] {
            let a = render_line_patch(theta, offset, 0.25);
            let b = render_line_patch(theta + PI, -offset, 0.25);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let cloud = sample_mobius(20, 5).unwrap();
        let back = PointCloud::from_csv(&cloud.to_csv(), "mobius").unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn inconsistent_points_are_rejected() {
        let err = PointCloud::new(vec![vec![0.0, 1.0], vec![1.0]], None, "bad").unwrap_err();
        assert!(matches!(err, AtlasError::Dimension { expected: 2, got: 1 }));
    }
}
