//! Compact-manifold geometry.
//!
//! The embedding surface is `M_U = { x : x U x^T = 1 }` for a positive
//! diagonal `U`; the unit hypersphere when `U = I`, an axis-aligned ellipsoid
//! otherwise. Three maps act on it:
//!
//! * `project` (`P_U`):      `x -> x / sqrt(x U x^T)`, radial projection onto
//!   `M_U`; invariant under positive scaling of `x`.
//! * `push_forward` (`PF`):  stereographic-style chart from the center
//!   `x0 = (a0, 0, ..., 0)` onto the hyperplane `N_b = { x : x_1 = b }`,
//!   `PF(w) = ((b - a0)/(w_1 - a0)) (w - x0) + x0`.
//! * `push_back` (`PB`):     `PB(v) = t (v - x0) + x0` with
//!   `t = -2 (v - x0) U x0^T / ((v - x0) U (v - x0)^T)`; lands exactly on
//!   `M_U` because the quadratic in `t` cancels algebraically.
//!
//! Distances use `d(x, y) = arccos(x U y^T)`, the geodesic metric pulled back
//! from the sphere under `z = x U^{1/2}`.

use crate::mat::Mat;
use thiserror::Error;

/// Norm floor below which a vector counts as degenerate for projection.
pub const EPS_NORM: f64 = 1e-12;
/// Guard radius around the chart center `x0` for the push-forward map.
pub const CENTER_GUARD: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ManifoldError {
    #[error("vector quadratic form below the degeneracy floor")]
    NearZeroVector,
    #[error("point within {CENTER_GUARD} of the projection center x0")]
    AtProjectionCenter,
    #[error("point is not on the manifold (|xUx^T - 1| = {0:.3e})")]
    NotOnManifold(f64),
    #[error("expected dimension {0}, got {1}")]
    DimensionMismatch(usize, usize),
    #[error("u_diag[{0}] must be positive")]
    NonPositiveU(usize),
    #[error("hyperplane offset b must differ from a0 = {0}")]
    HyperplaneThroughCenter(f64),
}

/// Geometry of one manifold `M_U` together with its chart hyperplane `N_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldSpec {
    u_diag: Vec<f64>,
    a0: f64,
    b: f64,
}

impl ManifoldSpec {
    /// Unit hypersphere (`U = I`) with the equatorial chart `b = 0`.
    pub fn unit(dim: usize) -> ManifoldSpec {
        ManifoldSpec { u_diag: vec![1.0; dim], a0: 1.0, b: 0.0 }
    }

    /// Ellipsoid from a positive diagonal; chart hyperplane `b = 0`.
    pub fn from_u_diag(u_diag: Vec<f64>) -> Result<ManifoldSpec, ManifoldError> {
        for (i, &u) in u_diag.iter().enumerate() {
            if !(u > 0.0) || !u.is_finite() {
                return Err(ManifoldError::NonPositiveU(i));
            }
        }
        let a0 = u_diag[0].powf(-0.5);
        Ok(ManifoldSpec { u_diag, a0, b: 0.0 })
    }

    /// Move the chart hyperplane. `b` must avoid the projection center.
    pub fn with_b(mut self, b: f64) -> Result<ManifoldSpec, ManifoldError> {
        if b == self.a0 {
            return Err(ManifoldError::HyperplaneThroughCenter(self.a0));
        }
        self.b = b;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.u_diag.len()
    }

    pub fn u_diag(&self) -> &[f64] {
        &self.u_diag
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// The projection center `x0 = (a0, 0, ..., 0)`; lies on `M_U` exactly.
    pub fn x0(&self) -> Vec<f64> {
        let mut x0 = vec![0.0; self.dim()];
        x0[0] = self.a0;
        x0
    }

    /// Quadratic form `x U x^T`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.u_diag).map(|(&xi, &ui)| ui * xi * xi).sum()
    }

    /// Bilinear form `x U y^T`. Grouped as `u * (x * y)` so the result is
    /// exactly symmetric in `x` and `y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .zip(&self.u_diag)
            .map(|((&xi, &yi), &ui)| ui * (xi * yi))
            .sum()
    }

    pub fn on_manifold(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim() && (self.quad(x) - 1.0).abs() <= tol
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ManifoldError> {
        if x.len() != self.dim() {
            return Err(ManifoldError::DimensionMismatch(self.dim(), x.len()));
        }
        Ok(())
    }

    /// Radial projection `P_U`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, ManifoldError> {
        self.check_dim(x)?;
        let q = self.quad(x);
        if q < EPS_NORM * EPS_NORM {
            return Err(ManifoldError::NearZeroVector);
        }
        let s = q.sqrt();
        Ok(x.iter().map(|&xi| xi / s).collect())
    }

    /// Push-forward chart `M_U -> N_b`.
    pub fn push_forward(&self, w: &[f64]) -> Result<Vec<f64>, ManifoldError> {
        self.check_dim(w)?;
        let delta = w[0] - self.a0;
        if delta.abs() < CENTER_GUARD {
            return Err(ManifoldError::AtProjectionCenter);
        }
        let c = (self.b - self.a0) / delta;
        let mut out: Vec<f64> = w.iter().map(|&wi| c * wi).collect();
        out[0] += (1.0 - c) * self.a0;
        Ok(out)
    }

    /// Push-back `R^n -> M_U`.
    pub fn push_back(&self, v: &[f64]) -> Result<Vec<f64>, ManifoldError> {
        self.check_dim(v)?;
        let mut d = v.to_vec();
        d[0] -= self.a0;
        let q: f64 = self.quad(&d);
        if q < EPS_NORM * EPS_NORM {
            return Err(ManifoldError::AtProjectionCenter);
        }
        // (v - x0) U x0^T has a single term because x0 is (a0, 0, ..., 0).
        let p = d[0] * self.u_diag[0] * self.a0;
        let t = -2.0 * p / q;
        let mut out: Vec<f64> = d.iter().map(|&di| t * di).collect();
        out[0] += self.a0;
        Ok(out)
    }

    /// Geodesic distance `arccos(clamp(x U y^T, -1, 1))` for points on `M_U`.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64, ManifoldError> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        for p in [x, y] {
            let dev = (self.quad(p) - 1.0).abs();
            if dev > 1e-8 {
                return Err(ManifoldError::NotOnManifold(dev));
            }
        }
        // Identical points are at distance zero even when quad(x) rounds to
        // just below 1, where acos would report ~1e-8.
        if x == y {
            return Ok(0.0);
        }
        Ok(self.inner(x, y).clamp(-1.0, 1.0).acos())
    }

    /// Strict row-wise `P_U` over an embedding matrix.
    pub fn project_rows(&self, h: &Mat) -> Result<Mat, ManifoldError> {
        let mut out = h.clone();
        for i in 0..h.rows() {
            let p = self.project(h.row(i))?;
            out.row_mut(i).copy_from_slice(&p);
        }
        Ok(out)
    }

    /// Row-wise `P_U` with degenerate rows replaced by the basepoint `x0`
    /// (total; used for feature matrices where whole rows may be zero).
    pub fn project_rows_or_center(&self, h: &Mat) -> Mat {
        let x0 = self.x0();
        let mut out = h.clone();
        for i in 0..h.rows() {
            match self.project(h.row(i)) {
                Ok(p) => out.row_mut(i).copy_from_slice(&p),
                Err(_) => out.row_mut(i).copy_from_slice(&x0),
            }
        }
        out
    }

    pub fn push_forward_rows(&self, h: &Mat) -> Result<Mat, ManifoldError> {
        let mut out = h.clone();
        for i in 0..h.rows() {
            let p = self.push_forward(h.row(i))?;
            out.row_mut(i).copy_from_slice(&p);
        }
        Ok(out)
    }

    pub fn push_back_rows(&self, h: &Mat) -> Result<Mat, ManifoldError> {
        let mut out = h.clone();
        for i in 0..h.rows() {
            let p = self.push_back(h.row(i))?;
            out.row_mut(i).copy_from_slice(&p);
        }
        Ok(out)
    }

    /// Max and mean pairwise geodesic distance over the rows of `h`.
    pub fn pairwise_stats(&self, h: &Mat) -> Result<(f64, f64), ManifoldError> {
        let n = h.rows();
        let mut max = 0.0f64;
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.distance(h.row(i), h.row(j))?;
                max = max.max(d);
                sum += d;
                count += 1;
            }
        }
        Ok((max, if count == 0 { 0.0 } else { sum / count as f64 }))
    }
}

/// Euclidean distance between two rows.
pub fn euclidean_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Max and mean pairwise Euclidean distance over the rows of `h`.
pub fn euclidean_pairwise_stats(h: &Mat) -> (f64, f64) {
    let n = h.rows();
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean_distance(h.row(i), h.row(j));
            max = max.max(d);
            sum += d;
            count += 1;
        }
    }
    (max, if count == 0 { 0.0 } else { sum / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn project_unit_circle() {
        let m = ManifoldSpec::unit(2);
        let y = m.project(&[3.0, 4.0]).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-15);
        assert!((y[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn project_ellipse_axis() {
        let m = ManifoldSpec::from_u_diag(vec![4.0, 1.0]).unwrap();
        let y = m.project(&[1.0, 0.0]).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15);
        assert_eq!(y[1], 0.0);
        assert!((m.quad(&y) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn project_rejects_near_zero() {
        let m = ManifoldSpec::unit(2);
        assert_eq!(m.project(&[1e-20, 0.0]).unwrap_err(), ManifoldError::NearZeroVector);
    }

    #[test]
    fn push_forward_hand_values() {
        let m = ManifoldSpec::unit(2);
        let v = m.push_forward(&[-1.0, 0.0]).unwrap();
        assert!(euclidean_distance(&v, &[0.0, 0.0]) < 1e-15);
        let v = m.push_forward(&[0.0, 1.0]).unwrap();
        assert!(euclidean_distance(&v, &[0.0, 1.0]) < 1e-15);
        assert_eq!(
            m.push_forward(&[1.0, 0.0]).unwrap_err(),
            ManifoldError::AtProjectionCenter
        );
    }

    #[test]
    fn push_forward_first_coordinate_is_b() {
        let m = ManifoldSpec::unit(3).with_b(-0.25).unwrap();
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let w = match m.project(&x) {
                Ok(w) => w,
                Err(_) => continue,
            };
            if (w[0] - m.a0()).abs() < 1e-3 {
                continue;
            }
            let v = m.push_forward(&w).unwrap();
            assert!((v[0] - m.b()).abs() < 1e-12);
        }
    }

    #[test]
    fn push_back_hand_values() {
        let m = ManifoldSpec::unit(2);
        let y = m.push_back(&[0.0, 0.0]).unwrap();
        assert!(euclidean_distance(&y, &[-1.0, 0.0]) < 1e-15);
        let y = m.push_back(&[0.0, 1.0]).unwrap();
        assert!(euclidean_distance(&y, &[0.0, 1.0]) < 1e-15);
        // (v - x0) U x0^T = 0 collapses to the center itself.
        let y = m.push_back(&[1.0, 5.0]).unwrap();
        assert!(euclidean_distance(&y, &[1.0, 0.0]) < 1e-15);
    }

    #[test]
    fn distance_hand_values() {
        let m = ManifoldSpec::unit(2);
        assert_eq!(m.distance(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        let d = m.distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let d = m.distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert!((d - std::f64::consts::PI).abs() < 1e-15);
        assert!(matches!(
            m.distance(&[2.0, 0.0], &[1.0, 0.0]),
            Err(ManifoldError::NotOnManifold(_))
        ));
    }

    #[test]
    fn hyperplane_must_miss_center() {
        let m = ManifoldSpec::unit(2);
        assert_eq!(
            m.with_b(1.0).unwrap_err(),
            ManifoldError::HyperplaneThroughCenter(1.0)
        );
    }

    #[test]
    fn scale_invariance_of_project() {
        let m = ManifoldSpec::from_u_diag(vec![0.5, 2.0, 1.5]).unwrap();
        let mut rng = Rng::new(11);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let k = rng.uniform_in(1e-3, 1e3);
            let y1 = match m.project(&x) {
                Ok(y) => y,
                Err(_) => continue,
            };
            let scaled: Vec<f64> = x.iter().map(|&v| k * v).collect();
            let y2 = m.project(&scaled).unwrap();
            for (a, b) in y1.iter().zip(&y2) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metric_axioms_on_samples() {
        let m = ManifoldSpec::from_u_diag(vec![1.0, 3.0, 0.25, 2.0]).unwrap();
        let mut rng = Rng::new(5);
        let sample = |rng: &mut Rng| -> Vec<f64> {
            loop {
                let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
                if let Ok(p) = m.project(&x) {
                    return p;
                }
            }
        };
        for _ in 0..10_000 {
            let (x, y, z) = (sample(&mut rng), sample(&mut rng), sample(&mut rng));
            let dxy = m.distance(&x, &y).unwrap();
            let dyx = m.distance(&y, &x).unwrap();
            assert_eq!(dxy, dyx);
            assert_eq!(m.distance(&x, &x).unwrap(), 0.0);
            let dxz = m.distance(&x, &z).unwrap();
            let dzy = m.distance(&z, &y).unwrap();
            assert!(dxy <= dxz + dzy + 1e-12);
        }
    }
}
