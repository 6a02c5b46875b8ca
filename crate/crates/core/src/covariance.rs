//! Karhunen–Loève reduction of covariance kernels on `L²([0, 1])`.
//!
//! Functions live on the midpoint grid `ξ_i = (i - 1/2)/M` with uniform
//! weights `1/M`. Frames are stored in `f64` regardless of the scalar used
//! by the simulation; the transforms cast at the boundary.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Real;
use crate::spectral::SpectrumQ;
use crate::vector::HVector;

/// Relative eigenvalue clip: magnitudes below `EIG_CLIP · λ_1` count as zero.
pub const EIG_CLIP: f64 = 1e-12;

/// Samples of a function at the midpoint grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("grid_size", "a grid function needs at least 2 nodes"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("values", "grid function samples must be finite"));
        }
        Ok(Self { values })
    }

    pub fn from_fn(grid_size: usize, f: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::new(grid_nodes(grid_size).map(f).collect())
    }

    pub fn zeros(grid_size: usize) -> Result<Self> {
        Self::new(vec![0.0; grid_size])
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.grid_size() as f64
    }

    /// Midpoint-rule inner product.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        ensure_dim(self.grid_size(), other.grid_size())?;
        let m = self.grid_size() as f64;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() / m)
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).expect("same grid").sqrt()
    }

    /// Piecewise-linear interpolant through the nodes, extended linearly
    /// beyond the first and last node.
    pub fn interpolate(&self, y: f64) -> f64 {
        let m = self.grid_size();
        let pos = y * m as f64 - 0.5;
        let i = (pos.floor().max(0.0) as usize).min(m - 2);
        let w = pos - i as f64;
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    /// Slope of the interpolant at `y` (right derivative at nodes).
    pub fn slope_at(&self, y: f64) -> f64 {
        let m = self.grid_size();
        let pos = y * m as f64 - 0.5;
        let i = (pos.floor().max(0.0) as usize).min(m - 2);
        (self.values[i + 1] - self.values[i]) * m as f64
    }

    /// Value of the linear extension at `ξ = 0`.
    pub fn value_at_zero(&self) -> f64 {
        self.interpolate(0.0)
    }

    /// Forward-difference slopes `M·(v_{i+1} - v_i)`.
    pub fn slopes(&self) -> Vec<f64> {
        let m = self.grid_size() as f64;
        self.values.windows(2).map(|w| m * (w[1] - w[0])).collect()
    }

    pub fn max_abs_slope(&self) -> f64 {
        self.slopes().into_iter().fold(0.0, |a, s| a.max(s.abs()))
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| f(v)).collect())
    }
}

fn grid_nodes(m: usize) -> impl Iterator<Item = f64> {
    (0..m).map(move |i| (i as f64 + 0.5) / m as f64)
}

/// Forward-difference `W^{1,2}_0` seminorm `‖f'‖_{L²}` on the midpoint grid.
pub fn w12_seminorm(f: &GridFunction) -> f64 {
    let m = f.grid_size() as f64;
    let sum: f64 = f.values.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    (m * sum).sqrt()
}

/// Covariance kernel on `[0, 1]²`.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    /// Covariance of standard Brownian motion, `K(ξ, η) = min{ξ, η}`.
    Wiener,
    /// Kernel samples `K(ξ_i, ξ_j)` at the grid nodes.
    Tabulated(DMatrix<f64>),
}

impl KernelSpec {
    /// Parses a whitespace-separated square matrix, one row per line.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse_tabulated(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| tok.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: `{tok}`: {e}", lineno + 1))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let m = rows.len();
        if m < 2 {
            return Err(Error::Parse("kernel matrix needs at least 2 rows".into()));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(Error::Parse(format!("row {} has {} entries, expected {m}", i + 1, r.len())));
        }
        Ok(KernelSpec::Tabulated(DMatrix::from_fn(m, m, |i, j| rows[i][j])))
    }

    pub fn load_tabulated(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_tabulated(&std::fs::read_to_string(path)?)
    }

    /// Kernel samples on an `M`-point grid.
    pub fn sample(&self, grid_size: usize) -> Result<DMatrix<f64>> {
        match self {
            KernelSpec::Wiener => {
                let m = grid_size as f64;
                Ok(DMatrix::from_fn(grid_size, grid_size, |i, j| (i.min(j) as f64 + 0.5) / m))
            }
            KernelSpec::Tabulated(k) => {
                ensure_dim(grid_size, k.nrows())?;
                ensure_dim(grid_size, k.ncols())?;
                Ok(k.clone())
            }
        }
    }
}

/// Retained eigenpairs of a discretized kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFrame {
    spectrum: SpectrumQ<f64>,
    /// `M × N`, columns orthonormal in the midpoint inner product.
    basis: DMatrix<f64>,
    dropped_trace: f64,
}

impl SpectralFrame {
    /// Eigendecomposition of `K_ij / M`, keeping the top `keep_modes` pairs.
    pub fn build(kernel: &KernelSpec, grid_size: usize, keep_modes: usize, alpha: f64) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::invalid("grid_size", "at least 2 grid nodes are required"));
        }
        if keep_modes == 0 {
            return Err(Error::invalid("keep_modes", "at least one mode must be kept"));
        }
        if keep_modes > grid_size {
            return Err(Error::TooManyModes { requested: keep_modes, available: grid_size });
        }
        let k = kernel.sample(grid_size)?;
        let scale = k.amax();
        let asym = (&k - k.transpose()).amax();
        if asym > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NotSymmetric(asym));
        }
        let m = grid_size as f64;
        let op = (&k + k.transpose()) * (0.5 / m);
        let eig = SymmetricEigen::new(op);
        let mut order: Vec<usize> = (0..grid_size).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]];
        if !(top > 0.0) {
            return Err(Error::IndefiniteKernel { eigenvalue: top, tolerance: 0.0 });
        }
        let tol = EIG_CLIP * top;
        let lowest = eig.eigenvalues[order[grid_size - 1]];
        if lowest < -tol {
            return Err(Error::IndefiniteKernel { eigenvalue: lowest, tolerance: tol });
        }
        let positive = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
        if keep_modes > positive {
            return Err(Error::TooManyModes { requested: keep_modes, available: positive });
        }
        let kept = &order[..keep_modes];
        let eigenvalues: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut basis = DMatrix::zeros(grid_size, keep_modes);
        for (col, &i) in kept.iter().enumerate() {
            let mut v = eig.eigenvectors.column(i).into_owned() * m.sqrt();
            let pivot = v.iter().copied().find(|x| x.abs() > 1e-8).unwrap_or(1.0);
            if pivot < 0.0 {
                v = -v;
            }
            basis.set_column(col, &v);
        }
        let dropped_trace = op_trace(&k, m) - eigenvalues.iter().sum::<f64>();
        Ok(Self { spectrum: SpectrumQ::new(eigenvalues, alpha)?, basis, dropped_trace: dropped_trace.max(0.0) })
    }

    pub fn spectrum(&self) -> &SpectrumQ<f64> {
        &self.spectrum
    }

    /// The spectrum converted to scalar `S`.
    pub fn spectrum_as<S: Real>(&self) -> Result<SpectrumQ<S>> {
        let eig = self.spectrum.eigenvalues().iter().map(|&l| S::lit(l)).collect();
        SpectrumQ::new(eig, S::lit(self.spectrum.alpha()))
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Ok(Self { spectrum: self.spectrum.with_alpha(alpha)?, ..self.clone() })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn grid_size(&self) -> usize {
        self.basis.nrows()
    }

    pub fn modes(&self) -> usize {
        self.basis.ncols()
    }

    /// Trace of the discretized operator not captured by the retained modes.
    pub fn dropped_trace(&self) -> f64 {
        self.dropped_trace
    }

    /// `k`-th basis function (zero-based).
    pub fn mode_function(&self, k: usize) -> GridFunction {
        GridFunction { values: self.basis.column(k).iter().copied().collect() }
    }

    /// `basisᵀ · diag(1/M) · values`.
    pub fn to_coeffs<S: Real>(&self, f: &GridFunction) -> Result<HVector<S>> {
        ensure_dim(self.grid_size(), f.grid_size())?;
        let v = DVector::from_column_slice(&f.values);
        let c = self.basis.tr_mul(&v) / self.grid_size() as f64;
        Ok(HVector::new(c.iter().map(|&x| S::lit(x)).collect()))
    }

    /// `basis · coeffs`.
    pub fn from_coeffs<S: Real>(&self, x: &HVector<S>) -> Result<GridFunction> {
        ensure_dim(self.modes(), x.dim())?;
        let c = DVector::from_iterator(x.dim(), x.coeffs().iter().map(|c| c.to_f64_lossy()));
        Ok(GridFunction { values: (&self.basis * c).iter().copied().collect() })
    }

    /// Largest entry of `|basisᵀ diag(1/M) basis - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.basis.tr_mul(&self.basis) / self.grid_size() as f64;
        (g - DMatrix::identity(self.modes(), self.modes())).amax()
    }

    /// Largest entry of `|K/M - basis diag(λ) basisᵀ / M|`.
    pub fn mercer_residual(&self, kernel: &KernelSpec) -> Result<f64> {
        let m = self.grid_size() as f64;
        let k = kernel.sample(self.grid_size())? / m;
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(self.spectrum.eigenvalues()));
        let recon = &self.basis * lam * self.basis.transpose() / m;
        Ok((k - recon).amax())
    }

    /// Ratios `‖f‖_{1/2} / ‖f'‖_{L²}` for each test function, with the
    /// `H_{1/2}` norm taken on the frame coefficients.
    pub fn h12_w12_ratios(&self, fns: &[GridFunction]) -> Result<Vec<f64>> {
        let half = self.spectrum.with_alpha(0.5)?;
        fns.iter()
            .map(|f| {
                let c: HVector<f64> = self.to_coeffs(f)?;
                Ok(half.h_alpha_norm(&c)? / w12_seminorm(f))
            })
            .collect()
    }

    /// Plain-text cache: header, eigenvalues, then one basis column per line,
    /// all in shortest round-trip decimal.
    pub fn to_cache_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "spectral-frame 1");
        let _ = writeln!(s, "grid_size {}", self.grid_size());
        let _ = writeln!(s, "modes {}", self.modes());
        let _ = writeln!(s, "alpha {:?}", self.spectrum.alpha());
        let _ = writeln!(s, "dropped_trace {:?}", self.dropped_trace);
        let eig: Vec<String> = self.spectrum.eigenvalues().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "eigenvalues {}", eig.join(" "));
        for col in self.basis.column_iter() {
            let c: Vec<String> = col.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "column {}", c.join(" "));
        }
        s
    }

    pub fn from_cache_string(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut field = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{key}`")))?;
            let mut toks = line.split_whitespace();
            if toks.next() != Some(key) {
                return Err(Error::Parse(format!("expected `{key}`, found `{line}`")));
            }
            Ok(toks.map(String::from).collect())
        };
        let num = |v: &str| v.parse::<f64>().map_err(|e| Error::Parse(format!("`{v}`: {e}")));
        let one = |v: Vec<String>, key: &str| -> Result<String> {
            v.into_iter().next().ok_or_else(|| Error::Parse(format!("`{key}` has no value")))
        };
        if one(field("spectral-frame")?, "spectral-frame")? != "1" {
            return Err(Error::Parse("unsupported frame cache version".into()));
        }
        let m: usize =
            one(field("grid_size")?, "grid_size")?.parse().map_err(|e| Error::Parse(format!("grid_size: {e}")))?;
        let n: usize = one(field("modes")?, "modes")?.parse().map_err(|e| Error::Parse(format!("modes: {e}")))?;
        let alpha = num(&one(field("alpha")?, "alpha")?)?;
        let dropped_trace = num(&one(field("dropped_trace")?, "dropped_trace")?)?;
        let eig = field("eigenvalues")?.iter().map(|v| num(v)).collect::<Result<Vec<_>>>()?;
        ensure_dim(n, eig.len())?;
        let mut basis = DMatrix::zeros(m, n);
        for j in 0..n {
            let col = field("column")?.iter().map(|v| num(v)).collect::<Result<Vec<_>>>()?;
            ensure_dim(m, col.len())?;
            basis.set_column(j, &DVector::from_vec(col));
        }
        Ok(Self { spectrum: SpectrumQ::new(eig, alpha)?, basis, dropped_trace })
    }

    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_cache_string())?;
        Ok(())
    }

    pub fn load_cache(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_cache_string(&std::fs::read_to_string(path)?)
    }
}

fn op_trace(k: &DMatrix<f64>, m: f64) -> f64 {
    k.diagonal().sum() / m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn wiener(m: usize, n: usize) -> SpectralFrame {
        SpectralFrame::build(&KernelSpec::Wiener, m, n, 0.5).unwrap()
    }

    #[test]
    fn wiener_spectrum_follows_inverse_square_law() {
        let f = wiener(256, 32);
        let l = f.spectrum().eigenvalues();
        for (k, &lk) in l.iter().enumerate().take(8) {
            let continuum = 1.0 / ((k as f64 + 0.5) * PI).powi(2);
            assert_relative_eq!(lk, continuum, max_relative = 1e-3);
        }
        let ratio = l[7] / l[31];
        assert!((ratio - 16.0).abs() <= 0.25 * 16.0, "λ8/λ32 = {ratio}");
        assert!(f.orthonormality_defect() < 1e-10);
        assert!(f.dropped_trace() > 0.0);
    }

    #[test]
    fn identity_kernel_is_isotropic() {
        let m = 16;
        let k = DMatrix::identity(m, m) / m as f64;
        let f = SpectralFrame::build(&KernelSpec::Tabulated(k.clone()), m, 5, 0.0).unwrap();
        for &l in f.spectrum().eigenvalues() {
            assert_relative_eq!(l, 1.0 / (m * m) as f64, max_relative = 1e-12);
        }
        assert!(f.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn negative_eigenvalue_is_rejected() {
        let m = 8;
        let mut k = DMatrix::identity(m, m);
        k[(3, 3)] = -0.1 * m as f64;
        let r = SpectralFrame::build(&KernelSpec::Tabulated(k), m, 2, 0.0);
        assert!(matches!(r, Err(Error::IndefiniteKernel { eigenvalue, .. }) if (eigenvalue + 0.1).abs() < 1e-12));
    }

    #[test]
    fn literal_max_kernel_is_indefinite() {
        let m = 64;
        let k = DMatrix::from_fn(m, m, |i, j| (i.max(j) as f64 + 0.5) / m as f64);
        assert!(matches!(
            SpectralFrame::build(&KernelSpec::Tabulated(k), m, 4, 0.5),
            Err(Error::IndefiniteKernel { .. })
        ));
    }

    #[test]
    fn too_many_modes_and_asymmetry() {
        assert_eq!(
            SpectralFrame::build(&KernelSpec::Wiener, 8, 9, 0.5),
            Err(Error::TooManyModes { requested: 9, available: 8 })
        );
        let mut k = DMatrix::identity(4, 4);
        k[(0, 1)] = 0.5;
        assert!(matches!(SpectralFrame::build(&KernelSpec::Tabulated(k), 4, 1, 0.5), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn coefficient_transforms() {
        let f = wiener(64, 8);
        let e1: HVector<f64> = f.to_coeffs(&f.mode_function(0)).unwrap();
        assert_relative_eq!(e1[0], 1.0, epsilon = 1e-12);
        assert!(e1.coeffs()[1..].iter().all(|c| c.abs() < 1e-12));

        let zero: HVector<f64> = f.to_coeffs(&GridFunction::zeros(64).unwrap()).unwrap();
        assert!(zero.is_zero());

        let v: Vec<f64> = f
            .mode_function(0)
            .values()
            .iter()
            .zip(f.mode_function(1).values())
            .map(|(a, b)| 2.0 * a - 3.0 * b)
            .collect();
        let c: HVector<f64> = f.to_coeffs(&GridFunction::new(v).unwrap()).unwrap();
        assert_relative_eq!(c[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(c[1], -3.0, epsilon = 1e-12);
        assert!(c.coeffs()[2..].iter().all(|x| x.abs() < 1e-12));

        let g = f.from_coeffs(&HVector::<f64>::basis(8, 0)).unwrap();
        assert_eq!(g, f.mode_function(0));
        assert!(f.from_coeffs(&HVector::<f64>::zeros(8)).unwrap().sup_abs() == 0.0);
        assert!(f.to_coeffs::<f64>(&GridFunction::zeros(32).unwrap()).is_err());
        assert!(f.from_coeffs(&HVector::<f64>::zeros(3)).is_err());
    }

    #[test]
    fn w12_examples() {
        let m = 400;
        assert_relative_eq!(w12_seminorm(&GridFunction::from_fn(m, |x| x).unwrap()), 1.0, epsilon = 2.0 / m as f64);
        assert_eq!(w12_seminorm(&GridFunction::from_fn(m, |_| 3.0).unwrap()), 0.0);
        let sq = w12_seminorm(&GridFunction::from_fn(m, |x| x * x).unwrap());
        assert_relative_eq!(sq, (4.0f64 / 3.0).sqrt(), epsilon = 4.0 / m as f64);
    }

    #[test]
    fn half_norm_matches_w12_on_smooth_functions() {
        let f = wiener(256, 64);
        let basket: Vec<GridFunction> = [
            |x: f64| (PI * x / 2.0).sin(),
            |x: f64| x * (2.0 - x),
            |x: f64| (3.0 * PI * x / 2.0).sin() + 0.5 * (PI * x / 2.0).sin(),
        ]
        .iter()
        .map(|g| GridFunction::from_fn(256, g).unwrap())
        .collect();
        for r in f.h12_w12_ratios(&basket).unwrap() {
            assert!((r - 1.0).abs() < 0.05, "ratio {r}");
        }
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let f = wiener(32, 6);
        let g = SpectralFrame::from_cache_string(&f.to_cache_string()).unwrap();
        assert_eq!(f, g);
        assert!(SpectralFrame::from_cache_string("spectral-frame 2\n").is_err());
    }

    #[test]
    fn tabulated_parser() {
        let k = KernelSpec::parse_tabulated("# demo\n1 0.5\n0.5 1\n").unwrap();
        assert!(matches!(k, KernelSpec::Tabulated(ref m) if m[(0, 1)] == 0.5));
        assert!(KernelSpec::parse_tabulated("1 2\n3\n").is_err());
        assert!(KernelSpec::parse_tabulated("1 x\n1 2\n").is_err());
    }

    #[test]
    fn interpolation_is_exact_for_linear_functions() {
        let g = GridFunction::from_fn(10, |x| 2.0 * x - 1.0).unwrap();
        for y in [0.0, 0.01, 0.37, 0.999, 1.0] {
            assert_relative_eq!(g.interpolate(y), 2.0 * y - 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(g.value_at_zero(), -1.0, epsilon = 1e-12);
    }
}
