//! Ground-truth densities, the standard Gaussian base measure and
//! scale-and-shift mollification of densities on compact supports.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Format a float with 17 significant digits, independent of locale.
pub fn fmt17(v: f64) -> String {
    format!("{:.16e}", v)
}

/// A set of points of a fixed dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    data: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dataset dimension must be positive");
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        assert!(dim > 0, "dataset dimension must be positive");
        Self {
            dim,
            data: Vec::with_capacity(dim * n),
        }
    }

    /// Build from a flat row-major buffer. Length must be a multiple of `dim`.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "flat buffer of length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset coordinates must be finite"));
        }
        Ok(Self { dim, data })
    }

    pub fn from_points<P: AsRef<[f64]>>(dim: usize, points: &[P]) -> Result<Self> {
        let mut ds = Dataset::with_capacity(dim, points.len());
        for p in points {
            ds.push(p.as_ref())?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset coordinates must be finite"));
        }
        self.data.extend_from_slice(x);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Concatenate `other` onto `self`.
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Points `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    /// CSV with header `x0[,x1,...]`, one point per row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        wtr.write_record(&header)?;
        for p in self.iter() {
            wtr.write_record(p.iter().map(|v| fmt17(*v)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let dim = headers.len();
        for (i, h) in headers.iter().enumerate() {
            if h.trim() != format!("x{i}") {
                return Err(Error::Config {
                    line: 1,
                    message: format!("unexpected column header `{h}`, expected `x{i}`"),
                });
            }
        }
        let mut ds = Dataset::new(dim);
        let mut row = Vec::with_capacity(dim);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            row.clear();
            for field in rec.iter() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Config {
                    line: line + 2,
                    message: format!("cannot parse `{field}` as a number"),
                })?;
                row.push(v);
            }
            ds.push(&row).map_err(|e| Error::Config {
                line: line + 2,
                message: e.to_string(),
            })?;
        }
        Ok(ds)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// A density over `R^dim` with an exact (possibly unnormalized) log-density.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log-density at `x`. `x.len()` must equal `dim()`.
    fn ln_pdf(&self, x: &[f64]) -> f64;

    /// Checked variant of [`LogDensity::ln_pdf`].
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.ln_pdf(x))
    }
}

/// A density we can draw exact i.i.d. samples from.
pub trait ExactSampler {
    fn sample_with(&self, n: usize, rng: &mut Rng) -> Dataset;

    fn sample(&self, n: usize, seed: u64) -> Dataset {
        self.sample_with(n, &mut rng::rng_from(seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Component {
    fn ln_pdf(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, mu), var) in x.iter().zip(&self.mean).zip(&self.variance) {
            let d = xi - mu;
            acc -= 0.5 * (LN_2PI + var.ln() + d * d / var);
        }
        acc
    }
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDensity {
    dim: usize,
    components: Vec<Component>,
}

impl TargetDensity {
    pub fn new(dim: usize, components: Vec<Component>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let mut total = 0.0;
        for c in &components {
            if c.mean.len() != dim || c.variance.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.mean.len().max(c.variance.len()),
                });
            }
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::invalid(format!("weight {} outside (0,1]", c.weight)));
            }
            if c.variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::invalid("variances must be strictly positive"));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("means must be finite"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, components })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Axis-aligned box covering `k` standard deviations around every component.
    pub fn bounding_box(&self, k: f64) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for c in &self.components {
            for a in 0..self.dim {
                let s = c.variance[a].sqrt();
                lo[a] = lo[a].min(c.mean[a] - k * s);
                hi[a] = hi[a].max(c.mean[a] + k * s);
            }
        }
        (lo, hi)
    }

    /// Index of the component an exact sample would be drawn from, given a uniform draw.
    fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }

    /// Exact samples together with the component index each came from.
    pub fn sample_labelled(&self, n: usize, seed: u64) -> (Dataset, Vec<usize>) {
        let mut rng = rng::rng_from(seed);
        let mut ds = Dataset::with_capacity(self.dim, n);
        let mut labels = Vec::with_capacity(n);
        let mut x = vec![0.0; self.dim];
        for _ in 0..n {
            let k = self.pick(rng.random::<f64>());
            let c = &self.components[k];
            for ((xa, m), v) in x.iter_mut().zip(&c.mean).zip(&c.variance) {
                let z: f64 = rng.sample(StandardNormal);
                *xa = m + v.sqrt() * z;
            }
            ds.data.extend_from_slice(&x);
            labels.push(k);
        }
        (ds, labels)
    }
}

impl LogDensity for TargetDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn ln_pdf(&self, x: &[f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut terms = [0.0f64; 16];
        let mut heap = Vec::new();
        let use_stack = self.components.len() <= terms.len();
        for (i, c) in self.components.iter().enumerate() {
            let t = c.weight.ln() + c.ln_pdf(x);
            max = max.max(t);
            if use_stack {
                terms[i] = t;
            } else {
                heap.push(t);
            }
        }
        let ts: &[f64] = if use_stack {
            &terms[..self.components.len()]
        } else {
            &heap
        };
        let s: f64 = ts.iter().map(|t| (t - max).exp()).sum();
        max + s.ln()
    }
}

impl ExactSampler for TargetDensity {
    fn sample_with(&self, n: usize, rng: &mut Rng) -> Dataset {
        let mut ds = Dataset::with_capacity(self.dim, n);
        let mut x = vec![0.0; self.dim];
        for _ in 0..n {
            let c = &self.components[self.pick(rng.random::<f64>())];
            for ((xa, m), v) in x.iter_mut().zip(&c.mean).zip(&c.variance) {
                let z: f64 = rng.sample(StandardNormal);
                *xa = m + v.sqrt() * z;
            }
            ds.data.extend_from_slice(&x);
        }
        ds
    }
}

/// Standard Gaussian `N(0, I_dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseDensity {
    pub dim: usize,
}

impl BaseDensity {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim }
    }
}

impl LogDensity for BaseDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn ln_pdf(&self, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        -0.5 * (self.dim as f64 * LN_2PI + sq)
    }
}

impl ExactSampler for BaseDensity {
    fn sample_with(&self, n: usize, rng: &mut Rng) -> Dataset {
        let mut ds = Dataset::with_capacity(self.dim, n);
        for _ in 0..n * self.dim {
            ds.data.push(rng.sample(StandardNormal));
        }
        ds
    }
}

/// Equal-weight isotropic 2D mixture with means on a circle.
pub fn make_ring(n_components: usize, radius: f64, sigma2: f64) -> Result<TargetDensity> {
    if n_components == 0 {
        return Err(Error::invalid("ring needs at least one component"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("ring radius must be positive, got {radius}")));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("ring variance must be positive, got {sigma2}")));
    }
    let w = 1.0 / n_components as f64;
    let components = (0..n_components)
        .map(|j| {
            let angle = 2.0 * PI * j as f64 / n_components as f64;
            Component {
                weight: w,
                mean: vec![radius * angle.cos(), radius * angle.sin()],
                variance: vec![sigma2, sigma2],
            }
        })
        .collect();
    equal_weight(2, components)
}

/// `(1/3)(N(0.3, 0.01) + N(0.5, 0.1) + N(0.7, 0.1))`, second argument a variance.
pub fn make_1d_mixture() -> TargetDensity {
    let components = [(0.3, 0.01), (0.5, 0.1), (0.7, 0.1)]
        .iter()
        .map(|&(m, v)| Component {
            weight: 1.0 / 3.0,
            mean: vec![m],
            variance: vec![v],
        })
        .collect();
    equal_weight(1, components).expect("fixed mixture is valid")
}

/// `m` equal-weight 1D Gaussians with uniform means on [0,1] and variance 0.01.
pub fn make_random_gaussians(m: usize, seed: u64) -> Result<TargetDensity> {
    if m == 0 {
        return Err(Error::invalid("need at least one component"));
    }
    let mut rng = rng::rng_from(seed);
    let components = (0..m)
        .map(|_| Component {
            weight: 1.0 / m as f64,
            mean: vec![rng.random::<f64>()],
            variance: vec![0.01],
        })
        .collect();
    equal_weight(1, components)
}

// 1/n summed n times can miss 1 by a few ulps; renormalize the last weight.
fn equal_weight(dim: usize, mut components: Vec<Component>) -> Result<TargetDensity> {
    let n = components.len();
    let head: f64 = components[..n - 1].iter().map(|c| c.weight).sum();
    components[n - 1].weight = 1.0 - head;
    TargetDensity::new(dim, components)
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::invalid("region corners must have equal, positive length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::invalid("region lower corner must be below upper corner"));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn measure(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }
}

/// A density tabulated at cell midpoints of a regular grid on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGridDensity {
    support: Region,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl FiniteGridDensity {
    /// `values` is row-major over `shape` (last axis fastest). The support
    /// must have unit measure and the Riemann sum must equal one.
    pub fn new(support: Region, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.len() != support.dim() || shape.contains(&0) {
            return Err(Error::invalid("grid shape must match the support dimension"));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} grid values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("grid values must be finite and nonnegative"));
        }
        if (support.measure() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "support measure is {}, mollification needs a unit-measure support",
                support.measure()
            )));
        }
        let g = Self { support, shape, values };
        let mass = g.mass();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("grid density has mass {mass}, not 1")));
        }
        Ok(g)
    }

    /// Tabulate `f` at cell midpoints and rescale so the Riemann sum is one.
    pub fn from_fn(support: Region, shape: Vec<usize>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let dim = support.dim();
        let n: usize = shape.iter().product();
        let h: Vec<f64> = (0..dim)
            .map(|a| (support.upper[a] - support.lower[a]) / shape[a] as f64)
            .collect();
        let mut values = Vec::with_capacity(n);
        let mut x = vec![0.0; dim];
        for flat in 0..n {
            let mut rem = flat;
            for a in (0..dim).rev() {
                let idx = rem % shape[a];
                rem /= shape[a];
                x[a] = support.lower[a] + (idx as f64 + 0.5) * h[a];
            }
            values.push(f(&x));
        }
        let cell: f64 = h.iter().product();
        let mass: f64 = values.iter().sum::<f64>() * cell;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::invalid("function has no positive finite mass on the grid"));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Self::new(support, shape, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn support(&self) -> &Region {
        &self.support
    }

    pub fn cell_measure(&self) -> f64 {
        (0..self.shape.len())
            .map(|a| (self.support.upper[a] - self.support.lower[a]) / self.shape[a] as f64)
            .product()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_measure()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Flat indices attaining the maximum value.
    pub fn argmax_set(&self) -> Vec<usize> {
        let m = self.max();
        (0..self.values.len()).filter(|&i| self.values[i] == m).collect()
    }

    /// Forward differences along `axis`, one per adjacent pair of cells.
    pub fn forward_differences(&self, axis: usize) -> Vec<f64> {
        let stride: usize = self.shape[axis + 1..].iter().product();
        let h = (self.support.upper[axis] - self.support.lower[axis]) / self.shape[axis] as f64;
        let mut out = Vec::new();
        for i in 0..self.values.len() {
            let idx = (i / stride) % self.shape[axis];
            if idx + 1 < self.shape[axis] {
                out.push((self.values[i + stride] - self.values[i]) / h);
            }
        }
        out
    }
}

/// Affine coefficient `alpha` used by [`mollify`] for a density with range `[f_min, f_max]`.
pub fn mollify_alpha(f_min: f64, f_max: f64, eps: f64) -> f64 {
    let upper = if f_max > 1.0 {
        (0.5 * eps).exp_m1() / (f_max - 1.0)
    } else {
        1.0
    };
    let lower = if f_min < 1.0 {
        -(-0.5 * eps).exp_m1() / (1.0 - f_min)
    } else {
        1.0
    };
    1.0f64.min(upper).min(lower)
}

/// Scale-and-shift `f` into `[e^{-eps/2}, e^{eps/2}]` as `alpha f + (1 - alpha)`.
///
/// Mass is preserved because the support has unit measure, the argmax set is
/// unchanged and every finite difference is scaled by the same `alpha > 0`.
pub fn mollify(f: &FiniteGridDensity, eps: f64) -> Result<FiniteGridDensity> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if (f.support.measure() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("mollification needs a unit-measure support"));
    }
    let alpha = mollify_alpha(f.min(), f.max(), eps);
    let values = f.values.iter().map(|v| alpha * v + (1.0 - alpha)).collect();
    FiniteGridDensity::new(f.support.clone(), f.shape.clone(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub max_abs: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Checks `|log q - log q'| <= eps` on every evaluation point.
pub fn mollifier_certificate(
    q_log: impl Fn(&[f64]) -> f64,
    q2_log: impl Fn(&[f64]) -> f64,
    eval: &Dataset,
    eps: f64,
) -> Result<Certificate> {
    if eval.is_empty() {
        return Err(Error::invalid("certificate needs at least one evaluation point"));
    }
    let max_abs = eval.iter().map(|x| (q_log(x) - q2_log(x)).abs()).fold(0.0, f64::max);
    let bound = eps + 1e-9;
    Ok(Certificate {
        max_abs,
        bound,
        pass: max_abs <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_geometry() {
        let r = make_ring(8, 1.0, 0.0025).unwrap();
        assert_eq!(r.components().len(), 8);
        for (j, c) in r.components().iter().enumerate() {
            let a = 2.0 * PI * j as f64 / 8.0;
            assert!((c.mean[0] - a.cos()).abs() < 1e-15);
            assert!((c.mean[1] - a.sin()).abs() < 1e-15);
            assert!((c.weight - 0.125).abs() < 1e-15);
            assert_eq!(c.variance, vec![0.0025, 0.0025]);
        }
        let one = make_ring(1, 1.0, 0.01).unwrap();
        assert_eq!(one.components()[0].mean, vec![1.0, 0.0]);
        let four = make_ring(4, 2.0, 0.01).unwrap();
        let expected = [[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]];
        for (c, e) in four.components().iter().zip(expected) {
            assert!((c.mean[0] - e[0]).abs() < 1e-12 && (c.mean[1] - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_rejects_bad_parameters() {
        assert!(matches!(make_ring(8, 0.0, 0.01), Err(Error::InvalidParameter(_))));
        assert!(matches!(make_ring(8, 1.0, -1.0), Err(Error::InvalidParameter(_))));
        assert!(make_ring(0, 1.0, 0.01).is_err());
    }

    #[test]
    fn one_dimensional_mixture_parameters() {
        let p = make_1d_mixture();
        let means: Vec<f64> = p.components().iter().map(|c| c.mean[0]).collect();
        let vars: Vec<f64> = p.components().iter().map(|c| c.variance[0]).collect();
        assert_eq!(means, vec![0.3, 0.5, 0.7]);
        assert_eq!(vars, vec![0.01, 0.1, 0.1]);
        for c in p.components() {
            assert!((c.weight - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_gaussians_deterministic() {
        let a = make_random_gaussians(10, 3).unwrap();
        let b = make_random_gaussians(10, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.components().len(), 10);
        for c in a.components() {
            assert!((0.0..=1.0).contains(&c.mean[0]));
            assert_eq!(c.variance[0], 0.01);
            assert!((c.weight - 0.1).abs() < 1e-15);
        }
        let single = make_random_gaussians(1, 9).unwrap();
        assert_eq!(single.components().len(), 1);
        assert_ne!(a, make_random_gaussians(10, 4).unwrap());
    }

    #[test]
    fn base_density_at_origin() {
        let q0 = BaseDensity::new(1);
        assert!((q0.ln_pdf(&[0.0]) + 0.918_938_533_204_672_7).abs() < 1e-12);
        let single = TargetDensity::new(
            1,
            vec![Component {
                weight: 1.0,
                mean: vec![0.0],
                variance: vec![1.0],
            }],
        )
        .unwrap();
        assert!((single.ln_pdf(&[0.0]) - q0.ln_pdf(&[0.0])).abs() < 1e-15);
        assert!((single.ln_pdf(&[1.3]) - q0.ln_pdf(&[1.3])).abs() < 1e-14);
    }

    #[test]
    fn log_density_dimension_checked() {
        let p = make_1d_mixture();
        assert!(matches!(
            p.log_density(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
        assert!(BaseDensity::new(2).log_density(&[0.0]).is_err());
    }

    #[test]
    fn log_sum_exp_lower_bound_and_far_tails_finite() {
        let p = make_ring(8, 1.0, 0.0025).unwrap();
        for x in [[0.0, 0.0], [1.0, 0.0], [50.0, -80.0], [1e3, 1e3]] {
            let v = p.ln_pdf(&x);
            assert!(v.is_finite());
            let best = p
                .components()
                .iter()
                .map(|c| c.ln_pdf(&x))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(v >= best + (0.125f64).ln() - 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let p = make_1d_mixture();
        assert!(p.sample(0, 1).is_empty());
        assert_eq!(p.sample(100, 1), p.sample(100, 1));
        assert_ne!(p.sample(100, 1), p.sample(100, 2));
    }

    #[test]
    fn linear_density_mollified_in_closed_form() {
        let support = Region::new(vec![0.0], vec![1.0]).unwrap();
        let n = 100_000;
        let f = FiniteGridDensity::from_fn(support, vec![n], |x| 2.0 * x[0]).unwrap();
        let g = mollify(&f, 0.2).unwrap();
        // alpha = 1 - e^{-0.1} as the grid resolution grows
        let alpha_closed = 1.0 - (-0.1f64).exp();
        let alpha = mollify_alpha(f.min(), f.max(), 0.2);
        assert!((alpha - alpha_closed).abs() < 1e-5);
        assert!((alpha_closed - 0.095_163).abs() < 1e-6);
        assert!((g.mass() - 1.0).abs() < 1e-9);
        assert!(g.min() >= (-0.1f64).exp() - 1e-12);
        assert!(g.max() <= (0.1f64).exp() + 1e-12);
        assert!((g.min() - 0.904_837).abs() < 1e-5);
    }

    #[test]
    fn uniform_and_large_eps_unchanged() {
        let support = Region::new(vec![0.0], vec![1.0]).unwrap();
        let u = FiniteGridDensity::from_fn(support.clone(), vec![64], |_| 1.0).unwrap();
        assert_eq!(mollify(&u, 0.3).unwrap(), u);
        let f = FiniteGridDensity::from_fn(support, vec![64], |x| 1.0 + (6.0 * x[0]).sin()).unwrap();
        assert_eq!(mollify(&f, 1e3).unwrap().values(), f.values());
    }

    #[test]
    fn mollify_rejects_non_unit_support() {
        let support = Region::new(vec![0.0], vec![2.0]).unwrap();
        assert!(FiniteGridDensity::new(support, vec![2], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn certificate_boundaries() {
        let eval = BaseDensity::new(1).sample(50, 0);
        let q = |x: &[f64]| -x[0] * x[0];
        let same = mollifier_certificate(q, q, &eval, 0.1).unwrap();
        assert_eq!(same.max_abs, 0.0);
        assert!(same.pass);
        let shifted = mollifier_certificate(q, |x: &[f64]| q(x) - 0.1, &eval, 0.1).unwrap();
        assert!((shifted.max_abs - 0.1).abs() < 1e-12);
        assert!(shifted.pass);
        let over = mollifier_certificate(q, |x: &[f64]| q(x) - 0.2, &eval, 0.1).unwrap();
        assert!(!over.pass);
        assert!(mollifier_certificate(q, q, &Dataset::new(1), 0.1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = make_ring(8, 1.0, 0.01).unwrap().sample(20, 5);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1\n"));
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn target_json_round_trip() {
        let p = make_random_gaussians(4, 11).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"components\""));
        let back: TargetDensity = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
