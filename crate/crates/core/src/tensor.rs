//! Periodic coefficient tensors `a_ij^{αβ}(y)` and their ε-rescalings.
//!
//! A tensor is stored as its *pair matrix*: a `d² × d²` row-major block whose
//! row index is the test pair `(i, α)` and column index the trial pair
//! `(j, β)`, both flattened as `i·d + α`. The bilinear density is then
//! `Σ M[(i,α),(j,β)] ∂_j u^β ∂_i v^α`, matching `a_ij^{αβ} ∂_j u^β ∂_i v^α`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the pair `(i, α)` in a pair matrix row/column.
#[inline]
pub fn pair(d: usize, i: usize, alpha: usize) -> usize {
    i * d + alpha
}

/// Dense fourth-order tensor in pair-matrix layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    d: usize,
    /// `d⁴` entries, row-major over `(i, α) × (j, β)`.
    pairs: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            pairs: vec![0.0; d.pow(4)],
        }
    }

    /// `a_ij^{αβ} = δ_ij δ^{αβ}`.
    pub fn identity(d: usize) -> Self {
        let mut t = Self::zeros(d);
        for p in 0..d * d {
            t.pairs[p * d * d + p] = 1.0;
        }
        t
    }

    pub fn scalar(d: usize, a: f64) -> Self {
        let mut t = Self::identity(d);
        t.pairs.iter_mut().for_each(|v| *v *= a);
        t
    }

    /// Builds from entries listed in `(i, j, α, β)` row-major order.
    pub fn from_ijab(d: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != d.pow(4) {
            return Err(Error::InvalidFamily(format!(
                "expected {} tensor entries for d = {d}, got {}",
                d.pow(4),
                entries.len()
            )));
        }
        let mut t = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        t.set(i, j, a, b, entries[((i * d + j) * d + a) * d + b]);
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn from_pair_matrix(d: usize, pairs: Vec<f64>) -> Self {
        assert_eq!(pairs.len(), d.pow(4));
        Self { d, pairs }
    }

    /// Entries in `(i, j, α, β)` row-major order.
    pub fn to_ijab(&self) -> Vec<f64> {
        let d = self.d;
        let mut out = Vec::with_capacity(d.pow(4));
        for i in 0..d {
            for j in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        out.push(self.get(i, j, a, b));
                    }
                }
            }
        }
        out
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn pair_matrix(&self) -> &[f64] {
        &self.pairs
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, alpha: usize, beta: usize) -> f64 {
        let n = self.d * self.d;
        self.pairs[pair(self.d, i, alpha) * n + pair(self.d, j, beta)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, alpha: usize, beta: usize, v: f64) {
        let n = self.d * self.d;
        self.pairs[pair(self.d, i, alpha) * n + pair(self.d, j, beta)] = v;
    }

    /// `a*_ij^{αβ} = a_ji^{βα}`: the transposed pair matrix.
    pub fn adjoint(&self) -> Self {
        Self {
            d: self.d,
            pairs: transpose_pairs(&self.pairs, self.d * self.d),
        }
    }

    /// `ξ : A ξ = a_ij^{αβ} ξ_i^α ξ_j^β` for `ξ` indexed `ξ[i·d + α]`.
    pub fn quadratic_form(&self, xi: &[f64]) -> f64 {
        quadratic(&self.pairs, xi)
    }

    /// Extreme eigenvalues of the symmetric part acting on `d × d` matrices.
    pub fn ellipticity_bounds(&self) -> (f64, f64) {
        symmetric_part_bounds(&self.pairs, self.d * self.d)
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        self.pairs
            .iter()
            .zip(&other.pairs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.pairs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            d: self.d,
            pairs: self.pairs.iter().map(|v| v * c).collect(),
        }
    }
}

pub(crate) fn transpose_pairs(m: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            t[c * n + r] = m[r * n + c];
        }
    }
    t
}

pub(crate) fn quadratic(m: &[f64], xi: &[f64]) -> f64 {
    let n = xi.len();
    let mut s = 0.0;
    for r in 0..n {
        for c in 0..n {
            s += m[r * n + c] * xi[r] * xi[c];
        }
    }
    s
}

/// Min and max eigenvalue of `(M + Mᵀ)/2` for an `n × n` row-major `M`.
pub fn symmetric_part_bounds(m: &[f64], n: usize) -> (f64, f64) {
    let mut s = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            s[r * n + c] = 0.5 * (m[r * n + c] + m[c * n + r]);
        }
    }
    let ev = jacobi_eigenvalues(s, n);
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Cyclic Jacobi eigenvalues of a small symmetric matrix.
pub(crate) fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    let off = |a: &[f64]| {
        let mut s = 0.0;
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    s += a[r * n + c] * a[r * n + c];
                }
            }
        }
        s
    };
    let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..64 {
        if off(&a) <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|k| a[k * n + k]).collect()
}

/// One Fourier mode `amplitude · sin(2π k·y + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigMode {
    pub amplitude: f64,
    pub wavevector: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
}

/// Serializable description of a coefficient family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    Identity,
    /// Constant tensor, entries in `(i, j, α, β)` row-major order.
    Constant { entries: Vec<f64> },
    /// Constant pair-diagonal tensor: `a_ii^{αα}` from `d²` values indexed `i·d + α`.
    Diagonal { entries: Vec<f64> },
    /// `a(y)·Id` with `a(y) = base + Σ amplitude·sin(2π k·y + phase)`.
    ScalarTrig { base: f64, modes: Vec<TrigMode> },
    /// Smoothed two-phase checkerboard `a(y)·Id` between `low` and `high`.
    Checkerboard { low: f64, high: f64, sharpness: f64 },
    /// `Id + Σ_k sin(2π k·y + φ_k) B_k` with seeded random nonsymmetric
    /// `B_k` whose Frobenius norms sum to `amplitude < 1`.
    RandomTrig { seed: u64, modes: usize, amplitude: f64 },
    /// Adds the constant skew pair matrix `S_pq = skew·sign(q − p)`.
    Skewed { base: Box<FamilySpec>, skew: f64 },
    /// `factor · base`.
    Scaled { base: Box<FamilySpec>, factor: f64 },
    /// Tensor adjoint of `base`.
    Adjoint { base: Box<FamilySpec> },
    /// Piecewise-constant samples from a CSV table (see [`read_table`]).
    Table { path: String },
}

impl FamilySpec {
    /// Whether the family is independent of `y` by construction.
    pub fn is_constant(&self) -> bool {
        match self {
            FamilySpec::Identity | FamilySpec::Constant { .. } | FamilySpec::Diagonal { .. } => true,
            FamilySpec::Skewed { base, .. } | FamilySpec::Scaled { base, .. } | FamilySpec::Adjoint { base } => base.is_constant(),
            _ => false,
        }
    }

    /// `(1 + 0.5 sin 2πy₁)·Id`.
    pub fn laminate_sine(d: usize) -> Self {
        let mut k = vec![0; d];
        k[0] = 1;
        FamilySpec::ScalarTrig {
            base: 1.0,
            modes: vec![TrigMode {
                amplitude: 0.5,
                wavevector: k,
                phase: 0.0,
            }],
        }
    }

    /// A genuinely `d`-dimensional scalar oscillation.
    pub fn product_sine(d: usize) -> Self {
        let modes = (0..d)
            .map(|k| {
                let mut w = vec![0; d];
                w[k] = 1;
                TrigMode {
                    amplitude: 0.35 / d as f64 * 2.0,
                    wavevector: w,
                    phase: 0.25 * k as f64,
                }
            })
            .collect();
        FamilySpec::ScalarTrig { base: 1.0, modes }
    }
}

/// Optional Hölder metadata `|A(x) − A(y)| ≤ τ |x − y|^λ` (max-entry norm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderMetadata {
    pub exponent: f64,
    pub seminorm: f64,
}

#[derive(Debug)]
enum Evaluator {
    Constant(Vec<f64>),
    Scalar { base: f64, modes: Vec<(Vec<f64>, f64, f64)> },
    Checkerboard { low: f64, high: f64, sharpness: f64 },
    Modal { modes: Vec<(Vec<f64>, Vec<f64>, f64)> },
    Skewed { base: Box<Evaluator>, skew: Vec<f64> },
    Scaled { base: Box<Evaluator>, factor: f64 },
    Adjoint(Box<Evaluator>),
    Table { n: usize, pairs: Vec<f64> },
}

fn phase_of(wave: &[f64], y: &[f64]) -> f64 {
    2.0 * PI * wave.iter().zip(y).map(|(k, y)| k * y).sum::<f64>()
}

impl Evaluator {
    fn eval(&self, d: usize, y: &[f64], out: &mut [f64]) {
        let n = d * d;
        match self {
            Evaluator::Constant(m) => out.copy_from_slice(m),
            Evaluator::Scalar { base, modes } => {
                let a = base
                    + modes
                        .iter()
                        .map(|(w, amp, ph)| amp * (phase_of(w, y) + ph).sin())
                        .sum::<f64>();
                fill_scalar(out, n, a);
            }
            Evaluator::Checkerboard { low, high, sharpness } => {
                let s: f64 = y.iter().map(|&t| (2.0 * PI * t).sin()).product();
                let w = 0.5 * (1.0 + (s / sharpness).tanh());
                fill_scalar(out, n, low + (high - low) * w);
            }
            Evaluator::Modal { modes } => {
                fill_scalar(out, n, 1.0);
                for (b, w, ph) in modes {
                    let s = (phase_of(w, y) + ph).sin();
                    for (o, v) in out.iter_mut().zip(b) {
                        *o += s * v;
                    }
                }
            }
            Evaluator::Skewed { base, skew } => {
                base.eval(d, y, out);
                for (o, v) in out.iter_mut().zip(skew) {
                    *o += v;
                }
            }
            Evaluator::Scaled { base, factor } => {
                base.eval(d, y, out);
                out.iter_mut().for_each(|v| *v *= factor);
            }
            Evaluator::Adjoint(base) => {
                let mut tmp = vec![0.0; n * n];
                base.eval(d, y, &mut tmp);
                for r in 0..n {
                    for c in 0..n {
                        out[c * n + r] = tmp[r * n + c];
                    }
                }
            }
            Evaluator::Table { n: res, pairs } => {
                let mut idx = 0usize;
                let mut stride = 1usize;
                for &t in y.iter().take(d) {
                    let f = t - t.floor();
                    let k = ((f * *res as f64).floor() as usize).min(res - 1);
                    idx += k * stride;
                    stride *= res;
                }
                out.copy_from_slice(&pairs[idx * n * n..(idx + 1) * n * n]);
            }
        }
    }
}

fn fill_scalar(out: &mut [f64], n: usize, a: f64) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for p in 0..n {
        out[p * n + p] = a;
    }
}

/// A 1-periodic, elliptic coefficient tensor field on `ℝ^d`.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    d: usize,
    spec: FamilySpec,
    eval: Arc<Evaluator>,
    mu: f64,
    holder: Option<HolderMetadata>,
}

/// Sample resolution used when μ has to be certified numerically.
pub fn default_certification_resolution(d: usize) -> usize {
    match d {
        1 | 2 => 256,
        _ => 48,
    }
}

/// Outcome of sampled ellipticity certification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

impl EllipticityReport {
    /// The two-sided constant `μ` with `μ ≤ lower` and `upper ≤ 1/μ`.
    pub fn mu(&self) -> f64 {
        self.lower.min(1.0 / self.upper)
    }
}

fn build_evaluator(d: usize, spec: &FamilySpec, base_dir: Option<&Path>) -> Result<Evaluator> {
    let n = d * d;
    Ok(match spec {
        FamilySpec::Identity => Evaluator::Constant(Tensor4::identity(d).pairs),
        FamilySpec::Constant { entries } => Evaluator::Constant(Tensor4::from_ijab(d, entries)?.pairs),
        FamilySpec::Diagonal { entries } => {
            if entries.len() != n {
                return Err(Error::InvalidFamily(format!("diagonal family needs {n} entries")));
            }
            let mut m = vec![0.0; n * n];
            for (p, v) in entries.iter().enumerate() {
                m[p * n + p] = *v;
            }
            Evaluator::Constant(m)
        }
        FamilySpec::ScalarTrig { base, modes } => {
            let mut out = Vec::new();
            for m in modes {
                if m.wavevector.len() != d {
                    return Err(Error::InvalidFamily(format!(
                        "wavevector {:?} does not have {d} components",
                        m.wavevector
                    )));
                }
                out.push((m.wavevector.iter().map(|&k| k as f64).collect(), m.amplitude, m.phase));
            }
            Evaluator::Scalar { base: *base, modes: out }
        }
        FamilySpec::Checkerboard { low, high, sharpness } => {
            if !(*sharpness > 0.0) {
                return Err(Error::InvalidFamily("checkerboard sharpness must be positive".into()));
            }
            Evaluator::Checkerboard {
                low: *low,
                high: *high,
                sharpness: *sharpness,
            }
        }
        FamilySpec::RandomTrig { seed, modes, amplitude } => {
            if !(0.0..1.0).contains(amplitude) {
                return Err(Error::InvalidFamily("random_trig amplitude must lie in [0, 1)".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut out = Vec::new();
            for _ in 0..*modes {
                let mut wave: Vec<f64>;
                loop {
                    wave = (0..d).map(|_| rng.random_range(-2i32..=2) as f64).collect();
                    if wave.iter().any(|&k| k != 0.0) {
                        break;
                    }
                }
                let phase = rng.random_range(0.0..2.0 * PI);
                let mut b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let fro = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                let target = amplitude / *modes as f64;
                b.iter_mut().for_each(|v| *v *= target / fro);
                out.push((b, wave, phase));
            }
            Evaluator::Modal { modes: out }
        }
        FamilySpec::Skewed { base, skew } => {
            let mut s = vec![0.0; n * n];
            for p in 0..n {
                for q in 0..n {
                    s[p * n + q] = match p.cmp(&q) {
                        std::cmp::Ordering::Less => *skew,
                        std::cmp::Ordering::Greater => -*skew,
                        std::cmp::Ordering::Equal => 0.0,
                    };
                }
            }
            Evaluator::Skewed {
                base: Box::new(build_evaluator(d, base, base_dir)?),
                skew: s,
            }
        }
        FamilySpec::Scaled { base, factor } => {
            if !(*factor > 0.0) {
                return Err(Error::InvalidFamily("scale factor must be positive".into()));
            }
            Evaluator::Scaled {
                base: Box::new(build_evaluator(d, base, base_dir)?),
                factor: *factor,
            }
        }
        FamilySpec::Adjoint { base } => Evaluator::Adjoint(Box::new(build_evaluator(d, base, base_dir)?)),
        FamilySpec::Table { path } => {
            let p = match base_dir {
                Some(dir) if Path::new(path).is_relative() => dir.join(path),
                _ => Path::new(path).to_path_buf(),
            };
            let (res, pairs) = read_table(d, &p)?;
            Evaluator::Table { n: res, pairs }
        }
    })
}

fn holder_of(d: usize, spec: &FamilySpec) -> Option<HolderMetadata> {
    let lip = |tau: f64| {
        Some(HolderMetadata {
            exponent: 1.0,
            seminorm: tau,
        })
    };
    match spec {
        FamilySpec::Identity | FamilySpec::Constant { .. } | FamilySpec::Diagonal { .. } => lip(0.0),
        FamilySpec::ScalarTrig { modes, .. } => lip(
            modes
                .iter()
                .map(|m| {
                    let k = m.wavevector.iter().map(|&k| (k * k) as f64).sum::<f64>().sqrt();
                    2.0 * PI * m.amplitude.abs() * k
                })
                .sum(),
        ),
        FamilySpec::Checkerboard { low, high, sharpness } => {
            lip((high - low).abs() * PI * (d as f64).sqrt() / sharpness)
        }
        FamilySpec::RandomTrig { amplitude, .. } => lip(2.0 * PI * amplitude * 2.0 * (d as f64).sqrt()),
        FamilySpec::Skewed { base, .. } | FamilySpec::Adjoint { base } => holder_of(d, base),
        FamilySpec::Scaled { base, factor } => holder_of(d, base).map(|h| HolderMetadata {
            exponent: h.exponent,
            seminorm: h.seminorm * factor,
        }),
        FamilySpec::Table { .. } => None,
    }
}

fn analytic_bounds(spec: &FamilySpec) -> Option<(f64, f64)> {
    match spec {
        FamilySpec::ScalarTrig { base, modes } => {
            let amp: f64 = modes.iter().map(|m| m.amplitude.abs()).sum();
            Some((base - amp, base + amp))
        }
        FamilySpec::Scaled { base, factor } => analytic_bounds(base).map(|(l, u)| (l * factor, u * factor)),
        _ => None,
    }
}

impl CoefficientField {
    /// Builds and certifies a coefficient field.
    pub fn new(d: usize, spec: FamilySpec) -> Result<Self> {
        Self::with_base_dir(d, spec, None)
    }

    /// As [`CoefficientField::new`], resolving relative table paths against `base_dir`.
    pub fn with_base_dir(d: usize, spec: FamilySpec, base_dir: Option<&Path>) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidFamily(format!("dimension {d} not in 1..=3")));
        }
        let eval = Arc::new(build_evaluator(d, &spec, base_dir)?);
        let mut field = Self {
            d,
            holder: holder_of(d, &spec),
            spec,
            eval,
            mu: 0.0,
        };
        let (lower, upper) = match (&field.spec, analytic_bounds(&field.spec)) {
            (FamilySpec::Identity | FamilySpec::Constant { .. } | FamilySpec::Diagonal { .. }, _) => {
                field.evaluate(&vec![0.0; d]).ellipticity_bounds()
            }
            (_, Some(b)) => b,
            (_, None) => {
                let r = check_ellipticity(&field, default_certification_resolution(d));
                (r.lower, r.upper)
            }
        };
        if !(lower > 0.0) {
            return Err(Error::NotElliptic { lower });
        }
        field.mu = lower.min(1.0 / upper);
        Ok(field)
    }

    pub fn identity(d: usize) -> Self {
        Self::new(d, FamilySpec::Identity).expect("identity is elliptic")
    }

    pub fn constant(tensor: &Tensor4) -> Result<Self> {
        Self::new(
            tensor.dimension(),
            FamilySpec::Constant {
                entries: tensor.to_ijab(),
            },
        )
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    /// Ellipticity constant `μ` (two-sided, as in `μ|ξ|² ≤ ξ:Aξ ≤ |ξ|²/μ`).
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn holder(&self) -> Option<HolderMetadata> {
        self.holder
    }

    pub fn is_constant(&self) -> bool {
        self.spec.is_constant()
    }

    /// Writes the pair matrix at `y` into `out` (length `d⁴`).
    #[inline]
    pub fn evaluate_into(&self, y: &[f64], out: &mut [f64]) {
        self.eval.eval(self.d, y, out);
    }

    pub fn evaluate(&self, y: &[f64]) -> Tensor4 {
        let mut out = vec![0.0; self.d.pow(4)];
        self.evaluate_into(y, &mut out);
        Tensor4::from_pair_matrix(self.d, out)
    }

    /// Field with tensor adjoint `a*_ij^{αβ} = a_ji^{βα}`.
    pub fn adjoint(&self) -> Self {
        Self {
            d: self.d,
            spec: FamilySpec::Adjoint {
                base: Box::new(self.spec.clone()),
            },
            eval: Arc::new(Evaluator::Adjoint(Box::new(
                build_evaluator(self.d, &self.spec, None).expect("spec already validated"),
            ))),
            mu: self.mu,
            holder: self.holder,
        }
    }

    /// `c · A` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut f = Self {
            d: self.d,
            spec: FamilySpec::Scaled {
                base: Box::new(self.spec.clone()),
                factor: c,
            },
            eval: Arc::new(Evaluator::Scaled {
                base: Box::new(build_evaluator(self.d, &self.spec, None)?),
                factor: c,
            }),
            mu: 0.0,
            holder: self.holder.map(|h| HolderMetadata {
                exponent: h.exponent,
                seminorm: h.seminorm * c,
            }),
        };
        if !(c > 0.0) {
            return Err(Error::InvalidFamily("scale factor must be positive".into()));
        }
        f.mu = (self.mu * c).min(1.0 / (c / self.mu));
        Ok(f)
    }
}

/// Grid nodes `k / resolution`, `k ∈ {0..resolution−1}^d`, axis 0 fastest.
pub(crate) fn sample_nodes(d: usize, resolution: usize) -> impl Iterator<Item = Vec<f64>> {
    let total = resolution.pow(d as u32);
    (0..total).map(move |mut idx| {
        let mut y = Vec::with_capacity(d);
        for _ in 0..d {
            y.push((idx % resolution) as f64 / resolution as f64);
            idx /= resolution;
        }
        y
    })
}

/// Certifies ellipticity by sampling the symmetric part on `resolution^d` nodes.
///
/// Never fails: indefinite fields are reported with `pass = false`.
pub fn check_ellipticity(field: &CoefficientField, resolution: usize) -> EllipticityReport {
    let resolution = resolution.max(2);
    let d = field.d;
    let n = d * d;
    let mut buf = vec![0.0; n * n];
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    for y in sample_nodes(d, resolution) {
        field.evaluate_into(&y, &mut buf);
        let (lo, hi) = symmetric_part_bounds(&buf, n);
        lower = lower.min(lo);
        upper = upper.max(hi);
    }
    EllipticityReport {
        lower,
        upper,
        pass: lower > 0.0,
    }
}

/// Max over sampled node pairs of `|A(x) − A(y)|_max / |x − y|^λ`.
///
/// Pairs are all node pairs at the given resolution, measured with the
/// minimal periodic image (the sup over `ℝ^d` of a periodic field). Nested
/// resolutions (`N`, `2N`) give nondecreasing estimates.
pub fn holder_seminorm_estimate(field: &CoefficientField, exponent: f64, resolution: usize) -> f64 {
    let resolution = resolution.max(2);
    let d = field.d;
    let m = d.pow(4);
    let nodes: Vec<Vec<f64>> = sample_nodes(d, resolution).collect();
    let mut samples = vec![0.0; nodes.len() * m];
    for (k, y) in nodes.iter().enumerate() {
        field.evaluate_into(y, &mut samples[k * m..(k + 1) * m]);
    }
    let h = 1.0 / resolution as f64;
    let total = nodes.len();
    let coords = |mut idx: usize| {
        let mut c = [0usize; 3];
        for slot in c.iter_mut().take(d) {
            *slot = idx % resolution;
            idx /= resolution;
        }
        c
    };
    let mut best = 0.0f64;
    for a in 0..total {
        let ca = coords(a);
        let sa = &samples[a * m..(a + 1) * m];
        for b in 0..total {
            if a == b {
                continue;
            }
            let cb = coords(b);
            let mut dist2 = 0.0;
            for k in 0..d {
                let diff = (ca[k] as i64 - cb[k] as i64).rem_euclid(resolution as i64);
                let wrapped = diff.min(resolution as i64 - diff) as f64 * h;
                dist2 += wrapped * wrapped;
            }
            let sb = &samples[b * m..(b + 1) * m];
            let diff = sa.iter().zip(sb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if diff > 0.0 {
                best = best.max(diff / dist2.sqrt().powf(exponent));
            }
        }
    }
    best
}

/// Reads a table field: header `y1,…,yd,a_i_j_alpha_beta…` (1-based indices),
/// one row per cell-centre sample of a regular `n^d` grid.
pub fn read_table(d: usize, path: &Path) -> Result<(usize, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut y_cols = Vec::new();
    let mut a_cols = vec![usize::MAX; d.pow(4)];
    let n = d * d;
    for (k, h) in headers.iter().enumerate() {
        let h = h.trim();
        if let Some(rest) = h.strip_prefix('y') {
            if rest.parse::<usize>().is_ok() {
                y_cols.push(k);
                continue;
            }
        }
        if let Some(rest) = h.strip_prefix("a_") {
            let idx: Vec<usize> = rest.split('_').filter_map(|s| s.parse().ok()).collect();
            if idx.len() == 4 && idx.iter().all(|&v| (1..=d).contains(&v)) {
                let (i, j, a, b) = (idx[0] - 1, idx[1] - 1, idx[2] - 1, idx[3] - 1);
                a_cols[pair(d, i, a) * n + pair(d, j, b)] = k;
                continue;
            }
        }
        return Err(Error::InvalidFamily(format!("unrecognised table column '{h}'")));
    }
    if y_cols.len() != d || a_cols.iter().any(|&c| c == usize::MAX) {
        return Err(Error::InvalidFamily(format!(
            "table needs {d} coordinate columns and {} tensor columns",
            d.pow(4)
        )));
    }
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    let res = (rows.len() as f64).powf(1.0 / d as f64).round() as usize;
    if res.pow(d as u32) != rows.len() || res == 0 {
        return Err(Error::InvalidFamily(format!(
            "table has {} rows, not a perfect {d}-th power",
            rows.len()
        )));
    }
    let mut pairs = vec![f64::NAN; rows.len() * n * n];
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidFamily(format!("bad number '{s}' in table")))
    };
    for row in &rows {
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &c in &y_cols {
            let y = parse(&row[c])?;
            let f = y - y.floor();
            let k = ((f * res as f64).floor() as usize).min(res - 1);
            idx += k * stride;
            stride *= res;
        }
        for (slot, &c) in a_cols.iter().enumerate() {
            pairs[idx * n * n + slot] = parse(&row[c])?;
        }
    }
    if pairs.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidFamily("table does not cover every grid cell".into()));
    }
    Ok((res, pairs))
}

/// `A(x/ε)` on a computational domain.
#[derive(Clone, Debug)]
pub struct ScaledField {
    base: CoefficientField,
    eps: f64,
}

impl ScaledField {
    pub fn new(base: CoefficientField, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidFamily(format!("ε must be positive, got {eps}")));
        }
        Ok(Self { base, eps })
    }

    pub fn base(&self) -> &CoefficientField {
        &self.base
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `A(frac(x/ε))`.
    pub fn evaluate(&self, x: &[f64]) -> Tensor4 {
        let y: Vec<f64> = x
            .iter()
            .map(|&t| {
                let s = t / self.eps;
                s - s.floor()
            })
            .collect();
        self.base.evaluate(&y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trig() -> CoefficientField {
        CoefficientField::new(2, FamilySpec::laminate_sine(2)).unwrap()
    }

    #[test]
    fn identity_has_unit_mu_and_trivial_holder() {
        let f = CoefficientField::identity(2);
        assert_eq!(f.mu(), 1.0);
        assert_eq!(
            f.holder(),
            Some(HolderMetadata {
                exponent: 1.0,
                seminorm: 0.0
            })
        );
        let r = check_ellipticity(&f, 4);
        assert_eq!((r.lower, r.upper, r.pass), (1.0, 1.0, true));
    }

    #[test]
    fn laminate_mu_is_analytic() {
        let f = trig();
        assert_eq!(f.mu(), 0.5);
        let r = check_ellipticity(&f, 4);
        assert!((r.lower - 0.5).abs() < 1e-12);
        assert!((r.upper - 1.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_bounds_are_extreme_entries() {
        let f = CoefficientField::new(
            2,
            FamilySpec::Diagonal {
                entries: vec![0.5, 1.0, 1.5, 2.0],
            },
        )
        .unwrap();
        let r = check_ellipticity(&f, 3);
        assert!((r.lower - 0.5).abs() < 1e-14 && (r.upper - 2.0).abs() < 1e-14 && r.pass);
    }

    #[test]
    fn indefinite_parameters_are_rejected_and_reported() {
        let bad = FamilySpec::ScalarTrig {
            base: 0.2,
            modes: vec![TrigMode {
                amplitude: 0.5,
                wavevector: vec![1, 0],
                phase: 0.0,
            }],
        };
        assert!(matches!(CoefficientField::new(2, bad), Err(Error::NotElliptic { .. })));
        let neg = Tensor4::scalar(2, -1.0);
        let f = CoefficientField {
            d: 2,
            spec: FamilySpec::Identity,
            eval: Arc::new(Evaluator::Constant(neg.pair_matrix().to_vec())),
            mu: 1.0,
            holder: None,
        };
        let r = check_ellipticity(&f, 2);
        assert!(!r.pass);
    }

    #[test]
    fn periodicity_holds_at_machine_precision() {
        let f = CoefficientField::new(
            2,
            FamilySpec::RandomTrig {
                seed: 3,
                modes: 3,
                amplitude: 0.6,
            },
        )
        .unwrap();
        for y in [[0.13, 0.77], [0.5, 0.25], [0.91, 0.02]] {
            let a = f.evaluate(&y);
            for shift in [[1.0, 0.0], [0.0, 1.0], [-2.0, 3.0]] {
                let b = f.evaluate(&[y[0] + shift[0], y[1] + shift[1]]);
                assert!(a.max_abs_diff(&b) < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_transposes_pairs() {
        let f = CoefficientField::new(
            2,
            FamilySpec::Skewed {
                base: Box::new(FamilySpec::laminate_sine(2)),
                skew: 0.3,
            },
        )
        .unwrap();
        let y = [0.3, 0.6];
        let a = f.evaluate(&y);
        let b = f.adjoint().evaluate(&y);
        for i in 0..2 {
            for j in 0..2 {
                for al in 0..2 {
                    for be in 0..2 {
                        assert_eq!(b.get(i, j, al, be), a.get(j, i, be, al));
                    }
                }
            }
        }
        // skew part leaves the quadratic form unchanged
        let xi = [0.3, -1.2, 0.7, 2.0];
        let s = f.evaluate(&y).quadratic_form(&xi);
        let base = CoefficientField::new(2, FamilySpec::laminate_sine(2)).unwrap();
        assert!((s - base.evaluate(&y).quadratic_form(&xi)).abs() < 1e-12);
    }

    #[test]
    fn holder_constant_field_is_zero_and_laminate_tends_to_pi() {
        assert_eq!(holder_seminorm_estimate(&CoefficientField::identity(2), 0.5, 8), 0.0);
        let f = trig();
        let coarse = holder_seminorm_estimate(&f, 1.0, 16);
        let fine = holder_seminorm_estimate(&f, 1.0, 32);
        assert!(coarse <= fine + 1e-15);
        assert!(fine <= PI);
        assert!((PI - fine) / PI < 0.01, "{fine}");
        let degenerate = holder_seminorm_estimate(&f, 0.7, 2);
        assert!(degenerate.is_finite() && degenerate >= 0.0);
    }

    #[test]
    fn scaled_field_reads_base_at_fractional_part() {
        let base = trig();
        let s = ScaledField::new(base.clone(), 0.125).unwrap();
        let x = [0.3, 0.71];
        let y = [0.3f64 / 0.125, 0.71f64 / 0.125];
        let y = [y[0] - y[0].floor(), y[1] - y[1].floor()];
        assert_eq!(s.evaluate(&x), base.evaluate(&y));
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let m = vec![2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let mut ev = jacobi_eigenvalues(m, 3);
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12 && (ev[2] - 5.0).abs() < 1e-12);
    }
}
