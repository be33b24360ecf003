//! Synthetic data: low-rank and sparse transition blocks, joint stabilization,
//! structured Gaussian noise and recursive simulation.

use nalgebra::{Complex, Schur, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{AdditiveMarParams, MatrixSeries};
use crate::Matrix;

/// RNG streams, one per generated artifact.
pub mod streams {
    pub const TRUTH_LOW_RANK: u64 = 1;
    pub const TRUTH_SPARSE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const NOISE_COVARIANCE: u64 = 4;
}

/// Generator for `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Structure {
    LowRankOnly,
    SparseOnly,
    #[default]
    LowRankPlusSparse,
}

impl Structure {
    pub fn name(self) -> &'static str {
        match self {
            Structure::LowRankOnly => "lowrank_only",
            Structure::SparseOnly => "sparse_only",
            Structure::LowRankPlusSparse => "lowrank_plus_sparse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lowrank_only" => Ok(Structure::LowRankOnly),
            "sparse_only" => Ok(Structure::SparseOnly),
            "lowrank_plus_sparse" => Ok(Structure::LowRankPlusSparse),
            other => Err(Error::arg(format!("unknown structure `{other}`"))),
        }
    }

    fn has_low_rank(self) -> bool {
        self != Structure::SparseOnly
    }

    fn has_sparse(self) -> bool {
        self != Structure::LowRankOnly
    }
}

/// Noise covariance `Cov(E_ij, E_kl) = Sigma1_ik [j = l] + [i = k] Sigma2_jl`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Iid { sigma: f64 },
    KroneckerSum { sigma1: Matrix, sigma2: Matrix },
    /// `Sigma_k = G^T G / d_k` with standard normal `G`, drawn from the seed.
    RandomKroneckerSum,
}

impl NoiseSpec {
    pub fn default_for(d1: usize, d2: usize) -> Self {
        NoiseSpec::KroneckerSum {
            sigma1: Matrix::identity(d1, d1) * 0.5,
            sigma2: Matrix::identity(d2, d2) * 0.5,
        }
    }
}

fn check_psd(m: &Matrix, name: &str, d: usize) -> Result<()> {
    if m.shape() != (d, d) {
        return Err(Error::dim(format!("{name} must be {d}x{d}, got {:?}", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg(format!("{name} has non-finite entries")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * m.amax().max(1.0) {
        return Err(Error::arg(format!("{name} is not symmetric")));
    }
    let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if min < -1e-10 {
        return Err(Error::arg(format!("{name} is not positive semi-definite (eigenvalue {min})")));
    }
    Ok(())
}

/// Random PSD matrix `G^T G / d`.
pub fn random_psd<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.transpose() * g / d as f64
}

/// Covariance of the column-stacked noise: `I_{d2} (x) Sigma1 + Sigma2 (x) I_{d1}`.
pub fn kron_sum_covariance(sigma1: &Matrix, sigma2: &Matrix) -> Matrix {
    let (d1, d2) = (sigma1.nrows(), sigma2.nrows());
    let n = d1 * d2;
    Matrix::from_fn(n, n, |r, c| {
        let (i, j) = (r % d1, r / d1);
        let (k, l) = (c % d1, c / d1);
        let mut v = 0.0;
        if j == l {
            v += sigma1[(i, k)];
        }
        if i == k {
            v += sigma2[(j, l)];
        }
        v
    })
}

/// Draws noise matrices; the covariance factor is computed once.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    d1: usize,
    d2: usize,
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Iid(f64),
    Factor(Matrix),
}

impl NoiseSampler {
    /// `RandomKroneckerSum` draws its matrices from `rng`.
    pub fn new<R: Rng + ?Sized>(spec: &NoiseSpec, d1: usize, d2: usize, rng: &mut R) -> Result<Self> {
        let kind = match spec {
            NoiseSpec::Iid { sigma } => {
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::arg(format!("noise sigma must be finite and >= 0, got {sigma}")));
                }
                SamplerKind::Iid(*sigma)
            }
            NoiseSpec::KroneckerSum { sigma1, sigma2 } => {
                check_psd(sigma1, "Sigma1", d1)?;
                check_psd(sigma2, "Sigma2", d2)?;
                SamplerKind::Factor(psd_factor(&kron_sum_covariance(sigma1, sigma2)))
            }
            NoiseSpec::RandomKroneckerSum => {
                let s1 = random_psd(d1, rng);
                let s2 = random_psd(d2, rng);
                SamplerKind::Factor(psd_factor(&kron_sum_covariance(&s1, &s2)))
            }
        };
        Ok(Self { d1, d2, kind })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        let (d1, d2) = (self.d1, self.d2);
        match &self.kind {
            SamplerKind::Iid(s) => Matrix::from_fn(d1, d2, |_, _| s * rng.sample::<f64, _>(StandardNormal)),
            SamplerKind::Factor(f) => {
                let z = nalgebra::DVector::from_fn(d1 * d2, |_, _| rng.sample::<f64, _>(StandardNormal));
                let v = f * z;
                Matrix::from_column_slice(d1, d2, v.as_slice())
            }
        }
    }
}

/// Symmetric square root `Q diag(sqrt(max(lambda, 0))) Q^T`.
fn psd_factor(sigma: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(sigma.clone());
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// One draw of `E` with `vec(E) ~ N(0, Sigma)`.
pub fn sample_noise<R: Rng + ?Sized>(spec: &NoiseSpec, d1: usize, d2: usize, rng: &mut R) -> Result<Matrix> {
    Ok(NoiseSampler::new(spec, d1, d2, rng)?.sample(rng))
}

/// `d x d` matrix of rank `r`: SVD of a Uniform(0, 1) matrix with `d - r`
/// randomly chosen singular values set to zero.
pub fn gen_lowrank<R: Rng + ?Sized>(d: usize, r: usize, rng: &mut R) -> Result<Matrix> {
    if r > d {
        return Err(Error::arg(format!("rank {r} exceeds dimension {d}")));
    }
    if r == 0 {
        return Ok(Matrix::zeros(d, d));
    }
    let m = Matrix::from_fn(d, d, |_, _| rng.random::<f64>());
    let svd = m.svd(true, true);
    let keep = sample(rng, d, r).into_vec();
    let mut s = nalgebra::DVector::zeros(d);
    for k in keep {
        s[k] = svd.singular_values[k];
    }
    let (u, v_t) = (svd.u.expect("U"), svd.v_t.expect("V^T"));
    Ok(u * Matrix::from_diagonal(&s) * v_t)
}

/// `d x d` matrix with exactly `round(density d^2)` nonzeros at random
/// positions, magnitudes Uniform(0.1, 1) and fair-coin signs.
pub fn gen_sparse<R: Rng + ?Sized>(d: usize, density: f64, rng: &mut R) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::arg(format!("edge density must be in [0, 1], got {density}")));
    }
    let total = d * d;
    let k = ((density * total as f64).round() as usize).min(total);
    let mut out = Matrix::zeros(d, d);
    for pos in sample(rng, total, k).into_vec() {
        let mag = rng.random_range(0.1..1.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        out[(pos / d, pos % d)] = sign * mag;
    }
    Ok(out)
}

fn eigenvalues(m: &Matrix) -> Result<Vec<Complex<f64>>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 0).ok_or_else(|| Error::Numeric("eigenvalue solver failed".into()))?;
    Ok(schur.complex_eigenvalues().iter().cloned().collect())
}

/// `max |lambda_i(A) + mu_j(B)|`, the spectral radius of `I (x) A + B (x) I`.
pub fn kron_sum_spectral_radius(a: &Matrix, b: &Matrix) -> Result<f64> {
    if !a.is_square() || !b.is_square() {
        return Err(Error::dim("spectral radius needs square matrices"));
    }
    let (ea, eb) = (eigenvalues(a)?, eigenvalues(b)?);
    let mut rho = 0.0f64;
    for x in &ea {
        for y in &eb {
            rho = rho.max((x + y).norm());
        }
    }
    Ok(rho)
}

/// Scales `(A, B)` by `min(1, rho_target / rho)`; also returns the factor.
pub fn stabilize(a: &Matrix, b: &Matrix, rho_target: f64) -> Result<(Matrix, Matrix, f64)> {
    if !(rho_target > 0.0 && rho_target < 1.0) {
        return Err(Error::arg(format!("rho_target must be in (0, 1), got {rho_target}")));
    }
    let rho = kron_sum_spectral_radius(a, b)?;
    let c = if rho > rho_target { rho_target / rho } else { 1.0 };
    Ok((a * c, b * c, c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub d1: usize,
    pub d2: usize,
    pub t: usize,
    pub r1: usize,
    pub r2: usize,
    pub e1: f64,
    pub e2: f64,
    pub rho_target: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub burn_in: usize,
    pub structure: Structure,
}

impl SimulationConfig {
    /// Defaults: `rho_target = 0.8`, `burn_in = 200`, `Sigma_k = 0.5 I`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(d1: usize, d2: usize, t: usize, r1: usize, r2: usize, e1: f64, e2: f64, seed: u64) -> Self {
        Self {
            d1,
            d2,
            t,
            r1,
            r2,
            e1,
            e2,
            rho_target: 0.8,
            noise: NoiseSpec::default_for(d1, d2),
            seed,
            burn_in: 200,
            structure: Structure::LowRankPlusSparse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 {
            return Err(Error::arg("d1 and d2 must be positive"));
        }
        if self.t < 2 {
            return Err(Error::arg(format!("T must be >= 2, got {}", self.t)));
        }
        if self.r1 > self.d1 || self.r2 > self.d2 {
            return Err(Error::arg(format!(
                "ranks ({}, {}) exceed dimensions ({}, {})",
                self.r1, self.r2, self.d1, self.d2
            )));
        }
        for (name, e) in [("e1", self.e1), ("e2", self.e2)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::arg(format!("{name} must be in [0, 1], got {e}")));
            }
        }
        if !(self.rho_target > 0.0 && self.rho_target < 1.0) {
            return Err(Error::arg(format!("rho_target must be in (0, 1), got {}", self.rho_target)));
        }
        Ok(())
    }
}

/// Ground-truth parameters for `cfg`, jointly stabilized.
pub fn generate_truth(cfg: &SimulationConfig) -> Result<AdditiveMarParams> {
    cfg.validate()?;
    let (d1, d2) = (cfg.d1, cfg.d2);
    let mut rng_l = stream_rng(cfg.seed, streams::TRUTH_LOW_RANK);
    let mut rng_s = stream_rng(cfg.seed, streams::TRUTH_SPARSE);
    let (l1, l2) = if cfg.structure.has_low_rank() {
        (gen_lowrank(d1, cfg.r1, &mut rng_l)?, gen_lowrank(d2, cfg.r2, &mut rng_l)?)
    } else {
        (Matrix::zeros(d1, d1), Matrix::zeros(d2, d2))
    };
    let (s1, s2) = if cfg.structure.has_sparse() {
        (gen_sparse(d1, cfg.e1, &mut rng_s)?, gen_sparse(d2, cfg.e2, &mut rng_s)?)
    } else {
        (Matrix::zeros(d1, d1), Matrix::zeros(d2, d2))
    };
    let (_, _, c) = stabilize(&(&l1 + &s1), &(&l2 + &s2), cfg.rho_target)?;
    AdditiveMarParams::new(l1 * c, s1 * c, l2 * c, s2 * c)
}

/// Records `y0` and then `t - 1` further steps of the recursion.
pub fn simulate_series<R: Rng + ?Sized>(
    params: &AdditiveMarParams,
    y0: &Matrix,
    t: usize,
    noise: Option<&NoiseSampler>,
    rng: &mut R,
) -> Result<MatrixSeries> {
    if y0.shape() != (params.d1(), params.d2()) {
        return Err(Error::dim("initial matrix does not match the parameters"));
    }
    let mut out = Vec::with_capacity(t);
    let mut y = y0.clone();
    out.push(y.clone());
    for _ in 1..t {
        y = step(params, &y, noise, rng);
        out.push(y.clone());
    }
    MatrixSeries::new(out)
}

fn step<R: Rng + ?Sized>(params: &AdditiveMarParams, y: &Matrix, noise: Option<&NoiseSampler>, rng: &mut R) -> Matrix {
    let mut next = params.apply(y);
    if let Some(n) = noise {
        next += n.sample(rng);
    }
    next
}

/// Generates the truth, runs `burn_in` steps from zero, then records `T` matrices.
pub fn simulate(cfg: &SimulationConfig) -> Result<(MatrixSeries, AdditiveMarParams)> {
    let truth = generate_truth(cfg)?;
    let mut cov_rng = stream_rng(cfg.seed, streams::NOISE_COVARIANCE);
    let sampler = NoiseSampler::new(&cfg.noise, cfg.d1, cfg.d2, &mut cov_rng)?;
    let mut rng = stream_rng(cfg.seed, streams::NOISE);
    let mut y = Matrix::zeros(cfg.d1, cfg.d2);
    for _ in 0..cfg.burn_in {
        y = step(&truth, &y, Some(&sampler), &mut rng);
    }
    let mut out = Vec::with_capacity(cfg.t);
    for _ in 0..cfg.t {
        y = step(&truth, &y, Some(&sampler), &mut rng);
        out.push(y.clone());
    }
    Ok((MatrixSeries::new(out)?, truth))
}
