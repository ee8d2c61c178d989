//! Monte Carlo simulation of the diffusion with generator `Delta/2`.
//!
//! The full process is integrated by Euler–Maruyama in ambient coordinates
//! with a metric retraction back onto the hypersurface after every step. The
//! Ito coefficients are frame-free: the diffusion matrix is
//! `sigma sigma^T = sum_i Y_i Y_i^T` (the `g`-orthogonal projector onto `W`,
//! scaled by `k^2` on the quadric families), and the drift is `Delta/2`
//! applied to the ambient coordinate functions, which on the model
//! hypersurfaces reduces to closed-form expressions; the closed forms are
//! cross-checked against the finite-difference sub-Laplacian route in the
//! tests and the acceptance suite.
//!
//! Radial references are one-dimensional Euler–Maruyama schemes for the
//! Bessel, Legendre and hyperbolic Bessel processes of order `2n+1`, with the
//! same hitting and guard bookkeeping, so the law of the radial part can be
//! compared by the two-sample Kolmogorov–Smirnov distance and moment gaps.
//!
//! Reproducibility: every path owns a counter-derived ChaCha substream
//! (`set_stream(path index)` under the master seed), and statistics are
//! reduced in path order, so results are bit-identical for any thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{Point, ScalarField, Tangent};
use crate::error::{Error, Result};
use crate::hypersurface::{ChartPoint, ModelHypersurface};
use crate::models::ModelFamily;
use crate::operators::{self, Method};

/// Monte Carlo configuration for the full and radial simulations.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Start radius `r0 > 0`; the full process starts on the chart at
    /// `r = r0` with fixed or randomized angles.
    pub r0: f64,
    /// Euler–Maruyama step.
    pub step: f64,
    /// Time horizon.
    pub horizon: f64,
    /// Number of independent paths.
    pub paths: usize,
    /// Master seed; path `i` uses ChaCha stream `i`.
    pub seed: u64,
    /// Hitting threshold `delta`: a path counts as a hit when its radius
    /// reaches `delta` (or the mirrored band at the upper endpoint on the
    /// sphere). Paths entering the `delta/2` safety band are stopped.
    pub hit_threshold: f64,
    /// Guard radius; leaving it counts as an explosion and stops the path.
    pub guard_radius: f64,
    /// Times at which per-path radii are recorded.
    pub snapshot_times: Vec<f64>,
    /// Randomize the start angles uniformly instead of the fixed default.
    pub random_start_angles: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            r0: 1.0,
            step: 1e-3,
            horizon: 1.0,
            paths: 10_000,
            seed: 42,
            hit_threshold: 1e-3,
            guard_radius: 1e3,
            snapshot_times: vec![1.0],
            random_start_angles: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, interval: (f64, f64)) -> Result<()> {
        if !(self.r0 > 0.0 && self.step > 0.0 && self.horizon > 0.0 && self.hit_threshold > 0.0) {
            return Err(Error::argument("r0, step, horizon, hit threshold must be positive"));
        }
        if self.paths < 1 {
            return Err(Error::argument("need at least one path"));
        }
        if self.step > self.horizon {
            return Err(Error::argument("step exceeds the horizon"));
        }
        if self.hit_threshold >= self.r0 {
            return Err(Error::argument("hit threshold must be below the start radius"));
        }
        let (lo, hi) = interval;
        if !(self.r0 > lo && self.r0 < hi) {
            return Err(Error::argument(format!(
                "start radius {} outside the state space ({lo}, {hi})",
                self.r0
            )));
        }
        if hi.is_finite() && self.r0 >= hi - self.hit_threshold {
            return Err(Error::argument("start radius inside the upper hitting band"));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.horizon / self.step).round().max(1.0) as usize
    }

    fn snapshot_steps(&self) -> Vec<(f64, usize)> {
        let steps = self.steps();
        self.snapshot_times
            .iter()
            .map(|&t| {
                let idx = ((t / self.step).round() as usize).min(steps);
                (t, idx)
            })
            .collect()
    }
}

/// Per-time radial snapshot across paths.
#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    pub time: f64,
    /// Radius per path at the snapshot time (last value for stopped paths).
    pub radii: Vec<f64>,
    /// Hit flag per path, as of the snapshot time.
    pub hit: Vec<bool>,
}

/// Output statistics of a simulation run.
#[derive(Clone, Debug, Serialize)]
pub struct PathStats {
    /// Terminal radii of the paths that survived to the horizon.
    pub terminal: Vec<f64>,
    pub paths: usize,
    pub completed: usize,
    /// Paths whose radius reached the hit threshold.
    pub hits: usize,
    /// Hits of the upper endpoint band (sphere / Legendre only).
    pub upper_hits: usize,
    /// Paths that left the guard radius.
    pub guard_exits: usize,
    /// Inverse-trig clamp events during radius extraction.
    pub clamp_warnings: usize,
    /// Largest post-retraction constraint residual seen along any path.
    pub max_retraction_residual: f64,
    pub snapshots: Vec<Snapshot>,
    pub seed: u64,
    pub rng_scheme: String,
}

impl PathStats {
    pub fn hit_fraction(&self) -> f64 {
        self.hits as f64 / self.paths as f64
    }

    pub fn mean_r(&self) -> f64 {
        mean(&self.terminal)
    }

    pub fn var_r(&self) -> f64 {
        variance(&self.terminal)
    }

    pub fn se_mean_r(&self) -> f64 {
        (self.var_r() / self.terminal.len() as f64).sqrt()
    }

    pub fn mean_r_squared(&self) -> f64 {
        mean_of(&self.terminal, |r| r * r)
    }

    pub fn var_r_squared(&self) -> f64 {
        let sq: Vec<f64> = self.terminal.iter().map(|r| r * r).collect();
        variance(&sq)
    }

    pub fn se_mean_r_squared(&self) -> f64 {
        (self.var_r_squared() / self.terminal.len() as f64).sqrt()
    }

    /// Sorted copy of the terminal sample (the empirical CDF support).
    pub fn ecdf_sample(&self) -> Vec<f64> {
        let mut s = self.terminal.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        s
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mean_of(xs: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Frame-free Ito coefficients of the generator `Delta/2` at a point:
/// drift `b^j = (Delta x^j)/2` in closed form, a diffusion factor `sigma`
/// whose columns are the deterministic `W`-frame, and the diffusion matrix
/// `sigma sigma^T`.
#[derive(Clone, Debug)]
pub struct ItoCoefficients {
    pub drift: DVector<f64>,
    /// `d x (2n-1)` factor with `sigma sigma^T = sum_i Y_i Y_i^T`.
    pub sigma: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
}

pub fn ito_coefficients(hs: &ModelHypersurface, p: &Point) -> Result<ItoCoefficients> {
    let frame = hs.horizontal_frame(p)?;
    let d = hs.space().ambient_dim();
    let m = frame.len();
    let mut sigma = DMatrix::zeros(d, m);
    for (i, y) in frame.iter().enumerate() {
        sigma.set_column(i, y.components());
    }
    let diffusion = &sigma * sigma.transpose();
    let drift = closed_form_drift(hs, p.coords());
    Ok(ItoCoefficients {
        drift,
        sigma,
        diffusion,
    })
}

/// Closed-form coordinate drift `(Delta x^j)/2` on the model hypersurfaces.
fn closed_form_drift(hs: &ModelHypersurface, y: &DVector<f64>) -> DVector<f64> {
    let n = hs.space().n();
    let d = y.len();
    let mut b = DVector::zeros(d);
    let s2: f64 = (0..2 * n).map(|i| y[i] * y[i]).sum();
    match hs.space().family() {
        ModelFamily::Heisenberg => {
            for i in 0..2 * n {
                b[i] = y[i] / s2;
            }
        }
        ModelFamily::Sphere => {
            let k2 = hs.space().k().expect("sphere has k").powi(2);
            let c = 2.0 * n as f64 + 1.0;
            for i in 0..2 * n {
                b[i] = 0.5 * k2 * (2.0 * y[i] / s2 - c * y[i]);
            }
            b[2 * n] = -0.5 * k2 * c * y[2 * n];
        }
        ModelFamily::AntiDeSitter => {
            let k2 = hs.space().k().expect("anti-de Sitter has k").powi(2);
            let c = 2.0 * n as f64 + 1.0;
            for i in 0..2 * n {
                b[i] = 0.5 * k2 * (2.0 * y[i] / s2 + c * y[i]);
            }
            b[2 * n] = 0.5 * k2 * c * y[2 * n];
        }
    }
    b
}

/// The drift through the generator route: `(Delta x^j)/2` per ambient
/// coordinate via the finite-difference sub-Laplacian. Slow; exists as the
/// independent cross-check of the closed-form drift.
pub fn drift_via_generator(hs: &ModelHypersurface, c: &ChartPoint) -> Result<DVector<f64>> {
    let d = hs.space().ambient_dim();
    let mut b = DVector::zeros(d);
    for j in 0..d - 1 {
        let coord = ScalarField::coordinate(d, j);
        b[j] = 0.5 * operators::sublaplacian(hs, &coord, c, Method::DivGrad)?.value;
    }
    Ok(b)
}

/// Kind of one-dimensional radial reference process, of odd order `2n+1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RadialKind {
    Bessel { order: usize },
    Legendre { order: usize, k: f64 },
    HyperbolicBessel { order: usize, k: f64 },
}

impl RadialKind {
    pub fn bessel(order: usize) -> Result<Self> {
        check_order(order)?;
        Ok(RadialKind::Bessel { order })
    }

    pub fn legendre(order: usize, k: f64) -> Result<Self> {
        check_order(order)?;
        check_k(k)?;
        Ok(RadialKind::Legendre { order, k })
    }

    pub fn hyperbolic_bessel(order: usize, k: f64) -> Result<Self> {
        check_order(order)?;
        check_k(k)?;
        Ok(RadialKind::HyperbolicBessel { order, k })
    }

    /// The reference matching the radial part on a model hypersurface.
    pub fn for_surface(hs: &ModelHypersurface) -> Self {
        let order = 2 * hs.space().n() + 1;
        match hs.space().family() {
            ModelFamily::Heisenberg => RadialKind::Bessel { order },
            ModelFamily::Sphere => RadialKind::Legendre {
                order,
                k: hs.space().k().expect("sphere has k"),
            },
            ModelFamily::AntiDeSitter => RadialKind::HyperbolicBessel {
                order,
                k: hs.space().k().expect("anti-de Sitter has k"),
            },
        }
    }

    pub fn order(&self) -> usize {
        match *self {
            RadialKind::Bessel { order }
            | RadialKind::Legendre { order, .. }
            | RadialKind::HyperbolicBessel { order, .. } => order,
        }
    }

    /// Drift of the process: `(d-1)/(2r)`, `n k cot(kr)` or `n k coth(kr)`
    /// with `n = (d-1)/2`.
    pub fn drift(&self, r: f64) -> f64 {
        match *self {
            RadialKind::Bessel { order } => (order as f64 - 1.0) / (2.0 * r),
            RadialKind::Legendre { order, k } => {
                let n = (order as f64 - 1.0) / 2.0;
                n * k * (k * r).cos() / (k * r).sin()
            }
            RadialKind::HyperbolicBessel { order, k } => {
                let n = (order as f64 - 1.0) / 2.0;
                n * k * (k * r).cosh() / (k * r).sinh()
            }
        }
    }

    /// State space `(0, inf)` or `(0, pi/k)`.
    pub fn interval(&self) -> (f64, f64) {
        match *self {
            RadialKind::Legendre { k, .. } => (0.0, std::f64::consts::PI / k),
            _ => (0.0, f64::INFINITY),
        }
    }
}

fn check_order(order: usize) -> Result<()> {
    if order < 3 || order % 2 == 0 {
        return Err(Error::argument(format!(
            "radial references have odd order 2n+1 >= 3, got {order}"
        )));
    }
    Ok(())
}

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0) {
        return Err(Error::argument("curvature parameter k must be positive"));
    }
    Ok(())
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

struct PathOutcome {
    terminal: Option<f64>,
    hit: bool,
    upper_hit: bool,
    guard_exit: bool,
    clamps: usize,
    max_residual: f64,
    snapshot_radii: Vec<f64>,
    snapshot_hit: Vec<bool>,
}

fn assemble_stats(
    outcomes: Vec<PathOutcome>,
    cfg: &SimConfig,
    snapshot_steps: &[(f64, usize)],
) -> PathStats {
    let paths = outcomes.len();
    let mut stats = PathStats {
        terminal: Vec::with_capacity(paths),
        paths,
        completed: 0,
        hits: 0,
        upper_hits: 0,
        guard_exits: 0,
        clamp_warnings: 0,
        max_retraction_residual: 0.0,
        snapshots: snapshot_steps
            .iter()
            .map(|&(t, _)| Snapshot {
                time: t,
                radii: Vec::with_capacity(paths),
                hit: Vec::with_capacity(paths),
            })
            .collect(),
        seed: cfg.seed,
        rng_scheme: "chacha8, one stream per path".to_string(),
    };
    for outcome in outcomes {
        if let Some(r) = outcome.terminal {
            stats.terminal.push(r);
            stats.completed += 1;
        }
        stats.hits += (outcome.hit || outcome.upper_hit) as usize;
        stats.upper_hits += outcome.upper_hit as usize;
        stats.guard_exits += outcome.guard_exit as usize;
        stats.clamp_warnings += outcome.clamps;
        stats.max_retraction_residual = stats.max_retraction_residual.max(outcome.max_residual);
        for (snap, (&r, &h)) in stats
            .snapshots
            .iter_mut()
            .zip(outcome.snapshot_radii.iter().zip(&outcome.snapshot_hit))
        {
            snap.radii.push(r);
            snap.hit.push(h);
        }
    }
    stats
}

/// Simulate the diffusion with generator `Delta/2` on the hypersurface.
pub fn simulate_full(hs: &ModelHypersurface, cfg: &SimConfig) -> Result<PathStats> {
    cfg.validate(hs.space().radial_interval())?;
    let stepper = FullStepper::new(hs, cfg)?;
    let snapshot_steps = cfg.snapshot_steps();
    let outcomes: Vec<PathOutcome> = (0..cfg.paths)
        .into_par_iter()
        .map(|path| stepper.run_path(path, &snapshot_steps))
        .collect();
    Ok(assemble_stats(outcomes, cfg, &snapshot_steps))
}

/// Simulate a one-dimensional radial reference process.
pub fn simulate_radial_reference(kind: RadialKind, cfg: &SimConfig) -> Result<PathStats> {
    cfg.validate(kind.interval())?;
    let snapshot_steps = cfg.snapshot_steps();
    let steps = cfg.steps();
    let (_, hi) = kind.interval();
    let cfg2 = cfg.clone();
    let outcomes: Vec<PathOutcome> = (0..cfg.paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(cfg2.seed, path);
            let mut r = cfg2.r0;
            let mut hit = false;
            let mut upper_hit = false;
            let mut guard_exit = false;
            let mut stopped = false;
            let sqrt_h = cfg2.step.sqrt();
            let mut snapshot_radii = vec![f64::NAN; snapshot_steps.len()];
            let mut snapshot_hit = vec![false; snapshot_steps.len()];
            let mut record = |step_idx: usize, r: f64, hit: bool, upper: bool| {
                for (slot, &(_, idx)) in snapshot_steps.iter().enumerate() {
                    if idx == step_idx {
                        snapshot_radii[slot] = r;
                        snapshot_hit[slot] = hit || upper;
                    }
                }
            };
            record(0, r, hit, upper_hit);
            for step in 1..=steps {
                if !stopped {
                    let xi: f64 = rng.sample(StandardNormal);
                    r += kind.drift(r) * cfg2.step + sqrt_h * xi;
                    if r <= cfg2.hit_threshold {
                        hit = true;
                    }
                    if hi.is_finite() && r >= hi - cfg2.hit_threshold {
                        upper_hit = true;
                    }
                    if r <= 0.5 * cfg2.hit_threshold {
                        hit = true;
                        stopped = true;
                    }
                    if hi.is_finite() && r >= hi - 0.5 * cfg2.hit_threshold {
                        upper_hit = true;
                        stopped = true;
                    }
                    if !hi.is_finite() && r >= cfg2.guard_radius {
                        guard_exit = true;
                        stopped = true;
                    }
                }
                record(step, r, hit, upper_hit);
            }
            PathOutcome {
                terminal: (!stopped).then_some(r),
                hit,
                upper_hit,
                guard_exit,
                clamps: 0,
                max_residual: 0.0,
                snapshot_radii,
                snapshot_hit,
            }
        })
        .collect();
    Ok(assemble_stats(outcomes, cfg, &snapshot_steps))
}

/// Euler–Maruyama stepper for the full process, working in the reduced
/// ambient coordinates with the trailing defining coordinate dropped.
struct FullStepper {
    family: ModelFamily,
    n: usize,
    k: f64,
    dim: usize,
    cfg: SimConfig,
    upper: f64,
    start: Vec<f64>,
}

impl FullStepper {
    fn new(hs: &ModelHypersurface, cfg: &SimConfig) -> Result<Self> {
        let n = hs.space().n();
        let family = hs.space().family();
        let dim = match family {
            ModelFamily::Heisenberg => 2 * n,
            _ => 2 * n + 1,
        };
        let (_, upper) = hs.space().radial_interval();
        // fixed start angles: polar pi/2, azimuth 0
        let mut phi = vec![std::f64::consts::FRAC_PI_2; 2 * n - 1];
        phi[2 * n - 2] = 0.0;
        let p = hs.chart().to_ambient(&ChartPoint::new(cfg.r0, phi));
        let start: Vec<f64> = (0..dim).map(|i| p.coord(i)).collect();
        Ok(FullStepper {
            family,
            n,
            k: hs.space().k().unwrap_or(1.0),
            dim,
            cfg: cfg.clone(),
            upper,
            start,
        })
    }

    fn radius(&self, y: &[f64], clamps: &mut usize) -> f64 {
        let n2 = 2 * self.n;
        match self.family {
            ModelFamily::Heisenberg => y.iter().map(|v| v * v).sum::<f64>().sqrt(),
            ModelFamily::Sphere => {
                let c = y[n2];
                if c.abs() > 1.0 + 1e-12 {
                    *clamps += 1;
                }
                c.clamp(-1.0, 1.0).acos() / self.k
            }
            ModelFamily::AntiDeSitter => {
                let c = y[n2];
                if c < 1.0 - 1e-12 {
                    *clamps += 1;
                }
                c.max(1.0).acosh() / self.k
            }
        }
    }

    /// Post-step retraction onto the constraint set; returns the constraint
    /// residual after retraction, relative to the coordinate scale (the
    /// absolute quadric value carries a condition factor of `cosh^2(kr)` on
    /// the hyperboloid, which would swamp the measurement at large radii).
    fn retract(&self, y: &mut [f64]) -> f64 {
        match self.family {
            ModelFamily::Heisenberg => 0.0,
            ModelFamily::Sphere => {
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                for v in y.iter_mut() {
                    *v /= norm;
                }
                (y.iter().map(|v| v * v).sum::<f64>() - 1.0).abs()
            }
            ModelFamily::AntiDeSitter => {
                let n2 = 2 * self.n;
                let q: f64 = y[..n2].iter().map(|v| v * v).sum::<f64>() - y[n2] * y[n2];
                let scale = (-q).sqrt();
                for v in y.iter_mut() {
                    *v /= scale;
                }
                let sum_sq: f64 = y.iter().map(|v| v * v).sum();
                let q2: f64 = y[..n2].iter().map(|v| v * v).sum::<f64>() - y[n2] * y[n2];
                (q2 + 1.0).abs() / sum_sq.max(1.0)
            }
        }
    }

    fn run_path(&self, path: usize, snapshot_steps: &[(f64, usize)]) -> PathOutcome {
        let mut rng = path_rng(self.cfg.seed, path);
        let dim = self.dim;
        let n2 = 2 * self.n;
        let mut y = self.start.clone();
        if self.cfg.random_start_angles {
            // uniform direction via normalized Gaussian in the planar block
            let mut dir = vec![0.0f64; n2];
            loop {
                let mut norm2 = 0.0;
                for v in dir.iter_mut() {
                    *v = rng.sample(StandardNormal);
                    norm2 += *v * *v;
                }
                if norm2 > 1e-12 {
                    let planar = match self.family {
                        ModelFamily::Heisenberg => self.cfg.r0,
                        ModelFamily::Sphere => (self.k * self.cfg.r0).sin(),
                        ModelFamily::AntiDeSitter => (self.k * self.cfg.r0).sinh(),
                    };
                    let scale = planar / norm2.sqrt();
                    for (slot, v) in y[..n2].iter_mut().zip(&dir) {
                        *slot = v * scale;
                    }
                    break;
                }
            }
        }

        let steps = self.cfg.steps();
        let sqrt_h = self.cfg.step.sqrt();
        let h = self.cfg.step;
        let noise_dim = n2 - 1;
        let mut xi = vec![0.0f64; noise_dim.max(dim)];
        let mut noise = vec![0.0f64; dim];
        let mut drift = vec![0.0f64; dim];
        let mut frame: Vec<Vec<f64>> = vec![vec![0.0; dim]; noise_dim];
        let mut cands: Vec<Vec<f64>> = vec![vec![0.0; dim]; dim];

        let mut hit = false;
        let mut upper_hit = false;
        let mut guard_exit = false;
        let mut stopped = false;
        let mut clamps = 0usize;
        let mut max_residual = 0.0f64;
        let mut r = self.radius(&y, &mut clamps);
        let mut snapshot_radii = vec![f64::NAN; snapshot_steps.len()];
        let mut snapshot_hit = vec![false; snapshot_steps.len()];
        let record = |step_idx: usize, r: f64, hit: bool, upper: bool, sr: &mut [f64], sh: &mut [bool]| {
            for (slot, &(_, idx)) in snapshot_steps.iter().enumerate() {
                if idx == step_idx {
                    sr[slot] = r;
                    sh[slot] = hit || upper;
                }
            }
        };
        record(0, r, hit, upper_hit, &mut snapshot_radii, &mut snapshot_hit);

        for step in 1..=steps {
            if !stopped {
                self.drift_into(&y, &mut drift);
                self.noise_into(&y, &mut rng, &mut xi, &mut frame, &mut cands, &mut noise);
                for i in 0..dim {
                    y[i] += h * drift[i] + sqrt_h * noise[i];
                }
                let residual = self.retract(&mut y);
                max_residual = max_residual.max(residual);
                r = self.radius(&y, &mut clamps);

                if r <= self.cfg.hit_threshold {
                    hit = true;
                }
                if self.upper.is_finite() && r >= self.upper - self.cfg.hit_threshold {
                    upper_hit = true;
                }
                if r <= 0.5 * self.cfg.hit_threshold {
                    hit = true;
                    stopped = true;
                }
                if self.upper.is_finite() && r >= self.upper - 0.5 * self.cfg.hit_threshold {
                    upper_hit = true;
                    stopped = true;
                }
                if !self.upper.is_finite() && r >= self.cfg.guard_radius {
                    guard_exit = true;
                    stopped = true;
                }
            }
            record(step, r, hit, upper_hit, &mut snapshot_radii, &mut snapshot_hit);
        }

        PathOutcome {
            terminal: (!stopped).then_some(r),
            hit,
            upper_hit,
            guard_exit,
            clamps,
            max_residual,
            snapshot_radii,
            snapshot_hit,
        }
    }

    fn drift_into(&self, y: &[f64], out: &mut [f64]) {
        let n2 = 2 * self.n;
        let s2: f64 = y[..n2].iter().map(|v| v * v).sum();
        match self.family {
            ModelFamily::Heisenberg => {
                for i in 0..n2 {
                    out[i] = y[i] / s2;
                }
            }
            ModelFamily::Sphere => {
                let k2 = self.k * self.k;
                let c = 2.0 * self.n as f64 + 1.0;
                for i in 0..n2 {
                    out[i] = 0.5 * k2 * (2.0 * y[i] / s2 - c * y[i]);
                }
                out[n2] = -0.5 * k2 * c * y[n2];
            }
            ModelFamily::AntiDeSitter => {
                let k2 = self.k * self.k;
                let c = 2.0 * self.n as f64 + 1.0;
                for i in 0..n2 {
                    out[i] = 0.5 * k2 * (2.0 * y[i] / s2 + c * y[i]);
                }
                out[n2] = 0.5 * k2 * c * y[n2];
            }
        }
    }

    /// Draw `sigma . xi` with `sigma sigma^T = sum_i Y_i Y_i^T`.
    ///
    /// Heisenberg and sphere use the projector form directly (it is its own
    /// transpose square root up to the factor `k`); anti-de Sitter builds the
    /// `eta`-orthonormal frame by pivoted Gram-Schmidt.
    fn noise_into(
        &self,
        y: &[f64],
        rng: &mut ChaCha8Rng,
        xi: &mut [f64],
        frame: &mut [Vec<f64>],
        cands: &mut [Vec<f64>],
        out: &mut [f64],
    ) {
        let n2 = 2 * self.n;
        match self.family {
            ModelFamily::Heisenberg => {
                // project the Gaussian onto the orthocomplement of J x / r
                let r2: f64 = y.iter().map(|v| v * v).sum();
                for slot in xi[..n2].iter_mut() {
                    *slot = rng.sample(StandardNormal);
                }
                // c = J x with (Jx)_{2b} = -x_{2b+1}, (Jx)_{2b+1} = +x_{2b}
                let mut dot = 0.0;
                for b in 0..self.n {
                    dot += -y[2 * b + 1] * xi[2 * b] + y[2 * b] * xi[2 * b + 1];
                }
                let scale = dot / r2;
                for b in 0..self.n {
                    out[2 * b] = xi[2 * b] + y[2 * b + 1] * scale;
                    out[2 * b + 1] = xi[2 * b + 1] - y[2 * b] * scale;
                }
            }
            ModelFamily::Sphere => {
                let dim = n2 + 1;
                for slot in xi[..dim].iter_mut() {
                    *slot = rng.sample(StandardNormal);
                }
                let s2: f64 = y[..n2].iter().map(|v| v * v).sum();
                let mut dot_y = 0.0;
                for i in 0..dim {
                    dot_y += y[i] * xi[i];
                }
                let mut dot_w = 0.0;
                for b in 0..self.n {
                    dot_w += -y[2 * b + 1] * xi[2 * b] + y[2 * b] * xi[2 * b + 1];
                }
                let ws = dot_w / s2;
                for i in 0..dim {
                    out[i] = xi[i] - y[i] * dot_y;
                }
                for b in 0..self.n {
                    out[2 * b] += y[2 * b + 1] * ws;
                    out[2 * b + 1] -= y[2 * b] * ws;
                }
                for v in out.iter_mut() {
                    *v *= self.k;
                }
            }
            ModelFamily::AntiDeSitter => {
                let dim = n2 + 1;
                // constraint rows: r1 = eta y / |y| (Euclid-normalized),
                // r2 = w / s; they are Euclid-orthogonal.
                let norm_y: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s: f64 = y[..n2].iter().map(|v| v * v).sum::<f64>().sqrt();
                // candidates: ambient basis minus projections onto r1, r2
                for (j, cand) in cands[..dim].iter_mut().enumerate() {
                    // r1_j and r2_j components
                    let r1_j = if j < n2 { y[j] } else { -y[n2] } / norm_y;
                    let r2_j = if j < n2 {
                        let b = j / 2;
                        if j % 2 == 0 {
                            -y[2 * b + 1]
                        } else {
                            y[2 * b]
                        }
                    } else {
                        0.0
                    } / s;
                    for i in 0..dim {
                        let r1_i = if i < n2 { y[i] } else { -y[n2] } / norm_y;
                        let r2_i = if i < n2 {
                            let b = i / 2;
                            if i % 2 == 0 {
                                -y[2 * b + 1]
                            } else {
                                y[2 * b]
                            }
                        } else {
                            0.0
                        } / s;
                        let e = if i == j { 1.0 } else { 0.0 };
                        cand[i] = e - r1_i * r1_j - r2_i * r2_j;
                    }
                }
                // pivoted eta-Gram-Schmidt selecting 2n-1 vectors
                let eta = |a: &[f64], b: &[f64]| -> f64 {
                    let mut v = 0.0;
                    for i in 0..n2 {
                        v += a[i] * b[i];
                    }
                    v - a[n2] * b[n2]
                };
                let mut taken = vec![false; dim];
                for chosen in frame.iter_mut().take(n2 - 1) {
                    let mut best = usize::MAX;
                    let mut best_norm = f64::NEG_INFINITY;
                    for (j, cand) in cands[..dim].iter().enumerate() {
                        if taken[j] {
                            continue;
                        }
                        let nrm = eta(cand, cand);
                        if nrm > best_norm {
                            best_norm = nrm;
                            best = j;
                        }
                    }
                    taken[best] = true;
                    let inv = 1.0 / best_norm.sqrt();
                    for i in 0..dim {
                        chosen[i] = cands[best][i] * inv;
                    }
                    for (j, cand) in cands[..dim].iter_mut().enumerate() {
                        if taken[j] {
                            continue;
                        }
                        let c = eta(cand, chosen);
                        for i in 0..dim {
                            cand[i] -= c * chosen[i];
                        }
                    }
                }
                for slot in xi[..n2 - 1].iter_mut() {
                    *slot = rng.sample(StandardNormal);
                }
                for i in 0..dim {
                    let mut v = 0.0;
                    for (q, &x) in frame[..n2 - 1].iter().zip(xi.iter()) {
                        v += q[i] * x;
                    }
                    out[i] = self.k * v;
                }
            }
        }
    }
}

/// Radial series of an ambient path.
pub fn radial_extract(hs: &ModelHypersurface, path: &[Point]) -> (Vec<f64>, usize) {
    let mut clamps = 0usize;
    let n2 = 2 * hs.space().n();
    let k = hs.space().k().unwrap_or(1.0);
    let series = path
        .iter()
        .map(|p| match hs.space().family() {
            ModelFamily::Heisenberg => (0..n2).map(|i| p.coord(i) * p.coord(i)).sum::<f64>().sqrt(),
            ModelFamily::Sphere => {
                let c = p.coord(n2);
                if c.abs() > 1.0 + 1e-12 {
                    clamps += 1;
                }
                c.clamp(-1.0, 1.0).acos() / k
            }
            ModelFamily::AntiDeSitter => {
                let c = p.coord(n2);
                if c < 1.0 - 1e-12 {
                    clamps += 1;
                }
                c.max(1.0).acosh() / k
            }
        })
        .collect();
    (series, clamps)
}

/// Two-sample Kolmogorov–Smirnov statistic plus first and second moment gaps
/// with pooled standard errors.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DistComparison {
    pub ks: f64,
    pub mean_gap: f64,
    pub mean_gap_se: f64,
    pub second_moment_gap: f64,
    pub second_moment_gap_se: f64,
}

pub fn compare_distributions(a: &[f64], b: &[f64]) -> Result<DistComparison> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::argument("empty sample"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.total_cmp(y));
    sb.sort_by(|x, y| x.total_cmp(y));
    let ks = two_sample_ks_sorted(&sa, &sb);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a), variance(b));
    let a2: Vec<f64> = a.iter().map(|x| x * x).collect();
    let b2: Vec<f64> = b.iter().map(|x| x * x).collect();
    let (m2a, m2b) = (mean(&a2), mean(&b2));
    let (v2a, v2b) = (variance(&a2), variance(&b2));
    Ok(DistComparison {
        ks,
        mean_gap: ma - mb,
        mean_gap_se: (va / a.len() as f64 + vb / b.len() as f64).sqrt(),
        second_moment_gap: m2a - m2b,
        second_moment_gap_se: (v2a / a.len() as f64 + v2b / b.len() as f64).sqrt(),
    })
}

/// KS statistic on pre-sorted samples: the sup-distance of the empirical CDFs.
pub fn two_sample_ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut i = 0usize;
    let mut j = 0usize;
    let mut fa = 0.0;
    let mut fb = 0.0;
    let mut sup: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        fa = i as f64 / na;
        fb = j as f64 / nb;
        sup = sup.max((fa - fb).abs());
    }
    let _ = (fa, fb);
    sup
}

/// Convenience: tangent view of the diffusion-factor columns at a point.
pub fn diffusion_frame(hs: &ModelHypersurface, p: &Point) -> Result<Vec<Tangent>> {
    hs.horizontal_frame(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpace;

    fn heisenberg_surface(n: usize) -> ModelHypersurface {
        ModelHypersurface::new(ModelSpace::heisenberg(n).unwrap()).unwrap()
    }

    #[test]
    fn ito_diffusion_matrix_is_projector_for_heisenberg() {
        let hs = heisenberg_surface(2);
        let p = Point::new(vec![0.7, -0.4, 1.1, 0.2, 0.0]);
        let coeff = ito_coefficients(&hs, &p).unwrap();
        let a = &coeff.diffusion;
        // symmetric PSD with eigenvalues {0, 1}; trace = 2n - 1 = 3
        assert!((a - a.transpose()).norm() < 1e-12);
        assert!(((a * a) - a).norm() < 1e-12, "projector property");
        assert!((a.trace() - 3.0).abs() < 1e-12);
        // annihilates the normal and the vertical direction
        let normal = hs.sub_riemannian_normal(&p).unwrap();
        assert!((a * normal.components()).norm() < 1e-12);
    }

    #[test]
    fn ito_diffusion_eigenvalues_scale_with_k_on_quadrics() {
        // Sphere: a = k^2 * (Euclidean projector onto W), eigenvalues {0, k^2}.
        // Anti-de Sitter: a = Y Y^T for the eta-unit frame vector, whose
        // Euclidean norm is k^2 (cosh^2 + sinh^2)(kr).
        let r = 1.1;
        for (hs, k) in [
            (
                ModelHypersurface::new(ModelSpace::sphere(1, 0.5).unwrap()).unwrap(),
                0.5,
            ),
            (
                ModelHypersurface::new(ModelSpace::anti_de_sitter(1, 2.0).unwrap()).unwrap(),
                2.0,
            ),
        ] {
            let c = ChartPoint::new(r, vec![0.4]);
            let p = hs.chart().to_ambient(&c);
            let coeff = ito_coefficients(&hs, &p).unwrap();
            let a = &coeff.diffusion;
            let expected_sv = match hs.space().family() {
                ModelFamily::Sphere => k * k,
                _ => k * k * ((k * r).cosh().powi(2) + (k * r).sinh().powi(2)),
            };
            let svd = a.clone().svd(false, false);
            let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            sv.sort_by(|x, y| y.total_cmp(x));
            assert!(
                (sv[0] - expected_sv).abs() < 1e-9 * expected_sv,
                "k = {k}: leading sv {} vs {expected_sv}",
                sv[0]
            );
            assert!(sv[1].abs() < 1e-9 * expected_sv, "rank must be 2n-1 = 1");
            // sigma sigma^T equals the diffusion matrix and annihilates the normal
            assert!(((&coeff.sigma * coeff.sigma.transpose()) - a).norm() < 1e-12 * expected_sv);
            let normal = hs.sub_riemannian_normal(&p).unwrap();
            assert!((a * normal.components()).norm() < 1e-9 * expected_sv);
        }
    }

    #[test]
    fn radial_quadratic_variation_is_unit() {
        // grad r paired through the diffusion matrix gives 1 for every family:
        // the radial part carries unit noise.
        for hs in [
            heisenberg_surface(2),
            ModelHypersurface::new(ModelSpace::sphere(2, 0.5).unwrap()).unwrap(),
            ModelHypersurface::new(ModelSpace::anti_de_sitter(2, 2.0).unwrap()).unwrap(),
        ] {
            let c = ChartPoint::new(0.9, vec![1.2, 0.8, 0.3]);
            let p = hs.chart().to_ambient(&c);
            let coeff = ito_coefficients(&hs, &p).unwrap();
            let f = operators::radial_scalar_field(&hs, |r| r, |_| 1.0);
            let grad = f.gradient(&p);
            let qv = (coeff.diffusion.clone() * &grad).dot(&grad);
            assert!(
                (qv - 1.0).abs() < 1e-9,
                "family {:?}: radial qv {qv}",
                hs.space().family()
            );
        }
    }

    #[test]
    fn closed_form_drift_matches_generator_route() {
        for hs in [
            heisenberg_surface(1),
            heisenberg_surface(2),
            ModelHypersurface::new(ModelSpace::sphere(1, 1.0).unwrap()).unwrap(),
            ModelHypersurface::new(ModelSpace::sphere(2, 0.5).unwrap()).unwrap(),
            ModelHypersurface::new(ModelSpace::anti_de_sitter(1, 1.0).unwrap()).unwrap(),
            ModelHypersurface::new(ModelSpace::anti_de_sitter(2, 2.0).unwrap()).unwrap(),
        ] {
            let n = hs.space().n();
            let mut phi = vec![1.0; 2 * n - 1];
            phi[2 * n - 2] = 0.7;
            let c = ChartPoint::new(0.8, phi);
            let p = hs.chart().to_ambient(&c);
            let closed = ito_coefficients(&hs, &p).unwrap().drift;
            let fd = drift_via_generator(&hs, &c).unwrap();
            assert!(
                (closed - fd).norm() < 1e-6,
                "family {:?} n = {n}",
                hs.space().family()
            );
        }
    }

    #[test]
    fn heisenberg_radial_ito_drift_is_n_over_r() {
        // (Delta r)/2 = n/r: the drift of the radial coordinate process.
        for n in [1usize, 2] {
            let hs = heisenberg_surface(n);
            let mut phi = vec![std::f64::consts::FRAC_PI_2; 2 * n - 1];
            phi[2 * n - 2] = 0.4;
            let c = ChartPoint::new(1.3, phi);
            let f = operators::radial_scalar_field(&hs, |r| r, |_| 1.0);
            let half_delta_r =
                0.5 * operators::sublaplacian(&hs, &f, &c, Method::DivGrad).unwrap().value;
            assert!(
                (half_delta_r - n as f64 / 1.3).abs() < 1e-6,
                "n = {n}: {half_delta_r}"
            );
        }
    }

    #[test]
    fn bessel_reference_moment_identity() {
        // E r_T^2 = r0^2 + d T for the Bessel reference.
        let kind = RadialKind::bessel(3).unwrap();
        let cfg = SimConfig {
            paths: 20_000,
            step: 1e-3,
            ..SimConfig::default()
        };
        let stats = simulate_radial_reference(kind, &cfg).unwrap();
        let m2 = stats.mean_r_squared();
        let se = stats.se_mean_r_squared();
        assert!(
            (m2 - 4.0).abs() < 3.0 * se + 0.05,
            "E r^2 = {m2}, SE = {se}"
        );
        assert_eq!(stats.paths, 20_000);
        assert!(stats.hit_fraction() <= 0.005);
    }

    #[test]
    fn legendre_drift_vanishes_at_midpoint() {
        let kind = RadialKind::legendre(3, 2.0).unwrap();
        let r = std::f64::consts::FRAC_PI_2 / 2.0;
        assert!(kind.drift(r).abs() < 1e-14);
    }

    #[test]
    fn hyperbolic_drift_dominates_bessel_drift() {
        let bessel = RadialKind::bessel(3).unwrap();
        let hyp = RadialKind::hyperbolic_bessel(3, 1.0).unwrap();
        for i in 1..40 {
            let r = 0.1 * i as f64;
            assert!(hyp.drift(r) >= bessel.drift(r));
        }
        assert!((hyp.drift(1.0) - 1.0_f64.cosh() / 1.0_f64.sinh()).abs() < 1e-12);
    }

    #[test]
    fn bad_radial_orders_are_rejected() {
        assert!(RadialKind::bessel(2).is_err());
        assert!(RadialKind::bessel(4).is_err());
        assert!(RadialKind::legendre(3, -1.0).is_err());
        // r0 outside the state space
        let kind = RadialKind::legendre(3, 2.0).unwrap();
        let cfg = SimConfig {
            r0: 2.0, // pi/k = pi/2 < 2
            paths: 10,
            ..SimConfig::default()
        };
        assert!(simulate_radial_reference(kind, &cfg).is_err());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let hs = heisenberg_surface(1);
        let cfg = SimConfig {
            paths: 200,
            step: 1e-2,
            ..SimConfig::default()
        };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let s1 = pool1.install(|| simulate_full(&hs, &cfg)).unwrap();
        let s4 = pool4.install(|| simulate_full(&hs, &cfg)).unwrap();
        assert_eq!(s1.terminal, s4.terminal);
        assert_eq!(s1.hits, s4.hits);
        assert_eq!(
            s1.snapshots.last().unwrap().radii,
            s4.snapshots.last().unwrap().radii
        );
        // and a rerun in the same pool is identical too
        let s1b = pool1.install(|| simulate_full(&hs, &cfg)).unwrap();
        assert_eq!(s1.terminal, s1b.terminal);
    }

    #[test]
    fn full_heisenberg_moment_and_radial_law() {
        let hs = heisenberg_surface(1);
        let cfg = SimConfig {
            paths: 4000,
            step: 1e-3,
            ..SimConfig::default()
        };
        let full = simulate_full(&hs, &cfg).unwrap();
        assert!(full.max_retraction_residual <= 1e-12);
        assert_eq!(full.guard_exits, 0);
        assert!(full.hit_fraction() <= 0.005, "hit fraction {}", full.hit_fraction());
        // moment identity: E r_T^2 - r0^2 = (2n+1) T
        let m2 = full.mean_r_squared();
        let se = full.se_mean_r_squared();
        assert!(
            (m2 - 1.0 - 3.0).abs() <= (3.0 * se).max(0.05),
            "E r^2 = {m2} (SE {se})"
        );
        // radial law against the Bessel(3) reference
        let reference = simulate_radial_reference(RadialKind::for_surface(&hs), &cfg).unwrap();
        let cmp = compare_distributions(&full.terminal, &reference.terminal).unwrap();
        assert!(cmp.ks <= 0.05, "KS = {}", cmp.ks);
    }

    #[test]
    fn sphere_radial_law_and_endpoint_monitoring() {
        let hs = ModelHypersurface::new(ModelSpace::sphere(1, 1.0).unwrap()).unwrap();
        let cfg = SimConfig {
            paths: 4000,
            step: 1e-3,
            ..SimConfig::default()
        };
        let full = simulate_full(&hs, &cfg).unwrap();
        assert!(full.max_retraction_residual <= 1e-12);
        assert!(full.hit_fraction() <= 0.005);
        let reference = simulate_radial_reference(RadialKind::for_surface(&hs), &cfg).unwrap();
        let cmp = compare_distributions(&full.terminal, &reference.terminal).unwrap();
        assert!(cmp.ks <= 0.05, "KS = {}", cmp.ks);
    }

    #[test]
    fn ks_statistic_extremes() {
        let a = vec![1.0, 2.0, 3.0];
        assert_eq!(compare_distributions(&a, &a).unwrap().ks, 0.0);
        let b = vec![10.0, 11.0];
        assert_eq!(compare_distributions(&a, &b).unwrap().ks, 1.0);
        assert!(compare_distributions(&a, &[]).is_err());
    }

    #[test]
    fn radial_extraction_values() {
        let sphere = ModelHypersurface::new(ModelSpace::sphere(1, 1.0).unwrap()).unwrap();
        let equator = Point::new(vec![1.0, 0.0, 0.0, 0.0]);
        let (r, clamps) = radial_extract(&sphere, &[equator]);
        assert!((r[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(clamps, 0);

        let ads = ModelHypersurface::new(ModelSpace::anti_de_sitter(1, 1.0).unwrap()).unwrap();
        let c2 = 2.0_f64.cosh();
        let s2 = 2.0_f64.sinh();
        let p = Point::new(vec![s2, 0.0, c2, 0.0]);
        let (r, _) = radial_extract(&ads, &[p]);
        assert!((r[0] - 2.0).abs() < 1e-12);

        let heis = heisenberg_surface(1);
        let (r, _) = radial_extract(&heis, &[Point::new(vec![0.0, 0.0, 0.0])]);
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn config_validation() {
        let hs = heisenberg_surface(1);
        let bad = SimConfig {
            hit_threshold: 2.0,
            ..SimConfig::default()
        };
        assert!(simulate_full(&hs, &bad).is_err());
        let bad = SimConfig {
            step: 5.0,
            ..SimConfig::default()
        };
        assert!(simulate_full(&hs, &bad).is_err());
    }
}
