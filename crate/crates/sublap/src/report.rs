//! Verification suites and machine-readable reports.
//!
//! Four commands are wired here: `verify-identities` (the geometric identity
//! sweep on a chosen model hypersurface), `converge` (the Riemannian
//! approximation study), `simulate` (full-process Monte Carlo), and
//! `radial-compare` (full-process radial law against the one-dimensional
//! reference). Every check carries an anchor string naming the identity it
//! measures, the measured value, its threshold, and a pass flag; a suite
//! passes when all of its checks pass.
//!
//! Artifacts are written as JSON plus CSV tables with a fixed column order
//! and fixed 17-significant-digit scientific formatting, so reruns with the
//! same seed produce byte-identical files regardless of thread count.

use std::fs;

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::Point;
use crate::diffusion::{
    self, compare_distributions, DistComparison, PathStats, RadialKind, SimConfig,
};
use crate::error::{Error, Result};
use crate::hypersurface::{ChartPoint, ModelHypersurface};
use crate::models::{ModelFamily, ModelSpace};
use crate::operators::{self, ConvergenceReport, Method};

/// Version tag of the JSON report schema.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "SUBLAP_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    VerifyIdentities,
    Converge,
    Simulate,
    RadialCompare,
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Command::VerifyIdentities => write!(f, "verify-identities"),
            Command::Converge => write!(f, "converge"),
            Command::Simulate => write!(f, "simulate"),
            Command::RadialCompare => write!(f, "radial-compare"),
        }
    }
}

/// Model selector of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSelector {
    pub family: ModelFamily,
    pub n: usize,
    pub k: Option<f64>,
}

impl Default for ModelSelector {
    fn default() -> Self {
        ModelSelector {
            family: ModelFamily::Heisenberg,
            n: 1,
            k: None,
        }
    }
}

impl ModelSelector {
    pub fn build(&self) -> Result<ModelHypersurface> {
        let k = match self.family {
            ModelFamily::Heisenberg => None,
            _ => Some(self.k.unwrap_or(1.0)),
        };
        ModelHypersurface::new(ModelSpace::from_family(self.family, self.n, k)?)
    }
}

/// Suite tolerances; every threshold of the verification suites lives here.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub normalization: f64,
    pub reeb_omega: f64,
    pub reeb_d_omega: f64,
    pub normal_residual: f64,
    pub normal_agreement: f64,
    pub eps_normal_order: f64,
    pub volume_relative: f64,
    pub divergence: f64,
    pub h2_divergence: f64,
    pub d_zeta: f64,
    pub bracket: f64,
    pub kernel_angle: f64,
    pub two_path: f64,
    pub closed_form: f64,
    pub kernel_function: f64,
    pub min_fitted_order: f64,
    pub ks_max: f64,
    pub hit_fraction_max: f64,
    pub moment_abs: f64,
    pub retraction_residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            normalization: 1e-7,
            reeb_omega: 1e-9,
            reeb_d_omega: 1e-7,
            normal_residual: 1e-9,
            normal_agreement: 1e-9,
            eps_normal_order: 1.8,
            volume_relative: 1e-8,
            divergence: 1e-6,
            h2_divergence: 1e-8,
            d_zeta: 1e-10,
            bracket: 1e-8,
            kernel_angle: 1e-6,
            two_path: 1e-6,
            closed_form: 1e-6,
            kernel_function: 1e-6,
            min_fitted_order: 1.5,
            ks_max: 0.05,
            hit_fraction_max: 0.005,
            moment_abs: 0.05,
            retraction_residual: 1e-12,
        }
    }
}

/// Settings of the convergence command.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeSettings {
    pub eps_schedule: Vec<f64>,
    pub radial_points: usize,
    pub angular_points: usize,
    pub margin: f64,
}

impl Default for ConvergeSettings {
    fn default() -> Self {
        ConvergeSettings {
            eps_schedule: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            radial_points: 6,
            angular_points: 4,
            margin: 0.2,
        }
    }
}

/// A run configuration; parsed from a single TOML document, unknown keys
/// rejected. Command-line flags override document fields.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub model: ModelSelector,
    pub tolerances: Tolerances,
    pub sim: SimConfig,
    pub converge: ConvergeSettings,
    /// Sample count of the identity sweeps.
    pub samples: usize,
    /// Master seed of the identity sweeps (simulations use `sim.seed`).
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config document: {e}")))?;
        if cfg.samples == 0 {
            cfg.samples = 1000;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        let all = [
            t.normalization,
            t.reeb_omega,
            t.reeb_d_omega,
            t.normal_residual,
            t.normal_agreement,
            t.eps_normal_order,
            t.volume_relative,
            t.divergence,
            t.h2_divergence,
            t.d_zeta,
            t.bracket,
            t.kernel_angle,
            t.two_path,
            t.closed_form,
            t.kernel_function,
            t.min_fitted_order,
            t.ks_max,
            t.hit_fraction_max,
            t.moment_abs,
            t.retraction_residual,
        ];
        if all.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Config("all tolerances must be positive".to_string()));
        }
        if self.model.n == 0 {
            return Err(Error::Config("model needs n >= 1".to_string()));
        }
        Ok(())
    }

    fn resolved_out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            return PathBuf::from(dir);
        }
        PathBuf::from("sublap-out")
    }
}

/// Direction of a check: measured value must stay below (upper) or above
/// (lower) its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    Upper,
    Lower,
}

/// One verified identity: name, the formula it pins down, the measured value
/// and the threshold it is held against.
#[derive(Clone, Debug, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub anchor: String,
    pub value: f64,
    pub threshold: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl CheckRecord {
    pub fn upper(name: &str, anchor: &str, value: f64, threshold: f64) -> Self {
        CheckRecord {
            name: name.to_string(),
            anchor: anchor.to_string(),
            value,
            threshold,
            bound: Bound::Upper,
            pass: value <= threshold,
        }
    }

    pub fn lower(name: &str, anchor: &str, value: f64, threshold: f64) -> Self {
        CheckRecord {
            name: name.to_string(),
            anchor: anchor.to_string(),
            value,
            threshold,
            bound: Bound::Lower,
            pass: value >= threshold,
        }
    }
}

/// The serialized suite outcome. The wall-clock runtime is kept out of the
/// JSON artifact so that reruns with the same seed stay byte-identical.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub command: Command,
    pub model: ModelSelector,
    pub seed: u64,
    pub checks: Vec<CheckRecord>,
    pub overall_pass: bool,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl SuiteReport {
    fn new(command: Command, model: ModelSelector, seed: u64, checks: Vec<CheckRecord>) -> Self {
        let overall_pass = checks.iter().all(|c| c.pass);
        SuiteReport {
            schema_version: SCHEMA_VERSION,
            command,
            model,
            seed,
            checks,
            overall_pass,
            runtime_seconds: 0.0,
        }
    }

    /// One line per check plus a footer, for terminal consumption.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let rel = match c.bound {
                Bound::Upper => "<=",
                Bound::Lower => ">=",
            };
            out.push_str(&format!(
                "{:<44} {:>13.6e} {} {:>9.3e}  [{}]  # {}\n",
                c.name,
                c.value,
                rel,
                c.threshold,
                if c.pass { "pass" } else { "FAIL" },
                c.anchor
            ));
        }
        out.push_str(&format!(
            "overall: {} ({} checks)\n",
            if self.overall_pass { "pass" } else { "FAIL" },
            self.checks.len()
        ));
        out
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failure: {e}")))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Sample an on-surface point through the chart, away from the tube margins.
fn sample_surface_point(
    hs: &ModelHypersurface,
    rng: &mut ChaCha8Rng,
    r_lo: f64,
    r_hi: f64,
) -> Point {
    let chart = hs.chart();
    let (lo, hi) = chart.interval();
    let hi = if hi.is_finite() { hi - 0.2 } else { r_hi };
    let r = rng.gen_range(r_lo.max(lo + 0.2)..hi.min(r_hi));
    let n = hs.space().n();
    let mut phi = Vec::with_capacity(2 * n - 1);
    for _ in 0..2 * n - 2 {
        phi.push(rng.gen_range(0.3..(std::f64::consts::PI - 0.3)));
    }
    phi.push(rng.gen_range(0.0..std::f64::consts::TAU));
    chart.to_ambient(&ChartPoint::new(r, phi))
}

/// The geometric identity sweep for one model hypersurface.
pub fn verify_identities_suite(
    hs: &ModelHypersurface,
    tol: &Tolerances,
    samples: usize,
    seed: u64,
) -> Result<Vec<CheckRecord>> {
    let ms = hs.space();
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Normalization of the contact form on the ambient model space.
    let normalization = ms.verify_normalization(samples, seed)?;
    checks.push(CheckRecord::upper(
        "normalization_residual",
        "(d omega)^n|_D = n! vol_g",
        normalization,
        tol.normalization,
    ));

    // Reeb field defining conditions.
    let omega = ms.contact_form();
    let reeb = ms.reeb_field();
    let d = ms.ambient_dim();
    let mut worst_omega: f64 = 0.0;
    let mut worst_d_omega: f64 = 0.0;
    for _ in 0..samples {
        let p = ms.sample_point(&mut rng);
        let x0 = reeb.components(&p);
        worst_omega = worst_omega.max((omega.apply(&p, &x0) - 1.0).abs());
        for _ in 0..5 {
            let mut v = DVector::from_fn(d, |_, _| rng.gen::<f64>() - 0.5);
            match ms.family() {
                ModelFamily::Heisenberg => {}
                ModelFamily::Sphere => {
                    let c = p.coords().dot(&v);
                    v -= p.coords() * c;
                }
                ModelFamily::AntiDeSitter => {
                    let c = ms.eta(p.coords(), &v) / ms.eta(p.coords(), p.coords());
                    v -= p.coords() * c;
                }
            }
            let norm = v.norm();
            if norm > 1e-9 {
                worst_d_omega = worst_d_omega.max(ms.d_omega_eval(&x0, &(v / norm)).abs());
            }
        }
    }
    checks.push(CheckRecord::upper(
        "reeb_pairing_residual",
        "omega(X0) = 1",
        worst_omega,
        tol.reeb_omega,
    ));
    checks.push(CheckRecord::upper(
        "reeb_kernel_residual",
        "d omega(X0, .) = 0",
        worst_d_omega,
        tol.reeb_d_omega,
    ));

    // Sub-Riemannian normal: defining identities and route agreement.
    let mut worst_omega_n: f64 = 0.0;
    let mut worst_unit: f64 = 0.0;
    let mut worst_w_orth: f64 = 0.0;
    let mut worst_agreement: f64 = 0.0;
    for _ in 0..samples.min(300) {
        let p = sample_surface_point(hs, &mut rng, 0.25, 3.0);
        let n_generic = hs.sub_riemannian_normal(&p)?;
        let n_closed = hs.sub_riemannian_normal_closed(&p)?;
        worst_agreement =
            worst_agreement.max((n_generic.components() - n_closed.components()).norm());
        worst_omega_n = worst_omega_n.max(omega.apply(&p, n_generic.components()).abs());
        worst_unit = worst_unit.max(
            (ms.fibre_metric(&p, n_generic.components(), n_generic.components()) - 1.0).abs(),
        );
        for y in hs.horizontal_frame(&p)? {
            worst_w_orth = worst_w_orth
                .max(ms.fibre_metric(&p, n_generic.components(), y.components()).abs());
        }
    }
    checks.push(CheckRecord::upper(
        "normal_in_distribution",
        "omega(N) = 0",
        worst_omega_n,
        tol.normal_residual,
    ));
    checks.push(CheckRecord::upper(
        "normal_unit_length",
        "g(N,N) = 1",
        worst_unit,
        tol.normal_residual,
    ));
    checks.push(CheckRecord::upper(
        "normal_orthogonal_to_w",
        "g(N,Y) = 0",
        worst_w_orth,
        tol.normal_residual,
    ));
    checks.push(CheckRecord::upper(
        "normal_route_agreement",
        "N = +/- sum_i (X_i u) X_i / sqrt(sum_i (X_i u)^2)",
        worst_agreement,
        tol.normal_agreement,
    ));

    // N_eps -> N with quadratic-order fit on a compact grid.
    {
        let eps_schedule = [0.2, 0.1, 0.05, 0.025];
        let mut sup = [0.0f64; 4];
        for _ in 0..samples.min(200) {
            let p = sample_surface_point(hs, &mut rng, 0.6, 2.4);
            let n_sr = hs.sub_riemannian_normal(&p)?;
            for (slot, &eps) in sup.iter_mut().zip(&eps_schedule) {
                let ne = hs.riemannian_normal(&p, eps)?;
                *slot = slot.max((ne.components() - n_sr.components()).norm());
            }
        }
        let order = operators::fitted_order(&eps_schedule, &sup);
        checks.push(CheckRecord::lower(
            "eps_normal_order",
            "N_eps -> N as eps -> 0",
            order,
            tol.eps_normal_order,
        ));
    }

    // Volume density: warped closed form against the direct contraction.
    let mut worst_volume: f64 = 0.0;
    for _ in 0..samples.min(300) {
        let p = sample_surface_point(hs, &mut rng, 0.25, 3.0);
        let c = hs.chart().from_ambient(&p)?;
        if !hs.chart().in_domain(&c, 0.05) {
            continue;
        }
        let a = hs.volume_density(&c)?;
        let b = hs.volume_density_contraction(&c)?;
        worst_volume = worst_volume.max((a - b).abs() / a.abs().max(1.0));
    }
    checks.push(CheckRecord::upper(
        "volume_density_agreement",
        "mu = i_N Omega = (n!/2) h_k(r)^2n prod sin(phi_i)^(2n-i-1) dr dphi",
        worst_volume,
        tol.volume_relative,
    ));

    if ms.family() == ModelFamily::Heisenberg && ms.n() == 1 {
        let rho = hs.volume_density(&ChartPoint::new(2.0, vec![0.7]))?;
        checks.push(CheckRecord::upper(
            "h1_volume_exact",
            "rho(r) = r^2/2",
            (rho - 2.0).abs(),
            1e-15,
        ));
    }

    // Radial divergence closed forms on an r-grid.
    {
        let radial = hs.radial_field();
        let (lo, hi) = hs.space().radial_interval();
        let hi = if hi.is_finite() { hi - 0.2 } else { 3.0 };
        let mut worst: f64 = 0.0;
        for i in 0..20 {
            let r = (lo + 0.2) + (hi - lo - 0.2) * i as f64 / 19.0;
            let n = ms.n();
            let mut phi = vec![std::f64::consts::FRAC_PI_2; 2 * n - 1];
            phi[2 * n - 2] = 0.5;
            let c = ChartPoint::new(r, phi);
            let got = operators::divergence_mu(hs, &radial, &c)?;
            worst = worst.max((got - operators::radial_divergence(hs, r)).abs());
        }
        let anchor = match ms.family() {
            ModelFamily::Heisenberg => "div_mu(R) = 2n/r",
            ModelFamily::Sphere => "div_mu(R) = 2nk cot(kr)",
            ModelFamily::AntiDeSitter => "div_mu(R) = 2nk coth(kr)",
        };
        checks.push(CheckRecord::upper(
            "radial_divergence",
            anchor,
            worst,
            tol.divergence,
        ));
    }

    // Quasi-contact structure and bracket generation for n >= 2.
    if ms.n() >= 2 {
        let radial = hs.radial_field();
        let mut worst_angle: f64 = 0.0;
        let mut rank_ok = true;
        for _ in 0..samples {
            let p = sample_surface_point(hs, &mut rng, 0.25, 3.0);
            let report = hs.quasi_contact_check(&p)?;
            rank_ok &= report.rank == 2 * ms.n() - 2;
            let rdir = radial.components(&p).normalize();
            let angle = report.kernel.components().dot(&rdir).abs().min(1.0).acos();
            worst_angle = worst_angle.max(angle);
        }
        checks.push(CheckRecord::upper(
            "quasi_contact_rank",
            "rank(d zeta|_W) = 2n-2",
            if rank_ok { 0.0 } else { 1.0 },
            0.5,
        ));
        checks.push(CheckRecord::upper(
            "characteristic_foliation_angle",
            "ker(d zeta|_W) = span{R}",
            worst_angle,
            tol.kernel_angle,
        ));

        let mut min_rank = usize::MAX;
        for _ in 0..samples.min(100) {
            let p = sample_surface_point(hs, &mut rng, 0.25, 3.0);
            min_rank = min_rank.min(hs.bracket_generation_rank(&p)?);
        }
        checks.push(CheckRecord::lower(
            "bracket_generation_rank",
            "span{Y_i, [Y_i, Y_j]} = TS",
            min_rank as f64,
            2.0 * ms.n() as f64,
        ));
    }

    // The explicit frame structure on the Heisenberg n = 2 hypersurface.
    if ms.family() == ModelFamily::Heisenberg && ms.n() == 2 {
        let [u1, u2, u3, u4] = hs.h2_frame()?;
        let mut worst_dzeta: f64 = 0.0;
        let mut worst_bracket: f64 = 0.0;
        let mut worst_div1: f64 = 0.0;
        let mut worst_div23: f64 = 0.0;
        for _ in 0..50 {
            let p = sample_surface_point(hs, &mut rng, 0.25, 3.0);
            let r = hs.radius(&p);
            let dz23 = ms.d_omega_eval(&u2.components(&p), &u3.components(&p));
            worst_dzeta = worst_dzeta.max((dz23 + 1.0).abs());
            let bracket = crate::calculus::lie_bracket(&u2, &u3, &p)?;
            let expected = u4.components(&p) * (-2.0 / r);
            worst_bracket = (bracket.components() - &expected)
                .amax()
                .max(worst_bracket);
            let c = hs.chart().from_ambient(&p)?;
            if hs.chart().in_domain(&c, 0.05) {
                worst_div1 =
                    worst_div1.max((operators::divergence_mu(hs, &u1, &c)? - 4.0 / r).abs());
                worst_div23 = worst_div23
                    .max(operators::divergence_mu(hs, &u2, &c)?.abs())
                    .max(operators::divergence_mu(hs, &u3, &c)?.abs());
            }
        }
        checks.push(CheckRecord::upper(
            "h2_d_zeta_pairing",
            "d zeta(U2, U3) = -1",
            worst_dzeta,
            tol.d_zeta,
        ));
        checks.push(CheckRecord::upper(
            "h2_bracket_identity",
            "[U2, U3] = -2 U4 / r",
            worst_bracket,
            tol.bracket,
        ));
        checks.push(CheckRecord::upper(
            "h2_div_u1",
            "div_mu(U1) = 4/r",
            worst_div1,
            tol.h2_divergence,
        ));
        checks.push(CheckRecord::upper(
            "h2_div_u2_u3",
            "div_mu(U2) = div_mu(U3) = 0",
            worst_div23,
            tol.h2_divergence,
        ));
    }

    // Sub-Laplacian two-path agreement plus the closed form where it exists.
    {
        let mut worst_two_path: f64 = 0.0;
        let mut worst_closed: f64 = 0.0;
        for (_, f) in operators::test_functions(hs) {
            for _ in 0..10 {
                let p = sample_surface_point(hs, &mut rng, 0.45, 2.6);
                let c = hs.chart().from_ambient(&p)?;
                if !hs.chart().in_domain(&c, 0.1) {
                    continue;
                }
                let a = operators::sublaplacian(hs, &f, &c, Method::DivGrad)?.value;
                let b = operators::sublaplacian(hs, &f, &c, Method::FrameFormula)?.value;
                worst_two_path = worst_two_path.max((a - b).abs());
                if ms.family() == ModelFamily::Heisenberg && ms.n() == 2 {
                    let cf = operators::sublaplacian(hs, &f, &c, Method::ClosedForm)?.value;
                    worst_closed = worst_closed.max((a - cf).abs());
                }
            }
        }
        checks.push(CheckRecord::upper(
            "sublaplacian_two_path",
            "div_mu(grad_S f) = sum_i (Y_i^2 + (div_mu Y_i) Y_i) f",
            worst_two_path,
            tol.two_path,
        ));
        if ms.family() == ModelFamily::Heisenberg && ms.n() == 2 {
            checks.push(CheckRecord::upper(
                "h2_closed_form",
                "Delta = U1^2 + U2^2 + U3^2 + (4/r) U1",
                worst_closed,
                tol.closed_form,
            ));
        }
    }

    // Kernel function of the radial generator on Heisenberg.
    if ms.family() == ModelFamily::Heisenberg {
        let n = ms.n();
        let e = 1.0 - 2.0 * n as f64;
        let f = operators::radial_scalar_field(hs, move |r| r.powf(e), move |r| e * r.powf(e - 1.0));
        let mut worst: f64 = 0.0;
        for i in 0..10 {
            let r = 0.5 + 0.2 * i as f64;
            let mut phi = vec![std::f64::consts::FRAC_PI_2; 2 * n - 1];
            phi[2 * n - 2] = 0.9;
            let c = ChartPoint::new(r, phi);
            worst = worst.max(
                operators::sublaplacian(hs, &f, &c, Method::DivGrad)?
                    .value
                    .abs(),
            );
        }
        checks.push(CheckRecord::upper(
            "harmonic_radial_power",
            "Delta(r^(1-2n)) = 0",
            worst,
            tol.kernel_function,
        ));
    }

    Ok(checks)
}

/// Grid for the convergence command: radial points against azimuth values,
/// polar angles (if any) held at safe interior values.
pub fn convergence_grid(hs: &ModelHypersurface, settings: &ConvergeSettings) -> Vec<ChartPoint> {
    let (lo, hi) = hs.space().radial_interval();
    let (s_lo, s_hi) = operators::support_window(hs);
    // Stay clear of the support edge nearest the characteristic set: the
    // transverse term saturates there for the largest eps of the schedule,
    // which flattens the fitted order without violating convergence.
    let r_lo = (lo + settings.margin).max(s_lo + 0.35);
    let r_hi = if hi.is_finite() {
        (hi - settings.margin).min(s_hi - 0.15)
    } else {
        s_hi - 0.15
    };
    let n = hs.space().n();
    let mut grid = Vec::new();
    for i in 0..settings.radial_points {
        let r = r_lo + (r_hi - r_lo) * i as f64 / (settings.radial_points.max(2) - 1) as f64;
        for j in 0..settings.angular_points {
            let az = 0.15 + std::f64::consts::TAU * j as f64 / settings.angular_points as f64;
            let mut phi = Vec::with_capacity(2 * n - 1);
            for l in 0..2 * n - 2 {
                phi.push(std::f64::consts::FRAC_PI_2 + 0.3 * if l % 2 == 0 { 1.0 } else { -1.0 });
            }
            phi.push(az);
            grid.push(ChartPoint::new(r, phi));
        }
    }
    grid
}

/// Run the convergence suite over the bump test functions.
pub fn converge_suite(
    hs: &ModelHypersurface,
    settings: &ConvergeSettings,
    tol: &Tolerances,
) -> Result<(Vec<ConvergenceReport>, Vec<CheckRecord>)> {
    let grid = convergence_grid(hs, settings);
    let mut reports = Vec::new();
    let mut checks = Vec::new();
    for (id, f) in operators::test_functions(hs) {
        let report = operators::convergence_study_with_margin(
            hs,
            &id,
            &f,
            &grid,
            &settings.eps_schedule,
            settings.margin,
        )?;
        let worst_ratio = report
            .sup_errors
            .windows(2)
            .map(|w| w[1] / w[0])
            .fold(0.0f64, f64::max);
        checks.push(CheckRecord::upper(
            &format!("sup_error_decreasing[{id}]"),
            "Delta_eps f -> Delta f uniformly",
            worst_ratio,
            1.0 - 1e-12,
        ));
        checks.push(CheckRecord::lower(
            &format!("fitted_order[{id}]"),
            "Delta_eps f -> Delta f uniformly",
            report.fitted_order,
            tol.min_fitted_order,
        ));
        reports.push(report);
    }
    Ok((reports, checks))
}

/// Checks shared by the simulation commands.
fn simulation_checks(
    hs: &ModelHypersurface,
    cfg: &SimConfig,
    stats: &PathStats,
    tol: &Tolerances,
    label: &str,
) -> Vec<CheckRecord> {
    let mut checks = vec![
        CheckRecord::upper(
            &format!("{label}_guard_exits"),
            "no explosion before the horizon",
            stats.guard_exits as f64,
            0.5,
        ),
        CheckRecord::upper(
            &format!("{label}_hit_fraction"),
            "the process almost surely avoids characteristic points",
            stats.hit_fraction(),
            tol.hit_fraction_max,
        ),
        CheckRecord::upper(
            &format!("{label}_retraction_residual"),
            "post-step quadric residual",
            stats.max_retraction_residual,
            tol.retraction_residual,
        ),
    ];
    if hs.space().family() == ModelFamily::Heisenberg {
        let d = 2.0 * hs.space().n() as f64 + 1.0;
        let expect = cfg.r0 * cfg.r0 + d * cfg.horizon;
        let gap = (stats.mean_r_squared() - expect).abs();
        let bound = (3.0 * stats.se_mean_r_squared()).max(tol.moment_abs);
        checks.push(CheckRecord::upper(
            &format!("{label}_squared_radius_moment"),
            "E r_T^2 = r0^2 + (2n+1) T",
            gap,
            bound,
        ));
    }
    checks
}

/// Summary of a radial-law comparison.
#[derive(Clone, Debug, Serialize)]
pub struct RadialCompareSummary {
    pub schema_version: u32,
    pub model: ModelSelector,
    pub reference: RadialKind,
    pub config: SimConfig,
    pub comparison: DistComparison,
    pub full_mean_r: f64,
    pub full_mean_r_squared: f64,
    pub reference_mean_r: f64,
    pub reference_mean_r_squared: f64,
    pub full_hit_fraction: f64,
    pub reference_hit_fraction: f64,
    pub full_guard_exits: usize,
    pub reference_guard_exits: usize,
}

/// Summary of a plain simulation run.
#[derive(Clone, Debug, Serialize)]
pub struct SimulationSummary {
    pub schema_version: u32,
    pub model: ModelSelector,
    pub config: SimConfig,
    pub completed: usize,
    pub mean_r: f64,
    pub se_mean_r: f64,
    pub mean_r_squared: f64,
    pub se_mean_r_squared: f64,
    pub hit_fraction: f64,
    pub upper_hits: usize,
    pub guard_exits: usize,
    pub clamp_warnings: usize,
    pub max_retraction_residual: f64,
    pub seed: u64,
}

fn write_snapshot_csv(path: &Path, stats: &PathStats, snapshot_idx: usize) -> Result<()> {
    let snap = &stats.snapshots[snapshot_idx];
    let mut text = String::from("path,r,hit\n");
    for (i, (&r, &hit)) in snap.radii.iter().zip(&snap.hit).enumerate() {
        text.push_str(&format!("{i},{},{}\n", fmt_float(r), hit as u8));
    }
    write_file(path, text.as_bytes())
}

fn write_histogram_csv(path: &Path, sample: &[f64], lo: f64, hi: f64, bins: usize) -> Result<()> {
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &x in sample {
        if x.is_finite() {
            let idx = (((x - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
            counts[idx] += 1;
        }
    }
    let mut text = String::from("bin_center,count\n");
    for (i, &c) in counts.iter().enumerate() {
        let center = lo + (i as f64 + 0.5) * width;
        text.push_str(&format!("{},{c}\n", fmt_float(center)));
    }
    write_file(path, text.as_bytes())
}

fn write_convergence_csvs(out: &Path, reports: &[ConvergenceReport]) -> Result<()> {
    for report in reports {
        let mut text = String::from("eps,sup_error\n");
        for (e, s) in report.eps_schedule.iter().zip(&report.sup_errors) {
            text.push_str(&format!("{},{}\n", fmt_float(*e), fmt_float(*s)));
        }
        write_file(&out.join(format!("converge_{}.csv", report.function_id)), text.as_bytes())?;

        // per-grid-point table: chart coords, Delta f, Delta_eps f and |err| per eps
        let mut header = String::from("r");
        let angle_count = report.grid.first().map(|g| g.len() - 1).unwrap_or(0);
        for a in 0..angle_count {
            header.push_str(&format!(",phi{}", a + 1));
        }
        header.push_str(",delta_f");
        for e in &report.eps_schedule {
            header.push_str(&format!(",delta_eps_f@{e}"));
        }
        for e in &report.eps_schedule {
            header.push_str(&format!(",abs_err@{e}"));
        }
        header.push('\n');
        let mut text = header;
        for (row, point) in report.grid.iter().enumerate() {
            let mut line: Vec<String> = point.iter().map(|&x| fmt_float(x)).collect();
            line.push(fmt_float(report.delta_f[row]));
            for eps_values in &report.delta_eps_f {
                line.push(fmt_float(eps_values[row]));
            }
            for eps_values in &report.delta_eps_f {
                line.push(fmt_float((eps_values[row] - report.delta_f[row]).abs()));
            }
            text.push_str(&line.join(","));
            text.push('\n');
        }
        write_file(
            &out.join(format!("converge_grid_{}.csv", report.function_id)),
            text.as_bytes(),
        )?;
    }
    Ok(())
}

/// Execute a run configuration: runs the selected suite, writes artifacts,
/// and returns the report.
pub fn run(config: &RunConfig) -> Result<SuiteReport> {
    config.validate()?;
    let command = config
        .command
        .ok_or_else(|| Error::Config("no command selected".to_string()))?;
    let started = std::time::Instant::now();
    let out = config.resolved_out_dir();
    fs::create_dir_all(&out)?;
    let hs = config.model.build()?;

    let mut report = match command {
        Command::VerifyIdentities => {
            let checks = verify_identities_suite(&hs, &config.tolerances, config.samples, config.seed)?;
            SuiteReport::new(command, config.model.clone(), config.seed, checks)
        }
        Command::Converge => {
            let (reports, checks) = converge_suite(&hs, &config.converge, &config.tolerances)?;
            write_json(&out.join("convergence.json"), &reports)?;
            write_convergence_csvs(&out, &reports)?;
            SuiteReport::new(command, config.model.clone(), config.seed, checks)
        }
        Command::Simulate => {
            let stats = diffusion::simulate_full(&hs, &config.sim)?;
            let checks = simulation_checks(&hs, &config.sim, &stats, &config.tolerances, "full");
            let summary = SimulationSummary {
                schema_version: SCHEMA_VERSION,
                model: config.model.clone(),
                config: config.sim.clone(),
                completed: stats.completed,
                mean_r: stats.mean_r(),
                se_mean_r: stats.se_mean_r(),
                mean_r_squared: stats.mean_r_squared(),
                se_mean_r_squared: stats.se_mean_r_squared(),
                hit_fraction: stats.hit_fraction(),
                upper_hits: stats.upper_hits,
                guard_exits: stats.guard_exits,
                clamp_warnings: stats.clamp_warnings,
                max_retraction_residual: stats.max_retraction_residual,
                seed: stats.seed,
            };
            write_json(&out.join("simulation_summary.json"), &summary)?;
            for i in 0..stats.snapshots.len() {
                write_snapshot_csv(&out.join(format!("snapshot_{i}.csv")), &stats, i)?;
            }
            SuiteReport::new(command, config.model.clone(), config.sim.seed, checks)
        }
        Command::RadialCompare => {
            let full = diffusion::simulate_full(&hs, &config.sim)?;
            let kind = RadialKind::for_surface(&hs);
            let reference = diffusion::simulate_radial_reference(kind, &config.sim)?;
            let comparison = compare_distributions(&full.terminal, &reference.terminal)?;
            let mut checks =
                simulation_checks(&hs, &config.sim, &full, &config.tolerances, "full");
            checks.push(CheckRecord::upper(
                "reference_hit_fraction",
                "the radial reference almost surely avoids the endpoints",
                reference.hit_fraction(),
                config.tolerances.hit_fraction_max,
            ));
            checks.push(CheckRecord::upper(
                "radial_law_ks",
                "the radial part is the order-(2n+1) reference process",
                comparison.ks,
                config.tolerances.ks_max,
            ));
            let summary = RadialCompareSummary {
                schema_version: SCHEMA_VERSION,
                model: config.model.clone(),
                reference: kind,
                config: config.sim.clone(),
                comparison,
                full_mean_r: full.mean_r(),
                full_mean_r_squared: full.mean_r_squared(),
                reference_mean_r: reference.mean_r(),
                reference_mean_r_squared: reference.mean_r_squared(),
                full_hit_fraction: full.hit_fraction(),
                reference_hit_fraction: reference.hit_fraction(),
                full_guard_exits: full.guard_exits,
                reference_guard_exits: reference.guard_exits,
            };
            write_json(&out.join("radial_summary.json"), &summary)?;
            for i in 0..full.snapshots.len() {
                write_snapshot_csv(&out.join(format!("snapshot_full_{i}.csv")), &full, i)?;
                write_snapshot_csv(
                    &out.join(format!("snapshot_reference_{i}.csv")),
                    &reference,
                    i,
                )?;
                // common binning across the pair
                let pool_lo = full.snapshots[i]
                    .radii
                    .iter()
                    .chain(&reference.snapshots[i].radii)
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                let pool_hi = full.snapshots[i]
                    .radii
                    .iter()
                    .chain(&reference.snapshots[i].radii)
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                let (lo, hi) = (pool_lo, (pool_hi - pool_lo).max(1e-9) + pool_lo);
                write_histogram_csv(
                    &out.join(format!("hist_full_{i}.csv")),
                    &full.snapshots[i].radii,
                    lo,
                    hi,
                    60,
                )?;
                write_histogram_csv(
                    &out.join(format!("hist_reference_{i}.csv")),
                    &reference.snapshots[i].radii,
                    lo,
                    hi,
                    60,
                )?;
            }
            SuiteReport::new(command, config.model.clone(), config.sim.seed, checks)
        }
    };

    report.runtime_seconds = started.elapsed().as_secs_f64();
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let text = "command = \"simulate\"\nnot_a_key = 1\n";
        assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))));
    }

    #[test]
    fn config_parses_nested_sections() {
        let text = r#"
command = "radial-compare"
seed = 7

[model]
family = "sphere"
n = 1
k = 0.5

[sim]
paths = 100
seed = 7

[tolerances]
ks_max = 0.1
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.command, Some(Command::RadialCompare));
        assert_eq!(cfg.model.family, ModelFamily::Sphere);
        assert_eq!(cfg.model.k, Some(0.5));
        assert_eq!(cfg.sim.paths, 100);
        assert!((cfg.tolerances.ks_max - 0.1).abs() < 1e-15);
        // untouched defaults survive
        assert!((cfg.tolerances.normalization - 1e-7).abs() < 1e-20);
    }

    #[test]
    fn config_rejects_nonpositive_tolerances() {
        let text = "command = \"simulate\"\n[tolerances]\nks_max = 0.0\n";
        assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))));
    }

    #[test]
    fn check_record_directions() {
        assert!(CheckRecord::upper("a", "x", 1.0, 2.0).pass);
        assert!(!CheckRecord::upper("a", "x", 3.0, 2.0).pass);
        assert!(CheckRecord::lower("b", "y", 3.0, 2.0).pass);
        assert!(!CheckRecord::lower("b", "y", 1.0, 2.0).pass);
    }

    #[test]
    fn identity_suite_passes_on_h1() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(1).unwrap()).unwrap();
        let checks = verify_identities_suite(&hs, &Tolerances::default(), 100, 11).unwrap();
        for c in &checks {
            assert!(c.pass, "check {} failed: {} vs {}", c.name, c.value, c.threshold);
        }
    }

    #[test]
    fn float_formatting_is_17_significant_digits() {
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_float(-0.25), "-2.5000000000000000e-1");
    }
}
