//! End-to-end runs: configuration, the design bundle, its re-verification,
//! and the reference reproduction table.

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackDesign, PiChoice, PiStrategy, Tolerances};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::model::{self, AssumptionReport, ClosedLoop, ControllerModel, PlantModel, SystemFile};
use crate::numerics;
use crate::observer::{self, ObserverDesign, PLACEMENT_TOL};
use crate::par::Execution;
use crate::roa::{self, BoxReport, DecayReport, RoaCertificate};
use crate::sim::{self, DecayFit, SimOptions, Trajectory};

/// Tolerance on `σ(J_φ) = σ(A) ∪ σ(F̄ + (B+L)H̄)`.
pub const AUGMENTED_TOL: f64 = 1e-6;

/// A pole as a bare number or a string such as `-1.5+2j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoleSpec {
    Real(f64),
    Text(String),
}

impl PoleSpec {
    pub fn to_complex(&self) -> Result<Complex64> {
        match self {
            PoleSpec::Real(v) => Ok(Complex64::new(*v, 0.0)),
            PoleSpec::Text(s) => parse_pole(s),
        }
    }
}

/// Parses `a`, `a+bj`, `a-bj`, `bj` (`i` accepted for `j`).
pub fn parse_pole(text: &str) -> Result<Complex64> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::Config(format!("cannot parse pole '{text}'"));
    if s.is_empty() {
        return Err(bad());
    }
    let Some(body) = s.strip_suffix('j').or_else(|| s.strip_suffix('i')) else {
        return s.parse::<f64>().map(|re| Complex64::new(re, 0.0)).map_err(|_| bad());
    };
    // split at the last sign that is not part of an exponent or the leading sign
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("0", body),
    };
    let im = match im {
        "" | "+" => "1",
        "-" => "-1",
        other => other,
    };
    let re = re.parse::<f64>().map_err(|_| bad())?;
    let im = im.parse::<f64>().map_err(|_| bad())?;
    Ok(Complex64::new(re, im))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: Option<String>,
    pub pi_star: Option<Vec<f64>>,
    pub pi_candidates: usize,
    pub gamma_fraction: f64,
    #[serde(rename = "Y_scale", alias = "y_scale")]
    pub y_scale: f64,
    pub desired_poles: Option<Vec<PoleSpec>>,
    #[serde(rename = "W1_scale", alias = "w1_scale")]
    pub w1_scale: f64,
    #[serde(rename = "W2_scale", alias = "w2_scale")]
    pub w2_scale: f64,
    pub delta_fraction: f64,
    pub dt: f64,
    #[serde(rename = "T", alias = "horizon")]
    pub horizon: f64,
    pub seed: u64,
    pub output_dir: Option<String>,
    pub z0: Option<Vec<f64>>,
    pub zhat0: Option<Vec<f64>>,
    pub decay_samples: usize,
    pub box_samples: usize,
    pub box_halfwidth: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: None,
            pi_star: None,
            pi_candidates: 64,
            gamma_fraction: fixtures::GAMMA_FRACTION,
            y_scale: fixtures::Y_SCALE,
            desired_poles: None,
            w1_scale: 1.0,
            w2_scale: 1.0,
            delta_fraction: 0.1,
            dt: 1e-3,
            horizon: 5.0,
            seed: 0,
            output_dir: None,
            z0: None,
            zhat0: None,
            decay_samples: 200,
            box_samples: 500,
            box_halfwidth: fixtures::BOX_HALFWIDTH,
        }
    }
}

impl RunConfig {
    /// The reference parameters: `π* = [1, -3]`, poles `-9.5 … -12.5`.
    pub fn reference() -> Self {
        Self {
            pi_star: Some(fixtures::PI_STAR.to_vec()),
            desired_poles: Some(fixtures::OBSERVER_POLES.iter().map(|&p| PoleSpec::Real(p)).collect()),
            z0: Some(fixtures::Z0.to_vec()),
            zhat0: Some(fixtures::ZHAT0.to_vec()),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            Error::Config(format!(
                "{} at '{}' (line {}, column {})",
                inner,
                e.path(),
                inner.line(),
                inner.column()
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must be positive and finite")))
            }
        };
        open_unit("gamma_fraction", self.gamma_fraction)?;
        open_unit("delta_fraction", self.delta_fraction)?;
        positive("Y_scale", self.y_scale)?;
        positive("W1_scale", self.w1_scale)?;
        positive("W2_scale", self.w2_scale)?;
        positive("dt", self.dt)?;
        positive("T", self.horizon)?;
        if self.horizon < self.dt {
            return Err(Error::Config(format!("T = {} is shorter than dt = {}", self.horizon, self.dt)));
        }
        if !(self.box_halfwidth >= 0.0 && self.box_halfwidth.is_finite()) {
            return Err(Error::Config(format!("box_halfwidth = {} must be non-negative", self.box_halfwidth)));
        }
        if self.pi_star.is_none() && self.pi_candidates == 0 {
            return Err(Error::Config("pi_candidates must be at least 1 when pi_star is not given".into()));
        }
        for (name, v) in [("pi_star", &self.pi_star), ("z0", &self.z0), ("zhat0", &self.zhat0)] {
            if let Some(v) = v {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config(format!("{name} has a non-finite entry")));
                }
            }
        }
        self.poles()?;
        Ok(())
    }

    pub fn poles(&self) -> Result<Option<Vec<Complex64>>> {
        self.desired_poles
            .as_ref()
            .map(|ps| ps.iter().map(PoleSpec::to_complex).collect())
            .transpose()
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions { dt: self.dt, horizon: self.horizon, stride: 1 }
    }

    fn pi_strategy(&self) -> PiStrategy {
        match &self.pi_star {
            Some(v) => PiStrategy::User(v.clone()),
            None => PiStrategy::Sampled { seed: self.seed, candidates: self.pi_candidates },
        }
    }
}

/// A validated system: models, closed loop and the assumption witnesses.
#[derive(Debug, Clone)]
pub struct System {
    pub file: SystemFile,
    pub plant: PlantModel,
    pub controller: ControllerModel,
    pub closed_loop: ClosedLoop,
}

impl System {
    pub fn from_file(file: SystemFile) -> Result<Self> {
        let (plant, controller) = file.models()?;
        let closed_loop = ClosedLoop::assemble(&plant, &controller);
        Ok(Self { file, plant, controller, closed_loop })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(SystemFile::from_json(text)?)
    }

    pub fn reference() -> Self {
        Self::from_file(fixtures::reference_system()).expect("embedded fixture is valid")
    }

    pub fn assumptions(&self) -> Result<AssumptionReport> {
        Ok(model::validate_assumptions(&self.plant, &self.controller, &self.closed_loop)?)
    }
}

/// Pass/fail flags and the margins behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub assumptions_pass: bool,
    pub forbidden_margin: f64,
    pub pi_admissible: bool,
    pub fbar_abscissa: f64,
    pub fbar_hurwitz: bool,
    pub observability_margin: f64,
    pub observable: bool,
    pub placement_error: f64,
    pub placement_ok: bool,
    pub augmented_spectrum_error: f64,
    pub augmented_ok: bool,
    pub error_block_abscissa: f64,
    pub error_block_hurwitz: bool,
    pub roa_feasible: bool,
}

impl Verification {
    pub fn design_ok(&self) -> bool {
        self.assumptions_pass
            && self.pi_admissible
            && self.fbar_hurwitz
            && self.observable
            && self.placement_ok
            && self.augmented_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignBundle {
    pub system: SystemFile,
    pub config: RunConfig,
    pub assumptions: AssumptionReport,
    pub pi_choice: PiChoice,
    pub attack: AttackDesign,
    pub observer: ObserverDesign,
    pub roa: RoaCertificate,
    pub verification: Verification,
}

impl DesignBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("design bundle: {} at '{}'", e.inner(), e.path())))
    }
}

fn scaled_identity(n: usize, s: f64) -> DMatrix<f64> {
    DMatrix::identity(n, n) * s
}

/// Recomputes every flag from the stored system, `π`, `L` and `W`'s.
pub fn verify(
    sys: &System,
    config: &RunConfig,
    design: &AttackDesign,
    obs: &ObserverDesign,
) -> Result<(Verification, RoaCertificate)> {
    let tol = Tolerances::default();
    let cl = &sys.closed_loop;
    let assumptions = sys.assumptions()?;
    let forbidden = attack::forbidden_set(&sys.plant, &sys.controller)?;
    let forbidden_margin = forbidden.margin(&design.pi_star);

    let (hbar, fbar) = attack::induced_pair(cl, &design.pi);
    let fbar_abscissa = numerics::spectral_abscissa(&numerics::eigenvalues(&fbar)?);
    let observability_margin = attack::is_observable(&fbar, &hbar, tol.obs).margin;
    let recomputed = AttackDesign { hbar, fbar, ..design.clone() };

    let placed = numerics::eigenvalues(&observer::observer_block(cl, &recomputed, &obs.gain))?;
    let placement_error = numerics::spectra_distance(&placed, &obs.desired_poles);

    let jac = observer::augmented_jacobian(cl, &recomputed, obs);
    let augmented = numerics::eigenvalues(&jac.j_phi)?;
    let mut expected = numerics::eigenvalues(cl.a())?;
    expected.extend(placed.iter().copied());
    let augmented_spectrum_error = numerics::spectra_distance(&augmented, &expected);

    let n = cl.n();
    let cert = roa::certify(
        cl,
        &recomputed,
        obs,
        &scaled_identity(n, config.w1_scale),
        &scaled_identity(n, config.w2_scale),
        config.delta_fraction,
    )?;

    Ok((
        Verification {
            assumptions_pass: assumptions.all_pass(),
            forbidden_margin,
            pi_admissible: forbidden_margin > tol.margin,
            fbar_abscissa,
            fbar_hurwitz: fbar_abscissa < 0.0,
            observability_margin,
            observable: observability_margin > tol.obs,
            placement_error,
            placement_ok: placement_error <= PLACEMENT_TOL,
            augmented_spectrum_error,
            augmented_ok: augmented_spectrum_error <= AUGMENTED_TOL,
            error_block_abscissa: cert.error_block_abscissa,
            error_block_hurwitz: cert.error_block_abscissa < 0.0,
            roa_feasible: cert.feasible,
        },
        cert,
    ))
}

/// `π*`, `γ`, `L`, the region certificate and all verification flags.
/// Assumption failures are reported as `AttackError::Assumption`; callers that
/// need the witnesses run [`System::assumptions`] first.
pub fn synthesize(sys: &System, config: &RunConfig, execution: Execution) -> Result<DesignBundle> {
    config.validate()?;
    let assumptions = sys.assumptions()?;
    if !assumptions.all_pass() {
        return Err(crate::error::AttackError::Assumption(assumptions.failures().join("; ")).into());
    }
    let cl = &sys.closed_loop;
    let tol = Tolerances::default();
    let forbidden = attack::forbidden_set(&sys.plant, &sys.controller)?;
    let pi_choice = attack::choose_pi_star(cl, &forbidden, &config.pi_strategy(), tol, execution)?;
    let y = scaled_identity(cl.n(), config.y_scale);
    debug!("pi_star {:?}, forbidden margin {:.3e}", pi_choice.pi_star.as_slice(), pi_choice.margin);
    let design = attack::build_design(cl, forbidden, &pi_choice.pi_star, config.gamma_fraction, &y, tol)?;
    info!("gamma_max {:.6}, gamma {:.6}, F̄ abscissa {:.4}", design.gamma_max, design.gamma, design.fbar_abscissa);
    let poles = match config.poles()? {
        Some(p) => p,
        None => observer::default_poles(cl)?,
    };
    let obs = observer::design_gain(cl, &design, &poles)?;
    if let Some(w) = &obs.warning {
        warn!("{w}");
    }
    let (verification, roa) = verify(sys, config, &design, &obs)?;
    if let Some(reason) = &roa.reason {
        info!("region certificate: {reason}");
    }
    Ok(DesignBundle {
        system: sys.file.clone(),
        config: config.clone(),
        assumptions,
        pi_choice,
        attack: design,
        observer: obs,
        roa,
        verification,
    })
}

/// Re-verifies a loaded bundle against its own system and configuration.
pub fn verify_bundle(bundle: &DesignBundle) -> Result<Verification> {
    let sys = System::from_file(bundle.system.clone())?;
    Ok(verify(&sys, &bundle.config, &bundle.attack, &bundle.observer)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub z0: Vec<f64>,
    pub zhat0: Vec<f64>,
    pub options: SimOptions,
    pub samples: usize,
    pub final_z_norm: f64,
    pub final_e_norm: f64,
    pub initial_e_norm: f64,
    pub max_z_norm: f64,
    pub error_fit: Option<DecayFit>,
    pub state_fit: Option<DecayFit>,
    pub notes: Vec<String>,
}

fn vector_or(v: &Option<Vec<f64>>, fallback: &[f64], n: usize, name: &str) -> Result<DVector<f64>> {
    let data = match v {
        Some(v) => v.clone(),
        None if fallback.len() == n => fallback.to_vec(),
        None => vec![0.0; n],
    };
    if data.len() != n {
        return Err(Error::Config(format!("{name} has length {}, expected {n}", data.len())));
    }
    Ok(DVector::from_vec(data))
}

/// Integrates from the configured initial conditions (the reference ones
/// when absent and dimensions match, else zero) and fits decay envelopes.
pub fn simulate(bundle: &DesignBundle, config: &RunConfig) -> Result<(Trajectory, SimReport)> {
    let sys = System::from_file(bundle.system.clone())?;
    let cl = &sys.closed_loop;
    let n = cl.n();
    let z0 = vector_or(&config.z0, &fixtures::Z0, n, "z0")?;
    let zhat0 = vector_or(&config.zhat0, &fixtures::ZHAT0, n, "zhat0")?;
    let opts = config.sim_options();
    debug!("integrating {} steps of {}", (opts.horizon / opts.dt).round(), opts.dt);
    let traj = sim::integrate(cl, &bundle.attack, &bundle.observer, &z0, &zhat0, &opts)?;

    let window = (0.0, opts.horizon);
    let mut notes = Vec::new();
    let error_fit = sim::fit_decay(&traj, window)
        .map_err(|e| notes.push(format!("error fit: {e}")))
        .ok();
    let state_fit = sim::fit_state_decay(&traj, window)
        .map_err(|e| notes.push(format!("state fit: {e}")))
        .ok();
    let e_norms = traj.e_norms();
    let z_norms = traj.z_norms();
    let report = SimReport {
        z0: z0.iter().copied().collect(),
        zhat0: zhat0.iter().copied().collect(),
        options: opts,
        samples: traj.len(),
        final_z_norm: *z_norms.last().unwrap_or(&0.0),
        final_e_norm: *e_norms.last().unwrap_or(&0.0),
        initial_e_norm: *e_norms.first().unwrap_or(&0.0),
        max_z_norm: z_norms.iter().copied().fold(0.0, f64::max),
        error_fit,
        state_fit,
        notes,
    };
    Ok((traj, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaReport {
    pub certificate: RoaCertificate,
    pub decay: Option<DecayReport>,
    pub box_check: BoxReport,
}

/// Certificate, decay verification inside the sublevel set when the
/// certificate is feasible, and the box Monte Carlo check.
pub fn roa_report(bundle: &DesignBundle, config: &RunConfig, execution: Execution) -> Result<RoaReport> {
    let sys = System::from_file(bundle.system.clone())?;
    let cl = &sys.closed_loop;
    let (_, certificate) = verify(&sys, config, &bundle.attack, &bundle.observer)?;
    let opts = config.sim_options();
    let decay = match (&certificate.estimate, certificate.feasible) {
        (Some(est), true) if matches!(est.level, Some(roa::RoaLevel::Bounded(_))) => Some(roa::verify_decay(
            cl,
            &bundle.attack,
            &bundle.observer,
            est,
            config.decay_samples,
            config.seed,
            &opts,
            execution,
        )?),
        _ => None,
    };
    let box_check = roa::monte_carlo_box_check(
        cl,
        &bundle.attack,
        &bundle.observer,
        config.box_halfwidth,
        config.box_samples,
        &opts,
        config.seed,
        execution,
    )?;
    Ok(RoaReport { certificate, decay, box_check })
}

/// Expected reference values and their tolerances.
pub mod expected {
    pub const SPECTRUM: [(f64, f64); 4] = [(-3.5, 1.94), (-3.5, -1.94), (-7.0, 5.66), (-7.0, -5.66)];
    pub const SPECTRUM_TOL: f64 = 0.01;
    pub const GAMMA_MAX: f64 = 0.85;
    pub const GAMMA_MAX_TOL: f64 = 0.02;
    pub const PI: [f64; 2] = [0.77, -2.30];
    pub const PI_TOL: f64 = 0.02;
    pub const PLACEMENT_TOL: f64 = 1e-6;
    pub const AUGMENTED_TOL: f64 = 1e-6;
    pub const ERROR_RATIO: f64 = 1e-6;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub name: String,
    pub expected: String,
    pub actual: String,
    pub tolerance: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproduction {
    pub rows: Vec<DiffRow>,
    /// Reported but not compared.
    pub informational: Vec<DiffRow>,
    pub all_pass: bool,
}

impl Reproduction {
    pub fn failing(&self) -> Vec<&DiffRow> {
        self.rows.iter().filter(|r| !r.pass).collect()
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<26} {:<44} {:<44} {:<10} {}\n", "row", "expected", "actual", "tol", "status");
        for (r, tag) in self
            .rows
            .iter()
            .map(|r| (r, if r.pass { "PASS" } else { "FAIL" }))
            .chain(self.informational.iter().map(|r| (r, "info")))
        {
            out.push_str(&format!(
                "{:<26} {:<44} {:<44} {:<10} {}\n",
                r.name, r.expected, r.actual, r.tolerance, tag
            ));
        }
        out
    }
}

fn fmt_complex(v: &[Complex64]) -> String {
    let parts: Vec<String> = v
        .iter()
        .map(|c| {
            if c.im == 0.0 {
                format!("{:.4}", c.re)
            } else {
                format!("{:.4}{:+.4}j", c.re, c.im)
            }
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn row(name: &str, expected: String, actual: String, tolerance: String, pass: bool) -> DiffRow {
    DiffRow { name: name.into(), expected, actual, tolerance, pass }
}

/// Runs validate, synthesize, region estimate and simulation with the
/// reference parameters on `sys` and compares against the expected values.
pub fn reproduce(sys: &System, execution: Execution) -> Result<Reproduction> {
    let config = RunConfig::reference();
    let mut rows = Vec::new();
    let mut informational = Vec::new();

    let assumptions = sys.assumptions()?;
    rows.push(row(
        "assumptions",
        "all pass".into(),
        if assumptions.all_pass() { "all pass".into() } else { assumptions.failures().join("; ") },
        "-".into(),
        assumptions.all_pass(),
    ));

    let spectrum = numerics::eigenvalues(sys.closed_loop.a())?;
    let target: Vec<Complex64> = expected::SPECTRUM.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
    let spectrum_pass = spectrum.len() == target.len()
        && numerics::spectra_matching(&spectrum, &target)
            .map(|pairs| {
                pairs.iter().all(|&(i, j)| {
                    (spectrum[i].re - target[j].re).abs() <= expected::SPECTRUM_TOL
                        && (spectrum[i].im - target[j].im).abs() <= expected::SPECTRUM_TOL
                })
            })
            .unwrap_or(false);
    rows.push(row(
        "closed-loop spectrum",
        fmt_complex(&target),
        fmt_complex(&spectrum),
        format!("{}", expected::SPECTRUM_TOL),
        spectrum_pass,
    ));

    let forbidden = attack::forbidden_set(&sys.plant, &sys.controller)?;
    let only_origin = forbidden.only_origin(sys.plant.n());
    let codims: Vec<String> = forbidden.subspaces.iter().map(|s| s.codimension().to_string()).collect();
    rows.push(row(
        "unobservable projections",
        "{0} (every codim 2)".into(),
        format!(
            "{} (codims [{}])",
            if only_origin { "{0}" } else { "proper subspaces" },
            codims.join(", ")
        ),
        "exact".into(),
        only_origin,
    ));

    if !assumptions.all_pass() {
        let all_pass = false;
        return Ok(Reproduction { rows, informational, all_pass });
    }

    let bundle = synthesize(sys, &config, execution)?;
    let gmax = bundle.attack.gamma_max;
    rows.push(row(
        "gamma_max",
        format!("{:.2}", expected::GAMMA_MAX),
        format!("{gmax:.4}"),
        format!("{}", expected::GAMMA_MAX_TOL),
        (gmax - expected::GAMMA_MAX).abs() <= expected::GAMMA_MAX_TOL,
    ));
    let pi: Vec<f64> = bundle.attack.pi.iter().copied().collect();
    rows.push(row(
        "pi",
        fmt_vec(&expected::PI),
        fmt_vec(&pi),
        format!("{}", expected::PI_TOL),
        pi.len() == 2 && pi.iter().zip(expected::PI).all(|(a, b)| (a - b).abs() <= expected::PI_TOL),
    ));
    rows.push(row(
        "observer poles",
        fmt_complex(&bundle.observer.desired_poles),
        fmt_complex(&bundle.observer.placed_poles),
        format!("{:e}", expected::PLACEMENT_TOL),
        bundle.verification.placement_error <= expected::PLACEMENT_TOL,
    ));
    rows.push(row(
        "augmented spectrum",
        "sigma(A) + placed poles".into(),
        format!("distance {:.3e}", bundle.verification.augmented_spectrum_error),
        format!("{:e}", expected::AUGMENTED_TOL),
        bundle.verification.augmented_spectrum_error <= expected::AUGMENTED_TOL,
    ));

    let convergence = match simulate(&bundle, &config) {
        Ok((_, rep)) => {
            let ratio = rep.final_e_norm / rep.initial_e_norm;
            let fits_ok = [rep.error_fit, rep.state_fit]
                .iter()
                .all(|f| f.is_some_and(|f| f.alpha > 0.0 && f.envelope_holds));
            row(
                "convergence",
                format!("|e(T)|/|e(0)| < {:e}, alpha > 0", expected::ERROR_RATIO),
                format!(
                    "ratio {ratio:.3e}, alpha_e {:.4}, alpha_z {:.4}",
                    rep.error_fit.map_or(f64::NAN, |f| f.alpha),
                    rep.state_fit.map_or(f64::NAN, |f| f.alpha)
                ),
                "-".into(),
                ratio < expected::ERROR_RATIO && fits_ok,
            )
        }
        Err(e) => row("convergence", "bounded, decaying".into(), e.to_string(), "-".into(), false),
    };
    rows.push(convergence);

    let report = roa_report(&bundle, &config, execution)?;
    let bx = &report.box_check;
    debug!("box check {}/{}", bx.converged, bx.n_samples);
    rows.push(row(
        "box check",
        format!("{0}/{0} converge", bx.n_samples),
        format!("{}/{} converge, max norm {:.4}", bx.converged, bx.n_samples, bx.max_transient_norm),
        format!("ratio {:e}", roa::BOX_CONVERGENCE_RATIO),
        bx.converged == bx.n_samples,
    ));

    let cert = &report.certificate;
    informational.push(row(
        "region estimate",
        "c2 > 0".into(),
        match &cert.estimate {
            Some(est) => format!("c1 {:.4}, c3 {:.4}, c2 {:.4}, c4 {:.4}", est.c1, est.c3, est.c2, est.c4),
            None => cert.reason.clone().unwrap_or_default(),
        },
        "-".into(),
        cert.feasible,
    ));

    let all_pass = rows.iter().all(|r| r.pass);
    Ok(Reproduction { rows, informational, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pole_parsing() {
        assert_eq!(parse_pole("-1.5").unwrap(), Complex64::new(-1.5, 0.0));
        assert_eq!(parse_pole("-1+2j").unwrap(), Complex64::new(-1.0, 2.0));
        assert_eq!(parse_pole("-1 - 2j").unwrap(), Complex64::new(-1.0, -2.0));
        assert_eq!(parse_pole("-1e-1-2e+0i").unwrap(), Complex64::new(-0.1, -2.0));
        assert_eq!(parse_pole("3j").unwrap(), Complex64::new(0.0, 3.0));
        assert_eq!(parse_pole("-2-j").unwrap(), Complex64::new(-2.0, -1.0));
        assert!(parse_pole("").is_err());
        assert!(parse_pole("abc").is_err());
    }

    #[test]
    fn config_defaults_and_domains() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        let c = RunConfig::from_json(r#"{"gamma_fraction": 1.0}"#).unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_json(r#"{"Y_scale": -1}"#).unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_json(r#"{"desired_poles": [-1, "-2+1j", "-2-1j"]}"#).unwrap();
        assert_eq!(c.poles().unwrap().unwrap().len(), 3);
        assert!(RunConfig::from_json(r#"{"unknown": 1}"#).is_err());
        let err = RunConfig::from_json(r#"{"dt": "x"}"#).unwrap_err().to_string();
        assert!(err.contains("dt"), "{err}");
    }

    #[test]
    fn reference_bundle_verifies_and_round_trips() {
        let sys = System::reference();
        let bundle = synthesize(&sys, &RunConfig::reference(), Execution::default()).unwrap();
        assert!(bundle.verification.design_ok());
        let text = bundle.to_json();
        let back = DesignBundle::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(verify_bundle(&back).unwrap(), bundle.verification);
    }

    #[test]
    fn near_unit_gamma_fraction_keeps_fbar_hurwitz() {
        let sys = System::reference();
        let cfg = RunConfig { gamma_fraction: 0.999, ..RunConfig::reference() };
        let bundle = synthesize(&sys, &cfg, Execution::default()).unwrap();
        assert!(bundle.verification.fbar_hurwitz);
    }

    #[test]
    fn zero_weight_aborts_synthesis() {
        let mut file = fixtures::reference_system();
        file.plant.Q_p = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let sys = System::from_file(file).unwrap();
        let err = synthesize(&sys, &RunConfig::reference(), Execution::default()).unwrap_err();
        assert!(matches!(err, Error::Attack(_)), "{err}");
    }

    #[test]
    fn sampled_projection_is_admissible() {
        let sys = System::reference();
        let cfg = RunConfig { pi_star: None, seed: 11, ..RunConfig::reference() };
        let bundle = synthesize(&sys, &cfg, Execution::default()).unwrap();
        assert!(bundle.verification.pi_admissible);
        assert!(bundle.pi_choice.candidate.is_some());
    }

    #[test]
    fn zero_initial_state_stays_at_origin() {
        let sys = System::reference();
        let cfg = RunConfig {
            z0: Some(vec![0.0; 4]),
            zhat0: Some(vec![0.0; 4]),
            horizon: 0.1,
            ..RunConfig::reference()
        };
        let bundle = synthesize(&sys, &cfg, Execution::default()).unwrap();
        let (traj, rep) = simulate(&bundle, &cfg).unwrap();
        assert!(traj.z.iter().all(|z| z.iter().all(|&v| v == 0.0)));
        assert_eq!(rep.final_e_norm, 0.0);
        assert!(rep.error_fit.is_none());
    }
}
