//! Fixed-step RK4 integration of the attacked loop and its observer, and
//! exponential decay fits on the resulting norms.

use std::io::{self, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::attack::AttackDesign;
use crate::error::SimError;
use crate::model::ClosedLoop;
use crate::observer::{self, ObserverDesign};

/// State norm beyond which [`integrate`] reports divergence.
pub const DIVERGENCE_NORM: f64 = 1e9;
/// Relative slack allowed on the fitted exponential envelope.
pub const FIT_SLACK: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt: f64,
    pub horizon: f64,
    /// Record every `stride`-th step.
    pub stride: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { dt: 1e-3, horizon: 5.0, stride: 1 }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<usize, SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Options(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(SimError::Options(format!(
                "horizon {} must be at least dt {}",
                self.horizon, self.dt
            )));
        }
        if self.stride == 0 {
            return Err(SimError::Options("stride must be at least 1".into()));
        }
        Ok((self.horizon / self.dt).round() as usize)
    }
}

/// The attacked loop and the observer as one `2n`-dimensional vector field
/// on `x = [z; ẑ]`. The measurement `ỹ` is evaluated at whatever stage
/// state the integrator passes in.
#[derive(Debug, Clone, Copy)]
pub struct CoupledSystem<'a> {
    pub cl: &'a ClosedLoop,
    pub design: &'a AttackDesign,
    pub obs: &'a ObserverDesign,
}

impl<'a> CoupledSystem<'a> {
    pub fn new(cl: &'a ClosedLoop, design: &'a AttackDesign, obs: &'a ObserverDesign) -> Self {
        Self { cl, design, obs }
    }

    pub fn dim(&self) -> usize {
        2 * self.cl.n()
    }

    pub fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.cl.n();
        let z = x.rows(0, n).into_owned();
        let zhat = x.rows(n, n).into_owned();
        let y_tilde = observer::corrupted_output(self.cl, self.design, &z, &zhat);
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n)
            .copy_from(&observer::plant_rhs(self.cl, self.design, &z, &zhat));
        out.rows_mut(n, n)
            .copy_from(&observer::observer_rhs(self.cl, self.design, self.obs, &zhat, y_tilde));
        out
    }

    pub fn rk4_step(&self, x: &DVector<f64>, dt: f64) -> DVector<f64> {
        let k1 = self.rhs(x);
        let k2 = self.rhs(&(x + &k1 * (dt / 2.0)));
        let k3 = self.rhs(&(x + &k2 * (dt / 2.0)));
        let k4 = self.rhs(&(x + &k3 * dt));
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    }

    /// Stacks `(z, ẑ)` after checking both lengths.
    pub fn stack(&self, z: &DVector<f64>, zhat: &DVector<f64>) -> Result<DVector<f64>, SimError> {
        let n = self.cl.n();
        if z.len() != n || zhat.len() != n {
            return Err(SimError::Dimension(format!(
                "initial states have lengths {} and {}, expected {n}",
                z.len(),
                zhat.len()
            )));
        }
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(z);
        x.rows_mut(n, n).copy_from(zhat);
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub z: Vec<DVector<f64>>,
    pub z_hat: Vec<DVector<f64>>,
    pub e: Vec<DVector<f64>>,
    pub y: Vec<f64>,
    pub y_tilde: Vec<f64>,
    pub a: Vec<f64>,
}

impl Trajectory {
    fn with_capacity(cap: usize) -> Self {
        Self {
            times: Vec::with_capacity(cap),
            z: Vec::with_capacity(cap),
            z_hat: Vec::with_capacity(cap),
            e: Vec::with_capacity(cap),
            y: Vec::with_capacity(cap),
            y_tilde: Vec::with_capacity(cap),
            a: Vec::with_capacity(cap),
        }
    }

    fn record(&mut self, sys: &CoupledSystem<'_>, t: f64, x: &DVector<f64>) {
        let n = sys.cl.n();
        let z = x.rows(0, n).into_owned();
        let zhat = x.rows(n, n).into_owned();
        let y = sys.cl.output(&z);
        let a = sys.design.attack_signal(&zhat);
        self.times.push(t);
        self.e.push(&zhat - &z);
        self.z.push(z);
        self.z_hat.push(zhat);
        self.y.push(y);
        self.y_tilde.push(y + a);
        self.a.push(a);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn z_norms(&self) -> Vec<f64> {
        self.z.iter().map(|v| v.norm()).collect()
    }

    pub fn e_norms(&self) -> Vec<f64> {
        self.e.iter().map(|v| v.norm()).collect()
    }

    /// CSV with header `t,z1..zn,zhat1..zhatn,e1..en,y,ytilde,a`, 17
    /// significant digits per value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.z.first().map_or(0, |v| v.len());
        let mut header = vec!["t".to_string()];
        for prefix in ["z", "zhat", "e"] {
            header.extend((1..=n).map(|i| format!("{prefix}{i}")));
        }
        header.extend(["y", "ytilde", "a"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = Vec::with_capacity(3 * n + 4);
            row.push(self.times[k]);
            row.extend(self.z[k].iter());
            row.extend(self.z_hat[k].iter());
            row.extend(self.e[k].iter());
            row.extend([self.y[k], self.y_tilde[k], self.a[k]]);
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Gnuplot script laying out the trajectory CSV: true vs estimated states,
/// then `‖z‖` and `‖e‖` on a log scale.
pub fn gnuplot_script(n: usize, csv_name: &str) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset key autotitle columnhead\n");
    s.push_str("set terminal pngcairo size 1000,800\n");
    s.push_str("set output 'states.png'\n");
    s.push_str(&format!("set multiplot layout {},1\n", n));
    for i in 1..=n {
        s.push_str(&format!(
            "plot '{csv_name}' using 1:{} with lines lc 'gray' title 'z{i}', '' using 1:{} with lines dt 2 lc 'red' title 'zhat{i}'\n",
            1 + i,
            1 + n + i
        ));
    }
    s.push_str("unset multiplot\nset output 'norms.png'\nset logscale y\n");
    let z_cols: Vec<String> = (1..=n).map(|i| format!("${}**2", 1 + i)).collect();
    let e_cols: Vec<String> = (1..=n).map(|i| format!("${}**2", 1 + 2 * n + i)).collect();
    s.push_str(&format!(
        "plot '{csv_name}' using 1:(sqrt({})) with lines lc 'gray' title '|z|', '' using 1:(sqrt({})) with lines dt 2 lc 'red' title '|e|'\n",
        z_cols.join("+"),
        e_cols.join("+")
    ));
    s
}

/// Integrates from `(z0, ẑ0)` over `[0, horizon]` with classic RK4.
pub fn integrate(
    cl: &ClosedLoop,
    design: &AttackDesign,
    obs: &ObserverDesign,
    z0: &DVector<f64>,
    zhat0: &DVector<f64>,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    let steps = opts.validate()?;
    let sys = CoupledSystem::new(cl, design, obs);
    let mut x = sys.stack(z0, zhat0)?;
    let mut traj = Trajectory::with_capacity(steps / opts.stride + 2);
    traj.record(&sys, 0.0, &x);
    for k in 1..=steps {
        x = sys.rk4_step(&x, opts.dt);
        let t = k as f64 * opts.dt;
        let norm = x.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(SimError::Divergence { time: t, threshold: DIVERGENCE_NORM });
        }
        if k % opts.stride == 0 || k == steps {
            traj.record(&sys, t, &x);
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub kappa: f64,
    pub alpha: f64,
    pub r_squared: f64,
    /// `exp(intercept) / ‖x(0)‖` of the least-squares line.
    pub kappa_ls: f64,
    pub samples: usize,
    pub window: (f64, f64),
    pub envelope_holds: bool,
}

/// Least-squares fit of `log‖x(t)‖` over the window. `alpha` is the negated
/// slope; `kappa` is the smallest constant for which
/// `‖x(t)‖ ≤ κ e^{-αt} ‖x(0)‖` holds at every fitted sample.
pub fn fit_exponential(
    times: &[f64],
    norms: &[f64],
    initial_norm: f64,
    window: (f64, f64),
) -> Result<DecayFit, SimError> {
    if !(initial_norm > 0.0) {
        return Err(SimError::DegenerateFit("initial norm is zero".into()));
    }
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (&t, &v) in times.iter().zip(norms) {
        if t < window.0 || t > window.1 {
            continue;
        }
        if v <= 0.0 {
            break;
        }
        pts.push((t, v));
    }
    if pts.len() < 2 {
        return Err(SimError::DegenerateFit(format!(
            "{} usable samples in window [{}, {}]",
            pts.len(),
            window.0,
            window.1
        )));
    }

    let m = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = pts.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(t, v) in &pts {
        let (dx, dy) = (t - mean_t, v.ln() - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(SimError::DegenerateFit("all samples share one time".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    let ss_res: f64 = pts
        .iter()
        .map(|&(t, v)| (v.ln() - intercept - slope * t).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    let alpha = -slope;

    let kappa = pts
        .iter()
        .map(|&(t, v)| v * (alpha * t).exp() / initial_norm)
        .fold(0.0, f64::max);
    let envelope_holds = pts
        .iter()
        .all(|&(t, v)| v <= kappa * (-alpha * t).exp() * initial_norm * (1.0 + FIT_SLACK));

    Ok(DecayFit {
        kappa,
        alpha,
        r_squared,
        kappa_ls: intercept.exp() / initial_norm,
        samples: pts.len(),
        window,
        envelope_holds,
    })
}

/// Decay fit of the estimation error `‖e(t)‖`.
pub fn fit_decay(traj: &Trajectory, window: (f64, f64)) -> Result<DecayFit, SimError> {
    let norms = traj.e_norms();
    let e0 = norms.first().copied().unwrap_or(0.0);
    fit_exponential(&traj.times, &norms, e0, window)
}

/// Decay fit of the plant/controller state `‖z(t)‖`.
pub fn fit_state_decay(traj: &Trajectory, window: (f64, f64)) -> Result<DecayFit, SimError> {
    let norms = traj.z_norms();
    let z0 = norms.first().copied().unwrap_or(0.0);
    fit_exponential(&traj.times, &norms, z0, window)
}
