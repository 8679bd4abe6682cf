//! Randomized system classes: stable discrete-time linear systems and
//! damped 1- or 2-link pendulums driven by joint torques.

use crate::error::{config_err, Error, Result};
use crate::signal::uniform;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Linear,
    Pendulum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub n_x: usize,
    pub d_u: usize,
    pub d_y: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearClass {
    /// Eigenvalue moduli are drawn from this interval.
    pub spectral_radius: [f64; 2],
    pub coupling_scale: f64,
    /// Complex pole pairs get arguments in `[0, max_pole_angle]`.
    pub max_pole_angle: f64,
}

impl Default for LinearClass {
    fn default() -> Self {
        Self { spectral_radius: [0.8, 0.97], coupling_scale: 0.5, max_pole_angle: std::f64::consts::FRAC_PI_4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumClass {
    pub links: usize,
    pub mass: [f64; 2],
    pub length: [f64; 2],
    pub damping: [f64; 2],
    pub gravity: f64,
}

impl Default for PendulumClass {
    fn default() -> Self {
        Self { links: 2, mass: [0.5, 1.5], length: [0.5, 1.0], damping: [0.05, 0.5], gravity: 9.81 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemClassConfig {
    pub kind: SystemKind,
    pub dims: Dims,
    pub linear: LinearClass,
    pub pendulum: PendulumClass,
    pub x0_scale: f64,
    pub blowup_bound: f64,
}

impl Default for SystemClassConfig {
    fn default() -> Self {
        Self {
            kind: SystemKind::Linear,
            dims: Dims { n_x: 4, d_u: 2, d_y: 2 },
            linear: LinearClass::default(),
            pendulum: PendulumClass::default(),
            x0_scale: 0.1,
            blowup_bound: 1e6,
        }
    }
}

impl SystemClassConfig {
    pub fn pendulum(links: usize) -> Self {
        Self {
            kind: SystemKind::Pendulum,
            dims: Dims { n_x: 2 * links, d_u: links, d_y: links },
            pendulum: PendulumClass { links, ..PendulumClass::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        let d = self.dims;
        if d.n_x == 0 || d.d_u == 0 || d.d_y == 0 {
            return config_err(format!("system dims must be positive: {d:?}"));
        }
        if !(self.x0_scale >= 0.0 && self.blowup_bound > 0.0) {
            return config_err("x0_scale must be >= 0 and blowup_bound > 0");
        }
        match self.kind {
            SystemKind::Linear => {
                let l = &self.linear;
                let [lo, hi] = l.spectral_radius;
                if !(lo > 0.0 && lo <= hi && hi < 1.0) {
                    return config_err(format!("spectral_radius {:?} must lie inside (0, 1)", l.spectral_radius));
                }
                if !(l.coupling_scale > 0.0 && l.max_pole_angle >= 0.0 && l.max_pole_angle <= std::f64::consts::PI) {
                    return config_err("coupling_scale must be > 0 and max_pole_angle in [0, pi]");
                }
            }
            SystemKind::Pendulum => {
                let p = &self.pendulum;
                if !(p.links == 1 || p.links == 2) {
                    return config_err(format!("pendulum links must be 1 or 2, got {}", p.links));
                }
                if d.d_u != p.links || d.d_y != p.links || d.n_x != 2 * p.links {
                    return config_err(format!("pendulum with {} links needs d_u = d_y = links, n_x = 2 * links", p.links));
                }
                if !(pos(p.mass) && pos(p.length) && pos(p.damping) && p.gravity > 0.0) {
                    return config_err("pendulum ranges must be strictly positive intervals");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub x0: DVector<f64>,
}

/// Angles are measured from the downward vertical; the second joint angle is
/// relative to the first link. State is `[q, qdot]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PendulumSpec {
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    pub dampings: Vec<f64>,
    pub gravity: f64,
    pub x0: Vec<f64>,
}

impl PendulumSpec {
    pub fn links(&self) -> usize {
        self.masses.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SystemSpec {
    Linear(LinearSpec),
    Pendulum(PendulumSpec),
}

impl SystemSpec {
    pub fn d_u(&self) -> usize {
        match self {
            SystemSpec::Linear(l) => l.b.ncols(),
            SystemSpec::Pendulum(p) => p.links(),
        }
    }

    pub fn d_y(&self) -> usize {
        match self {
            SystemSpec::Linear(l) => l.c.nrows(),
            SystemSpec::Pendulum(p) => p.links(),
        }
    }

    /// Every parameter flattened in a fixed order; used for summary hashes.
    pub fn param_vector(&self) -> Vec<f64> {
        match self {
            SystemSpec::Linear(l) => {
                l.a.iter().chain(l.b.iter()).chain(l.c.iter()).chain(l.x0.iter()).copied().collect()
            }
            SystemSpec::Pendulum(p) => {
                let mut v = p.masses.clone();
                v.extend(&p.lengths);
                v.extend(&p.dampings);
                v.push(p.gravity);
                v.extend(&p.x0);
                v
            }
        }
    }
}

fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| uniform(rng, -scale, scale))
}

pub fn sample_system<R: Rng + ?Sized>(class: &SystemClassConfig, rng: &mut R) -> SystemSpec {
    let d = class.dims;
    match class.kind {
        SystemKind::Linear => {
            let l = &class.linear;
            let n = d.n_x;
            let mut blocks = DMatrix::<f64>::zeros(n, n);
            let mut i = 0;
            while i + 1 < n {
                let r = uniform(rng, l.spectral_radius[0], l.spectral_radius[1]);
                let th = uniform(rng, 0.0, l.max_pole_angle);
                let (s, c) = th.sin_cos();
                blocks[(i, i)] = r * c;
                blocks[(i, i + 1)] = -r * s;
                blocks[(i + 1, i)] = r * s;
                blocks[(i + 1, i + 1)] = r * c;
                i += 2;
            }
            if i < n {
                let r = uniform(rng, l.spectral_radius[0], l.spectral_radius[1]);
                blocks[(i, i)] = if rng.random::<bool>() { r } else { -r };
            }
            let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
            let q = g.qr().q();
            let a = &q * blocks * q.transpose();
            let b = uniform_matrix(rng, n, d.d_u, l.coupling_scale);
            let c = uniform_matrix(rng, d.d_y, n, l.coupling_scale);
            let x0 = DVector::from_fn(n, |_, _| uniform(rng, -class.x0_scale, class.x0_scale));
            SystemSpec::Linear(LinearSpec { a, b, c, x0 })
        }
        SystemKind::Pendulum => {
            let p = &class.pendulum;
            let k = p.links;
            let masses = (0..k).map(|_| uniform(rng, p.mass[0], p.mass[1])).collect();
            let lengths = (0..k).map(|_| uniform(rng, p.length[0], p.length[1])).collect();
            let dampings = (0..k).map(|_| uniform(rng, p.damping[0], p.damping[1])).collect();
            let x0 = (0..2 * k).map(|_| uniform(rng, -class.x0_scale, class.x0_scale)).collect();
            SystemSpec::Pendulum(PendulumSpec { masses, lengths, dampings, gravity: p.gravity, x0 })
        }
    }
}

/// Simulates `n` steps under zero-order-hold inputs `u` (row-major `n x d_u`)
/// and returns the row-major `n x d_y` observations, `y_k` taken before the
/// `k`-th input is applied.
pub fn simulate(spec: &SystemSpec, u: &[f64], n: usize, dt: f64, bound: f64) -> Result<Vec<f64>> {
    let d_u = spec.d_u();
    if u.len() != n * d_u {
        return Err(Error::ShapeMismatch(format!("inputs have {} values, expected {n} x {d_u}", u.len())));
    }
    if !(dt > 0.0) {
        return Err(Error::ConfigInvalid(format!("dt must be > 0, got {dt}")));
    }
    let check = |step: usize, state: &[f64]| -> Result<()> {
        let mag = state.iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
        if mag > bound {
            return Err(Error::NumericalDivergence { step, magnitude: mag });
        }
        Ok(())
    };
    match spec {
        SystemSpec::Linear(l) => {
            let d_y = l.c.nrows();
            let mut y = Vec::with_capacity(n * d_y);
            let mut x = l.x0.clone();
            for k in 0..n {
                check(k, x.as_slice())?;
                y.extend((&l.c * &x).iter());
                let uk = DVector::from_column_slice(&u[k * d_u..(k + 1) * d_u]);
                x = &l.a * &x + &l.b * uk;
            }
            Ok(y)
        }
        SystemSpec::Pendulum(p) => {
            let links = p.links();
            let mut y = Vec::with_capacity(n * links);
            let mut x = p.x0.clone();
            for k in 0..n {
                check(k, &x)?;
                y.extend_from_slice(&x[..links]);
                x = rk4_step(p, &x, &u[k * d_u..(k + 1) * d_u], dt);
            }
            Ok(y)
        }
    }
}

/// One classical RK4 step of the full `[q, qdot]` state under constant torque.
pub fn rk4_step(p: &PendulumSpec, x: &[f64], tau: &[f64], dt: f64) -> Vec<f64> {
    let axpy = |a: &[f64], h: f64, b: &[f64]| a.iter().zip(b).map(|(x, y)| x + h * y).collect::<Vec<_>>();
    let k1 = pendulum_rhs(p, x, tau);
    let k2 = pendulum_rhs(p, &axpy(x, dt / 2.0, &k1), tau);
    let k3 = pendulum_rhs(p, &axpy(x, dt / 2.0, &k2), tau);
    let k4 = pendulum_rhs(p, &axpy(x, dt, &k3), tau);
    (0..x.len()).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// State derivative from `M(q) qdd + c(q, qd) + g(q) = tau - b qd`.
pub fn pendulum_rhs(p: &PendulumSpec, x: &[f64], tau: &[f64]) -> Vec<f64> {
    let g = p.gravity;
    match p.links() {
        1 => {
            let (m, l, b) = (p.masses[0], p.lengths[0], p.dampings[0]);
            let (q, qd) = (x[0], x[1]);
            let qdd = (tau[0] - b * qd - m * g * l * q.sin()) / (m * l * l);
            vec![qd, qdd]
        }
        2 => {
            let (m1, m2) = (p.masses[0], p.masses[1]);
            let (l1, l2) = (p.lengths[0], p.lengths[1]);
            let (q1, q2, qd1, qd2) = (x[0], x[1], x[2], x[3]);
            let (s2, c2) = q2.sin_cos();
            let s12 = (q1 + q2).sin();
            let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
            let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
            let m22 = m2 * l2 * l2;
            let h = m2 * l1 * l2 * s2;
            let c1 = -h * (2.0 * qd1 * qd2 + qd2 * qd2);
            let cc2 = h * qd1 * qd1;
            let g1 = (m1 + m2) * g * l1 * q1.sin() + m2 * g * l2 * s12;
            let g2 = m2 * g * l2 * s12;
            let r1 = tau[0] - p.dampings[0] * qd1 - c1 - g1;
            let r2 = tau[1] - p.dampings[1] * qd2 - cc2 - g2;
            let det = m11 * m22 - m12 * m12;
            let qdd1 = (m22 * r1 - m12 * r2) / det;
            let qdd2 = (m11 * r2 - m12 * r1) / det;
            vec![qd1, qd2, qdd1, qdd2]
        }
        k => unreachable!("{k}-link pendulum"),
    }
}

/// Kinetic plus gravitational energy, with height measured upward from the
/// pivot (so the hanging rest state has the minimum, negative, potential).
pub fn pendulum_energy(p: &PendulumSpec, state: &[f64]) -> f64 {
    let links = p.links();
    let (q, qd) = state.split_at(links);
    let g = p.gravity;
    let (mut angle, mut rate) = (0.0, 0.0);
    let (mut py, mut vx, mut vy) = (0.0, 0.0, 0.0);
    let mut energy = 0.0;
    for i in 0..links {
        angle += q[i];
        rate += qd[i];
        let (s, c) = angle.sin_cos();
        py -= p.lengths[i] * c;
        vx += p.lengths[i] * c * rate;
        vy += p.lengths[i] * s * rate;
        energy += 0.5 * p.masses[i] * (vx * vx + vy * vy) + p.masses[i] * g * py;
    }
    energy
}
