//! Analytic stand-ins for the physical experiments: a damaged hexapod gait,
//! a planar reaching arm, a cart-pole and synthetic benchmark objectives.
//!
//! Every evaluator is a pure function of its input.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};

// ---------------------------------------------------------------------------
// Hexapod gait proxy

pub const LEGS: usize = 6;
/// Amplitude, phase and duty factor per leg.
pub const GAIT_DIM: usize = 3 * LEGS;

/// Gait genotype, leg-major: `[a_1, φ_1, d_1, a_2, φ_2, d_2, …]`, all in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitParams(pub [f64; GAIT_DIM]);

impl GaitParams {
    pub fn from_slice(p: &[f64]) -> Result<Self> {
        ensure_dim(GAIT_DIM, p.len())?;
        ensure_finite(p, "gait parameter")?;
        let mut a = [0.0; GAIT_DIM];
        for (dst, src) in a.iter_mut().zip(p) {
            *dst = src.clamp(0.0, 1.0);
        }
        Ok(GaitParams(a))
    }

    pub fn amplitude(&self, leg: usize) -> f64 {
        self.0[3 * leg]
    }

    pub fn phase(&self, leg: usize) -> f64 {
        self.0[3 * leg + 1]
    }

    pub fn duty(&self, leg: usize) -> f64 {
        self.0[3 * leg + 2]
    }

    /// Normalized thrust of each leg, `a·sin(π·d)`.
    pub fn thrust(&self) -> [f64; LEGS] {
        std::array::from_fn(|i| self.amplitude(i) * (PI * self.duty(i)).sin())
    }

    /// Alternating-tripod gait with full amplitude: the intact optimum.
    pub fn tripod() -> Self {
        let mut a = [0.0; GAIT_DIM];
        for leg in 0..LEGS {
            a[3 * leg] = 1.0;
            a[3 * leg + 1] = if leg < 3 { 0.0 } else { 0.5 };
            a[3 * leg + 2] = 0.5;
        }
        GaitParams(a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DamageId {
    Intact,
    D1,
    D2,
    D3,
    D4,
    D5,
}

impl DamageId {
    pub const DAMAGED: [DamageId; 5] = [DamageId::D1, DamageId::D2, DamageId::D3, DamageId::D4, DamageId::D5];
}

impl fmt::Display for DamageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DamageId::Intact => "intact",
            DamageId::D1 => "d1",
            DamageId::D2 => "d2",
            DamageId::D3 => "d3",
            DamageId::D4 => "d4",
            DamageId::D5 => "d5",
        };
        f.write_str(s)
    }
}

impl FromStr for DamageId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "intact" => Ok(DamageId::Intact),
            "d1" => Ok(DamageId::D1),
            "d2" => Ok(DamageId::D2),
            "d3" => Ok(DamageId::D3),
            "d4" => Ok(DamageId::D4),
            "d5" => Ok(DamageId::D5),
            other => Err(Error::InvalidConfig(format!("unknown damage condition {other:?}"))),
        }
    }
}

/// Scripted modification of the hexapod, unknown to the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct DamageCondition {
    pub id: DamageId,
    /// 1 = healthy leg, 0 = leg only drags, in between = weakened.
    pub weights: [f64; LEGS],
    /// `(leg, phase)` pairs forced regardless of the commanded gait.
    pub phase_overrides: Vec<(usize, f64)>,
}

impl DamageCondition {
    pub fn intact() -> Self {
        DamageCondition {
            id: DamageId::Intact,
            weights: [1.0; LEGS],
            phase_overrides: Vec::new(),
        }
    }

    pub fn from_id(id: DamageId) -> Self {
        let mut c = DamageCondition::intact();
        c.id = id;
        // Legs are 0-based here: leg 1 is index 0.
        match id {
            DamageId::Intact => {}
            DamageId::D1 => c.weights[0] = 0.0,
            DamageId::D2 => c.weights[3] = 0.0,
            DamageId::D3 => {
                c.weights[0] = 0.0;
                c.weights[3] = 0.0;
            }
            DamageId::D4 => c.weights[1] = 0.5,
            DamageId::D5 => {
                c.weights[2] = 0.5;
                c.phase_overrides.push((2, 0.0));
            }
        }
        c
    }
}

/// The five damage conditions, D1 through D5.
pub fn damage_table() -> Vec<DamageCondition> {
    DamageId::DAMAGED
        .iter()
        .map(|&id| DamageCondition::from_id(id))
        .collect()
}

/// Fitness and behavior descriptor of a gait.
///
/// With thrust `τ_i = a_i·sin(π d_i)` and coordination
/// `c = (1/3) Σ_{i=1..3} −cos(2π(φ_i − φ_{i+3}))`:
///
/// `fitness = (1 + c)/2 · (1/6) Σ_i [w_i τ_i − (1 − w_i) τ_i]`.
///
/// The descriptor is `τ` of the commanded gait and does not depend on the
/// damage.
pub fn gait_proxy_eval(params: &[f64], damage: &DamageCondition) -> Result<(f64, [f64; LEGS])> {
    let gait = GaitParams::from_slice(params)?;
    let thrust = gait.thrust();
    let mut phases: [f64; LEGS] = std::array::from_fn(|i| gait.phase(i));
    for &(leg, phase) in &damage.phase_overrides {
        phases[leg] = phase;
    }
    let coordination = (0..3)
        .map(|i| -(2.0 * PI * (phases[i] - phases[i + 3])).cos())
        .sum::<f64>()
        / 3.0;
    let drive = thrust
        .iter()
        .zip(&damage.weights)
        .map(|(t, w)| w * t - (1.0 - w) * t)
        .sum::<f64>()
        / LEGS as f64;
    Ok((0.5 * (1.0 + coordination) * drive, thrust))
}

// ---------------------------------------------------------------------------
// Planar reaching arm

/// End-effector position of a planar serial arm with cumulative joint angles.
pub fn arm_forward(angles: &[f64], lengths: &[f64]) -> Result<(f64, f64)> {
    if angles.is_empty() {
        return Err(Error::InvalidConfig("arm needs at least one link".into()));
    }
    ensure_dim(angles.len(), lengths.len())?;
    ensure_finite(angles, "arm angle")?;
    ensure_finite(lengths, "arm link length")?;
    let (mut x, mut y, mut theta) = (0.0, 0.0, 0.0);
    for (a, l) in angles.iter().zip(lengths) {
        theta += a;
        x += l * theta.cos();
        y += l * theta.sin();
    }
    Ok((x, y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmTask {
    pub lengths: Vec<f64>,
    pub target: (f64, f64),
}

impl ArmTask {
    /// Negative distance from the end effector to the target.
    pub fn eval(&self, angles: &[f64]) -> Result<f64> {
        let (x, y) = arm_forward(angles, &self.lengths)?;
        Ok(-(x - self.target.0).hypot(y - self.target.1))
    }
}

// ---------------------------------------------------------------------------
// Cart-pole

/// `[x, ẋ, θ, θ̇]`, θ = 0 upright.
pub type CartState = [f64; 4];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPole {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from the pivot to the pole's centre of mass.
    pub half_length: f64,
    pub gravity: f64,
    pub force_limit: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        CartPole {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.8,
            force_limit: 10.0,
        }
    }
}

impl CartPole {
    pub fn clamp_force(&self, force: f64) -> f64 {
        force.clamp(-self.force_limit, self.force_limit)
    }

    /// Accelerations `(ẍ, θ̈)` for the frictionless cart-pole with a uniform
    /// pole (moment of inertia `m l²/3` about its centre).
    pub fn accelerations(&self, state: &CartState, force: f64) -> (f64, f64) {
        let total = self.cart_mass + self.pole_mass;
        let (sin, cos) = state[2].sin_cos();
        let pml = self.pole_mass * self.half_length;
        let temp = (force + pml * state[3] * state[3] * sin) / total;
        let theta_acc =
            (self.gravity * sin - cos * temp) / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total));
        let x_acc = temp - pml * theta_acc * cos / total;
        (x_acc, theta_acc)
    }

    /// One explicit Euler step; positions advance with the pre-step
    /// velocities. The force is clamped to the actuator limit.
    pub fn step(&self, state: &CartState, force: f64, dt: f64) -> CartState {
        let force = self.clamp_force(force);
        let (xa, ta) = self.accelerations(state, force);
        [
            state[0] + dt * state[1],
            state[1] + dt * xa,
            state[2] + dt * state[3],
            state[3] + dt * ta,
        ]
    }

    /// Total mechanical energy, with potential measured from the pivot.
    pub fn energy(&self, state: &CartState) -> f64 {
        let (m, l) = (self.pole_mass, self.half_length);
        let (xd, td) = (state[1], state[3]);
        let inertia = m * l * l / 3.0;
        0.5 * (self.cart_mass + m) * xd * xd
            + m * l * xd * td * state[2].cos()
            + 0.5 * (m * l * l + inertia) * td * td
            + m * self.gravity * l * state[2].cos()
    }
}

/// [`CartPole::step`] with the default constants.
pub fn cartpole_step(state: &CartState, action: f64, dt: f64) -> CartState {
    CartPole::default().step(state, action, dt)
}

// ---------------------------------------------------------------------------
// Synthetic objectives, maximized on [0, 1]^d

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Synthetic {
    Sphere15,
    Sphere2,
    Rastrigin2,
}

impl Synthetic {
    pub fn dim(&self) -> usize {
        match self {
            Synthetic::Sphere15 => 15,
            Synthetic::Sphere2 | Synthetic::Rastrigin2 => 2,
        }
    }

    /// Negated benchmark value; every member peaks at 0 in the box centre.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Synthetic::Sphere15 | Synthetic::Sphere2 => -x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>(),
            Synthetic::Rastrigin2 => {
                // [0, 1] maps onto the usual [−5.12, 5.12].
                let s: f64 = x
                    .iter()
                    .map(|v| {
                        let z = 10.24 * (v - 0.5);
                        z * z - 10.0 * (2.0 * PI * z).cos()
                    })
                    .sum();
                -(10.0 * x.len() as f64 + s)
            }
        }
    }
}

impl FromStr for Synthetic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere15" => Ok(Synthetic::Sphere15),
            "sphere2" => Ok(Synthetic::Sphere2),
            "rastrigin2" => Ok(Synthetic::Rastrigin2),
            other => Err(Error::InvalidConfig(format!("unknown objective {other:?}"))),
        }
    }
}

impl fmt::Display for Synthetic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Synthetic::Sphere15 => "sphere15",
            Synthetic::Sphere2 => "sphere2",
            Synthetic::Rastrigin2 => "rastrigin2",
        })
    }
}

pub fn synthetic_suite(name: &str) -> Result<Synthetic> {
    name.parse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_gait(rng: &mut impl Rng) -> Vec<f64> {
        (0..GAIT_DIM).map(|_| rng.random()).collect()
    }

    #[test]
    fn zero_amplitude_gait_is_still() {
        let mut p = GaitParams::tripod().0;
        for leg in 0..LEGS {
            p[3 * leg] = 0.0;
        }
        let (f, desc) = gait_proxy_eval(&p, &DamageCondition::intact()).unwrap();
        assert_eq!(f, 0.0);
        assert!(desc.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn tripod_is_intact_optimum() {
        let (f, desc) = gait_proxy_eval(&GaitParams::tripod().0, &DamageCondition::intact()).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
        assert!(desc.iter().all(|&t| (t - 1.0).abs() < 1e-12));
    }

    #[test]
    fn d1_values() {
        let d1 = DamageCondition::from_id(DamageId::D1);
        let (f, _) = gait_proxy_eval(&GaitParams::tripod().0, &d1).unwrap();
        assert!((f - 4.0 / 6.0).abs() < 1e-12);
        let mut p = GaitParams::tripod().0;
        p[0] = 0.0;
        let (f, _) = gait_proxy_eval(&p, &d1).unwrap();
        assert!((f - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn damage_table_shape() {
        let t = damage_table();
        assert_eq!(t.len(), 5);
        for c in &t {
            assert_ne!(c.id, DamageId::Intact);
            assert!(c.weights.iter().any(|&w| w != 1.0) || !c.phase_overrides.is_empty());
            assert!(c.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        }
        assert_eq!(t[4].phase_overrides, vec![(2, 0.0)]);
        assert_eq!(t[4].weights[2], 0.5);
        assert_eq!(DamageCondition::intact().weights, [1.0; LEGS]);
    }

    #[test]
    fn descriptor_ignores_damage_and_fitness_is_bounded() {
        let mut rng = rng_from_seed(9);
        for _ in 0..2000 {
            let p = random_gait(&mut rng);
            let (fi, di) = gait_proxy_eval(&p, &DamageCondition::intact()).unwrap();
            assert!((-1.0..=1.0).contains(&fi));
            for c in damage_table() {
                let (f, d) = gait_proxy_eval(&p, &c).unwrap();
                assert_eq!(d, di);
                assert!((-1.0..=1.0).contains(&f));
            }
        }
    }

    #[test]
    fn swapping_paired_legs_with_weights_preserves_fitness() {
        let mut rng = rng_from_seed(10);
        for _ in 0..500 {
            let p = random_gait(&mut rng);
            let i = rng.random_range(0..3);
            let mut c = DamageCondition::intact();
            c.weights = std::array::from_fn(|_| rng.random());
            let mut q = p.clone();
            for k in 0..3 {
                q.swap(3 * i + k, 3 * (i + 3) + k);
            }
            let mut cs = c.clone();
            cs.weights.swap(i, i + 3);
            let (a, _) = gait_proxy_eval(&p, &c).unwrap();
            let (b, _) = gait_proxy_eval(&q, &cs).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn intact_fitness_never_exceeds_one() {
        let mut rng = rng_from_seed(12);
        for _ in 0..10_000 {
            let (f, _) = gait_proxy_eval(&random_gait(&mut rng), &DamageCondition::intact()).unwrap();
            assert!(f <= 1.0);
        }
    }

    #[test]
    fn gait_rejects_bad_input() {
        assert!(matches!(
            gait_proxy_eval(&[0.5; 5], &DamageCondition::intact()),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut p = [0.5; GAIT_DIM];
        p[3] = f64::NAN;
        assert!(matches!(
            gait_proxy_eval(&p, &DamageCondition::intact()),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn arm_kinematics() {
        let l = [0.5, 0.5];
        let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12;
        assert!(close(arm_forward(&[0.0, 0.0], &l).unwrap(), (1.0, 0.0)));
        assert!(close(arm_forward(&[PI / 2.0, 0.0], &l).unwrap(), (0.0, 1.0)));
        assert!(close(arm_forward(&[PI / 2.0, PI / 2.0], &l).unwrap(), (-0.5, 0.5)));
        assert!(arm_forward(&[], &[]).is_err());
    }

    #[test]
    fn arm_task_matches_grid_optimum() {
        let task = ArmTask {
            lengths: vec![0.5, 0.5],
            target: (0.3, 0.6),
        };
        // Analytic inverse kinematics for the reachable target gives 0.
        let (tx, ty) = task.target;
        let c2 = (tx * tx + ty * ty - 0.5) / 0.5;
        let q2 = c2.acos();
        let q1 = ty.atan2(tx) - (0.5 * q2.sin()).atan2(0.5 + 0.5 * q2.cos());
        assert!(task.eval(&[q1, q2]).unwrap().abs() < 1e-12);

        let n = 400;
        let step = 2.0 * PI / n as f64;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                let f = task.eval(&[-PI + i as f64 * step, -PI + j as f64 * step]).unwrap();
                assert!(f <= 0.0);
                best = best.max(f);
            }
        }
        // Each joint is within half a grid step of the optimum; the end
        // effector then moves at most Σ reach·(step/2).
        assert!(best >= -(1.0 + 0.5) * step / 2.0 - 1e-12);
    }

    #[test]
    fn cartpole_equilibrium_and_push() {
        assert_eq!(cartpole_step(&[0.0; 4], 0.0, 0.01), [0.0; 4]);
        let s = cartpole_step(&[0.0; 4], 10.0, 0.01);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[2], 0.0);
        // ẍ = F/M + m l (F/M) / (M l (4/3 − m/M)) · … evaluated by hand:
        // θ̈ = −(10/1.1) / (0.5 (4/3 − 0.1/1.1)) = −14.6341…, ẍ = 9.7560…
        assert!((s[1] - 0.097_560_975_609_756).abs() < 1e-9, "{}", s[1]);
        assert!((s[3] + 0.146_341_463_414_634).abs() < 1e-9, "{}", s[3]);
    }

    #[test]
    fn force_is_clamped() {
        assert_eq!(
            cartpole_step(&[0.0; 4], 50.0, 0.01),
            cartpole_step(&[0.0; 4], 10.0, 0.01)
        );
    }

    #[test]
    fn unforced_energy_is_conserved_by_small_steps() {
        let cp = CartPole::default();
        let mut s = [0.0, 0.2, 0.15, -0.4];
        let e0 = cp.energy(&s);
        for _ in 0..100 {
            s = cp.step(&s, 0.0, 1e-4);
        }
        assert!(((cp.energy(&s) - e0) / e0).abs() < 0.01);
    }

    #[test]
    fn synthetic_objectives() {
        let s = synthetic_suite("sphere15").unwrap();
        assert_eq!(s.eval(&[0.5; 15]), 0.0);
        let x: Vec<f64> = (0..15).map(|i| i as f64 / 15.0).collect();
        let mut y = x.clone();
        y.reverse();
        assert_eq!(s.eval(&x), s.eval(&y));
        let r = synthetic_suite("rastrigin2").unwrap();
        assert!(r.eval(&[0.5, 0.5]).abs() < 1e-12);
        for (i, j) in [(0.0, 0.0), (0.25, 0.75), (0.6, 0.1)] {
            let z = |v: f64| 10.24 * v - 5.12;
            let expected =
                -(20.0 + z(i).powi(2) - 10.0 * (2.0 * PI * z(i)).cos() + z(j).powi(2) - 10.0 * (2.0 * PI * z(j)).cos());
            assert!((r.eval(&[i, j]) - expected).abs() < 1e-9);
        }
        assert!(synthetic_suite("nope").is_err());
    }
}
