//! Continuous-control environments with explicit dynamics contexts.
//!
//! Two tasks are provided:
//!
//! * `pendulum`: torque-driven swing-up. State `[θ, θ̇]` with θ measured from
//!   upright, so `θ = 0` is the unstable equilibrium and `θ = π` hangs down.
//!   Dynamics: `m·l²·θ̈ = m·g·l·sin θ − c·θ̇ + τ + wind`.
//! * `cartpole`: force-driven cart with a hinged pole. State `[x, ẋ, θ, θ̇]`,
//!   `θ = 0` upright, `l` is the pole half-length. Viscous cart friction and
//!   the wind force act on the cart.
//!
//! Everything here is a pure function of its inputs. Process noise, action
//! noise and context sampling live in [`crate::perturb`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::rng::standard_normal;
use crate::scalar::{all_finite, Scalar};

/// Which analytic task an [`EnvSpec`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Pendulum,
    CartPole,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::CartPole => "cartpole",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "cartpole" => Ok(EnvKind::CartPole),
            other => Err(BenchError::UnknownEnv(other.to_string())),
        }
    }
}

/// Reward definition attached to an [`EnvSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// `−(θ² + 0.1·θ̇² + 0.001·τ²)` with θ wrapped relative to upright.
    SwingUpCost,
    /// `+1` per step while the pole and cart stay inside their bounds.
    Survival,
}

/// Dynamics parameters plus the four noise scales. One value is one domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvContext<T> {
    pub mass_primary: T,
    pub mass_secondary: T,
    pub length: T,
    pub gravity: T,
    pub friction: T,
    pub wind: T,
    pub noise_init: T,
    pub noise_obs: T,
    pub noise_act: T,
    pub noise_proc: T,
}

/// Dynamics parameters that context perturbations can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextParam {
    MassPrimary,
    MassSecondary,
    Length,
    Gravity,
    Friction,
    Wind,
}

impl ContextParam {
    pub const ALL: [ContextParam; 6] = [
        ContextParam::MassPrimary,
        ContextParam::MassSecondary,
        ContextParam::Length,
        ContextParam::Gravity,
        ContextParam::Friction,
        ContextParam::Wind,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContextParam::MassPrimary => "mass_primary",
            ContextParam::MassSecondary => "mass_secondary",
            ContextParam::Length => "length",
            ContextParam::Gravity => "gravity",
            ContextParam::Friction => "friction",
            ContextParam::Wind => "wind",
        }
    }
}

impl fmt::Display for ContextParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextParam {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        ContextParam::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| BenchError::InvalidArgument(format!("unknown context parameter `{s}`")))
    }
}

impl<T: Scalar> EnvContext<T> {
    pub fn get(&self, param: ContextParam) -> T {
        match param {
            ContextParam::MassPrimary => self.mass_primary,
            ContextParam::MassSecondary => self.mass_secondary,
            ContextParam::Length => self.length,
            ContextParam::Gravity => self.gravity,
            ContextParam::Friction => self.friction,
            ContextParam::Wind => self.wind,
        }
    }

    pub fn set(&mut self, param: ContextParam, value: T) {
        match param {
            ContextParam::MassPrimary => self.mass_primary = value,
            ContextParam::MassSecondary => self.mass_secondary = value,
            ContextParam::Length => self.length = value,
            ContextParam::Gravity => self.gravity = value,
            ContextParam::Friction => self.friction = value,
            ContextParam::Wind => self.wind = value,
        }
    }

    /// Checks the physical invariants.
    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let fields = [
            self.mass_primary,
            self.mass_secondary,
            self.length,
            self.gravity,
            self.friction,
            self.wind,
            self.noise_init,
            self.noise_obs,
            self.noise_act,
            self.noise_proc,
        ];
        if !all_finite(&fields) {
            return Err(BenchError::InvalidContext("non-finite field".into()));
        }
        if self.mass_primary <= zero || self.length <= zero {
            return Err(BenchError::InvalidContext(
                "mass_primary and length must be positive".into(),
            ));
        }
        if self.mass_secondary < zero || self.gravity < zero || self.friction < zero {
            return Err(BenchError::InvalidContext(
                "mass_secondary, gravity and friction must be non-negative".into(),
            ));
        }
        if self.noise_init < zero
            || self.noise_obs < zero
            || self.noise_act < zero
            || self.noise_proc < zero
        {
            return Err(BenchError::InvalidContext("noise scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// Static description of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec<T> {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_bound: T,
    pub horizon: usize,
    pub dt: T,
    pub nominal: EnvContext<T>,
    pub reward: RewardKind,
}

impl<T: Scalar> EnvSpec<T> {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }
}

/// Start-state noise used by both nominal contexts.
pub const NOMINAL_INIT_NOISE: f64 = 0.05;

/// Pole angle bound (rad) for the cart-pole survival reward.
pub const CARTPOLE_ANGLE_LIMIT: f64 = 0.2;
/// Cart position bound (m) for the cart-pole survival reward.
pub const CARTPOLE_POSITION_LIMIT: f64 = 2.4;

/// Canonical spec for `"pendulum"` or `"cartpole"`.
pub fn nominal_spec<T: Scalar>(env_name: &str) -> Result<EnvSpec<T>> {
    Ok(spec_for(env_name.parse()?))
}

/// Canonical spec for a known task.
pub fn spec_for<T: Scalar>(kind: EnvKind) -> EnvSpec<T> {
    let l = T::lit;
    match kind {
        EnvKind::Pendulum => EnvSpec {
            kind,
            state_dim: 2,
            obs_dim: 2,
            action_dim: 1,
            action_bound: l(2.0),
            horizon: 200,
            dt: l(0.02),
            nominal: EnvContext {
                mass_primary: l(1.0),
                mass_secondary: T::zero(),
                length: l(1.0),
                gravity: l(9.81),
                friction: l(0.05),
                wind: T::zero(),
                noise_init: l(NOMINAL_INIT_NOISE),
                noise_obs: T::zero(),
                noise_act: T::zero(),
                noise_proc: T::zero(),
            },
            reward: RewardKind::SwingUpCost,
        },
        EnvKind::CartPole => EnvSpec {
            kind,
            state_dim: 4,
            obs_dim: 4,
            action_dim: 1,
            action_bound: l(10.0),
            horizon: 200,
            dt: l(0.02),
            nominal: EnvContext {
                mass_primary: l(1.0),
                mass_secondary: l(0.1),
                length: l(0.5),
                gravity: l(9.81),
                friction: l(0.05),
                wind: T::zero(),
                noise_init: l(NOMINAL_INIT_NOISE),
                noise_obs: T::zero(),
                noise_act: T::zero(),
                noise_proc: T::zero(),
            },
            reward: RewardKind::Survival,
        },
    }
}

/// Nominal start state plus `N(0, σ^{s0})` per coordinate.
///
/// With `noise_init == 0` no random numbers are drawn.
pub fn reset<T: Scalar, R: Rng + ?Sized>(
    spec: &EnvSpec<T>,
    ctx: &EnvContext<T>,
    rng: &mut R,
) -> Vec<T> {
    let mut state = match spec.kind {
        EnvKind::Pendulum => vec![T::lit(PI), T::zero()],
        EnvKind::CartPole => vec![T::zero(); 4],
    };
    if ctx.noise_init > T::zero() {
        for s in &mut state {
            *s += ctx.noise_init * standard_normal::<T, _>(rng);
        }
    }
    state
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle<T: Scalar>(theta: T) -> T {
    let pi = T::lit(PI);
    let two_pi = T::lit(2.0 * PI);
    let mut w = theta - two_pi * ((theta + pi) / two_pi).floor();
    // floor maps to [−π, π); move the left end to the right.
    if w <= -pi {
        w += two_pi;
    }
    w
}

/// Policy-facing observation of a state (identity up to angle wrapping).
pub fn observe<T: Scalar>(spec: &EnvSpec<T>, state: &[T]) -> Vec<T> {
    match spec.kind {
        EnvKind::Pendulum => vec![wrap_angle(state[0]), state[1]],
        EnvKind::CartPole => state.to_vec(),
    }
}

/// `sin θ` evaluated after reducing θ towards zero, so that the sine of the
/// floating-point π is exactly zero and `[π, 0]` is an exact fixed point.
fn sin_reduced<T: Scalar>(theta: T) -> T {
    let pi = T::lit(PI);
    let half_pi = T::lit(PI / 2.0);
    let w = wrap_angle(theta);
    if w > half_pi {
        (pi - w).sin()
    } else if w < -half_pi {
        -(pi + w).sin()
    } else {
        w.sin()
    }
}

fn derivative<T: Scalar>(kind: EnvKind, ctx: &EnvContext<T>, s: &[T], force: T, out: &mut [T]) {
    match kind {
        EnvKind::Pendulum => {
            let (theta, omega) = (s[0], s[1]);
            let m = ctx.mass_primary;
            let l = ctx.length;
            let inertia = m * l * l;
            let acc = (m * ctx.gravity * l * sin_reduced(theta) - ctx.friction * omega
                + force
                + ctx.wind)
                / inertia;
            out[0] = omega;
            out[1] = acc;
        }
        EnvKind::CartPole => {
            let (x_dot, theta, theta_dot) = (s[1], s[2], s[3]);
            let mc = ctx.mass_primary;
            let mp = ctx.mass_secondary;
            let l = ctx.length;
            let total = mc + mp;
            let (sin, cos) = theta.sin_cos();
            let net = force + ctx.wind - ctx.friction * x_dot;
            let temp = (net + mp * l * theta_dot * theta_dot * sin) / total;
            let theta_acc = (ctx.gravity * sin - cos * temp)
                / (l * (T::lit(4.0 / 3.0) - mp * cos * cos / total));
            let x_acc = temp - mp * l * theta_acc * cos / total;
            out[0] = x_dot;
            out[1] = x_acc;
            out[2] = theta_dot;
            out[3] = theta_acc;
        }
    }
}

/// Integrates the ODE over `dt` with a single classical RK4 step.
pub fn rk4_step<T: Scalar>(
    kind: EnvKind,
    ctx: &EnvContext<T>,
    state: &[T],
    force: T,
    dt: T,
) -> Vec<T> {
    let n = state.len();
    let half = T::lit(0.5) * dt;
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];

    derivative(kind, ctx, state, force, &mut k1);
    for i in 0..n {
        tmp[i] = state[i] + half * k1[i];
    }
    derivative(kind, ctx, &tmp, force, &mut k2);
    for i in 0..n {
        tmp[i] = state[i] + half * k2[i];
    }
    derivative(kind, ctx, &tmp, force, &mut k3);
    for i in 0..n {
        tmp[i] = state[i] + dt * k3[i];
    }
    derivative(kind, ctx, &tmp, force, &mut k4);

    let sixth = dt / T::lit(6.0);
    (0..n)
        .map(|i| state[i] + sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]))
        .collect()
}

/// Bound on the magnitude of the linearised eigenvalues of the ODE under `ctx`.
fn stiffness<T: Scalar>(kind: EnvKind, ctx: &EnvContext<T>) -> T {
    match kind {
        EnvKind::Pendulum => {
            let inertia = ctx.mass_primary * ctx.length * ctx.length;
            (ctx.gravity / ctx.length).sqrt() + ctx.friction / inertia
        }
        EnvKind::CartPole => {
            let total = ctx.mass_primary + ctx.mass_secondary;
            let k = T::lit(4.0 / 3.0) - ctx.mass_secondary / total;
            (ctx.gravity / (ctx.length * k)).sqrt() + ctx.friction / total
        }
    }
}

/// Number of equal RK4 substeps that keeps `h·stiffness ≤ 1`, well inside the
/// RK4 stability region. Nominal contexts need one; strongly shrunk masses
/// and lengths need more.
pub fn substeps<T: Scalar>(kind: EnvKind, ctx: &EnvContext<T>, dt: T) -> usize {
    let n = (dt * stiffness(kind, ctx)).ceil().to_f64().unwrap_or(f64::INFINITY);
    if n.is_finite() {
        (n as usize).clamp(1, MAX_SUBSTEPS)
    } else {
        MAX_SUBSTEPS
    }
}

const MAX_SUBSTEPS: usize = 4096;

/// Deterministic transition over `spec.dt`: one RK4 step, or several equal
/// ones when the context is stiff (see [`substeps`]).
///
/// `command` must already be clamped to the action bound.
pub fn step_dynamics<T: Scalar>(
    spec: &EnvSpec<T>,
    ctx: &EnvContext<T>,
    state: &[T],
    command: &[T],
) -> Result<Vec<T>> {
    crate::error::check_len("state", spec.state_dim, state.len())?;
    crate::error::check_len("command", spec.action_dim, command.len())?;
    if !all_finite(state) {
        return Err(BenchError::NonFinite("state"));
    }
    if !all_finite(command) {
        return Err(BenchError::NonFinite("command"));
    }
    let n = substeps(spec.kind, ctx, spec.dt);
    let next = if n == 1 {
        rk4_step(spec.kind, ctx, state, command[0], spec.dt)
    } else {
        let h = spec.dt / T::lit(n as f64);
        (0..n).fold(state.to_vec(), |s, _| rk4_step(spec.kind, ctx, &s, command[0], h))
    };
    if !all_finite(&next) {
        return Err(BenchError::NonFinite("next state"));
    }
    Ok(next)
}

fn cartpole_in_bounds<T: Scalar>(state: &[T]) -> bool {
    state[2].abs() < T::lit(CARTPOLE_ANGLE_LIMIT) && state[0].abs() < T::lit(CARTPOLE_POSITION_LIMIT)
}

/// Per-step reward, evaluated on the executed command and the reached state.
pub fn reward<T: Scalar>(
    spec: &EnvSpec<T>,
    _ctx: &EnvContext<T>,
    _state: &[T],
    command: &[T],
    next_state: &[T],
) -> T {
    match spec.reward {
        RewardKind::SwingUpCost => {
            let theta = wrap_angle(next_state[0]);
            let omega = next_state[1];
            let torque = command[0];
            -(theta * theta + T::lit(0.1) * omega * omega + T::lit(0.001) * torque * torque)
        }
        RewardKind::Survival => {
            if cartpole_in_bounds(next_state) {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

/// Time limit for every task; bound violations also end cart-pole episodes.
pub fn is_terminal<T: Scalar>(spec: &EnvSpec<T>, state: &[T], step_index: usize) -> bool {
    step_index >= spec.horizon || is_failure(spec, state)
}

/// `true` when the episode ended for a reason other than the time limit.
pub fn is_failure<T: Scalar>(spec: &EnvSpec<T>, state: &[T]) -> bool {
    match spec.kind {
        EnvKind::Pendulum => false,
        EnvKind::CartPole => !cartpole_in_bounds(state),
    }
}

/// Total mechanical energy of the pendulum, `½·m·l²·θ̇² + m·g·l·cos θ`.
pub fn pendulum_energy<T: Scalar>(ctx: &EnvContext<T>, state: &[T]) -> T {
    let m = ctx.mass_primary;
    let l = ctx.length;
    T::lit(0.5) * m * l * l * state[1] * state[1] + m * ctx.gravity * l * state[0].cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn pendulum() -> EnvSpec<f64> {
        nominal_spec("pendulum").unwrap()
    }

    #[test]
    fn nominal_constants() {
        let p = pendulum();
        assert_eq!(p.dt, 0.02);
        assert_eq!(p.horizon, 200);
        assert_eq!(p.action_bound, 2.0);
        let c: EnvSpec<f64> = nominal_spec("cartpole").unwrap();
        assert_eq!((c.state_dim, c.action_dim), (4, 1));
        assert_eq!(c.action_bound, 10.0);
        assert!(matches!(
            nominal_spec::<f64>("walker2d"),
            Err(BenchError::UnknownEnv(_))
        ));
    }

    #[test]
    fn zero_noise_reset_is_nominal_and_rng_free() {
        let mut spec = pendulum();
        spec.nominal.noise_init = 0.0;
        let mut a = seeded(1);
        let mut b = seeded(2);
        assert_eq!(reset(&spec, &spec.nominal, &mut a), vec![PI, 0.0]);
        assert_eq!(reset(&spec, &spec.nominal, &mut b), vec![PI, 0.0]);
        let mut cp: EnvSpec<f64> = nominal_spec("cartpole").unwrap();
        cp.nominal.noise_init = 0.0;
        assert_eq!(reset(&cp, &cp.nominal, &mut a), vec![0.0; 4]);
    }

    #[test]
    fn nominal_contexts_take_one_step() {
        let p = pendulum();
        assert_eq!(substeps(p.kind, &p.nominal, p.dt), 1);
        let c: EnvSpec<f64> = nominal_spec("cartpole").unwrap();
        assert_eq!(substeps(c.kind, &c.nominal, c.dt), 1);
    }

    #[test]
    fn shrunk_pendulum_stays_bounded() {
        // Mass and length at the context floor: friction rate b/(ml²) = 400/s,
        // far outside the single-step stability region at dt = 0.02.
        let spec = pendulum();
        let mut ctx = spec.nominal;
        ctx.mass_primary *= 0.05;
        ctx.length *= 0.05;
        assert!(substeps(spec.kind, &ctx, spec.dt) >= 8);
        let mut s = vec![PI, 0.0];
        for _ in 0..spec.horizon {
            s = step_dynamics(&spec, &ctx, &s, &[2.0]).unwrap();
        }
        // Steady spin: friction balances torque plus the mean gravity term.
        let terminal = 2.0 / ctx.friction;
        assert!(s[1] > 0.0 && s[1] < 1.2 * terminal, "{s:?}");
    }

    #[test]
    fn equilibria_are_exact() {
        let mut spec = pendulum();
        spec.nominal.friction = 0.0;
        let ctx = spec.nominal;
        assert_eq!(step_dynamics(&spec, &ctx, &[0.0, 0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(step_dynamics(&spec, &ctx, &[PI, 0.0], &[0.0]).unwrap(), vec![PI, 0.0]);
        let nominal = pendulum();
        assert_eq!(
            step_dynamics(&nominal, &nominal.nominal, &[PI, 0.0], &[0.0]).unwrap(),
            vec![PI, 0.0]
        );
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let spec = pendulum();
        let err = step_dynamics(&spec, &spec.nominal, &[f64::NAN, 0.0], &[0.0]);
        assert_eq!(err, Err(BenchError::NonFinite("state")));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
        for k in -5..5 {
            let w = wrap_angle(0.3 + 2.0 * PI * k as f64);
            assert!((w - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn rewards() {
        let spec = pendulum();
        assert_eq!(reward(&spec, &spec.nominal, &[0.0, 0.0], &[0.0], &[0.0, 0.0]), 0.0);
        let cp: EnvSpec<f64> = nominal_spec("cartpole").unwrap();
        let at = |angle: f64| reward(&cp, &cp.nominal, &[0.0; 4], &[0.0], &[0.0, 0.0, angle, 0.0]);
        assert_eq!(at(0.1), 1.0);
        assert_eq!(at(0.3), 0.0);
    }

    #[test]
    fn terminal_conditions() {
        let spec = pendulum();
        assert!(is_terminal(&spec, &[0.0, 0.0], spec.horizon));
        assert!(!is_terminal(&spec, &[3.0, 40.0], 5));
        let cp: EnvSpec<f64> = nominal_spec("cartpole").unwrap();
        assert!(is_terminal(&cp, &[0.0, 0.0, 0.3, 0.0], 5));
        assert!(is_terminal(&cp, &[0.0; 4], cp.horizon));
        assert!(!is_terminal(&cp, &[0.0; 4], 5));
    }

    #[test]
    fn heavier_pendulum_accelerates_less() {
        let spec = pendulum();
        let mut prev = f64::INFINITY;
        for m in [0.5, 1.0, 2.0, 4.0] {
            let mut ctx = spec.nominal;
            ctx.mass_primary = m;
            let next = step_dynamics(&spec, &ctx, &[PI, 0.0], &[1.0]).unwrap();
            let dv = next[1].abs();
            assert!(dv < prev, "mass {m}: {dv} !< {prev}");
            prev = dv;
        }
    }

    #[test]
    fn f32_instantiation_agrees_with_f64() {
        let s64 = pendulum();
        let s32: EnvSpec<f32> = nominal_spec("pendulum").unwrap();
        let n64 = step_dynamics(&s64, &s64.nominal, &[1.0, 0.5], &[0.3]).unwrap();
        let n32 = step_dynamics(&s32, &s32.nominal, &[1.0, 0.5], &[0.3]).unwrap();
        for (a, b) in n64.iter().zip(&n32) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
