//! Single-device memristor model with sub-threshold drift.
//!
//! The state variable `w` in [0, 1] interpolates the device resistance
//! between `r_on` (w = 0) and `r_off` (w = 1). Voltages beyond the
//! thresholds move `w` with the usual VTEAM power laws; voltages *below*
//! threshold still move it, just slowly, which is the drift this crate is
//! about. Read pulses are never free.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Default cap on |Δw| per integration sub-step. Tight enough that the
/// explicit-Euler error stays below the closed-form oracle tolerances;
/// state-independent (rectangular) windows bypass sub-stepping entirely.
pub const MAX_DW_PER_SUBSTEP: f64 = 1e-6;

/// Variance factor of parameter variation: each sampled parameter gets
/// variance `0.15 * |nominal|`.
pub const VARIATION_VARIANCE_FACTOR: f64 = 0.15;

/// State-dependence window applied to the drift rate. Windows are
/// direction-aware: the branch that drives `w` up vanishes at `w = 1`,
/// the branch that drives it down vanishes at `w = 0`, so a device parked
/// at a bound can always leave in the other direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// f = 1 on (0, 1), 0 at the saturating bound. Rate is then
    /// state-independent inside the interval.
    Rectangular,
    /// f = 1 - w going up, f = w going down.
    Linear,
    /// Joglekar window f = 1 - (2w - 1)^(2p), both directions.
    Polynomial { p: u32 },
}

impl Default for WindowKind {
    fn default() -> Self {
        WindowKind::Rectangular
    }
}

/// Full parameter set of one device. `k_on`/`k_off`/`alpha_on`/`alpha_off`
/// are the classic above-threshold VTEAM constants (used when programming);
/// the `*_s_*` set governs sub-threshold drift. Sign conventions:
/// `v_on < 0 < v_off`, `k_on <= 0`, `k_s_on <= 0`, `k_off >= 0`,
/// `k_s_off >= 0`, all alphas >= 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    pub r_on: f64,
    pub r_off: f64,
    pub v_on: f64,
    pub v_off: f64,
    pub k_on: f64,
    pub k_off: f64,
    pub alpha_on: f64,
    pub alpha_off: f64,
    pub k_s_on: f64,
    pub k_s_off: f64,
    pub alpha_s_on: f64,
    pub alpha_s_off: f64,
    #[serde(default)]
    pub window: WindowKind,
}

impl DeviceParams {
    /// Fitted TiOx sub-threshold parameter set (the one shipped in
    /// `params/tiox_fig2.json`). The above-threshold constants are synthetic
    /// placeholders sized for microsecond-scale programming; the data source
    /// only constrains the sub-threshold branch.
    pub fn tiox() -> Self {
        DeviceParams {
            r_on: 100.0,
            r_off: 100_000.0,
            v_on: -0.6,
            v_off: 0.6,
            k_on: -2.0e6,
            k_off: 5.0e5,
            alpha_on: 3.0,
            alpha_off: 3.0,
            k_s_on: -8.445e-6,
            k_s_off: 1.126e-7,
            alpha_s_on: 6.0,
            alpha_s_off: 5.0,
            window: WindowKind::Rectangular,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidDevice(msg));
        for (name, v) in [
            ("r_on", self.r_on),
            ("r_off", self.r_off),
            ("v_on", self.v_on),
            ("v_off", self.v_off),
            ("k_on", self.k_on),
            ("k_off", self.k_off),
            ("alpha_on", self.alpha_on),
            ("alpha_off", self.alpha_off),
            ("k_s_on", self.k_s_on),
            ("k_s_off", self.k_s_off),
            ("alpha_s_on", self.alpha_s_on),
            ("alpha_s_off", self.alpha_s_off),
        ] {
            if !v.is_finite() {
                return err(format!("{name} is not finite"));
            }
        }
        if self.r_on <= 0.0 || self.r_off <= self.r_on {
            return err(format!(
                "need 0 < r_on < r_off, got r_on={} r_off={}",
                self.r_on, self.r_off
            ));
        }
        if !(self.v_on < 0.0 && 0.0 < self.v_off) {
            return err(format!(
                "thresholds must satisfy v_on < 0 < v_off, got v_on={} v_off={}",
                self.v_on, self.v_off
            ));
        }
        if self.k_on > 0.0 || self.k_s_on > 0.0 {
            return err("k_on and k_s_on must be <= 0".into());
        }
        if self.k_off < 0.0 || self.k_s_off < 0.0 {
            return err("k_off and k_s_off must be >= 0".into());
        }
        for (name, a) in [
            ("alpha_on", self.alpha_on),
            ("alpha_off", self.alpha_off),
            ("alpha_s_on", self.alpha_s_on),
            ("alpha_s_off", self.alpha_s_off),
        ] {
            if a < 1.0 {
                return err(format!("{name} must be >= 1, got {a}"));
            }
        }
        if let WindowKind::Polynomial { p } = self.window {
            if p == 0 {
                return err("polynomial window order must be >= 1".into());
            }
        }
        Ok(())
    }

    /// Largest voltage magnitude that still counts as a (drift-only) read.
    pub fn subthreshold_limit(&self) -> f64 {
        self.v_off.min(-self.v_on)
    }

    /// Resistance at state `w`: r_off * w + r_on * (1 - w).
    pub fn resistance(&self, w: f64) -> f64 {
        self.r_off * w + self.r_on * (1.0 - w)
    }

    pub fn conductance(&self, w: f64) -> f64 {
        1.0 / self.resistance(w)
    }

    /// Invert the conductance map; errors if `g` is outside
    /// [1/r_off, 1/r_on].
    pub fn w_for_conductance(&self, g: f64) -> Result<f64> {
        if !g.is_finite() || g <= 0.0 {
            return Err(Error::InvalidInput(format!("conductance {g} S")));
        }
        let w = (1.0 / g - self.r_on) / (self.r_off - self.r_on);
        if !(-1e-12..=1.0 + 1e-12).contains(&w) {
            return Err(Error::InvalidInput(format!(
                "conductance {g} S outside device range [{:.3e}, {:.3e}] S",
                1.0 / self.r_off,
                1.0 / self.r_on
            )));
        }
        Ok(w.clamp(0.0, 1.0))
    }

    /// Window factor for the branch driving w toward 1.
    pub fn window_up(&self, w: f64) -> f64 {
        match self.window {
            WindowKind::Rectangular => {
                if w >= 1.0 {
                    0.0
                } else {
                    1.0
                }
            }
            WindowKind::Linear => (1.0 - w).clamp(0.0, 1.0),
            WindowKind::Polynomial { p } => joglekar(w, p),
        }
    }

    /// Window factor for the branch driving w toward 0.
    pub fn window_down(&self, w: f64) -> f64 {
        match self.window {
            WindowKind::Rectangular => {
                if w <= 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            WindowKind::Linear => w.clamp(0.0, 1.0),
            WindowKind::Polynomial { p } => joglekar(w, p),
        }
    }

    /// dw/dt at state `w` under applied voltage `v`.
    ///
    /// Piecewise in `v`: above-threshold VTEAM power laws for
    /// `v >= v_off` / `v <= v_on`, the sub-threshold laws strictly inside,
    /// exactly zero at `v = 0`. Positive voltage raises `w` (toward r_off),
    /// negative lowers it.
    pub fn state_rate(&self, w: f64, v: f64) -> f64 {
        if v == 0.0 {
            0.0
        } else if v >= self.v_off {
            self.k_off * (v / self.v_off - 1.0).powf(self.alpha_off) * self.window_up(w)
        } else if v > 0.0 {
            self.k_s_off * (v / self.v_off).powf(self.alpha_s_off) * self.window_up(w)
        } else if v <= self.v_on {
            self.k_on * (v / self.v_on - 1.0).powf(self.alpha_on) * self.window_down(w)
        } else {
            self.k_s_on * (v / self.v_on).powf(self.alpha_s_on) * self.window_down(w)
        }
    }

    /// Draw a device-to-device variation sample: every `k` and `alpha`
    /// parameter (both threshold regimes) is replaced by a Gaussian with
    /// mean at the nominal value and variance `scale * 0.15 * |nominal|`,
    /// then re-clamped to the sign conventions. `scale = 0` returns the
    /// nominal parameters unchanged; `scale = 1` is the standard setting.
    pub fn sample_variation_scaled<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> DeviceParams {
        let mut out = self.clone();
        if scale == 0.0 {
            return out;
        }
        let draw = |rng: &mut R, nominal: f64| -> f64 {
            let var = scale * VARIATION_VARIANCE_FACTOR * nominal.abs();
            if var == 0.0 {
                return nominal;
            }
            let normal = Normal::new(nominal, var.sqrt()).expect("finite std");
            normal.sample(rng)
        };
        out.k_on = draw(rng, self.k_on).min(0.0);
        out.k_off = draw(rng, self.k_off).max(0.0);
        out.alpha_on = draw(rng, self.alpha_on).max(1.0);
        out.alpha_off = draw(rng, self.alpha_off).max(1.0);
        out.k_s_on = draw(rng, self.k_s_on).min(0.0);
        out.k_s_off = draw(rng, self.k_s_off).max(0.0);
        out.alpha_s_on = draw(rng, self.alpha_s_on).max(1.0);
        out.alpha_s_off = draw(rng, self.alpha_s_off).max(1.0);
        out
    }

    pub fn sample_variation<R: Rng + ?Sized>(&self, rng: &mut R) -> DeviceParams {
        self.sample_variation_scaled(rng, 1.0)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let params: DeviceParams = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn joglekar(w: f64, p: u32) -> f64 {
    let x = 2.0 * w.clamp(0.0, 1.0) - 1.0;
    (1.0 - x.powi(2 * p as i32)).max(0.0)
}

/// One memristor: a state value plus the (possibly variation-sampled)
/// parameters it evolves under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemristorState {
    pub w: f64,
    pub params: DeviceParams,
}

impl MemristorState {
    pub fn new(params: DeviceParams, w: f64) -> Result<Self> {
        params.validate()?;
        if !w.is_finite() || !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidInput(format!("state w={w} outside [0, 1]")));
        }
        Ok(MemristorState { w, params })
    }

    pub fn with_conductance(params: DeviceParams, g: f64) -> Result<Self> {
        params.validate()?;
        let w = params.w_for_conductance(g)?;
        Ok(MemristorState { w, params })
    }

    pub fn resistance(&self) -> f64 {
        self.params.resistance(self.w)
    }

    pub fn conductance(&self) -> f64 {
        self.params.conductance(self.w)
    }

    pub fn rate(&self, v: f64) -> f64 {
        self.params.state_rate(self.w, v)
    }

    /// Advance the state under constant voltage `v` for duration `dt`,
    /// explicit Euler with adaptive sub-steps capped at `max_dw` of state
    /// travel each. The state stays clamped to [0, 1].
    ///
    /// A rectangular window makes the rate state-independent inside the
    /// interval, so that case takes a single exact step.
    pub fn step_capped(&mut self, v: f64, dt: f64, max_dw: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("voltage {v}")));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidInput(format!("duration {dt} s")));
        }
        if !max_dw.is_finite() || max_dw <= 0.0 {
            return Err(Error::InvalidInput(format!("sub-step cap {max_dw}")));
        }
        if self.params.window == WindowKind::Rectangular {
            let rate = self.rate(v);
            // Constant rate until the bound; overshoot just clamps, which
            // is exactly where the device would have stopped.
            self.w = (self.w + rate * dt).clamp(0.0, 1.0);
            return Ok(());
        }
        let mut remaining = dt;
        while remaining > 0.0 {
            let rate = self.rate(v);
            if rate == 0.0 {
                break;
            }
            let sub = (max_dw / rate.abs()).min(remaining);
            self.w = (self.w + rate * sub).clamp(0.0, 1.0);
            remaining -= sub;
        }
        Ok(())
    }

    pub fn step(&mut self, v: f64, dt: f64) -> Result<()> {
        self.step_capped(v, dt, MAX_DW_PER_SUBSTEP)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn tiox_set_validates() {
        DeviceParams::tiox().validate().unwrap();
    }

    #[test]
    fn rate_matches_hand_computed_subthreshold_values() {
        let p = DeviceParams::tiox();
        // -8.445e-6 * (0.3/0.6)^6
        let set = p.state_rate(0.5, -0.3);
        assert!(rel_err(set, -8.445e-6 * 0.5f64.powi(6)) < 1e-12);
        assert!((set - -1.31953125e-7).abs() < 1e-12);
        // 1.126e-7 * (0.3/0.6)^5
        let reset = p.state_rate(0.5, 0.3);
        assert!(rel_err(reset, 3.51875e-9) < 1e-12);
    }

    #[test]
    fn rate_is_exactly_zero_at_zero_bias() {
        let p = DeviceParams::tiox();
        assert_eq!(p.state_rate(0.5, 0.0), 0.0);
    }

    #[test]
    fn rate_sign_follows_bias_sign() {
        let p = DeviceParams::tiox();
        for &w in &[0.1, 0.5, 0.9] {
            for &v in &[0.05, 0.3, 0.59, 0.7, 1.0] {
                assert!(p.state_rate(w, v) > 0.0, "w={w} v={v}");
                assert!(p.state_rate(w, -v) < 0.0, "w={w} v={v}");
            }
        }
    }

    #[test]
    fn rate_magnitude_monotone_in_bias_within_branch() {
        let p = DeviceParams::tiox();
        let mut prev = 0.0;
        for i in 1..60 {
            let v = 0.01 * i as f64; // stays below v_off
            let r = p.state_rate(0.5, v);
            assert!(r >= prev, "not monotone at v={v}");
            prev = r;
        }
    }

    #[test]
    fn above_threshold_branches_engage() {
        let p = DeviceParams::tiox();
        let up = p.state_rate(0.5, 1.2);
        assert!(rel_err(up, 5.0e5) < 1e-12); // k_off * (1.2/0.6 - 1)^3 = k_off
        let down = p.state_rate(0.5, -1.2);
        assert!(rel_err(down, -2.0e6) < 1e-12);
    }

    #[test]
    fn rectangular_window_integration_is_linear_in_time() {
        // dw/dt = r constant inside (0,1): w(t) = w0 + r t.
        let p = DeviceParams::tiox();
        let mut m = MemristorState::new(p.clone(), 0.25).unwrap();
        let v = 0.45;
        let r = p.state_rate(0.25, v);
        let t = 1.0e6; // long enough for a visible move at sub-threshold rates
        m.step(v, t).unwrap();
        let exact = 0.25 + r * t;
        assert!(exact < 1.0, "test setup must stay interior");
        assert!(rel_err(m.w, exact) < 1e-9, "w={} exact={}", m.w, exact);
    }

    #[test]
    fn linear_window_integration_matches_exponential() {
        // dw/dt = r (1 - w): w(t) = 1 - (1 - w0) e^(-r t).
        let mut p = DeviceParams::tiox();
        p.window = WindowKind::Linear;
        let v = 0.45;
        let r = p.k_s_off * (v / p.v_off).powf(p.alpha_s_off);
        let t = 0.1 / r; // r t = 0.1
        let mut m = MemristorState::new(p, 0.0).unwrap();
        m.step(v, t).unwrap();
        let exact = 1.0 - (-0.1f64).exp();
        assert!(rel_err(m.w, exact) < 1e-6, "w={} exact={}", m.w, exact);
        assert!((m.w - exact).abs() / exact < 1e-6);
    }

    #[test]
    fn linear_window_decay_branch_matches_exponential() {
        // dw/dt = -c w: w(t) = w0 e^(-c t).
        let mut p = DeviceParams::tiox();
        p.window = WindowKind::Linear;
        let v = -0.45;
        let c = -p.k_s_on * (v / p.v_on).powf(p.alpha_s_on);
        let t = 0.1 / c;
        let mut m = MemristorState::new(p, 0.8).unwrap();
        m.step(v, t).unwrap();
        let exact = 0.8 * (-0.1f64).exp();
        assert!(rel_err(m.w, exact) < 1e-6);
    }

    #[test]
    fn state_stays_bounded_under_pulse_trains() {
        let mut p = DeviceParams::tiox();
        // Accelerate so pulses actually push against the bounds.
        p.k_s_on *= 1e10;
        p.k_s_off *= 1e10;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &window in &[
            WindowKind::Rectangular,
            WindowKind::Linear,
            WindowKind::Polynomial { p: 2 },
        ] {
            let mut dev = p.clone();
            dev.window = window;
            let mut m = MemristorState::new(dev, 0.5).unwrap();
            for _ in 0..2000 {
                let v = rng.gen_range(-0.59..0.59);
                m.step(v, 1e-3).unwrap();
                assert!((0.0..=1.0).contains(&m.w), "window {window:?}");
            }
        }
    }

    #[test]
    fn device_at_bound_can_reenter() {
        let p = DeviceParams::tiox();
        let mut m = MemristorState::new(p, 1.0).unwrap();
        assert_eq!(m.rate(0.3), 0.0); // saturated upward
        m.step(-0.5, 1.0).unwrap();
        assert!(m.w < 1.0); // but free to come back down
    }

    #[test]
    fn polynomial_window_vanishes_at_bounds() {
        let mut p = DeviceParams::tiox();
        p.window = WindowKind::Polynomial { p: 2 };
        assert_eq!(p.window_up(0.0), 0.0);
        assert_eq!(p.window_up(1.0), 0.0);
        assert_eq!(p.window_up(0.5), 1.0);
        assert_eq!(p.window_down(0.5), 1.0);
    }

    #[test]
    fn step_rejects_bad_arguments() {
        let mut m = MemristorState::new(DeviceParams::tiox(), 0.5).unwrap();
        assert!(m.step(f64::NAN, 1.0).is_err());
        assert!(m.step(0.1, 0.0).is_err());
        assert!(m.step(0.1, -1.0).is_err());
    }

    #[test]
    fn variation_scale_zero_is_identity() {
        let p = DeviceParams::tiox();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(p.sample_variation_scaled(&mut rng, 0.0), p);
    }

    #[test]
    fn variation_respects_sign_clamps() {
        let p = DeviceParams::tiox();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5000 {
            let s = p.sample_variation(&mut rng);
            assert!(s.k_on <= 0.0 && s.k_s_on <= 0.0);
            assert!(s.k_off >= 0.0 && s.k_s_off >= 0.0);
            assert!(s.alpha_on >= 1.0 && s.alpha_off >= 1.0);
            assert!(s.alpha_s_on >= 1.0 && s.alpha_s_off >= 1.0);
        }
    }

    #[test]
    fn variation_is_deterministic_per_seed() {
        let p = DeviceParams::tiox();
        let a = p.sample_variation(&mut ChaCha8Rng::seed_from_u64(42));
        let b = p.sample_variation(&mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn resistance_map_endpoints() {
        let p = DeviceParams::tiox();
        assert_eq!(p.resistance(0.0), p.r_on);
        assert_eq!(p.resistance(1.0), p.r_off);
        let w = p.w_for_conductance(p.conductance(0.37)).unwrap();
        assert!((w - 0.37).abs() < 1e-12);
        assert!(p.w_for_conductance(1.0).is_err()); // 1 S is out of range
    }

    #[test]
    fn json_roundtrip_preserves_params() {
        let p = DeviceParams::tiox();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"k_s_on\""));
        assert!(text.contains("\"alpha_s_off\""));
        let back: DeviceParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
    }
}
