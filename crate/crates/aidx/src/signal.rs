//! Input-to-pulse encoding and input statistics.
//!
//! Inference inputs are normalized to [-1, 1] and presented to a crossbar as
//! one voltage pulse per row. A [`PulseConfig`] reshapes those pulses without
//! touching the digital values they represent: positive entries get their
//! row's amplitude ratio `A_i` and width ratio `D_i`, negative entries keep
//! the base shape, and a fraction of whole samples can be inverted (all
//! entries negated, the decoded outputs un-negated afterwards). Drift cares
//! about the shape; the mapped computation only sees the signs recovered.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::error::{Error, Result};

/// Default hardware bounds on the per-row amplitude/width ratios.
pub const RATIO_BOUNDS: (f64, f64) = (0.25, 4.0);

/// One read pulse: signed amplitude in volts, width in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowPulse {
    pub amplitude: f64,
    pub width: f64,
}

/// Per-layer pulse-shaping decision variables.
///
/// `amplitude_ratio[i]` and `width_ratio[i]` scale the pulse a positive
/// input on row `i` produces; negative inputs always use the base shape.
/// `inversion_fraction` is the proportion of replay samples fed in negated,
/// realized by `inversion_mask` (indexed by replay position, cycled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    #[serde(rename = "A")]
    pub amplitude_ratio: Vec<f64>,
    #[serde(rename = "D")]
    pub width_ratio: Vec<f64>,
    pub base_amplitude_v: f64,
    pub base_width_s: f64,
    #[serde(default)]
    pub inversion_fraction: f64,
    #[serde(default)]
    pub inversion_mask: Vec<bool>,
}

impl PulseConfig {
    /// The do-nothing configuration: unit ratios, no inversion.
    pub fn identity(rows: usize, base_amplitude_v: f64, base_width_s: f64) -> Self {
        PulseConfig {
            amplitude_ratio: vec![1.0; rows],
            width_ratio: vec![1.0; rows],
            base_amplitude_v,
            base_width_s,
            inversion_fraction: 0.0,
            inversion_mask: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.amplitude_ratio.len()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidConfig(msg));
        if self.amplitude_ratio.len() != self.width_ratio.len() {
            return err(format!(
                "A has {} rows, D has {}",
                self.amplitude_ratio.len(),
                self.width_ratio.len()
            ));
        }
        if self.amplitude_ratio.is_empty() {
            return err("empty ratio vectors".into());
        }
        for (name, vals) in [("A", &self.amplitude_ratio), ("D", &self.width_ratio)] {
            if vals.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return err(format!("{name} entries must be finite and positive"));
            }
        }
        if !(self.base_amplitude_v > 0.0 && self.base_amplitude_v.is_finite()) {
            return err(format!("base amplitude {} V", self.base_amplitude_v));
        }
        if !(self.base_width_s > 0.0 && self.base_width_s.is_finite()) {
            return err(format!("base width {} s", self.base_width_s));
        }
        if !(0.0..1.0).contains(&self.inversion_fraction) {
            return err(format!(
                "inversion fraction {} outside [0, 1)",
                self.inversion_fraction
            ));
        }
        Ok(())
    }

    /// Check the sub-threshold safety bound against a device: the largest
    /// pulse any |x| <= 1 input can produce must stay a read, not a write.
    pub fn validate_subthreshold(&self, device: &DeviceParams) -> Result<()> {
        let limit = device.subthreshold_limit();
        let max_gain = self
            .amplitude_ratio
            .iter()
            .fold(1.0f64, |m, &a| m.max(a));
        if self.base_amplitude_v * max_gain >= limit {
            return Err(Error::InvalidConfig(format!(
                "base amplitude {} V with max ratio {} reaches the threshold {} V",
                self.base_amplitude_v, max_gain, limit
            )));
        }
        Ok(())
    }

    /// True if every ratio lies within [lo, hi].
    pub fn ratios_within(&self, lo: f64, hi: f64) -> bool {
        self.amplitude_ratio
            .iter()
            .chain(self.width_ratio.iter())
            .all(|&r| (lo..=hi).contains(&r))
    }

    /// Clamp every ratio into [lo, hi].
    pub fn clamp_ratios(&mut self, lo: f64, hi: f64) {
        for r in self
            .amplitude_ratio
            .iter_mut()
            .chain(self.width_ratio.iter_mut())
        {
            *r = r.clamp(lo, hi);
        }
    }

    /// Whether the sample at replay position `t` is fed in inverted.
    pub fn inverted_at(&self, t: usize) -> bool {
        if self.inversion_mask.is_empty() {
            false
        } else {
            self.inversion_mask[t % self.inversion_mask.len()]
        }
    }

    /// Draw the inversion mask realizing `inversion_fraction` over a replay
    /// stream of `n` samples: exactly round(a*n) positions, chosen uniformly.
    pub fn draw_inversion_mask(&mut self, n: usize, seed: u64) {
        let count = (self.inversion_fraction * n as f64).round() as usize;
        let mut mask = vec![false; n];
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(count) {
            mask[i] = true;
        }
        self.inversion_mask = mask;
    }

    /// Sum of squared ratios, the power-proxy regularizer.
    pub fn ratio_energy(&self) -> f64 {
        let a: f64 = self.amplitude_ratio.iter().map(|v| v * v).sum();
        let d: f64 = self.width_ratio.iter().map(|v| v * v).sum();
        a + d
    }
}

/// Encode one input vector as per-row pulses under `cfg`. `invert` is the
/// sample-level inversion flag (the caller recovers outputs by negating
/// them). Errors if any pulse would cross the device threshold.
pub fn encode_input(
    x: &[f64],
    cfg: &PulseConfig,
    invert: bool,
    device: &DeviceParams,
) -> Result<Vec<RowPulse>> {
    if x.len() != cfg.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input rows", cfg.rows()),
            actual: format!("{}", x.len()),
        });
    }
    let limit = device.subthreshold_limit();
    let mut pulses = Vec::with_capacity(x.len());
    for (i, &raw) in x.iter().enumerate() {
        if !raw.is_finite() || raw.abs() > 1.0 + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "input[{i}] = {raw}, inputs must be normalized to [-1, 1]"
            )));
        }
        let xv = if invert { -raw } else { raw };
        let pulse = if xv > 0.0 {
            RowPulse {
                amplitude: cfg.base_amplitude_v * cfg.amplitude_ratio[i] * xv,
                width: cfg.base_width_s * cfg.width_ratio[i],
            }
        } else {
            // Negative and zero inputs keep the base pulse shape.
            RowPulse {
                amplitude: cfg.base_amplitude_v * xv,
                width: cfg.base_width_s,
            }
        };
        if pulse.amplitude.abs() >= limit {
            return Err(Error::OverThresholdRead {
                row: i,
                voltage: pulse.amplitude,
                limit,
            });
        }
        pulses.push(pulse);
    }
    Ok(pulses)
}

/// Negate a proportion `a` of the sample rows of `x_set` (chosen uniformly,
/// seeded) and return the transformed set together with the inversion mask.
/// Outputs computed from a masked sample are recovered by multiplying by -1.
pub fn invert_fraction(x_set: &Array2<f64>, a: f64, seed: u64) -> Result<(Array2<f64>, Vec<bool>)> {
    if !(0.0..1.0).contains(&a) {
        return Err(Error::InvalidInput(format!(
            "inversion fraction {a} outside [0, 1)"
        )));
    }
    let n = x_set.nrows();
    let count = (a * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut mask = vec![false; n];
    for &i in idx.iter().take(count) {
        mask[i] = true;
    }
    let mut out = x_set.clone();
    for (i, flag) in mask.iter().enumerate() {
        if *flag {
            for v in out.row_mut(i) {
                *v = -*v;
            }
        }
    }
    Ok((out, mask))
}

/// Discrete distribution of scalar input values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    pub support: Vec<f64>,
    pub pmf: Vec<f64>,
}

impl InputDistribution {
    pub fn new(support: Vec<f64>, pmf: Vec<f64>) -> Result<Self> {
        let dist = InputDistribution { support, pmf };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<()> {
        if self.support.len() != self.pmf.len() || self.support.is_empty() {
            return Err(Error::InvalidInput(format!(
                "distribution with {} support points and {} masses",
                self.support.len(),
                self.pmf.len()
            )));
        }
        if self.support.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite support value".into()));
        }
        if self.pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("negative probability mass".into()));
        }
        let total: f64 = self.pmf.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probability masses sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// Empirical distribution of a value stream. Up to `max_support`
    /// distinct values are kept exactly; denser data is binned into
    /// `max_support` equal-width bins (support at bin centers).
    pub fn from_samples(values: &[f64], max_support: usize) -> Result<Self> {
        if values.is_empty() || max_support == 0 {
            return Err(Error::InsufficientData(
                "cannot build a distribution from no samples".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample value".into()));
        }
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct: Vec<(f64, usize)> = Vec::new();
        for &v in &sorted {
            match distinct.last_mut() {
                Some((last, count)) if *last == v => *count += 1,
                _ => distinct.push((v, 1)),
            }
        }
        let n = values.len() as f64;
        if distinct.len() <= max_support {
            let (support, counts): (Vec<f64>, Vec<usize>) = distinct.into_iter().unzip();
            let pmf = counts.into_iter().map(|c| c as f64 / n).collect();
            return InputDistribution::new(support, pmf);
        }
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        let width = (hi - lo) / max_support as f64;
        let mut counts = vec![0usize; max_support];
        for &v in &sorted {
            let bin = (((v - lo) / width) as usize).min(max_support - 1);
            counts[bin] += 1;
        }
        let support = (0..max_support)
            .map(|b| lo + (b as f64 + 0.5) * width)
            .collect();
        let pmf = counts.into_iter().map(|c| c as f64 / n).collect();
        InputDistribution::new(support, pmf)
    }

    /// Distribution after inverting a proportion `a` of samples:
    /// the mixture (1 - a) f(x) + a f(-x).
    pub fn inverted(&self, a: f64) -> Result<InputDistribution> {
        if !(0.0..1.0).contains(&a) {
            return Err(Error::InvalidInput(format!(
                "inversion fraction {a} outside [0, 1)"
            )));
        }
        let mut mass: Vec<(f64, f64)> = Vec::with_capacity(2 * self.support.len());
        for (&x, &p) in self.support.iter().zip(&self.pmf) {
            mass.push((x, (1.0 - a) * p));
            mass.push((-x, a * p));
        }
        mass.sort_by(|l, r| f64::total_cmp(&l.0, &r.0));
        let mut support = Vec::new();
        let mut pmf: Vec<f64> = Vec::new();
        for (x, p) in mass {
            match support.last() {
                Some(&last) if last == x => *pmf.last_mut().unwrap() += p,
                _ => {
                    support.push(x);
                    pmf.push(p);
                }
            }
        }
        InputDistribution::new(support, pmf)
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.pmf)
            .map(|(x, p)| x * p)
            .sum()
    }

    pub fn expectation(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.support
            .iter()
            .zip(&self.pmf)
            .map(|(&x, &p)| p * g(x))
            .sum()
    }
}

/// Expected sub-threshold drift rate (dw/dt, width-weighted) of a device at
/// state `w` reading inputs drawn from `dist` under `cfg`, averaged over the
/// config's rows. The config's `inversion_fraction` enters as the mixture
/// (1-a) f(x) + a f(-x); width ratios weight the time-averaged rate.
pub fn expected_drift_rate(
    dist: &InputDistribution,
    device: &DeviceParams,
    cfg: &PulseConfig,
    w: f64,
) -> Result<f64> {
    dist.validate()?;
    cfg.validate()?;
    let a = cfg.inversion_fraction;
    let rows = cfg.rows();
    let mut total = 0.0;
    for i in 0..rows {
        let per_value = |xv: f64| -> f64 {
            if xv > 0.0 {
                device.state_rate(w, cfg.base_amplitude_v * cfg.amplitude_ratio[i] * xv)
                    * cfg.width_ratio[i]
            } else {
                device.state_rate(w, cfg.base_amplitude_v * xv)
            }
        };
        total += dist.expectation(|x| (1.0 - a) * per_value(x) + a * per_value(-x));
    }
    Ok(total / rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn symmetric_device() -> DeviceParams {
        let mut p = DeviceParams::tiox();
        p.k_s_on = -1e-6;
        p.k_s_off = 1e-6;
        p.alpha_s_on = 5.0;
        p.alpha_s_off = 5.0;
        p
    }

    #[test]
    fn encode_scales_positive_inputs_only() {
        let mut cfg = PulseConfig::identity(2, 0.2, 200e-9);
        cfg.amplitude_ratio = vec![1.5, 1.5];
        cfg.width_ratio = vec![0.75, 0.75];
        let dev = DeviceParams::tiox();
        let pulses = encode_input(&[1.0, -0.5], &cfg, false, &dev).unwrap();
        assert!((pulses[0].amplitude - 0.3).abs() < 1e-15);
        assert!((pulses[0].width - 150e-9).abs() < 1e-24);
        assert!((pulses[1].amplitude - -0.1).abs() < 1e-15);
        assert!((pulses[1].width - 200e-9).abs() < 1e-24);
    }

    #[test]
    fn encode_zero_input_gives_zero_amplitude() {
        let cfg = PulseConfig::identity(1, 0.2, 200e-9);
        let pulses = encode_input(&[0.0], &cfg, false, &DeviceParams::tiox()).unwrap();
        assert_eq!(pulses[0].amplitude, 0.0);
    }

    #[test]
    fn encode_inversion_flag_negates_the_sample() {
        let cfg = PulseConfig::identity(2, 0.2, 200e-9);
        let dev = DeviceParams::tiox();
        let fwd = encode_input(&[0.5, -0.25], &cfg, false, &dev).unwrap();
        let inv = encode_input(&[0.5, -0.25], &cfg, true, &dev).unwrap();
        assert!((inv[0].amplitude - -0.1).abs() < 1e-15);
        assert!((inv[1].amplitude - 0.05).abs() < 1e-15);
        assert!((fwd[0].amplitude - 0.1).abs() < 1e-15);
    }

    #[test]
    fn encode_rejects_threshold_crossing() {
        let mut cfg = PulseConfig::identity(1, 0.5, 200e-9);
        cfg.amplitude_ratio = vec![1.5];
        let err = encode_input(&[1.0], &cfg, false, &DeviceParams::tiox()).unwrap_err();
        assert!(matches!(err, Error::OverThresholdRead { .. }));
        assert!(cfg.validate_subthreshold(&DeviceParams::tiox()).is_err());
    }

    #[test]
    fn encode_rejects_unnormalized_inputs() {
        let cfg = PulseConfig::identity(1, 0.2, 200e-9);
        assert!(encode_input(&[1.5], &cfg, false, &DeviceParams::tiox()).is_err());
    }

    #[test]
    fn invert_fraction_hits_exact_count_and_is_seeded() {
        let x = Array2::from_shape_fn((16, 3), |(i, j)| (i * 3 + j) as f64 / 50.0);
        let (t1, m1) = invert_fraction(&x, 0.375, 9).unwrap();
        let (_t2, m2) = invert_fraction(&x, 0.375, 9).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.iter().filter(|&&b| b).count(), 6); // round(0.375 * 16)
        for (i, flag) in m1.iter().enumerate() {
            let sign = if *flag { -1.0 } else { 1.0 };
            for j in 0..3 {
                assert_eq!(t1[[i, j]], sign * x[[i, j]]);
            }
        }
    }

    #[test]
    fn invert_fraction_rejects_bad_fraction() {
        let x = array![[1.0], [2.0]];
        assert!(invert_fraction(&x, 1.0, 0).is_err());
        assert!(invert_fraction(&x, -0.1, 0).is_err());
    }

    #[test]
    fn distribution_must_sum_to_one() {
        assert!(InputDistribution::new(vec![1.0, -1.0], vec![0.8, 0.3]).is_err());
        assert!(InputDistribution::new(vec![1.0, -1.0], vec![0.8, 0.2]).is_ok());
    }

    #[test]
    fn inverted_mixture_masses_match_hand_computation() {
        // {+1: 0.8, -1: 0.2}, a = 0.375: mass at +1 becomes
        // 0.625*0.8 + 0.375*0.2 = 0.575, and the mean scales by (1 - 2a).
        let d = InputDistribution::new(vec![-1.0, 1.0], vec![0.2, 0.8]).unwrap();
        let inv = d.inverted(0.375).unwrap();
        let plus = inv
            .support
            .iter()
            .position(|&x| x == 1.0)
            .map(|i| inv.pmf[i])
            .unwrap();
        assert!((plus - 0.575).abs() < 1e-15);
        assert!((inv.mean() - 0.25 * d.mean()).abs() < 1e-15);
    }

    #[test]
    fn from_samples_exact_mode_counts_values() {
        let d = InputDistribution::from_samples(&[1.0, 1.0, 1.0, -1.0], 64).unwrap();
        assert_eq!(d.support, vec![-1.0, 1.0]);
        assert!((d.pmf[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn from_samples_bins_dense_data() {
        let vals: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let d = InputDistribution::from_samples(&vals, 16).unwrap();
        assert_eq!(d.support.len(), 16);
        assert!((d.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_inversion_cancels_symmetric_device() {
        let dev = symmetric_device();
        let d = InputDistribution::new(vec![-1.0, 1.0], vec![0.2, 0.8]).unwrap();
        let mut cfg = PulseConfig::identity(1, 0.3, 200e-9);
        cfg.inversion_fraction = 0.4999999999;
        let r = expected_drift_rate(&d, &dev, &cfg, 0.5).unwrap();
        let mut cfg0 = cfg.clone();
        cfg0.inversion_fraction = 0.0;
        let r0 = expected_drift_rate(&d, &dev, &cfg0, 0.5).unwrap();
        assert!(r.abs() < 1e-9 * r0.abs());
    }

    #[test]
    fn expected_rate_matches_hand_sum() {
        let dev = DeviceParams::tiox();
        let d = InputDistribution::new(vec![-1.0, 1.0], vec![0.2, 0.8]).unwrap();
        let cfg = PulseConfig::identity(1, 0.3, 200e-9);
        let expect = 0.8 * dev.state_rate(0.5, 0.3) + 0.2 * dev.state_rate(0.5, -0.3);
        let got = expected_drift_rate(&d, &dev, &cfg, 0.5).unwrap();
        assert!((got - expect).abs() < 1e-20);
    }

    #[test]
    fn width_ratio_weights_positive_side_rate() {
        let dev = DeviceParams::tiox();
        let d = InputDistribution::new(vec![1.0], vec![1.0]).unwrap();
        let mut cfg = PulseConfig::identity(1, 0.3, 200e-9);
        cfg.width_ratio = vec![0.5];
        let got = expected_drift_rate(&d, &dev, &cfg, 0.5).unwrap();
        assert!((got - 0.5 * dev.state_rate(0.5, 0.3)).abs() < 1e-20);
    }

    #[test]
    fn mask_cycles_over_replay_positions() {
        let mut cfg = PulseConfig::identity(1, 0.2, 200e-9);
        cfg.inversion_fraction = 0.5;
        cfg.draw_inversion_mask(10, 3);
        assert_eq!(cfg.inversion_mask.iter().filter(|&&b| b).count(), 5);
        assert_eq!(cfg.inverted_at(3), cfg.inverted_at(13));
    }

    #[test]
    fn config_json_uses_contracted_field_names() {
        let cfg = PulseConfig::identity(2, 0.2, 200e-9);
        let text = serde_json::to_string(&cfg).unwrap();
        for field in [
            "\"A\"",
            "\"D\"",
            "\"base_amplitude_v\"",
            "\"base_width_s\"",
            "\"inversion_fraction\"",
            "\"inversion_mask\"",
        ] {
            assert!(text.contains(field), "missing {field} in {text}");
        }
        let back: PulseConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
