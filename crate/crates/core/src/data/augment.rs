use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, Waveform};

/// Linear-interpolation resampling on the grid `t_out[k] = k·s`.
///
/// Output length is `round(len / s)`; positions past the last input sample
/// hold that sample.
pub fn speed_perturb(w: &Waveform, s: f64) -> Result<Waveform> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(DataError::Invalid(format!("speed factor must be positive, got {s}")));
    }
    let len = w.samples.len();
    let out_len = (len as f64 / s).round() as usize;
    if out_len == 0 {
        return Err(DataError::FactorTooLarge { factor: s, len });
    }
    if s == 1.0 {
        return Ok(w.clone());
    }
    let last = len - 1;
    let samples = (0..out_len)
        .map(|k| {
            let t = k as f64 * s;
            let i = t.floor() as usize;
            if i >= last {
                return w.samples[last];
            }
            let frac = t - i as f64;
            let (a, b) = (w.samples[i] as f64, w.samples[i + 1] as f64);
            (a + (b - a) * frac) as f32
        })
        .collect();
    Ok(Waveform::new(samples, w.sample_rate))
}

/// Scales by `g` and clamps to `[-1, 1]`.
pub fn volume_perturb(w: &Waveform, g: f64) -> Waveform {
    let samples = w
        .samples
        .iter()
        .map(|&x| (x as f64 * g).clamp(-1.0, 1.0) as f32)
        .collect();
    Waveform::new(samples, w.sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub p_speed: f64,
    pub speed_range: (f64, f64),
    pub p_volume: f64,
    pub gain_range: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            p_speed: 0.3,
            speed_range: (0.9, 1.1),
            p_volume: 0.3,
            gain_range: (0.25, 2.0),
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        Self {
            p_speed: 0.0,
            p_volume: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_speed", self.p_speed), ("p_volume", self.p_volume)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Policy(format!("{name} = {p} is not a probability")));
            }
        }
        for (name, (lo, hi)) in [("speed_range", self.speed_range), ("gain_range", self.gain_range)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(DataError::Policy(format!("{name} = [{lo}, {hi}] must satisfy 0 < lo <= hi")));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Speed then volume, each applied independently with its probability.
///
/// The coin flips and factor draws are always consumed so the rng advances by
/// the same amount whatever the outcome.
pub fn augment(w: &Waveform, policy: &AugmentPolicy, rng: &mut impl Rng) -> Result<Waveform> {
    policy.validate()?;
    let do_speed = rng.random_bool(policy.p_speed);
    let s = draw(rng, policy.speed_range);
    let do_volume = rng.random_bool(policy.p_volume);
    let g = draw(rng, policy.gain_range);
    let mut out = if do_speed { speed_perturb(w, s)? } else { w.clone() };
    if do_volume {
        out = volume_perturb(&out, g);
    }
    Ok(out.clip())
}
