//! Synthetic benchmark: a weekly base profile replicated over a year, with
//! multiplicative noise, injected interval anomalies and missing hour fibers.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GlossError, Result};
use crate::tensor::{DenseTensor, LabelTensor, SupportSet};

pub const HOURS: usize = 24;
pub const DAYS: usize = 7;
pub const WEEKS: usize = 52;
pub const DEFAULT_ZONES: usize = 81;
pub const DEFAULT_EVENTS: usize = 700;
pub const DEFAULT_DURATION: usize = 7;
pub const DEFAULT_NOISE_VARIANCE: f64 = 0.5;
pub const DEFAULT_PROFILE_SEED: u64 = 2020;
/// Per-zone amplitude range of the built-in profile, sampled log-uniformly.
pub const PROFILE_AMPLITUDE: (f64, f64) = (5.0, 200.0);

/// Source of the 24 x 7 x Z weekly profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseProfile {
    Builtin { zones: usize, seed: u64 },
    /// User-supplied profile; only its shape and checksum are serialized.
    Custom {
        shape: Vec<usize>,
        checksum: String,
        #[serde(skip)]
        tensor: Option<DenseTensor<f64>>,
    },
}

impl BaseProfile {
    pub fn custom(tensor: DenseTensor<f64>) -> Result<Self> {
        check_profile(&tensor)?;
        Ok(BaseProfile::Custom {
            shape: tensor.shape().to_vec(),
            checksum: format!("{:016x}", fnv1a(&tensor)),
            tensor: Some(tensor),
        })
    }

    pub fn zones(&self) -> usize {
        match self {
            BaseProfile::Builtin { zones, .. } => *zones,
            BaseProfile::Custom { shape, .. } => shape.get(2).copied().unwrap_or(0),
        }
    }

    pub fn materialize(&self) -> Result<DenseTensor<f64>> {
        match self {
            BaseProfile::Builtin { zones, seed } => builtin_base_profile(*zones, *seed),
            BaseProfile::Custom { tensor: Some(t), .. } => Ok(t.clone()),
            BaseProfile::Custom { .. } => Err(GlossError::InvalidParameter(
                "custom base profile was not loaded".into(),
            )),
        }
    }
}

fn fnv1a(t: &DenseTensor<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in t.as_slice() {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn check_profile(t: &DenseTensor<f64>) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || s[0] != HOURS || s[1] != DAYS || s[2] == 0 {
        return Err(GlossError::ShapeMismatch {
            expected: vec![HOURS, DAYS, s.get(2).copied().unwrap_or(1).max(1)],
            found: s.to_vec(),
        });
    }
    if !t.is_finite() {
        return Err(GlossError::NonFinite("base profile".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub base: BaseProfile,
    pub weeks: usize,
    /// Anomaly amplitude in units of the interval's mean base level.
    pub c: f64,
    pub n_events: usize,
    pub duration: usize,
    pub noise_var: f64,
    /// Percentage of hour fibers removed.
    pub missing_percent: f64,
    /// Clip negative values produced by noise or injection to zero.
    #[serde(default = "default_clip")]
    pub clip_negative: bool,
    pub seed: u64,
}

fn default_clip() -> bool {
    true
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            base: BaseProfile::Builtin {
                zones: DEFAULT_ZONES,
                seed: DEFAULT_PROFILE_SEED,
            },
            weeks: WEEKS,
            c: 2.5,
            n_events: DEFAULT_EVENTS,
            duration: DEFAULT_DURATION,
            noise_var: DEFAULT_NOISE_VARIANCE,
            missing_percent: 0.0,
            clip_negative: true,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn total_days(&self) -> usize {
        DAYS * self.weeks * self.base.zones()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GlossError::InvalidParameter(msg));
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad(format!("anomaly amplitude must be finite and >= 0, got {}", self.c));
        }
        if !(0.0..100.0).contains(&self.missing_percent) {
            return bad(format!("missing percentage must lie in [0, 100), got {}", self.missing_percent));
        }
        if self.duration == 0 || self.duration > HOURS {
            return bad(format!("event duration must lie in 1..=24, got {}", self.duration));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return bad(format!("noise variance must be finite and >= 0, got {}", self.noise_var));
        }
        if self.weeks == 0 || self.base.zones() == 0 {
            return bad("weeks and zones must be positive".into());
        }
        if self.n_events > self.total_days() {
            return bad(format!(
                "{} events requested but only {} (day, zone) pairs exist",
                self.n_events,
                self.total_days()
            ));
        }
        Ok(())
    }
}

/// One injected interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedEvent {
    pub day: usize,
    pub week: usize,
    pub zone: usize,
    pub start_hour: usize,
    /// Signed shift added to every hour of the interval.
    pub shift: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticProvenance {
    pub spec: SyntheticSpec,
    pub events: Vec<InjectedEvent>,
    pub generator: String,
    pub version: String,
}

#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    pub y: DenseTensor<f64>,
    pub labels: LabelTensor,
    pub omega: SupportSet,
    pub provenance: SyntheticProvenance,
}

/// Two-peak commuter curve over the day; weekends get a later, flatter profile.
fn diurnal(hour: usize, day: usize) -> f64 {
    let h = hour as f64;
    let bump = |center: f64, width: f64| (-(h - center).powi(2) / (2.0 * width * width)).exp();
    if day < 5 {
        0.15 + bump(8.5, 1.5) + 0.8 * bump(18.0, 2.0) + 0.3 * bump(13.0, 2.5)
    } else {
        0.2 + 0.6 * bump(13.0, 3.5) + 0.35 * bump(21.0, 2.0)
    }
}

/// Smooth positive 24 x 7 x `zones` profile with log-uniform zone amplitudes.
pub fn builtin_base_profile(zones: usize, seed: u64) -> Result<DenseTensor<f64>> {
    if zones == 0 {
        return Err(GlossError::InvalidParameter("base profile needs at least one zone".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (PROFILE_AMPLITUDE.0.ln(), PROFILE_AMPLITUDE.1.ln());
    let zone_params: Vec<(f64, f64)> = (0..zones)
        .map(|_| (rng.gen_range(lo..hi).exp(), rng.gen_range(-0.75..0.75)))
        .collect();
    DenseTensor::from_fn(&[HOURS, DAYS, zones], |idx| {
        let (amp, lag) = zone_params[idx[2]];
        // Zones differ by amplitude and a small phase lag of the daily curve.
        let h = (idx[0] as f64 + lag).rem_euclid(HOURS as f64);
        let lo_h = h.floor() as usize % HOURS;
        let frac = h - h.floor();
        let v = (1.0 - frac) * diurnal(lo_h, idx[1]) + frac * diurnal((lo_h + 1) % HOURS, idx[1]);
        amp * v
    })
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticInstance> {
    spec.validate()?;
    let base = spec.base.materialize()?;
    check_profile(&base)?;
    let zones = base.shape()[2];
    let shape = [HOURS, DAYS, spec.weeks, zones];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(1.0, spec.noise_var.sqrt())
        .map_err(|e| GlossError::InvalidParameter(e.to_string()))?;

    let mut y = DenseTensor::from_fn(&shape, |idx| base.get(&[idx[0], idx[1], idx[3]]))?;
    for v in y.as_mut_slice() {
        *v *= noise.sample(&mut rng);
    }

    let mut labels = LabelTensor::empty(&shape)?;
    let mut events = Vec::with_capacity(spec.n_events);
    let days_per_zone = DAYS * spec.weeks;
    for pick in sample(&mut rng, spec.total_days(), spec.n_events).into_vec() {
        let zone = pick / days_per_zone;
        let day_index = pick % days_per_zone;
        let (day, week) = (day_index % DAYS, day_index / DAYS);
        let start_hour = rng.gen_range(0..=HOURS - spec.duration);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let interval = start_hour..start_hour + spec.duration;
        let level = interval.clone().map(|h| base.get(&[h, day, zone])).sum::<f64>() / spec.duration as f64;
        let shift = sign * spec.c * level;
        for h in interval {
            let idx = [h, day, week, zone];
            y.set(&idx, y.get(&idx) + shift);
            labels.set(&idx, true);
        }
        events.push(InjectedEvent {
            day,
            week,
            zone,
            start_hour,
            shift,
        });
    }
    if spec.clip_negative {
        y.map_inplace(|v| v.max(0.0));
    }

    let mut omega = SupportSet::full(&shape)?;
    let fibers = DAYS * spec.weeks * zones;
    let missing = (spec.missing_percent / 100.0 * fibers as f64).round() as usize;
    for fiber in sample(&mut rng, fibers, missing).into_vec() {
        for h in 0..HOURS {
            let o = h + HOURS * fiber;
            y.as_mut_slice()[o] = 0.0;
            omega.as_mut_slice()[o] = false;
        }
    }

    Ok(SyntheticInstance {
        y,
        labels,
        omega,
        provenance: SyntheticProvenance {
            spec: spec.clone(),
            events,
            generator: "ChaCha8".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
    })
}
