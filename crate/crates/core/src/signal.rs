//! Chirp and multi-sine excitation inputs and their randomization profiles.

use crate::error::{config_err, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalKind {
    #[serde(rename = "CH", alias = "chirp")]
    Chirp,
    #[serde(rename = "MS", alias = "multisine")]
    MultiSine,
}

impl SignalKind {
    pub fn label(self) -> &'static str {
        match self {
            SignalKind::Chirp => "CH",
            SignalKind::MultiSine => "MS",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetId {
    D1,
    D2,
    D3,
    D4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Psi {
    Sin,
    Cos,
}

impl Psi {
    fn apply(self, x: f64) -> f64 {
        match self {
            Psi::Sin => x.sin(),
            Psi::Cos => x.cos(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chirp {
    pub amp: f64,
    pub f1: f64,
    pub f2: f64,
    pub phase: f64,
}

/// Multipliers of the base frequency for the four multi-sine components.
pub const MS_HARMONICS: [f64; 4] = [1.0, 1.5, 2.0, 3.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSine {
    pub amps: [f64; 4],
    pub psi: [Psi; 4],
    pub f0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ExcitationSpec {
    Chirp(Chirp),
    MultiSine(MultiSine),
}

impl ExcitationSpec {
    pub fn kind(&self) -> SignalKind {
        match self {
            ExcitationSpec::Chirp(_) => SignalKind::Chirp,
            ExcitationSpec::MultiSine(_) => SignalKind::MultiSine,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            ExcitationSpec::Chirp(c) => chirp_value(c, t),
            ExcitationSpec::MultiSine(m) => multisine_value(m, t),
        }
    }

    /// Upper bound on `|value(t)|` over all `t`.
    pub fn amplitude_bound(&self) -> f64 {
        match self {
            ExcitationSpec::Chirp(c) => c.amp.abs(),
            ExcitationSpec::MultiSine(m) => m.amps.iter().map(|a| a.abs()).sum(),
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            ExcitationSpec::Chirp(c) => c.f1 >= 0.0 && c.f2 >= 0.0 && c.amp.is_finite() && c.phase.is_finite(),
            ExcitationSpec::MultiSine(m) => m.f0 >= 0.0 && m.amps.iter().all(|a| a.is_finite()),
        }
    }
}

/// `A cos(w1 (1 + cos(w2 t) / 4) t + phase)` with `w = 2 pi f`.
pub fn chirp_value(c: &Chirp, t: f64) -> f64 {
    let (w1, w2) = (TAU * c.f1, TAU * c.f2);
    c.amp * (w1 * (1.0 + 0.25 * (w2 * t).cos()) * t + c.phase).cos()
}

/// `sum_k A_k psi_k(w_k t)` with `w_k = 2 pi f0 * {1, 1.5, 2, 3}`.
pub fn multisine_value(m: &MultiSine, t: f64) -> f64 {
    let w0 = TAU * m.f0;
    (0..4).map(|k| m.amps[k] * m.psi[k].apply(MS_HARMONICS[k] * w0 * t)).sum()
}

fn default_ms_amp_scale() -> f64 {
    30.0
}

fn default_tie() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationProfile {
    pub dataset_id: DatasetId,
    pub signal: SignalKind,
    /// Chirp amplitude interval. Multi-sine amplitudes are bounded by
    /// `ms_amp_scale * f0` instead.
    pub amp: [f64; 2],
    pub freq: [f64; 2],
    #[serde(default = "default_ms_amp_scale")]
    pub ms_amp_scale: f64,
    /// Draw one chirp frequency for both `f1` and `f2`.
    #[serde(default = "default_tie")]
    pub tie_chirp_freqs: bool,
}

impl RandomizationProfile {
    /// The standard randomization table, one row per (dataset, signal).
    pub fn table(id: DatasetId, signal: SignalKind) -> Self {
        let freq = match (signal, id) {
            (SignalKind::Chirp, DatasetId::D1) => [0.3, 0.3],
            (SignalKind::Chirp, DatasetId::D2) => [0.2, 0.4],
            (SignalKind::Chirp, DatasetId::D3) => [0.2, 0.6],
            (SignalKind::Chirp, DatasetId::D4) => [0.1, 0.7],
            (SignalKind::MultiSine, DatasetId::D1) => [0.15, 0.15],
            (SignalKind::MultiSine, DatasetId::D2) => [0.05, 0.15],
            (SignalKind::MultiSine, DatasetId::D3) => [0.05, 0.25],
            (SignalKind::MultiSine, DatasetId::D4) => [0.01, 0.30],
        };
        Self {
            dataset_id: id,
            signal,
            amp: [-4.0, 4.0],
            freq,
            ms_amp_scale: default_ms_amp_scale(),
            tie_chirp_freqs: true,
        }
    }

    pub fn all_rows() -> Vec<Self> {
        let ids = [DatasetId::D1, DatasetId::D2, DatasetId::D3, DatasetId::D4];
        [SignalKind::Chirp, SignalKind::MultiSine]
            .into_iter()
            .flat_map(|s| ids.map(|id| Self::table(id, s)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ok(self.amp) || !ok(self.freq) {
            return config_err(format!("profile intervals must satisfy low <= high: amp {:?}, freq {:?}", self.amp, self.freq));
        }
        if self.freq[0] < 0.0 {
            return config_err(format!("negative frequency in {:?}", self.freq));
        }
        if self.dataset_id == DatasetId::D1 && self.freq[0] != self.freq[1] {
            return config_err("D1 profiles use a single frequency");
        }
        if !(self.ms_amp_scale.is_finite() && self.ms_amp_scale >= 0.0) {
            return config_err("ms_amp_scale must be finite and >= 0");
        }
        Ok(())
    }

    /// Same profile with the frequency range collapsed onto `f`.
    pub fn pinned_at(&self, f: f64) -> Self {
        Self { freq: [f, f], ..self.clone() }
    }

    pub fn contains_freq(&self, f: f64) -> bool {
        self.freq[0] <= f && f <= self.freq[1]
    }
}

/// `U[lo, hi)`; returns exactly `lo` when the interval is degenerate.
pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn sample_excitation<R: Rng + ?Sized>(profile: &RandomizationProfile, rng: &mut R) -> ExcitationSpec {
    let [flo, fhi] = profile.freq;
    match profile.signal {
        SignalKind::Chirp => {
            let amp = uniform(rng, profile.amp[0], profile.amp[1]);
            let phase = uniform(rng, 0.0, 2.0 * PI);
            let f1 = uniform(rng, flo, fhi);
            let f2 = if profile.tie_chirp_freqs { f1 } else { uniform(rng, flo, fhi) };
            ExcitationSpec::Chirp(Chirp { amp, f1, f2, phase })
        }
        SignalKind::MultiSine => {
            let f0 = uniform(rng, flo, fhi);
            let bound = profile.ms_amp_scale * f0;
            let mut amps = [0.0; 4];
            let mut psi = [Psi::Sin; 4];
            for k in 0..4 {
                amps[k] = uniform(rng, -bound, bound);
                psi[k] = if rng.random::<bool>() { Psi::Cos } else { Psi::Sin };
            }
            ExcitationSpec::MultiSine(MultiSine { amps, psi, f0 })
        }
    }
}

/// Row-major `n x d_u` input sequence sampled at `t = k * dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedInputs {
    pub n: usize,
    pub d_u: usize,
    pub values: Vec<f64>,
    pub specs: Vec<ExcitationSpec>,
}

impl RenderedInputs {
    pub fn at(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.d_u + j]
    }
}

/// Each channel gets its own independently drawn excitation.
pub fn render_inputs<R: Rng + ?Sized>(
    profile: &RandomizationProfile,
    d_u: usize,
    n: usize,
    dt: f64,
    rng: &mut R,
) -> RenderedInputs {
    let specs: Vec<ExcitationSpec> = (0..d_u).map(|_| sample_excitation(profile, rng)).collect();
    let mut values = vec![0.0; n * d_u];
    for k in 0..n {
        let t = k as f64 * dt;
        for (j, s) in specs.iter().enumerate() {
            values[k * d_u + j] = s.value(t);
        }
    }
    RenderedInputs { n, d_u, values, specs }
}
