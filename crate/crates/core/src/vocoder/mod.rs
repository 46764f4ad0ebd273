//! Phase-vocoder time-scale modification.
//!
//! Analysis frames are taken every `hop` samples; synthesis frames are placed
//! every `hop * r` samples (rounded per frame, so the overall ratio is exact)
//! with each bin's phase advanced by its estimated instantaneous frequency.
//! Overlap-add is normalized by the summed squared window, which makes an
//! unmodified round trip reconstruct the input.

mod fft;

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

pub use fft::Radix2;

use crate::error::{Error, Result};
use crate::types::{sample_count, AudioClip};

/// Hard bounds on the stretch ratio; the selector's duration window keeps
/// real requests within `[2/3, 2]`.
pub const MIN_RATIO: f64 = 0.4;
pub const MAX_RATIO: f64 = 2.5;

const WINDOW_SUM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    /// Frame length `N`; a power of two.
    pub window: usize,
    /// Analysis hop `H_a`.
    pub hop: usize,
}

impl Default for StftConfig {
    /// Hann 1024 / 256: 75% overlap.
    fn default() -> Self {
        Self {
            window: 1024,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.window.is_power_of_two() || self.window < 2 {
            return Err(Error::InvalidConfig("STFT window must be a power of two >= 2"));
        }
        if self.hop == 0 || self.hop > self.window {
            return Err(Error::InvalidConfig("STFT hop must be in 1..=window"));
        }
        Ok(())
    }

    /// About 64 ms frames with 75% overlap at `sample_rate`; 1024 / 256 at
    /// 16 kHz.
    pub fn for_rate(sample_rate: u32) -> Self {
        let target = (f64::from(sample_rate) * 0.064).round().max(4.0) as usize;
        let window = target.next_power_of_two();
        Self { window, hop: window / 4 }
    }

    /// Number of non-redundant bins, `N/2 + 1`.
    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    /// Synthesis hop for a stretch ratio, `round(H_a * r)`.
    pub fn synthesis_hop(&self, ratio: f64) -> usize {
        (self.hop as f64 * ratio).round() as usize
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Half-spectrum STFT of a padded signal.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub config: StftConfig,
    /// `frames[m][k]` for bins `k in 0..=N/2`.
    pub frames: Vec<Vec<Complex64>>,
    /// Zeros prepended before analysis.
    pub padding: usize,
    /// Length of the analyzed signal, before padding.
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * f64::from(self.sample_rate) / self.config.window as f64
    }
}

struct Frames {
    plan: Radix2,
    window: Vec<f64>,
    buf: Vec<Complex64>,
}

impl Frames {
    fn new(n: usize) -> Self {
        Self {
            plan: Radix2::new(n),
            window: hann(n),
            buf: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    fn analyze(&mut self, frame: &[f64]) -> Vec<Complex64> {
        for ((b, &x), &w) in self.buf.iter_mut().zip(frame).zip(&self.window) {
            *b = Complex64::new(x * w, 0.0);
        }
        self.plan.forward(&mut self.buf);
        self.buf[..self.window.len() / 2 + 1].to_vec()
    }

    /// Inverse of a half spectrum (Hermitian completion), real part only.
    fn synthesize(&mut self, half: &[Complex64], out: &mut [f64]) {
        let n = self.window.len();
        for k in 0..n {
            self.buf[k] = if k < half.len() { half[k] } else { half[n - k].conj() };
        }
        // DC and Nyquist of a real signal are real
        self.buf[0].im = 0.0;
        self.buf[n / 2].im = 0.0;
        self.plan.inverse(&mut self.buf);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re;
        }
    }
}

/// Short-time Fourier transform with `N` zeros of padding on the left and
/// `N + hop` on the right, so every input sample is covered by a full set of
/// overlapping frames. Clips shorter than one window are zero-padded (and a
/// warning logged).
pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if clip.is_empty() {
        return Err(Error::EmptyClip);
    }
    let n = cfg.window;
    if clip.len() < n {
        log::warn!("clip of {} samples is shorter than the {n}-sample window; zero-padding", clip.len());
    }
    let mut padded = vec![0.0f64; n];
    padded.extend(clip.samples.iter().map(|&x| f64::from(x)));
    padded.resize(padded.len() + n + cfg.hop, 0.0);

    let mut frames = Frames::new(n);
    let count = (padded.len() - n) / cfg.hop + 1;
    let spectra = (0..count)
        .map(|m| frames.analyze(&padded[m * cfg.hop..m * cfg.hop + n]))
        .collect();
    Ok(Spectrogram {
        config: *cfg,
        frames: spectra,
        padding: n,
        signal_len: clip.len(),
        sample_rate: clip.sample_rate,
    })
}

/// Windowed overlap-add of `frames` placed at `positions`, normalized by the
/// summed squared window.
fn overlap_add(frames: &mut Frames, spectra: &[Vec<Complex64>], positions: &[usize]) -> Vec<f64> {
    let n = frames.window.len();
    let len = positions.last().map_or(0, |p| p + n);
    let mut acc = vec![0.0f64; len];
    let mut weight = vec![0.0f64; len];
    let mut scratch = vec![0.0f64; n];
    for (spectrum, &pos) in spectra.iter().zip(positions) {
        frames.synthesize(spectrum, &mut scratch);
        for i in 0..n {
            let w = frames.window[i];
            acc[pos + i] += scratch[i] * w;
            weight[pos + i] += w * w;
        }
    }
    for (a, w) in acc.iter_mut().zip(&weight) {
        *a = if *w > WINDOW_SUM_FLOOR { *a / w } else { 0.0 };
    }
    acc
}

fn to_clip(signal: &[f64], skip: usize, len: usize, sample_rate: u32) -> AudioClip {
    let samples = (0..len)
        .map(|i| signal.get(skip + i).copied().unwrap_or(0.0).clamp(-1.0, 1.0) as f32)
        .collect();
    AudioClip::new(samples, sample_rate)
}

/// Inverse STFT; returns exactly `signal_len` samples.
pub fn istft(spec: &Spectrogram) -> Result<AudioClip> {
    spec.config.validate()?;
    let mut frames = Frames::new(spec.config.window);
    let positions: Vec<usize> = (0..spec.frames.len()).map(|m| m * spec.config.hop).collect();
    let signal = overlap_add(&mut frames, &spec.frames, &positions);
    Ok(to_clip(&signal, spec.padding, spec.signal_len, spec.sample_rate))
}

/// Energy a half spectrum carries in the time domain (Parseval).
fn spectrum_energy(half: &[Complex64], n: usize) -> f64 {
    half.iter()
        .enumerate()
        .map(|(k, c)| {
            let weight = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            weight * c.norm_sqr()
        })
        .sum::<f64>()
        / n as f64
}

/// Rescales the overlap-added signal so each synthesis frame carries the
/// energy its modified spectrum asked for. Frames whose propagated phases
/// stay coherent (tones, the identity ratio) get a gain of one; partially
/// incoherent frames (noise) would otherwise lose energy in the overlap.
/// Per-frame gains are interpolated with the same squared-window weights as
/// the overlap-add.
fn match_frame_energy(signal: &mut [f64], spectra: &[Vec<Complex64>], positions: &[usize], window: &[f64]) {
    const MIN_GAIN: f64 = 0.5;
    const MAX_GAIN: f64 = 2.0;
    let n = window.len();
    let mut gain = vec![0.0f64; signal.len()];
    let mut weight = vec![0.0f64; signal.len()];
    for (spectrum, &pos) in spectra.iter().zip(positions) {
        let wanted = spectrum_energy(spectrum, n);
        let actual: f64 = (0..n).map(|i| (signal[pos + i] * window[i]).powi(2)).sum();
        let g = if actual > 1e-12 && wanted > 1e-12 {
            (wanted / actual).sqrt().clamp(MIN_GAIN, MAX_GAIN)
        } else {
            1.0
        };
        for i in 0..n {
            let w2 = window[i] * window[i];
            gain[pos + i] += g * w2;
            weight[pos + i] += w2;
        }
    }
    for ((s, g), w) in signal.iter_mut().zip(&gain).zip(&weight) {
        if *w > WINDOW_SUM_FLOOR {
            *s *= g / w;
        }
    }
}

fn wrap_phase(x: f64) -> f64 {
    let t = x + PI;
    let y = t - 2.0 * PI * (t / (2.0 * PI)).floor() - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Stretches `clip` to `target_duration` seconds without changing pitch.
///
/// The output has exactly `round(target_duration * sample_rate)` samples.
pub fn time_stretch(clip: &AudioClip, target_duration: f64, cfg: &StftConfig) -> Result<AudioClip> {
    cfg.validate()?;
    if clip.is_empty() {
        return Err(Error::EmptyClip);
    }
    let ratio = target_duration / clip.duration();
    if !(MIN_RATIO..=MAX_RATIO).contains(&ratio) {
        return Err(Error::StretchRatio(ratio));
    }
    let target_len = sample_count(target_duration, clip.sample_rate);
    let spec = stft(clip, cfg)?;
    let n = cfg.window;
    let hop = cfg.hop as f64;

    let positions: Vec<usize> = (0..spec.frames.len())
        .map(|m| (m as f64 * hop * ratio).round() as usize)
        .collect();
    let bin_advance: Vec<f64> = (0..cfg.bins()).map(|k| 2.0 * PI * k as f64 / n as f64).collect();

    let mut previous: Vec<f64> = spec.frames[0].iter().map(|c| c.arg()).collect();
    let mut phase = previous.clone();
    let mut shifted = Vec::with_capacity(spec.frames.len());
    shifted.push(spec.frames[0].clone());
    for m in 1..spec.frames.len() {
        let synthesis_hop = (positions[m] - positions[m - 1]) as f64;
        let frame = &spec.frames[m];
        let mut out = Vec::with_capacity(frame.len());
        for (k, bin) in frame.iter().enumerate() {
            let current = bin.arg();
            let deviation = wrap_phase(current - previous[k] - bin_advance[k] * hop);
            let instantaneous = bin_advance[k] + deviation / hop;
            phase[k] += instantaneous * synthesis_hop;
            previous[k] = current;
            out.push(Complex64::from_polar(bin.norm(), phase[k]));
        }
        shifted.push(out);
    }

    let mut frames = Frames::new(n);
    let mut signal = overlap_add(&mut frames, &shifted, &positions);
    match_frame_energy(&mut signal, &shifted, &positions, &frames.window);
    let skip = (spec.padding as f64 * ratio).round() as usize;
    Ok(to_clip(&signal, skip, target_len, clip.sample_rate))
}

#[cfg(test)]
mod tests;
