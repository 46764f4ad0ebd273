use super::*;
use crate::rng::seeded;
use rand::Rng;

const SR: u32 = 16_000;

fn tone(freqs: &[f64], seconds: f64) -> AudioClip {
    let n = sample_count(seconds, SR);
    let amp = 0.8 / freqs.len() as f64;
    AudioClip::new(
        (0..n)
            .map(|i| {
                let t = i as f64 / f64::from(SR);
                freqs.iter().map(|f| amp * (2.0 * PI * f * t).sin()).sum::<f64>() as f32
            })
            .collect(),
        SR,
    )
}

#[test]
fn impulse_survives_round_trip() {
    let cfg = StftConfig::default();
    let mut samples = vec![0.0f32; 8192];
    samples[cfg.window] = 1.0;
    let clip = AudioClip::new(samples, SR);
    let back = istft(&stft(&clip, &cfg).unwrap()).unwrap();
    let peak = back
        .samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .unwrap()
        .0;
    assert_eq!(peak, cfg.window);
    assert!((back.samples[peak] - 1.0).abs() < 1e-6);
}

#[test]
fn round_trip_reconstructs() {
    let mut rng = seeded(1);
    let clip = AudioClip::new((0..20_000).map(|_| rng.random::<f32>() * 1.6 - 0.8).collect(), SR);
    let back = istft(&stft(&clip, &StftConfig::default()).unwrap()).unwrap();
    assert_eq!(back.len(), clip.len());
    let err = back
        .samples
        .iter()
        .zip(&clip.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn two_tones_give_two_ridges() {
    let cfg = StftConfig::default();
    // exact bin centers: 15.625 Hz spacing
    let (f1, f2) = (15.625 * 32.0, 15.625 * 120.0);
    let spec = stft(&tone(&[f1, f2], 1.0), &cfg).unwrap();
    for frame in &spec.frames[6..spec.frames.len() - 6] {
        let mut mags: Vec<(usize, f64)> = frame.iter().map(|c| c.norm()).enumerate().collect();
        mags.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let mut top = [mags[0].0, mags[1].0];
        top.sort_unstable();
        assert_eq!(top, [32, 120]);
        assert!((spec.bin_frequency(top[0]) - f1).abs() < 1e-9);
    }
}

#[test]
fn parseval_per_frame() {
    let cfg = StftConfig::default();
    let mut rng = seeded(2);
    let clip = AudioClip::new((0..6000).map(|_| rng.random::<f32>() - 0.5).collect(), SR);
    let spec = stft(&clip, &cfg).unwrap();
    let w = hann(cfg.window);
    let mut padded = vec![0.0f64; cfg.window];
    padded.extend(clip.samples.iter().map(|&x| f64::from(x)));
    padded.resize(padded.len() + cfg.window + cfg.hop, 0.0);
    let (mut spectral, mut temporal) = (0.0, 0.0);
    for (m, frame) in spec.frames.iter().enumerate() {
        let n = cfg.window;
        for (k, c) in frame.iter().enumerate() {
            let weight = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            spectral += weight * c.norm_sqr() / n as f64;
        }
        for i in 0..n {
            let x = padded[m * cfg.hop + i] * w[i];
            temporal += x * x;
        }
    }
    assert!((spectral / temporal - 1.0).abs() < 0.01);
}

#[test]
fn short_clip_is_padded() {
    let clip = AudioClip::new(vec![0.5; 100], SR);
    let spec = stft(&clip, &StftConfig::default()).unwrap();
    assert!(!spec.frames.is_empty());
    let back = istft(&spec).unwrap();
    assert!(back.samples.iter().all(|&x| (x - 0.5).abs() < 1e-5));
}

#[test]
fn identity_stretch_reconstructs() {
    let clip = tone(&[440.0, 1234.0], 1.5);
    let out = time_stretch(&clip, clip.duration(), &StftConfig::default()).unwrap();
    assert_eq!(out.len(), clip.len());
    let err = out
        .samples
        .iter()
        .zip(&clip.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn ratio_bounds_and_empty_input() {
    let clip = tone(&[440.0], 1.0);
    let cfg = StftConfig::default();
    assert!(matches!(time_stretch(&clip, 0.3, &cfg), Err(Error::StretchRatio(_))));
    assert!(matches!(time_stretch(&clip, 2.6, &cfg), Err(Error::StretchRatio(_))));
    assert!(time_stretch(&clip, 2.5, &cfg).is_ok());
    let empty = AudioClip::new(Vec::new(), SR);
    assert_eq!(time_stretch(&empty, 1.0, &cfg), Err(Error::EmptyClip));
}

#[test]
fn output_length_is_exact() {
    let clip = tone(&[300.0], 2.0);
    for target in [1.34, 1.6, 2.0, 2.5, 3.0, 3.7] {
        let out = time_stretch(&clip, target, &StftConfig::default()).unwrap();
        assert_eq!(out.len(), sample_count(target, SR));
    }
}

#[test]
fn deterministic() {
    let clip = tone(&[500.0, 700.0], 1.0);
    let cfg = StftConfig::default();
    assert_eq!(time_stretch(&clip, 1.3, &cfg).unwrap(), time_stretch(&clip, 1.3, &cfg).unwrap());
}

#[test]
fn noise_keeps_duration_and_energy() {
    let mut rng = seeded(5);
    let clip = AudioClip::new((0..32_000).map(|_| rng.random::<f32>() * 0.8 - 0.4).collect(), SR);
    for r in [0.67, 0.8, 1.25, 1.5, 2.0] {
        let out = time_stretch(&clip, r * clip.duration(), &StftConfig::default()).unwrap();
        let expected = (r * clip.len() as f64).round();
        assert!((out.len() as f64 - expected).abs() <= 256.0);
        let ratio = out.rms() / clip.rms();
        assert!((ratio - 1.0).abs() < 0.2, "r={r}: rms ratio {ratio}");
    }
}

#[test]
fn frame_size_for_rate() {
    assert_eq!(StftConfig::for_rate(16_000), StftConfig::default());
    assert_eq!(StftConfig::for_rate(44_100), StftConfig { window: 4096, hop: 1024 });
    assert!(StftConfig::for_rate(100).validate().is_ok());
}
