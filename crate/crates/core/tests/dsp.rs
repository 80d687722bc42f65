use lgtse::data::synth_utterance;
use lgtse::dsp::{drc_compress, drc_expand, istft, stft, DrcConfig, ErbFilterbank, StftConfig, StftEngine, Waveform};
use proptest::prelude::*;
use tse_autograd::Tensor;

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

fn signal() -> impl Strategy<Value = Vec<f64>> {
    (256usize..3000).prop_flat_map(|n| prop::collection::vec(-1.0f64..1.0, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_round_trip(x in signal()) {
        let cfg = StftConfig::default();
        let w = Waveform::new(x.clone(), 8000).unwrap();
        let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
        prop_assert_eq!(back.len(), x.len());
        prop_assert!(rel_l2(back.samples(), &x) < 1e-6);
    }

    #[test]
    fn stft_is_linear(x in signal(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let cfg = StftConfig::default();
        let y: Vec<f64> = (0..x.len()).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 500.0 - 1.0).collect();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let s = |v: &[f64]| stft(&Waveform::new(v.to_vec(), 8000).unwrap(), &cfg).unwrap().into_data();
        let (sx, sy, sc) = (s(&x), s(&y), s(&combo));
        let expect: Vec<f64> = sx.data().iter().zip(sy.data()).map(|(p, q)| a * p + b * q).collect();
        prop_assume!(expect.iter().any(|v| v.abs() > 1e-9));
        prop_assert!(rel_l2(sc.data(), &expect) < 1e-6);
    }

    #[test]
    fn drc_round_trip_and_phase(x in signal(), beta in 0.1f64..1.0) {
        let cfg = StftConfig::default();
        let drc = DrcConfig::new(beta).unwrap();
        let spec = stft(&Waveform::new(x, 8000).unwrap(), &cfg).unwrap();
        let c = drc_compress(&spec, &drc).unwrap();
        let back = drc_expand(&c, &drc).unwrap();
        prop_assert!(rel_l2(back.data().data(), spec.data().data()) < 1e-9);
        for f in 0..spec.bins() {
            for t in 0..spec.frames() {
                let (r0, i0) = (spec.re(f, t), spec.im(f, t));
                let (r1, i1) = (c.re(f, t), c.im(f, t));
                let (m0, m1) = (r0.hypot(i0), r1.hypot(i1));
                if m0 > 1e-12 {
                    // Unit phasors agree and the magnitude is exactly the power law.
                    prop_assert!((r0 / m0 - r1 / m1).abs() < 1e-12 && (i0 / m0 - i1 / m1).abs() < 1e-12);
                    prop_assert!((m1 - m0.powf(beta)).abs() <= 1e-12 * m1.max(1.0));
                }
            }
        }
    }

    #[test]
    fn parseval_consistency(x in signal()) {
        let engine = StftEngine::<f64>::new(StftConfig::default());
        let w = Waveform::new(x, 8000).unwrap();
        let spec = engine.stft(&w).unwrap();
        let (a, b) = (engine.spectral_energy(spec.data()), engine.synthesis_energy(&w));
        prop_assert!((a - b).abs() / b < 1e-5);
    }
}

/// Direct DFT of one Hann-windowed frame, as an independent reference.
fn naive_frame_energy(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in frame.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[test]
fn bin_centred_sinusoid_concentrates_energy() {
    let cfg = StftConfig::default();
    let n = cfg.fft_size();
    for k in [5usize, 32, 77, 120] {
        let freq = k as f64 * 8000.0 / n as f64;
        let x: Vec<f64> = (0..8000).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 8000.0).sin()).collect();
        let spec = stft(&Waveform::new(x.clone(), 8000).unwrap(), &cfg).unwrap();
        let mag = spec.magnitude();
        let frames = spec.frames();
        let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
        let reference: Vec<f64> = x[1000..1000 + n].iter().zip(&window).map(|(a, w)| a * w).collect();
        let expect = naive_frame_energy(&reference);
        let expect_total: f64 = expect.iter().sum();
        let expect_bin = expect[k] / expect_total;
        // Interior frames only; the edges see reflect padding.
        for t in 4..frames - 4 {
            let col: Vec<f64> = (0..spec.bins()).map(|f| mag.data()[f * frames + t].powi(2)).collect();
            let total: f64 = col.iter().sum();
            let argmax = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(argmax, k);
            assert!((col[k] / total - expect_bin).abs() < 1e-6, "bin {k} frame {t}");
            let lobe = col[k - 1] + col[k] + col[k + 1];
            assert!(lobe / total > 0.9, "bin {k} frame {t}: {}", lobe / total);
        }
    }
}

#[test]
fn chirp_round_trip_in_single_precision() {
    let sr = 8000.0;
    let x: Vec<f32> = (0..16000)
        .map(|i| {
            let t = i as f64 / sr;
            // 100 Hz to 3.5 kHz over two seconds with a syllabic envelope.
            let phase = 2.0 * std::f64::consts::PI * (100.0 * t + 850.0 * t * t);
            (0.6 * (0.55 + 0.45 * (2.0 * std::f64::consts::PI * 4.0 * t).sin()) * phase.sin()) as f32
        })
        .collect();
    let w = Waveform::new(x.clone(), 8000).unwrap();
    let back = istft(&stft(&w, &StftConfig::default()).unwrap()).unwrap();
    let max_err = back.samples().iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(max_err < 1e-5, "max error {max_err}");
}

#[test]
fn erb_project_unproject_is_a_projection() {
    let bank = ErbFilterbank::<f64>::new(129, 32, 8000).unwrap();
    let mag = Tensor::from_vec(&[129, 3], (0..387).map(|i| ((i * 37 % 101) as f64) / 101.0).collect());
    let p = bank.project(&mag).unwrap();
    let again = bank.project(&bank.unproject(&p).unwrap()).unwrap();
    assert!(p.max_abs_diff(&again) < 1e-6);
}

#[test]
fn erb_preserves_energy_of_speech_envelopes() {
    let cfg = StftConfig::default();
    let bank = ErbFilterbank::<f64>::new(cfg.freq_bins(), 32, 8000).unwrap();
    for seed in 0..4u64 {
        let w = synth_utterance(seed, seed + 100, 1.5, 8000);
        let mag = stft(&w, &cfg).unwrap().magnitude();
        // Smooth across frequency so the content is band-limited in the ERB sense.
        let (f, t) = (mag.dim(0), mag.dim(1));
        let smooth = Tensor::from_vec(
            &[f, t],
            (0..f * t)
                .map(|i| {
                    let (k, c) = (i / t, i % t);
                    let lo = k.saturating_sub(3);
                    let hi = (k + 3).min(f - 1);
                    (lo..=hi).map(|j| mag.data()[j * t + c]).sum::<f64>() / (hi - lo + 1) as f64
                })
                .collect(),
        );
        let back = bank.unproject(&bank.project(&smooth).unwrap()).unwrap();
        let ratio = back.sum_sq() / smooth.sum_sq();
        assert!((ratio - 1.0).abs() < 0.05, "seed {seed}: energy ratio {ratio}");
    }
}
