use lgtse::data::{synth_noise, synth_utterance, NoiseKind};
use lgtse::dsp::Waveform;
use lgtse::metrics::{
    joint_loss, joint_loss_on_tape, neg_si_sdr_loss, si_sdr, si_sdri, stoi, LossWeights, NegSiSdrOp, SI_SDR_CLAMP_DB,
};
use proptest::prelude::*;
use tse_autograd::{Tape, Tensor};

fn wf(v: Vec<f64>) -> Waveform<f64> {
    Waveform::new(v, 8000).unwrap()
}

fn pair(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-1.0f64..1.0, n), prop::collection::vec(-1.0f64..1.0, n))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reference_scale_invariance((est, reference) in pair(200), c in prop_oneof![0.01f64..100.0, -100.0f64..-0.01]) {
        let base = si_sdr(&wf(est.clone()), &wf(reference.clone())).unwrap();
        let scaled = si_sdr(&wf(est.clone()), &wf(reference.iter().map(|v| v * c).collect())).unwrap();
        prop_assert!((base - scaled).abs() < 1e-9);
        // Positive scaling of the estimate is also invisible.
        let est_scaled = si_sdr(&wf(est.iter().map(|v| v * c.abs()).collect()), &wf(reference)).unwrap();
        prop_assert!((base - est_scaled).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_equal_energy_noise_is_zero_db((s, raw) in pair(256)) {
        let proj = dot(&raw, &s) / dot(&s, &s);
        let mut n: Vec<f64> = raw.iter().zip(&s).map(|(r, v)| r - proj * v).collect();
        let gain = (dot(&s, &s) / dot(&n, &n)).sqrt();
        n.iter_mut().for_each(|v| *v *= gain);
        let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
        prop_assert!(si_sdr(&wf(est), &wf(s)).unwrap().abs() < 1e-9);
    }

    #[test]
    fn mixture_improvement_is_zero((mix, reference) in pair(300)) {
        let m = wf(mix);
        prop_assert_eq!(si_sdri(&m, &wf(reference), &m).unwrap(), 0.0);
    }

    #[test]
    fn loss_is_negated_metric((est, reference) in pair(128)) {
        let l = neg_si_sdr_loss(&est, &reference);
        let m = si_sdr(&wf(est), &wf(reference)).unwrap();
        // Away from the range where the loss epsilon is comparable to the energies.
        prop_assume!(m.abs() < SI_SDR_CLAMP_DB / 2.0);
        prop_assert!((l + m).abs() < 1e-5);
    }

    #[test]
    fn joint_loss_decomposes(
        (a, b) in pair(100),
        (c, d) in pair(100),
        wd in 0.0f64..2.0,
        wb in 0.0f64..2.0,
    ) {
        let w = LossWeights { denoiser: wd, backbone: wb };
        let v = joint_loss(&wf(a.clone()), &wf(b.clone()), &wf(c.clone()), &wf(d.clone()), w).unwrap();
        prop_assert_eq!(v.total, wd * v.denoiser_term + wb * v.backbone_term);
        prop_assert_eq!(v.denoiser_term, -si_sdr(&wf(a), &wf(b)).unwrap());
        prop_assert_eq!(v.backbone_term, -si_sdr(&wf(c), &wf(d)).unwrap());
    }
}

#[test]
fn stoi_self_score() {
    for seed in 0..3u64 {
        let x = synth_utterance(seed, seed + 7, 2.0, 8000);
        let s = stoi(&x, &x).unwrap();
        assert!(s >= 0.99, "seed {seed}: {s}");
    }
}

#[test]
fn stoi_drops_with_noise() {
    let x = synth_utterance(3, 4, 2.0, 8000);
    let n = synth_noise(NoiseKind::Babble, 5, x.len(), 8000);
    let gain = (x.energy() / n.energy()).sqrt();
    let noisy = wf(x.samples().iter().zip(n.samples()).map(|(a, b)| a + gain * b).collect());
    let s = stoi(&noisy, &x).unwrap();
    assert!(s < 0.95 && s > 0.0, "{s}");
}

fn pseudo(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

#[test]
fn joint_loss_gradient_on_64_samples() {
    let (den, clean, est, target) = (pseudo(1, 64), pseudo(2, 64), pseudo(3, 64), pseudo(4, 64));
    let w = LossWeights { denoiser: 0.7, backbone: 1.3 };
    let value = |d: &[f64], e: &[f64]| 0.7 * neg_si_sdr_loss(d, &clean) + 1.3 * neg_si_sdr_loss(e, &target);
    let mut t = Tape::new();
    let dv = t.leaf(Tensor::from_vec(&[64], den.clone()), true);
    let ev = t.leaf(Tensor::from_vec(&[64], est.clone()), true);
    let (total, dterm, bterm) = joint_loss_on_tape(&mut t, Some(dv), &clean, Some(ev), &target, w).unwrap();
    let (dterm, bterm) = (t.value(dterm.unwrap()).data()[0], t.value(bterm.unwrap()).data()[0]);
    assert_eq!(t.value(total).data()[0], 0.7 * dterm + 1.3 * bterm);
    let mut g = t.backward(total);
    let (gd, ge) = (g.take(dv).unwrap(), g.take(ev).unwrap());
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..64 {
        for (which, analytic) in [(0, gd.data()[i]), (1, ge.data()[i])] {
            let (mut dp, mut dm, mut ep, mut em) = (den.clone(), den.clone(), est.clone(), est.clone());
            if which == 0 {
                dp[i] += h;
                dm[i] -= h;
            } else {
                ep[i] += h;
                em[i] -= h;
            }
            let numeric = (value(&dp, &ep) - value(&dm, &em)) / (2.0 * h);
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1e-3));
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn loss_op_rejects_bad_inputs() {
    let mut t = Tape::<f64>::new();
    let v = t.leaf(Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]), true);
    assert!(NegSiSdrOp::apply(&mut t, v, &[1.0, 2.0]).is_err());
    assert!(NegSiSdrOp::apply(&mut t, v, &[0.0; 4]).is_err());
}
