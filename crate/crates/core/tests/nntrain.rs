use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use superexpressive::nntrain::{
    cross_entropy, occlusion_map, softmax, synth_bursts, synth_signals, train, window_starts, Act, Model,
    ModelConfig, Nadam, NadamConfig, Plateau, SignalClass, Tensor, TrainConfig, Waveform,
};

/// Index of the strongest non-DC FFT bin, as cycles per sample.
fn dominant_frequency(signal: &[f64]) -> f64 {
    let n = signal.len();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bin = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
    bin as f64 / n as f64
}

#[test]
fn synthetic_classes_sit_at_their_frequencies() {
    let classes = superexpressive::nntrain::train::default_classes();
    let ds = synth_signals(&classes, 40, 256, 11).unwrap();
    let mut correct = 0;
    for (s, &y) in ds.signals.iter().zip(&ds.labels) {
        let f = dominant_frequency(s);
        let nearest = (0..classes.len())
            .min_by(|&a, &b| (classes[a].frequency - f).abs().total_cmp(&(classes[b].frequency - f).abs()))
            .unwrap();
        correct += usize::from(nearest == y);
    }
    let acc = correct as f64 / ds.len() as f64;
    assert!(acc > 0.95, "spectral nearest-class accuracy {acc}");
}

#[test]
fn bursts_are_silent_outside_their_support_without_noise() {
    let classes = [SignalClass { frequency: 0.1, waveform: Waveform::Sine, noise: 0.0 }];
    let set = synth_bursts(&classes, 10, 300, 60, 4).unwrap();
    for (s, &(a, b)) in set.data.signals.iter().zip(&set.supports) {
        assert_eq!(b - a, 60);
        assert!(s[..a].iter().chain(&s[b..]).all(|&v| v == 0.0));
        assert!(s[a..b].iter().any(|&v| v.abs() > 0.5));
    }
}

#[test]
fn predictions_are_distributions_matching_the_logits() {
    let model = Model::new(ModelConfig::baseline_b(128, 3, Act::Peuaf), 2).unwrap();
    let ds = synth_signals(&superexpressive::nntrain::train::default_classes(), 5, 128, 3).unwrap();
    let refs: Vec<&[f64]> = ds.signals.iter().map(Vec::as_slice).collect();
    let x = Tensor::from_signals(&refs).unwrap();
    let logits = model.forward_eval(&x).unwrap();
    for (row, p) in model.predict_proba(&x).unwrap().iter().enumerate() {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let z = &logits.data[row * 3..][..3];
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for (a, b) in p.iter().zip(&e) {
            assert!((a - b / s).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_target() {
    let logits = Tensor { n: 2, c: 3, l: 1, data: vec![0.5, -1.0, 2.0, 0.0, 0.0, 0.0] };
    let (loss, grad) = cross_entropy(&logits, &[2, 0]).unwrap();
    let p0 = softmax(&[0.5, -1.0, 2.0]);
    let want = (-(p0[2].ln()) + 3f64.ln()) / 2.0;
    assert!((loss - want).abs() < 1e-15);
    let expect = [p0[0] / 2.0, p0[1] / 2.0, (p0[2] - 1.0) / 2.0, (1.0 / 3.0 - 1.0) / 2.0, 1.0 / 6.0, 1.0 / 6.0];
    for (g, e) in grad.data.iter().zip(expect) {
        assert!((g - e).abs() < 1e-15);
    }
}

#[test]
fn nadam_minimizes_a_quadratic() {
    let target = [3.0, -1.5, 0.25];
    let mut p = vec![0.0; 3];
    let mut opt = Nadam::new(NadamConfig { lr: 0.05, ..NadamConfig::default() }, &[3]);
    for _ in 0..3000 {
        let g: Vec<f64> = p.iter().zip(&target).map(|(x, c)| 2.0 * (x - c)).collect();
        opt.step(&mut [&mut p], &[g], 0.05);
    }
    for (x, c) in p.iter().zip(target) {
        assert!((x - c).abs() < 1e-3, "{p:?}");
    }
    assert_eq!(opt.steps(), 3000);
}

#[test]
fn plateau_cuts_the_rate_after_patience() {
    let mut p = Plateau::new(0.2, 2, 1e-4);
    let mut lr = 0.01;
    for acc in [0.5, 0.6, 0.6, 0.60001] {
        lr = p.step(acc, lr);
    }
    assert!((lr - 0.002).abs() < 1e-15);
    lr = p.step(0.7, lr);
    assert!((lr - 0.002).abs() < 1e-15);
}

#[test]
fn occluding_a_silent_signal_changes_nothing() {
    let model = Model::new(ModelConfig::baseline_b(200, 3, Act::Peuaf), 6).unwrap();
    let drops = occlusion_map(&model, &[0.0; 200], 1, 100, 50).unwrap();
    assert_eq!(drops, vec![0.0; 3]);
    assert_eq!(window_starts(400, 100, 50).unwrap(), vec![0, 50, 100, 150, 200, 250, 300]);
    assert!(window_starts(50, 100, 50).is_err());
    assert!(window_starts(400, 100, 0).is_err());
}

#[test]
fn frequencies_stay_in_the_unit_interval_under_large_steps() {
    let mut cfg =
        TrainConfig::parse("seed = 2\nepochs = 4\nbatch = 8\nlr = 0.5\nsynth.per_class = 12\nsynth.length = 64\n").unwrap();
    cfg.test_fraction = 0.25;
    let ds = cfg.dataset().unwrap();
    let (tr, te) = ds.split(cfg.test_fraction, cfg.seed).unwrap();
    let out = train(&tr, &te, &cfg).unwrap();
    let mut all: Vec<f64> = out.history.epochs.iter().flat_map(|e| e.w.iter().copied()).collect();
    all.extend(out.model.frequencies());
    assert!(!all.is_empty());
    assert!(all.iter().all(|w| (0.0..=1.0).contains(w)), "{all:?}");
}
