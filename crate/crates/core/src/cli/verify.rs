//! Property suites and golden-file comparisons behind `superexp verify`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superexpressive::encoder::{
    build_half, bump_network, gamma_delta, in_half_support, skeleton_full, skeleton_half, stair_index_network,
    ApproxConfig,
};
use superexpressive::kst::{self, Provider};
use superexpressive::nntrain::{
    cross_entropy, train, DataSource, LayerSpec, Model, ModelChoice, ModelConfig, Tensor, TrainConfig,
};
use superexpressive::targets::Named;
use superexpressive::{Activation, ActivationKind, ActivationSpec, Network};

use super::manifest::io_failure;
use super::{CliResult, Failure};
use crate::{Suite, VerifyArgs};

const GOLDEN: [(&str, &str); 4] = [
    ("activations.csv", include_str!("../../golden/activations.csv")),
    ("architectures.csv", include_str!("../../golden/architectures.csv")),
    ("kst.csv", include_str!("../../golden/kst.csv")),
    ("train_history.csv", include_str!("../../golden/train_history.csv")),
];

struct Check {
    suite: &'static str,
    name: &'static str,
    passed: bool,
    detail: String,
}

struct Golden<'a> {
    dir: Option<&'a Path>,
}

impl Golden<'_> {
    fn text(&self, name: &str) -> Result<String, String> {
        if let Some(dir) = self.dir {
            let p = dir.join(name);
            if p.exists() {
                return fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()));
            }
        }
        GOLDEN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.to_string())
            .ok_or_else(|| format!("no golden file {name}"))
    }

    /// Compares `fresh` with the golden CSV field by field; numbers within `rel`.
    fn compare(&self, name: &str, fresh: &str, rel: f64) -> (bool, String) {
        let golden = match self.text(name) {
            Ok(t) => t,
            Err(e) => return (false, e),
        };
        let g: Vec<&str> = golden.lines().filter(|l| !l.trim().is_empty()).collect();
        let f: Vec<&str> = fresh.lines().filter(|l| !l.trim().is_empty()).collect();
        if g.len() != f.len() {
            return (false, format!("{name}: {} rows, golden has {}", f.len(), g.len()));
        }
        for (row, (a, b)) in f.iter().zip(&g).enumerate() {
            let (fa, fb): (Vec<&str>, Vec<&str>) = (a.split(',').collect(), b.split(',').collect());
            if fa.len() != fb.len() {
                return (false, format!("{name} row {}: field count differs", row + 1));
            }
            for (x, y) in fa.iter().zip(&fb) {
                let same = match (x.trim().parse::<f64>(), y.trim().parse::<f64>()) {
                    (Ok(u), Ok(v)) => u == v || (u - v).abs() <= rel * u.abs().max(v.abs()).max(1e-300),
                    _ => x.trim() == y.trim(),
                };
                if !same {
                    return (false, format!("{name} row {}: {x} vs golden {y}", row + 1));
                }
            }
        }
        (true, format!("{name}: {} rows match", f.len()))
    }
}

fn check(suite: &'static str, name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check { suite, name, passed, detail: detail.into() }
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |j| lo + (hi - lo) * j as f64 / (n - 1) as f64)
}

// ---- golden producers ----

const VALUE_POINTS: [f64; 12] = [-3.0, -1.0, -0.5, -0.125, 0.0, 0.25, 0.5, 0.9, 1.0, 1.5, 2.5, 7.25];

fn activation_table() -> String {
    let acts = [
        Activation::Euaf,
        Activation::Peuaf { w: 0.5 },
        Activation::Rho1,
        Activation::Rho2,
        Activation::Rho3,
    ];
    let mut s = String::from("x,euaf,peuaf_w0.5,rho1,rho2,rho3\n");
    for x in VALUE_POINTS {
        let vals: Vec<String> = acts.iter().map(|a| a.apply(x).to_string()).collect();
        s.push_str(&format!("{x},{}\n", vals.join(",")));
    }
    s
}

fn arch_row(kind: ActivationKind, build: &str, d: usize, net: &Network) -> String {
    format!("{},{build},{d},{},{},{}\n", kind.name(), net.width(), net.depth(), net.neuron_count())
}

fn architecture_table() -> Result<String, String> {
    let mut s = String::from("activation,build,dim,width,depth,neurons\n");
    for kind in ActivationKind::ALL {
        let spec = ActivationSpec::for_kind(kind);
        let e = |e: superexpressive::Error| format!("{kind}: {e}");
        s.push_str(&arch_row(kind, "half", 1, &skeleton_half(&spec).map_err(e)?));
        s.push_str(&arch_row(kind, "full", 1, &skeleton_full(&spec).map_err(e)?));
        for d in 1..=2 {
            s.push_str(&arch_row(kind, "kst", d, &kst::skeleton_multivariate(&spec, d).map_err(e)?));
        }
    }
    Ok(s)
}

fn product_residual() -> Result<f64, String> {
    let f = |x: &[f64]| Named::Product.eval(x);
    kst::decompose(&f, 2, &Provider::default()).map(|s| s.residual).map_err(|e| e.to_string())
}

fn kst_table() -> Result<String, String> {
    Ok(format!("target,dim,residual\nproduct,2,{}\n", product_residual()?))
}

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.epochs = 3;
    cfg.batch = 16;
    cfg.seed = 5;
    cfg.data = DataSource::Synthetic { classes: superexpressive::nntrain::train::default_classes(), per_class: 10, length: 64 };
    cfg.model = ModelChoice::Custom(
        ["conv:3:4:1:peuaf", "bn:0.99:0.001", "maxpool:2:2", "gap", "output:3"]
            .iter()
            .map(|t| LayerSpec::parse_token(t).expect("valid token"))
            .collect(),
    );
    cfg
}

fn tiny_history() -> Result<String, String> {
    let cfg = tiny_config();
    let ds = cfg.dataset().map_err(|e| e.to_string())?;
    let (tr, te) = ds.split(cfg.test_fraction, cfg.seed).map_err(|e| e.to_string())?;
    train(&tr, &te, &cfg).map(|o| o.history.to_csv()).map_err(|e| e.to_string())
}

fn write_golden(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let files = [
        ("activations.csv", activation_table()),
        ("architectures.csv", architecture_table().map_err(Failure::Verify)?),
        ("kst.csv", kst_table().map_err(Failure::Verify)?),
        ("train_history.csv", tiny_history().map_err(Failure::Verify)?),
    ];
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| io_failure(&p, e))?;
    }
    println!("wrote golden files to {}", dir.display());
    Ok(())
}

// ---- suites ----

fn activations(g: &Golden) -> Vec<Check> {
    const S: &str = "activations";
    let mut out = Vec::new();
    let (ok, detail) = g.compare("activations.csv", &activation_table(), 1e-12);
    out.push(check(S, "values match golden", ok, detail));

    for kind in [ActivationKind::Euaf, ActivationKind::Peuaf] {
        let w = ActivationSpec::for_kind(kind).witness(1.0, 100.0).map(|w| w.grid_error());
        let ok = matches!(w, Ok(e) if e == 0.0);
        out.push(check(S, "exact witness on [0,100]", ok, format!("{kind}: {w:?}")));
    }
    let e3 = ActivationSpec::for_kind(ActivationKind::Rho3).witness(1.0, 10.0).map(|w| w.grid_error());
    out.push(check(S, "rho3 witness on [0,10]", matches!(e3, Ok(e) if e < 1e-12), format!("{e3:?}")));
    for kind in [ActivationKind::Rho1, ActivationKind::Rho2] {
        let e = ActivationSpec::for_kind(kind).witness(0.05, 4.0).map(|w| w.grid_error());
        let ok = matches!(e, Ok(v) if v <= 0.05);
        out.push(check(S, "eps witness on [0,4]", ok, format!("{kind}: {e:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    while probes < 500 {
        let x: f64 = rng.gen_range(-4.0..6.0);
        let w: f64 = rng.gen_range(0.1..1.0);
        let near_kink = |v: f64| (v - v.round()).abs() < 1e-3 || v.abs() < 1e-3;
        if near_kink(x) || near_kink(w * x) || (x.abs() - 1.0).abs() < 1e-3 {
            continue;
        }
        for a in [Activation::Euaf, Activation::Peuaf { w }, Activation::Rho1, Activation::Rho2, Activation::Rho3] {
            let fd = (a.apply(x + h) - a.apply(x - h)) / (2.0 * h);
            let an = a.deriv_x(x).unwrap_or(f64::NAN);
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
        let p = |w: f64| Activation::Peuaf { w }.apply(x);
        let fd = (p(w + h) - p(w - h)) / (2.0 * h);
        let an = Activation::Peuaf { w }.deriv_w(x).unwrap_or(f64::NAN);
        worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        probes += 1;
    }
    out.push(check(S, "derivatives match differences", worst < 1e-6, format!("worst {worst:.2e} over {probes} points")));
    out
}

fn encoder(g: &Golden) -> Vec<Check> {
    const S: &str = "encoder";
    let mut out = Vec::new();
    let witness = ActivationSpec::for_kind(ActivationKind::Euaf).witness(1.0, 100.0).expect("exact witness").network;

    let bump = bump_network(&witness).expect("bump network");
    let dev = grid(0.0, 10.0, 10_001)
        .map(|x| ((1..=4).map(|i| bump.eval_scalar(x + i as f64 / 2.0)).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    out.push(check(S, "partition of unity", dev < 1e-12, format!("max deviation {dev:.2e}")));

    let stair = stair_index_network(&witness).expect("stair network");
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut misses = 0;
    for kk in [2usize, 4, 8, 16] {
        for k in 1..=kk {
            let (lo, hi) = ((2 * k - 2) as f64 / (2 * kk) as f64, (2 * k - 1) as f64 / (2 * kk) as f64);
            for _ in 0..100 {
                let x = rng.gen_range(lo..=hi);
                if stair.eval_scalar(2.0 * kk as f64 * x) != k as f64 {
                    misses += 1;
                }
            }
        }
    }
    out.push(check(S, "interval index identity", misses == 0, format!("{misses} misses")));

    let spec = ActivationSpec::for_kind(ActivationKind::Euaf);
    let gamma_err = |delta: f64| {
        let pts: Vec<f64> = grid(-1.0, 1.0, 41).collect();
        let mut worst: f64 = 0.0;
        for &x in &pts {
            for &y in &pts {
                worst = worst.max((gamma_delta(&spec, x, y, delta).unwrap_or(f64::NAN) - x * y).abs());
            }
        }
        worst
    };
    let mut deltas = vec![0.1];
    while deltas.last().copied().unwrap_or(0.0) / 2.0 >= 1e-4 {
        deltas.push(deltas[deltas.len() - 1] / 2.0);
    }
    let errs: Vec<f64> = deltas.iter().map(|&d| gamma_err(d)).collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
    let ok = ratios.iter().all(|r| (0.2..=0.8).contains(r));
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    out.push(check(S, "product gadget convergence", ok, format!("ratios in [{lo:.3}, {hi:.3}]")));
    let e3 = gamma_err(1e-3);
    out.push(check(S, "product gadget at 1e-3", e3 < 1e-2, format!("error {e3:.2e}")));

    match architecture_table() {
        Ok(t) => {
            let rows: String = t.lines().filter(|l| !l.contains(",kst,")).map(|l| format!("{l}\n")).collect();
            let golden_rows = g.text("architectures.csv").map(|s| {
                s.lines().filter(|l| !l.contains(",kst,")).map(|l| format!("{l}\n")).collect::<String>()
            });
            let ok = golden_rows.as_deref() == Ok(rows.as_str());
            out.push(check(S, "builder architectures match golden", ok, "half and full skeletons"));
        }
        Err(e) => out.push(check(S, "builder architectures match golden", false, e)),
    }

    let target = |x: f64| x;
    let cfg = ApproxConfig::new(0.2);
    match build_half(&target, &ActivationSpec::for_kind(ActivationKind::Euaf), &cfg) {
        Ok(a) => {
            let err = grid(0.0, 1.0, 10_000)
                .filter(|&x| in_half_support(x, a.k))
                .map(|x| (a.network.eval_scalar(x) - x).abs())
                .fold(0.0, f64::max);
            out.push(check(S, "half-interval build of x", err < 0.2, format!("K {} error {err:.3e}", a.k)));
        }
        Err(e) => out.push(check(S, "half-interval build of x", false, e.to_string())),
    }
    out
}

fn kst_suite(g: &Golden) -> Vec<Check> {
    const S: &str = "kst";
    let mut out = Vec::new();
    let counts: Vec<usize> = (1..=3).map(kst::subnetwork_count).collect();
    let ok = counts.iter().zip(1usize..).all(|(&c, d)| c == (d + 1) * (2 * d + 1));
    out.push(check(S, "subnetwork count", ok, format!("{counts:?}")));

    match architecture_table() {
        Ok(t) => {
            let pick = |s: &str| s.lines().filter(|l| l.contains(",kst,")).map(|l| format!("{l}\n")).collect::<String>();
            let ok = g.text("architectures.csv").map(|s| pick(&s)).as_deref() == Ok(pick(&t).as_str());
            out.push(check(S, "superposition architectures match golden", ok, "d = 1, 2"));
        }
        Err(e) => out.push(check(S, "superposition architectures match golden", false, e)),
    }

    let sum = |x: &[f64]| x.iter().sum::<f64>();
    match kst::decompose(&sum, 2, &Provider::default()) {
        Ok(sup) => {
            let monotone = sup.history.windows(2).all(|w| w[1] <= w[0]);
            out.push(check(S, "sum decomposes exactly", sup.residual < 1e-6, format!("residual {:.2e}", sup.residual)));
            out.push(check(S, "backfit residual is monotone", monotone, format!("{} sweeps", sup.history.len())));
        }
        Err(e) => out.push(check(S, "sum decomposes exactly", false, e.to_string())),
    }

    match kst_table() {
        Ok(t) => {
            let (ok, detail) = g.compare("kst.csv", &t, 1e-12);
            out.push(check(S, "product residual matches golden", ok, detail));
        }
        Err(e) => out.push(check(S, "product residual matches golden", false, e)),
    }

    let spec = ActivationSpec::for_kind(ActivationKind::Euaf);
    let f = |x: &[f64]| x[0] + x[1];
    match kst::build_multivariate(&f, 2, (0.0, 1.0), &spec, &ApproxConfig::new(0.3), &Provider::default()) {
        Ok(m) => {
            let err = grid(0.0, 1.0, 51)
                .flat_map(|x| grid(0.0, 1.0, 51).map(move |y| (x, y)))
                .map(|(x, y)| (m.network.forward(&[x, y]).map_or(f64::NAN, |v| v[0]) - x - y).abs())
                .fold(0.0, f64::max);
            let skel = kst::skeleton_multivariate(&spec, 2).map(|n| n.architecture());
            let ok = err < 0.3 && skel.as_ref().ok() == Some(&m.network.architecture()) && m.report.subnetworks == 15;
            out.push(check(S, "two-variable build of x1 + x2", ok, format!("error {err:.3e}")));
        }
        Err(e) => out.push(check(S, "two-variable build of x1 + x2", false, e.to_string())),
    }
    out
}

fn train_suite(g: &Golden) -> Vec<Check> {
    const S: &str = "train";
    let mut out = Vec::new();

    let cfg = ModelConfig::baseline_b(12, 3, superexpressive::nntrain::Act::Peuaf);
    let mut model = Model::new(cfg, 9).expect("valid model");
    for p in model.params.iter_mut().filter(|p| p.name.ends_with(".w")) {
        p.value.iter_mut().enumerate().for_each(|(k, v)| *v = 0.35 + 0.03 * k as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let sigs: Vec<Vec<f64>> = (0..4).map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let refs: Vec<&[f64]> = sigs.iter().map(Vec::as_slice).collect();
    let x = Tensor::from_signals(&refs).expect("batch");
    let y = [0usize, 1, 2, 1];
    let loss = |m: &Model| {
        let c = m.forward_train(&x).expect("forward");
        (cross_entropy(&c.logits, &y).expect("loss").0, m.kink_signature(&c))
    };
    let cache = model.forward_train(&x).expect("forward");
    let grads = model.backward(&cache, &cross_entropy(&cache.logits, &y).expect("loss").1);
    let (mut worst, mut probes, h) = (0.0f64, 0, 1e-6);
    for pi in 0..model.params.len() {
        for k in 0..model.params[pi].value.len() {
            let (mut up, mut down) = (model.clone(), model.clone());
            up.params[pi].value[k] += h;
            down.params[pi].value[k] -= h;
            let ((lu, su), (ld, sd)) = (loss(&up), loss(&down));
            if su != sd {
                continue;
            }
            let fd = (lu - ld) / (2.0 * h);
            let an = grads[pi][k];
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
            probes += 1;
        }
    }
    out.push(check(S, "gradients match differences", worst < 1e-4, format!("worst {worst:.2e} over {probes} probes")));

    for p in model.params.iter_mut().filter(|p| p.name.ends_with(".w")) {
        p.value[0] = 1.7;
        p.value[1] = -0.2;
    }
    model.project_w();
    let w = model.frequencies();
    let ok = w.iter().all(|v| (0.0..=1.0).contains(v)) && w[0] == 1.0 && w[1] == 0.0;
    out.push(check(S, "frequency projection", ok, format!("{} frequencies", w.len())));

    match (tiny_history(), tiny_history()) {
        (Ok(a), Ok(b)) => {
            out.push(check(S, "seeded rerun is identical", a == b, format!("{} bytes", a.len())));
            let (ok, detail) = g.compare("train_history.csv", &a, 1e-12);
            out.push(check(S, "history matches golden", ok, detail));
        }
        (Err(e), _) | (_, Err(e)) => out.push(check(S, "seeded rerun is identical", false, e)),
    }
    out
}

pub fn run(args: &VerifyArgs) -> CliResult {
    if let Some(dir) = &args.write_golden {
        return write_golden(dir);
    }
    let g = Golden { dir: args.golden_dir.as_deref() };
    let mut checks = Vec::new();
    let all = args.suite == Suite::All;
    if all || args.suite == Suite::Activations {
        checks.extend(activations(&g));
    }
    if all || args.suite == Suite::Encoder {
        checks.extend(encoder(&g));
    }
    if all || args.suite == Suite::Kst {
        checks.extend(kst_suite(&g));
    }
    if all || args.suite == Suite::Train {
        checks.extend(train_suite(&g));
    }
    let name_w = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<11} {:<name_w$}  {}", c.suite, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    if failed > 0 {
        return Err(Failure::Verify(format!("{failed} check(s) failed")));
    }
    Ok(())
}
