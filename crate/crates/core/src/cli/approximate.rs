use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use superexpressive::encoder::{build_full_1d, build_half, in_half_support, skeleton_full, skeleton_half, ApproxConfig};
use superexpressive::kst::{self, Provider};
use superexpressive::network::BuildReport;
use superexpressive::targets::Target;
use superexpressive::{ActivationKind, ActivationSpec, Error, FloatEncoding, Network};

use super::manifest::Recorder;
use super::{CliResult, Failure};
use crate::{ApproximateArgs, Encoding, Mode};

fn resolved_mode(args: &ApproximateArgs) -> CliResult<Mode> {
    match (args.mode, args.dim) {
        (Mode::Auto, 1) => Ok(Mode::Full),
        (Mode::Auto, _) => Ok(Mode::Kst),
        (Mode::Full | Mode::Half, d) if d != 1 => {
            Err(Failure::Usage(format!("--mode full and half need --dim 1, got {d}")))
        }
        (m, _) => Ok(m),
    }
}

fn curve_path(args: &ApproximateArgs) -> PathBuf {
    if let Some(p) = &args.curve {
        return p.clone();
    }
    let stem = args.report.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
    args.report.with_file_name(format!("{stem}.curve.csv"))
}

fn superposition_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or("network".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.superposition.txt"))
}

fn grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |j| j as f64 / (n - 1) as f64)
}

/// `x, f, phi, abs_diff` per grid point; half builds add `in_support`.
fn curve_1d(net: &Network, target: &Target, n: usize, half_k: Option<usize>) -> String {
    let mut s = String::from(if half_k.is_some() { "x,f,phi,abs_diff,in_support\n" } else { "x,f,phi,abs_diff\n" });
    for x in grid(n) {
        let f = target.eval_scalar(x);
        let phi = net.eval_scalar(x);
        let _ = write!(s, "{x},{f},{phi},{}", (f - phi).abs());
        if let Some(k) = half_k {
            let _ = write!(s, ",{}", u8::from(in_half_support(x, k)));
        }
        s.push('\n');
    }
    s
}

fn curve_nd(net: &Network, target: &Target, d: usize, per_dim: usize) -> String {
    let mut s = String::new();
    for j in 1..=d {
        let _ = write!(s, "x{j},");
    }
    s.push_str("f,phi,abs_diff\n");
    let total = per_dim.pow(d as u32);
    let mut x = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        for xj in x.iter_mut().rev() {
            *xj = (r % per_dim) as f64 / (per_dim - 1) as f64;
            r /= per_dim;
        }
        let f = target.eval(&x);
        let phi = net.forward(&x).map_or(f64::NAN, |v| v[0]);
        for xj in &x {
            let _ = write!(s, "{xj},");
        }
        let _ = writeln!(s, "{f},{phi},{}", (f - phi).abs());
    }
    s
}

fn skeleton_report(spec: &ActivationSpec, mode: Mode, d: usize, best: f64) -> Option<BuildReport> {
    let net = match mode {
        Mode::Half => skeleton_half(spec),
        Mode::Full => skeleton_full(spec),
        _ => kst::skeleton_multivariate(spec, d),
    }
    .ok()?;
    let mut r = BuildReport::new(spec.kind(), &net);
    if mode == Mode::Kst {
        r.subnetworks = kst::subnetwork_count(d);
    }
    r.sup_error_estimate = if best.is_finite() { best } else { f64::MAX };
    Some(r)
}

pub fn run(args: &ApproximateArgs, argv: &[String]) -> CliResult {
    let kind = ActivationKind::parse(&args.activation).ok_or_else(|| {
        Failure::Usage(format!("unknown activation '{}'; expected euaf, peuaf, rho1, rho2 or rho3", args.activation))
    })?;
    if !(args.eps.is_finite() && args.eps > 0.0) {
        return Err(Failure::Usage(format!("--eps must be a positive number, got {}", args.eps)));
    }
    if args.dim == 0 || args.dim > kst::MAX_DIM {
        return Err(Failure::Usage(format!("--dim must lie in 1..={}, got {}", kst::MAX_DIM, args.dim)));
    }
    let mode = resolved_mode(args)?;
    let target = Target::resolve(&args.target)?;
    target.check_dim(args.dim)?;
    let spec = ActivationSpec::for_kind(kind);
    let mut cfg = ApproxConfig::new(args.eps).with_seed(args.seed);
    if let Some(k) = args.k {
        cfg = cfg.with_k(k);
    }
    cfg.validate()?;
    let provider = match &args.superposition {
        Some(p) => Provider::FromFiles(p.clone()),
        None => Provider::default(),
    };
    let encoding = match args.float_encoding {
        Encoding::Decimal => FloatEncoding::Decimal,
        Encoding::Hex => FloatEncoding::Hex,
    };
    let config = json!({
        "activation": kind.name(),
        "target": target.label(),
        "dim": args.dim,
        "mode": format!("{mode:?}").to_lowercase(),
        "superposition": args.superposition.as_ref().map(|p| p.display().to_string()),
        "approx": cfg,
    });
    let mut rec = Recorder::new("approximate", argv, args.seed, config);
    let curve = curve_path(args);

    let d = args.dim;
    let built = match mode {
        Mode::Half => build_half(&|x| target.eval_scalar(x), &spec, &cfg).map(|a| {
            let text = curve_1d(&a.network, &target, cfg.grid_size, Some(a.k));
            (a.network, a.report, text, None)
        }),
        Mode::Full => build_full_1d(&|x| target.eval_scalar(x), (0.0, 1.0), &spec, &cfg).map(|a| {
            let text = curve_1d(&a.network, &target, cfg.grid_size, None);
            (a.network, a.report, text, None)
        }),
        _ => kst::build_multivariate(&|x| target.eval(x), d, (0.0, 1.0), &spec, &cfg, &provider).map(|m| {
            let text = if d == 1 {
                curve_1d(&m.network, &target, cfg.grid_size, None)
            } else {
                curve_nd(&m.network, &target, d, kst::check_points(cfg.grid_size, d))
            };
            (m.network, m.report, text, Some(m.superposition))
        }),
    };
    match built {
        Ok((net, report, text, sup)) => {
            rec.write(&args.out, net.to_json(encoding))?;
            if let Some(sup) = sup {
                rec.write(&superposition_path(&args.out), sup.to_text())?;
            }
            rec.write(&args.report, report.to_csv())?;
            rec.write(&curve, text)?;
            rec.finish()?;
            println!(
                "built {} network: width {}, depth {}, neurons {}, grid error {:e} (eps {})",
                kind, report.width, report.depth, report.neuron_count, report.sup_error_estimate, args.eps
            );
            Ok(())
        }
        Err(e) => {
            let best = match &e {
                Error::SearchFailure { best_error, .. } => *best_error,
                Error::WitnessNotAchieved { best_error, .. } => *best_error,
                Error::DecompositionFailure { residual, .. } => *residual,
                _ => return Err(e.into()),
            };
            let report = match &e {
                Error::SearchFailure { report: Some(r), .. } => Some((**r).clone()),
                _ => skeleton_report(&spec, mode, d, best),
            };
            if let Some(r) = report {
                rec.write(&args.report, r.to_csv())?;
            }
            rec.finish()?;
            Err(e.into())
        }
    }
}
