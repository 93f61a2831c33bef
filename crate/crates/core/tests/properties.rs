use proptest::prelude::*;
use superexpressive::hexfloat;
use superexpressive::kst::{InnerMap, OuterMap, Superposition};
use superexpressive::network::{Layer, Tag};
use superexpressive::nntrain::data::parse_csv;
use superexpressive::nntrain::{Act, CsvSchema, Dataset, Model, ModelConfig};
use superexpressive::targets::PiecewiseLinear;
use superexpressive::{Activation, FloatEncoding, Network};

fn triangle(x: f64) -> f64 {
    let r = x.rem_euclid(2.0);
    if r <= 1.0 {
        r
    } else {
        2.0 - r
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Euaf),
        (0.01f64..1.0).prop_map(|w| Activation::Peuaf { w }),
        Just(Activation::Rho1),
        Just(Activation::Rho2),
        Just(Activation::Rho3),
    ]
}

fn tag() -> impl Strategy<Value = Tag> {
    prop_oneof![Just(Tag::Identity), activation().prop_map(Tag::Act)]
}

fn layer(rows: usize, cols: usize, output: bool) -> impl Strategy<Value = Layer> {
    let tags = if output { Just(vec![Tag::Identity; rows]).boxed() } else { prop::collection::vec(tag(), rows).boxed() };
    (
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, cols), rows),
        prop::collection::vec(-2.0f64..2.0, rows),
        tags,
    )
        .prop_map(|(w, b, t)| Layer::new(w, b, t).expect("consistent shapes"))
}

fn network() -> impl Strategy<Value = Network> {
    (1usize..4, prop::collection::vec(1usize..5, 1..4)).prop_flat_map(|(d, widths)| {
        let mut dims = vec![d];
        dims.extend(&widths);
        dims.push(1);
        let last = dims.len() - 2;
        let layers: Vec<_> = dims.windows(2).enumerate().map(|(i, p)| layer(p[1], p[0], i == last).boxed()).collect();
        (Just(d), layers).prop_map(|(d, layers)| Network::new(d, layers).expect("chained shapes"))
    })
}

fn table() -> impl Strategy<Value = PiecewiseLinear> {
    prop::collection::vec((0.01f64..1.0, -5.0f64..5.0), 2..8).prop_map(|steps| {
        let mut x = 0.0;
        let (mut knots, mut values) = (Vec::new(), Vec::new());
        for (dx, y) in steps {
            knots.push(x);
            values.push(y);
            x += dx;
        }
        PiecewiseLinear::new(knots, values).expect("increasing knots")
    })
}

fn superposition() -> impl Strategy<Value = Superposition> {
    (1usize..=2).prop_flat_map(|d| {
        let inner = prop::collection::vec(
            prop::collection::vec(
                prop_oneof![
                    (-2.0f64..2.0, -1.0f64..1.0).prop_map(|(scale, offset)| InnerMap::Affine { scale, offset }),
                    table().prop_map(InnerMap::Table),
                ],
                d,
            ),
            2 * d + 1,
        );
        let outer = prop::collection::vec(prop_oneof![Just(OuterMap::Zero), table().prop_map(OuterMap::Table)], 2 * d + 1);
        let history = prop::collection::vec(0.0f64..1.0, 0..5);
        (Just(d), inner, outer, 0.1f64..10.0, 0.0f64..1.0, history).prop_map(|(d, inner, outer, bound, residual, history)| {
            Superposition { d, inner, outer, bound, residual, history }
        })
    })
}

proptest! {
    #[test]
    fn euaf_is_the_triangle_wave_on_the_right(x in 0.0f64..1e4) {
        prop_assert_eq!(Activation::Euaf.apply(x), triangle(x));
        let unit = Activation::Peuaf { w: 1.0 };
        prop_assert_eq!(unit.apply(x), triangle(x));
    }

    #[test]
    fn euaf_is_a_soft_sign_on_the_left(x in -1e6f64..0.0) {
        let y = Activation::Euaf.apply(x);
        prop_assert!(close(y, x / (1.0 + x.abs()), 1e-15));
        prop_assert!(y > -1.0 && y <= 0.0);
    }

    #[test]
    fn peuaf_scales_the_positive_frequency(w in 0.0f64..1.0, x in 0.0f64..500.0) {
        let p = Activation::Peuaf { w };
        prop_assert!(close(p.apply(x), triangle(w * x), 1e-12));
        prop_assert_eq!(p.apply(-x), Activation::Euaf.apply(-x));
    }

    #[test]
    fn activations_are_bounded_where_expected(a in activation(), x in -50.0f64..50.0) {
        let y = a.apply(x);
        prop_assert!(y.is_finite());
        match a {
            Activation::Euaf | Activation::Peuaf { .. } | Activation::Rho3 => prop_assert!((-1.0..=1.0).contains(&y)),
            Activation::Rho2 => prop_assert!(y >= 0.0),
            Activation::Rho1 => prop_assert!(y > -1.0 && y < 2.0),
        }
    }

    #[test]
    fn derivative_reports_non_finite_input(a in activation()) {
        prop_assert!(a.eval(f64::NAN).is_err());
        prop_assert!(a.deriv_x(f64::INFINITY).is_err());
    }

    #[test]
    fn hex_floats_round_trip_bitwise(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        prop_assert_eq!(hexfloat::parse(&hexfloat::format(x)).map(f64::to_bits), Some(bits));
    }

    #[test]
    fn network_files_round_trip_bitwise(net in network(), xs in prop::collection::vec(-3.0f64..3.0, 3)) {
        let x = &xs[..net.input_dim()];
        let y = net.forward(x).unwrap();
        for enc in [FloatEncoding::Decimal, FloatEncoding::Hex] {
            let back = Network::from_json(&net.to_json(enc)).unwrap();
            prop_assert_eq!(&back, &net);
            prop_assert_eq!(back.forward(x).unwrap()[0].to_bits(), y[0].to_bits());
        }
    }

    #[test]
    fn composition_evaluates_outer_after_inner(inner in network(), outer in network(), x in -2.0f64..2.0) {
        prop_assume!(outer.input_dim() == 1);
        let xs = vec![x; inner.input_dim()];
        let h = inner.forward(&xs).unwrap();
        let expect = outer.forward(&h).unwrap()[0];
        let got = Network::compose(&outer, &inner).unwrap().forward(&xs).unwrap()[0];
        prop_assert!(close(got, expect, 1e-9), "{} vs {}", got, expect);
    }

    #[test]
    fn parallel_concatenates_outputs(a in network(), b in network(), x in -2.0f64..2.0) {
        prop_assume!(a.input_dim() == b.input_dim());
        let xs = vec![x; a.input_dim()];
        let both = Network::parallel(&[a.clone(), b.clone()]).unwrap().forward(&xs).unwrap();
        prop_assert_eq!(both.len(), 2);
        prop_assert!(close(both[0], a.forward(&xs).unwrap()[0], 1e-12));
        prop_assert!(close(both[1], b.forward(&xs).unwrap()[0], 1e-12));
    }

    #[test]
    fn affine_wrappers_match_direct_evaluation(net in network(), s in -3.0f64..3.0, c in -1.0f64..1.0, x in -1.0f64..1.0) {
        prop_assume!(net.input_dim() == 1);
        let direct = net.eval_scalar(s * x + c);
        prop_assert!(close(net.scalar_pre(s, c).unwrap().eval_scalar(x), direct, 1e-12));
        prop_assert!(close(net.scalar_post(s, c).unwrap().eval_scalar(x), s * net.eval_scalar(x) + c, 1e-12));
    }

    #[test]
    fn tables_interpolate_between_knots(t in table(), u in 0.0f64..1.0) {
        for (x, y) in t.knots().iter().zip(t.values()) {
            prop_assert_eq!(t.eval(*x), *y);
        }
        let (lo, hi) = t.domain();
        let x = lo + u * (hi - lo);
        let (min, max) = t.range();
        let y = t.eval(x);
        prop_assert!(y >= min - 1e-12 && y <= max + 1e-12);
    }

    #[test]
    fn superposition_text_round_trips(s in superposition()) {
        let back = Superposition::from_text(&s.to_text()).unwrap();
        prop_assert_eq!(back, Superposition { history: Vec::new(), ..s });
    }

    #[test]
    fn projection_clamps_and_fixes_feasible_frequencies(ws in prop::collection::vec(-2.0f64..3.0, 16)) {
        let mut model = Model::new(ModelConfig::baseline_b(32, 3, Act::Peuaf), 0).unwrap();
        let mut k = 0;
        for p in model.params.iter_mut().filter(|p| p.name.ends_with(".w")) {
            for v in p.value.iter_mut() {
                *v = ws[k % ws.len()];
                k += 1;
            }
        }
        model.project_w();
        let once = model.frequencies();
        prop_assert!(once.iter().all(|w| (0.0..=1.0).contains(w)));
        for (j, w) in once.iter().enumerate() {
            prop_assert_eq!(*w, ws[j % ws.len()].clamp(0.0, 1.0));
        }
        model.project_w();
        prop_assert_eq!(model.frequencies(), once);
    }

    #[test]
    fn dataset_csv_round_trips(
        rows in prop::collection::vec((prop::collection::vec(-10.0f64..10.0, 6), 0usize..3), 3..20)
    ) {
        let mut rows = rows;
        for (i, r) in rows.iter_mut().take(3).enumerate() {
            r.1 = i;
        }
        let (signals, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let ds = Dataset::new(signals, labels, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let back = parse_csv(&ds.to_csv(), &CsvSchema { length: Some(6), classes: Some(3) }).unwrap();
        prop_assert_eq!(back.signals, ds.signals);
        prop_assert_eq!(back.labels, ds.labels);
    }
}
