mod common;

use common::*;
use frontcast::grid::{GridSpec, ScalarField, StateFrame};
use frontcast::physics::{
    advective_residual_ratio, compute_terms, convection, ddt_forward, diffusion, masked_stats,
};
use frontcast::synthdata::translating_flow_sequence;
use proptest::prelude::*;

fn field_strategy(h: usize, w: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, h * w)
}

fn field(spec: GridSpec, data: Vec<f64>) -> ScalarField {
    ScalarField::from_vec(spec, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ddt_is_linear(f in field_strategy(6, 7), g in field_strategy(6, 7), g2 in field_strategy(6, 7),
                     a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = GridSpec::ocean(6, 7).unwrap();
        let now = field(spec, vec![0.0; 42]);
        let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let lhs = ddt_forward(&now, &field(spec, combo), spec.dt_seconds).unwrap();
        let df = ddt_forward(&now, &field(spec, f), spec.dt_seconds).unwrap();
        let dg = ddt_forward(&now, &field(spec, g), spec.dt_seconds).unwrap();
        for ((l, x), y) in lhs.values().iter().zip(df.values()).zip(dg.values()) {
            let rhs = a * x + b * y;
            prop_assert!((l - rhs).abs() <= 1e-10 * rhs.abs().max(l.abs()).max(1e-12));
        }
        // the starting frame enters with the opposite sign
        let back = ddt_forward(&field(spec, g2.clone()), &now, spec.dt_seconds).unwrap();
        let fwd = ddt_forward(&now, &field(spec, g2), spec.dt_seconds).unwrap();
        prop_assert_eq!(back.map(|x| -x).unwrap(), fwd);
    }

    #[test]
    fn convection_vanishes_without_flow(f in field_strategy(5, 8)) {
        let spec = GridSpec::ocean(5, 8).unwrap();
        let zero = ScalarField::zeros(spec);
        let out = convection(&zero, &zero, &field(spec, f), spec.dx_meters).unwrap();
        prop_assert!(out.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn convection_vanishes_where_flow_is_zero(f in field_strategy(6, 6), u in field_strategy(6, 6),
                                              holes in prop::collection::vec(any::<bool>(), 36)) {
        let spec = GridSpec::ocean(6, 6).unwrap();
        let masked: Vec<f64> = u.iter().zip(&holes).map(|(&x, &h)| if h { 0.0 } else { x }).collect();
        let uf = field(spec, masked.clone());
        let out = convection(&uf, &uf, &field(spec, f), spec.dx_meters).unwrap();
        for (k, &h) in holes.iter().enumerate() {
            if h {
                prop_assert_eq!(out.values()[[k / 6, k % 6]], 0.0);
            }
        }
    }

    #[test]
    fn diffusion_of_affine_field_is_zero(c in -5.0f64..5.0, a in -2.0f64..2.0, b in -2.0f64..2.0,
                                         h in 4usize..12, w in 4usize..12) {
        let spec = GridSpec::ocean(h, w).unwrap();
        let f = ScalarField::from_fn(spec, |(i, j)| c + a * i as f64 * spec.dx_meters + b * j as f64 * spec.dx_meters).unwrap();
        let lap = diffusion(&f, spec.dx_meters, spec.nu).unwrap();
        let scale = (c.abs() + (a.abs() + b.abs()) * 12.0 * spec.dx_meters) * spec.nu / (spec.dx_meters * spec.dx_meters);
        prop_assert!(lap.values().iter().all(|&x| x.abs() <= 1e-12 * scale.max(1e-300)));
    }

    #[test]
    fn valid_mask_is_the_interior(h in 4usize..14, w in 4usize..14, seed in 0u64..1000) {
        let spec = GridSpec::ocean(h, w).unwrap();
        let mut r = rng(seed);
        let a = random_frame(spec, &mut r, true, 0);
        let b = random_frame(spec, &mut r, true, 1);
        let terms = compute_terms(&a, &b).unwrap();
        prop_assert_eq!(terms.valid_mask.iter().filter(|&&m| m).count(), (h - 2) * (w - 2));
        for ((i, j), &m) in terms.valid_mask.indexed_iter() {
            prop_assert_eq!(m, i > 0 && j > 0 && i + 1 < h && j + 1 < w);
        }
    }

    #[test]
    fn all_values_finite(f in field_strategy(5, 5), g in field_strategy(5, 5)) {
        let spec = GridSpec::ocean(5, 5).unwrap();
        let (ff, gf) = (field(spec, f), field(spec, g));
        let outs = [
            ddt_forward(&ff, &gf, spec.dt_seconds).unwrap(),
            convection(&ff, &gf, &ff, spec.dx_meters).unwrap(),
            diffusion(&gf, spec.dx_meters, spec.nu).unwrap(),
        ];
        prop_assert!(outs.iter().all(|o| o.values().iter().all(|x| x.is_finite())));
    }
}

#[test]
fn compute_terms_composes_the_three_stencils() {
    let spec = GridSpec::ocean(9, 11).unwrap();
    let mut r = rng(3);
    for _ in 0..10 {
        let now = random_frame(spec, &mut r, true, 0);
        let next = random_frame(spec, &mut r, true, 1);
        let terms = compute_terms(&now, &next).unwrap();
        let (un, vn) = (to_rows(&now.u), to_rows(&now.v));
        let (u, v) = (to_rows(&next.u), to_rows(&next.v));
        let oracle = [
            oracle_ddt(&un, &u, spec.dt_seconds),
            oracle_ddt(&vn, &v, spec.dt_seconds),
            oracle_convection(&u, &v, &u, spec.dx_meters),
            oracle_convection(&u, &v, &v, spec.dx_meters),
            oracle_diffusion(&u, spec.dx_meters, spec.nu),
            oracle_diffusion(&v, spec.dx_meters, spec.nu),
        ];
        for ((name, got), want) in terms.fields().iter().zip(&oracle) {
            assert!(max_abs_diff(want, got) <= 1e-12, "{name}");
        }
    }
}

#[test]
fn steady_uniform_flow_has_no_momentum_terms() {
    let spec = GridSpec::ocean(8, 8).unwrap();
    let front = ScalarField::zeros(spec);
    let u = ScalarField::filled(spec, 0.3).unwrap();
    let v = ScalarField::filled(spec, -0.2).unwrap();
    let a = StateFrame::new(front.clone(), u.clone(), v.clone(), 0).unwrap();
    let b = StateFrame::new(front, u, v, 1).unwrap();
    let terms = compute_terms(&a, &b).unwrap();
    for (name, f) in terms.fields() {
        let s = masked_stats(f, &terms.valid_mask);
        assert_eq!(s.max_abs, 0.0, "{name}");
    }
}

#[test]
fn doubling_dx_quarters_diffusion() {
    let spec = GridSpec::ocean(10, 10).unwrap();
    let mut r = rng(8);
    let f = to_field(spec, &random_grid(10, 10, &mut r, -1.0, 1.0));
    let base = diffusion(&f, spec.dx_meters, spec.nu).unwrap();
    let coarse = diffusion(&f, 2.0 * spec.dx_meters, spec.nu).unwrap();
    for (a, b) in base.values().iter().zip(coarse.values()) {
        assert!((a / 4.0 - b).abs() <= 1e-15 * a.abs().max(1e-300), "{a} vs {b}");
    }
}

fn worst_residual(perturbation: f64) -> f64 {
    let spec = GridSpec::ocean(32, 32).unwrap();
    let frames = translating_flow_sequence(spec, 6, perturbation, 4).unwrap();
    frames
        .windows(2)
        .map(|pair| {
            let [ru, rv] = advective_residual_ratio(&compute_terms(&pair[0], &pair[1]).unwrap());
            ru.max(rv)
        })
        .fold(0.0, f64::max)
}

#[test]
fn translating_flow_is_nearly_pure_advection() {
    let r = worst_residual(0.1);
    assert!(r < 0.1, "residual ratio {r}");
    // the residual is carried by the perturbation
    assert!(worst_residual(0.025) < 0.5 * r);
}

#[test]
fn stencils_reject_mismatched_grids() {
    let a = ScalarField::zeros(GridSpec::ocean(5, 5).unwrap());
    let b = ScalarField::zeros(GridSpec::ocean(5, 6).unwrap());
    assert!(ddt_forward(&a, &b, 86_400.0).is_err());
    assert!(convection(&a, &a, &b, 9_000.0).is_err());
    assert!(ddt_forward(&a, &a, 0.0).is_err());
    assert!(diffusion(&a, -1.0, 1e-6).is_err());
}
