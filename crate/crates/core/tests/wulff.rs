use ozlab::numeric::{dot, norm1, norm2, norm_inf, Spd};
use ozlab::wulff::{self, boundary_radius, closed_form_norm_linf, closed_form_norm_nn, drift_cov, mass, norm, optimal_tilt};
use ozlab::{Error, Kernel};
use proptest::prelude::*;

fn kernels() -> Vec<Kernel> {
    vec![
        Kernel::nn(1).unwrap(),
        Kernel::nn(2).unwrap(),
        Kernel::nn(3).unwrap(),
        Kernel::linf_box(2).unwrap(),
        Kernel::linf_box(3).unwrap(),
        Kernel::perturbed_nn(0.05).unwrap(),
        Kernel::perturbed_nn(0.6).unwrap(),
    ]
}

#[test]
fn mass_examples() {
    let m = mass(&Kernel::nn(2).unwrap(), 0.5).unwrap();
    assert!((m - 3f64.acosh()).abs() < 1e-13);
    assert!((m - 1.762747).abs() < 1e-6);
    for d in 1..=3 {
        let m = mass(&Kernel::linf_box(d).unwrap(), 0.5).unwrap();
        assert!((m - 2.5f64.acosh()).abs() < 1e-13);
        assert!((m - 1.566799).abs() < 1e-6);
    }
    let nn1 = Kernel::nn(1).unwrap();
    let ms: Vec<f64> = [0.9, 0.99, 0.999, 0.9999].iter().map(|&z| mass(&nn1, z).unwrap()).collect();
    assert!(ms.windows(2).all(|w| w[1] < w[0]));
    assert!(ms[3] < 0.015);
}

#[test]
fn invalid_z_is_rejected() {
    let k = Kernel::nn(2).unwrap();
    for z in [0.0, -0.1, 1.0, 1.5, f64::NAN] {
        assert!(matches!(mass(&k, z), Err(Error::InvalidParameter(_))), "z = {z}");
    }
    assert!(optimal_tilt(&k, 0.5, &[0.0, 0.0]).is_err());
    assert!(optimal_tilt(&k, 0.5, &[1.0]).is_err());
}

#[test]
fn saturation_regime_reports_the_tail_rate() {
    let k = Kernel::saturation_1d(2.0).unwrap();
    match mass(&k, 0.2) {
        Err(Error::Saturated { rate }) => assert_eq!(rate, 1.0),
        other => panic!("expected saturation, got {other:?}"),
    }
}

#[test]
fn tilt_examples() {
    let nn2 = Kernel::nn(2).unwrap();
    for k in kernels() {
        let mut e1 = vec![0.0; k.dim()];
        e1[0] = 1.0;
        let r = optimal_tilt(&k, 0.4, &e1).unwrap();
        let m = mass(&k, 0.4).unwrap();
        assert!((r.mu[0] - m).abs() < 1e-12 && r.mu[1..].iter().all(|v| v.abs() < 1e-12));
        assert!((r.norm_value - 1.0).abs() < 1e-12);
    }
    let r = optimal_tilt(&nn2, 0.5, &[1.0, 1.0]).unwrap();
    let t = 2f64.acosh();
    assert!((r.mu[0] - t).abs() < 1e-12 && (r.mu[1] - t).abs() < 1e-12);
    // 2 arccosh(2) / arccosh(3)
    assert!((r.norm_value - 1.4942107596).abs() < 1e-10);
    assert!((r.norm_value - 2.0 * t / 3f64.acosh()).abs() < 1e-13);

    let r = optimal_tilt(&Kernel::nn(1).unwrap(), 0.6, &[-5.0]).unwrap();
    assert!((r.mu[0] + 3f64.ln()).abs() < 1e-13);
    assert!((r.norm_value - 5.0).abs() < 1e-12);
}

#[test]
fn norm_examples() {
    let nn2 = Kernel::nn(2).unwrap();
    assert_eq!(norm(&nn2, 0.3, &[0.0, 0.0]).unwrap(), 0.0);
    let v = norm(&nn2, 0.5, &[1.0, 1.0]).unwrap();
    assert!((1.0..=2.0).contains(&v));
    let v = norm(&nn2, 0.999, &[3.0, 4.0]).unwrap();
    assert!((v - 5.0).abs() < 0.05);
}

#[test]
fn drift_examples() {
    let d = drift_cov(&Kernel::nn(1).unwrap(), 0.6, &[1.0]).unwrap();
    assert!((d.eta[0] - 0.8).abs() < 1e-13);
    let d = drift_cov(&Kernel::nn(2).unwrap(), 0.5, &[1.0, 0.0]).unwrap();
    // eta_1 = z sinh(m) / d with sinh(arccosh 3) = sqrt 8
    assert!((d.eta[0] - 2f64.sqrt() / 2.0).abs() < 1e-12 && d.eta[1].abs() < 1e-12);
    let d = drift_cov(&Kernel::nn(2).unwrap(), 1.0 - 1e-7, &[0.6, 0.8]).unwrap();
    assert!(norm2(&d.eta) < 1e-3);
    for (i, row) in d.lambda.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let want = if i == j { 0.5 } else { 0.0 };
            assert!((v - want).abs() < 1e-3);
        }
    }
}

#[test]
fn boundary_examples() {
    let k = Kernel::nn(2).unwrap();
    for z in [0.1, 0.5, 0.9] {
        let b = wulff::wulff_boundary(&k, z, 64).unwrap();
        let m = mass(&k, z).unwrap();
        assert!((b[0][1] - m).abs() < 1e-12 && b[0][2].abs() < 1e-12);
        for p in &b {
            let mu = [p[1], p[2]];
            assert!(norm_inf(&mu) <= m + 1e-10 && m <= norm1(&mu) + 1e-10);
        }
    }
    let b = wulff::wulff_boundary(&k, 0.9, 360).unwrap();
    let n = b.len();
    let crosses: Vec<f64> = (0..n)
        .map(|i| {
            let (p, q, r) = (b[i], b[(i + 1) % n], b[(i + 2) % n]);
            (q[1] - p[1]) * (r[2] - q[2]) - (q[2] - p[2]) * (r[1] - q[1])
        })
        .collect();
    assert!(crosses.iter().all(|&c| c > 0.0));
    assert!(wulff::wulff_boundary(&Kernel::nn(3).unwrap(), 0.5, 64).is_err());
    assert!(wulff::wulff_boundary(&k, 0.5, 4).is_err());
}

fn max_ball_deviation(k: &Kernel, z: f64, target: impl Fn(&[f64]) -> f64) -> f64 {
    wulff::norm_ball(k, z, 360)
        .unwrap()
        .iter()
        .map(|p| (target(&[p[1], p[2]]) - 1.0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn ball_limits() {
    let nn = Kernel::nn(2).unwrap();
    let lb = Kernel::linf_box(2).unwrap();
    // the massive limit is approached at rate 1/m
    let a = max_ball_deviation(&nn, 1e-3, norm1);
    let b = max_ball_deviation(&nn, 1e-6, norm1);
    assert!(b < a && b < 0.06, "{a} {b}");
    let a = max_ball_deviation(&lb, 1e-3, norm_inf);
    let b = max_ball_deviation(&lb, 1e-6, norm_inf);
    assert!(b < a && b < 0.12, "{a} {b}");
    let e = max_ball_deviation(&nn, 1.0 - 1e-5, norm2);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn closed_forms_match_the_solver() {
    let v = closed_form_norm_nn(0.5, &[1.0, 0.0]).unwrap();
    assert!((v - 1.0).abs() < 1e-12);
    let v = closed_form_norm_nn(0.5, &[1.0, 1.0]).unwrap();
    assert!((v - 1.4942107596).abs() < 1e-10);
    let lb = Kernel::linf_box(2).unwrap();
    let v = closed_form_norm_linf(0.5, &[1.0, 1.0]).unwrap();
    assert!((v - norm(&lb, 0.5, &[1.0, 1.0]).unwrap()).abs() < 1e-10);
}

#[test]
fn monotonicity_scan_examples() {
    let p = Kernel::perturbed_nn(0.05).unwrap();
    let r = wulff::monotonicity_scan(&p, &[1.0, 1.0], 0.01, 0.99, 98, 1e-9).unwrap();
    assert!(r.non_monotone && !r.flags.is_empty());
    assert!(r.flags.iter().any(|f| f.norm > 2f64.sqrt() + 1e-6));

    let nn = Kernel::nn(2).unwrap();
    let r = wulff::monotonicity_scan(&nn, &[1.0, 1.0], 0.01, 0.99, 98, 1e-9).unwrap();
    assert!(r.flags.is_empty() && r.monotone);
    assert!(r.rows.windows(2).all(|w| w[1].norm < w[0].norm));
    assert!(r.rows[0].norm < 2.0 && r.rows.last().unwrap().norm > 2f64.sqrt());

    let r = wulff::monotonicity_scan(&p, &[1.0, 0.0], 0.01, 0.99, 20, 1e-9).unwrap();
    assert!(r.flags.is_empty() && r.rows.iter().all(|row| (row.norm - 1.0).abs() < 1e-12));
}

#[test]
fn massive_limit_norms() {
    let nn = Kernel::nn(3).unwrap();
    assert!((wulff::massive_limit_norm(&nn, &[1.0, -2.0, 0.5]).unwrap() - 3.5).abs() < 1e-12);
    let lb = Kernel::linf_box(2).unwrap();
    assert!((wulff::massive_limit_norm(&lb, &[0.3, -0.7]).unwrap() - 0.7).abs() < 1e-12);
    let p = Kernel::perturbed_nn(0.5).unwrap();
    assert!((wulff::massive_limit_norm(&p, &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!(wulff::massive_limit_norm(&Kernel::saturation_1d(2.0).unwrap(), &[1.0]).is_none());
}

fn pick(i: usize, x: &[f64]) -> (Kernel, Vec<f64>) {
    let k = kernels().swap_remove(i % 7);
    let v = x[..k.dim()].to_vec();
    (k, v)
}

fn nonzero(v: &[f64]) -> bool {
    norm_inf(v) > 1e-3
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn norm_axioms(
        i in 0usize..7,
        z in 0.02f64..0.98,
        x in prop::collection::vec(-5.0f64..5.0, 3),
        y in prop::collection::vec(-5.0f64..5.0, 3),
        t in -3i32..=3,
    ) {
        let (k, x) = pick(i, &x);
        let y = y[..k.dim()].to_vec();
        prop_assume!(nonzero(&x) && nonzero(&y));
        let nx = norm(&k, z, &x).unwrap();
        let ny = norm(&k, z, &y).unwrap();
        let tx: Vec<f64> = x.iter().map(|v| t as f64 * v).collect();
        prop_assert!((norm(&k, z, &tx).unwrap() - (t.abs() as f64) * nx).abs() <= 1e-9 * nx.max(1.0));
        let s: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        prop_assert!(norm(&k, z, &s).unwrap() <= nx + ny + 1e-9);
        prop_assert!(norm_inf(&x) <= nx + 1e-9 && nx <= norm1(&x) + 1e-9);
        // coordinate sign flip and reversal
        let mut w: Vec<f64> = x.iter().rev().cloned().collect();
        w[0] = -w[0];
        prop_assert!((norm(&k, z, &w).unwrap() - nx).abs() <= 1e-10 * nx);
    }

    #[test]
    fn tilt_invariants(i in 0usize..7, z in 0.02f64..0.98, x in prop::collection::vec(-5.0f64..5.0, 3)) {
        let (k, x) = pick(i, &x);
        prop_assume!(nonzero(&x));
        let r = optimal_tilt(&k, z, &x).unwrap();
        let m = mass(&k, z).unwrap();
        prop_assert!((k.tilted_value(z, &r.mu).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!(norm_inf(&r.mu) <= m + 1e-10 && m <= norm1(&r.mu) + 1e-10);
        let dc = drift_cov(&k, z, &x).unwrap();
        let cos = dot(&dc.eta, &x) / (norm2(&dc.eta) * norm2(&x));
        prop_assert!(1.0 - cos <= 1e-9, "alignment {}", 1.0 - cos);
        prop_assert!(Spd::from_rows(&dc.lambda).is_ok());
        prop_assert!(dc.a2 >= 0.0 && dc.b2 >= 0.0 && dc.w2 >= 0.0);
        // depends on the direction only
        let x3: Vec<f64> = x.iter().map(|v| 3.7 * v).collect();
        let r3 = optimal_tilt(&k, z, &x3).unwrap();
        prop_assert!(r.mu.iter().zip(&r3.mu).all(|(a, b)| (a - b).abs() <= 1e-11));
    }

    #[test]
    fn closed_form_agreement(z in 0.02f64..0.98, x in prop::collection::vec(-5.0f64..5.0, 3), d in 1usize..=3) {
        let x = x[..d].to_vec();
        prop_assume!(nonzero(&x));
        let a = norm(&Kernel::nn(d).unwrap(), z, &x).unwrap();
        prop_assert!((closed_form_norm_nn(z, &x).unwrap() - a).abs() <= 1e-9 * a);
        let b = norm(&Kernel::linf_box(d).unwrap(), z, &x).unwrap();
        prop_assert!((closed_form_norm_linf(z, &x).unwrap() - b).abs() <= 1e-9 * b);
    }

    #[test]
    fn boundary_radius_along_e1_is_the_mass(i in 0usize..7, z in 0.02f64..0.98) {
        let k = kernels().swap_remove(i);
        let mut e1 = vec![0.0; k.dim()];
        e1[0] = 1.0;
        prop_assert!((boundary_radius(&k, z, &e1).unwrap() - mass(&k, z).unwrap()).abs() <= 1e-12);
    }
}
