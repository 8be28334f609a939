use ozlab::brownian::massive_green;
use ozlab::crossover::{
    critical_decay_check, envelope_check, exponential_rate, log_slope, ncgl_verify, oz_asymptote, predict, predict_table,
    CrossoverOptions, NcglOptions,
};
use ozlab::kernel::Point;
use ozlab::numeric::{dot, to_f64, MemoryCap};
use ozlab::wulff::{self, mass, optimal_tilt};
use ozlab::{Error, Kernel};
use std::f64::consts::PI;
use std::sync::Arc;

fn axis(d: usize, n: i64) -> Point {
    let mut p = vec![0; d];
    p[0] = n;
    p
}

#[test]
fn one_dimensional_prediction_is_exact() {
    let nn1 = Kernel::nn(1).unwrap();
    for z in [0.3, 0.6, 0.9] {
        for x in [2, 7, 15] {
            let r = predict(&nn1, z, &[x], &CrossoverOptions::default()).unwrap();
            assert!((r.ratio - 1.0).abs() < 1e-12, "z {z} x {x}: {}", r.ratio);
        }
    }
}

#[test]
fn diagonal_ratios_approach_one_in_two_dimensions() {
    let nn2 = Kernel::nn(2).unwrap();
    let pts: Vec<Point> = (1..=16).map(|n| vec![n, n]).collect();
    let t = predict_table(&nn2, 0.9, &pts, &CrossoverOptions::default()).unwrap();
    assert!(t.rows.iter().all(|r| r.m_norm_x >= 0.5));
    assert!(t.trend_slope().unwrap() < 0.0);
    let last = t.rows.last().unwrap();
    assert!((last.ratio - 1.0).abs() < 0.01, "{}", last.ratio);
    assert!(t.meta.cross_check.is_some());
}

#[test]
fn low_dimensional_points_below_s0_are_rejected() {
    let nn2 = Kernel::nn(2).unwrap();
    let r = predict(&nn2, 0.99, &[1, 0], &CrossoverOptions::default());
    assert!(matches!(r, Err(Error::Precondition(_))));
    let opts = CrossoverOptions { s0: 0.1, ..Default::default() };
    assert!(predict(&nn2, 0.99, &[1, 0], &opts).is_ok());
}

#[test]
fn user_ghat_scales_the_prediction() {
    let nn3 = Kernel::nn(3).unwrap();
    let base = predict(&nn3, 0.8, &[4, 0, 0], &CrossoverOptions::default()).unwrap();
    let opts = CrossoverOptions { ghat: Some(Arc::new(|_: &[f64]| 2.0)), ..Default::default() };
    let scaled = predict(&nn3, 0.8, &[4, 0, 0], &opts).unwrap();
    assert!((scaled.prediction / base.prediction - 2.0).abs() < 1e-14);
}

#[test]
fn oz_asymptote_examples() {
    let nn3 = Kernel::nn(3).unwrap();
    let opts = CrossoverOptions::default();
    let p = predict(&nn3, 0.5, &[40, 0, 0], &opts).unwrap();
    let oz = oz_asymptote(&nn3, 0.5, &[40, 0, 0], &opts).unwrap();
    assert!((oz / p.prediction - 1.0).abs() < 0.03);
    let nn1 = Kernel::nn(1).unwrap();
    for z in [0.2f64, 0.7] {
        let m = (1.0 / z).acosh();
        let v = oz_asymptote(&nn1, z, &[6], &opts).unwrap();
        assert!((v - (-6.0 * m).exp() / (1.0 - z * z).sqrt()).abs() < 1e-13);
    }
}

#[test]
fn envelope_examples() {
    let nn3 = Kernel::nn(3).unwrap();
    let opts = CrossoverOptions::default();
    let pts: Vec<Point> = (5..=40).step_by(5).map(|n| axis(3, n)).collect();
    let r = envelope_check(&nn3, 0.9, &pts, 10.0, &opts).unwrap();
    assert!(r.bounded);
    // on the axis the crossover coordinate is m n
    for row in &r.rows {
        assert!((row.m_norm_x - r.mass * row.x[0] as f64).abs() < 1e-10);
    }

    let pts: Vec<Point> = (1..=4).map(|n| axis(3, n)).collect();
    let r = envelope_check(&nn3, 0.99, &pts, 10.0, &opts).unwrap();
    assert!(r.rows.iter().all(|row| row.m_norm_x <= 1.0));
    assert!(r.max_ratio / r.min_ratio < 2.0);

    let pts: Vec<Point> = (10..=30).step_by(5).map(|n| axis(3, n)).collect();
    let r = envelope_check(&nn3, 0.6, &pts, 10.0, &opts).unwrap();
    assert!(r.max_ratio / r.min_ratio < 1.5);
}

#[test]
fn critical_decay_examples() {
    let nn3 = Kernel::nn(3).unwrap();
    let r = critical_decay_check(&nn3, &[0.95, 0.99, 0.997], 1.0, &CrossoverOptions::default()).unwrap();
    assert!((r.sigma2 - 1.0).abs() < 1e-14);
    let dev: Vec<f64> = r.rows.iter().map(|row| (row.ratio - 1.0).abs()).collect();
    assert!(dev.windows(2).all(|w| w[1] < w[0]), "{dev:?}");
    assert!(dev[2] < 0.1);
    assert!(matches!(
        critical_decay_check(&Kernel::nn(2).unwrap(), &[0.9], 1.0, &CrossoverOptions::default()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn critical_profile_reduces_to_the_massless_constant() {
    for d in 3..=6 {
        let mut e1 = vec![0.0; d];
        e1[0] = 1.0;
        let g = massive_green(1e-12, &e1).unwrap().value;
        // Gamma((d-2)/2) from the factorial and half-integer recursions
        let gamma = if d % 2 == 0 {
            (1..d / 2 - 1).map(|k| k as f64).product::<f64>().max(1.0)
        } else {
            // Gamma(k + 1/2) = (2k)! sqrt(pi) / (4^k k!)
            let k = (d - 3) / 2;
            (1..=k).map(|j| (2 * j - 1) as f64 / 2.0).product::<f64>() * PI.sqrt()
        };
        let want = gamma / (2.0 * PI.powf(d as f64 / 2.0));
        assert!((g / want - 1.0).abs() < 1e-9, "d {d}: {g} vs {want}");
    }
}

#[test]
fn ncgl_paths_agree_with_the_lattice_oracle() {
    let opts = CrossoverOptions::default();
    for (k, pts) in [
        (Kernel::nn(3).unwrap(), vec![axis(3, 3), axis(3, 6), axis(3, 9)]),
        (Kernel::nn(2).unwrap(), vec![vec![2, 2], vec![4, 4]]),
        (Kernel::linf_box(2).unwrap(), vec![axis(2, 3), axis(2, 6)]),
        (Kernel::perturbed_nn(0.3).unwrap(), vec![vec![3, 3], vec![5, 5]]),
    ] {
        for z in [0.5, 0.9] {
            let mu = optimal_tilt(&k, z, &to_f64(&pts[0])).unwrap().mu;
            let rep = ncgl_verify(&k, z, &mu, &pts, &NcglOptions::default()).unwrap();
            for row in &rep.rows {
                let p = predict(&k, z, &row.x, &opts).unwrap();
                let tilt = dot(&mu, &to_f64(&row.x)).exp();
                let via_lattice = p.oracle * tilt;
                assert!(
                    (row.g_q - via_lattice).abs() <= 1e-6 * via_lattice,
                    "{:?} z {z} x {:?}: {} vs {via_lattice}",
                    k.name(),
                    row.x,
                    row.g_q
                );
                assert!((row.ratio / p.ratio - 1.0).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn ncgl_centred_ratio_tends_to_one() {
    let nn3 = Kernel::nn(3).unwrap();
    let pts: Vec<Point> = [2, 4, 8, 16].iter().map(|&n| axis(3, n)).collect();
    let rep = ncgl_verify(&nn3, 0.9, &[0.0; 3], &pts, &NcglOptions::default()).unwrap();
    assert!(rep.trend_slope.unwrap() < 0.0);
    assert!((rep.rows.last().unwrap().ratio - 1.0).abs() < 1e-2);
    assert!(matches!(
        ncgl_verify(&Kernel::nn(2).unwrap(), 0.9, &[0.0; 2], &[vec![3, 0]], &NcglOptions::default()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn ncgl_two_dimensional_ratio_tends_to_one() {
    let nn2 = Kernel::nn(2).unwrap();
    let z = 0.9;
    let m = mass(&nn2, z).unwrap();
    let mu = [0.5 * m, 0.0];
    let pts: Vec<Point> = [4, 8, 16, 32].iter().map(|&n| axis(2, n)).collect();
    let rep = ncgl_verify(&nn2, z, &mu, &pts, &NcglOptions::default()).unwrap();
    assert!(rep.j0 < 1.0);
    assert!(rep.trend_slope.unwrap() < 0.0);
    assert!((rep.rows.last().unwrap().ratio - 1.0).abs() < 0.02);
    // misaligned points are refused
    assert!(ncgl_verify(&nn2, z, &mu, &[vec![3, 1]], &NcglOptions::default()).is_err());
    assert!(ncgl_verify(&nn2, z, &[2.0 * m, 0.0], &pts, &NcglOptions::default()).is_err());
}

#[test]
fn exponential_rate_on_the_box_kernel() {
    let lb = Kernel::linf_box(2).unwrap();
    for x in [[1, 0], [2, 1]] {
        let r = exponential_rate(&lb, 0.5, &x, &[10, 20, 40], 0.9, MemoryCap::default()).unwrap();
        assert!(r.relative_error < 0.01, "{x:?}: {}", r.relative_error);
        let m = mass(&lb, 0.5).unwrap();
        let target = m * wulff::norm(&lb, 0.5, &to_f64(&x)).unwrap();
        assert!((r.target - target).abs() < 1e-12);
    }
}

#[test]
fn log_slope_fits_lines() {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys = [1.0, -1.0, -3.0, -5.0];
    assert!((log_slope(&xs, &ys).unwrap() + 2.0).abs() < 1e-14);
    assert!(log_slope(&[1.0], &[2.0]).is_none());
}
