//! Independent numerical oracles for closed-form quantities.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::gamma::gamma;

use wishmix::rng::RngStream;
use wishmix::symmat::{multivariate_gamma, MultiGammaArg};

/// Monte Carlo value of the 2x2 cone integral of `etr(-S) |S|^p`, `p = beta - 3/2`.
/// With the off-diagonal entry integrated out over `x12^2 < x11 x22`, the
/// integrand is a function of two independent Exp(1) diagonal entries.
fn cone_integral(p: u32, n: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 0).rng();
    // int_{-r}^{r} (r^2 - t^2)^p dt for r = sqrt(x11 x22)
    let inner = |r: f64| match p {
        0 => 2.0 * r,
        1 => 4.0 / 3.0 * r.powi(3),
        _ => unreachable!(),
    };
    let mut acc = 0.0;
    for _ in 0..n {
        let x11: f64 = Exp1.sample(&mut rng);
        let x22: f64 = Exp1.sample(&mut rng);
        acc += inner((x11 * x22).sqrt());
    }
    acc / n as f64
}

#[test]
fn multigamma_matches_cone_integral() {
    let n = 1_000_000;
    let g32 = multivariate_gamma(MultiGammaArg::new(1.5, 2).unwrap());
    assert!((g32 - PI / 2.0).abs() < 1e-12);
    let mc = cone_integral(0, n, 1);
    assert!((mc - g32).abs() / g32 < 5e-3, "MC {mc} vs {g32}");

    let g52 = multivariate_gamma(MultiGammaArg::new(2.5, 2).unwrap());
    assert!((g52 - 3.0 * PI / 4.0).abs() < 1e-12);
    let mc = cone_integral(1, n, 2);
    assert!((mc - g52).abs() / g52 < 1e-2, "MC {mc} vs {g52}");
}

#[test]
fn multigamma_reduces_to_gamma() {
    for beta in [0.6, 1.0, 2.5, 10.0] {
        let g = multivariate_gamma(MultiGammaArg::new(beta, 1).unwrap());
        assert!((g - gamma(beta)).abs() / gamma(beta) < 1e-12, "beta {beta}");
    }
}

#[test]
fn trace_is_cyclic() {
    let mut rng = RngStream::new(3, 0).rng();
    for _ in 0..20 {
        let mut m = || DMatrix::<f64>::from_fn(4, 4, |_, _| rng.sample(StandardNormal));
        let (a, b, c) = (m(), m(), m());
        let t1 = (&a * &b * &c).trace();
        let t2 = (&b * &c * &a).trace();
        assert!((t1 - t2).abs() <= 1e-10 * t1.abs().max(1.0));
    }
}
