//! Site statistics of sampled environments against their declared laws.

use erwre::env_model::{sample_site, CookieAtom, Cookies, EnvironmentSpec, MLaw, PAtom, PLaw};
use erwre::stats::{binomial_se, lag_correlation};

const SITES: i64 = 100_000;

fn finite_spec() -> EnvironmentSpec {
    let p_law = PLaw::FinitePmf {
        atoms: vec![PAtom { p: 0.3, w: 0.2 }, PAtom { p: 0.6, w: 0.5 }, PAtom { p: 0.9, w: 0.3 }],
    };
    let m_law = MLaw::TwoPointWithInfinity {
        zero: 0.5,
        infinity: 0.1,
        atoms: vec![CookieAtom { m: Cookies::Finite(2), w: 0.25 }, CookieAtom { m: Cookies::Finite(7), w: 0.15 }],
    };
    EnvironmentSpec::new(p_law, m_law).unwrap()
}

fn frequency(hits: usize) -> f64 {
    hits as f64 / SITES as f64
}

#[test]
fn finite_marginals_match_their_weights() {
    let spec = finite_spec();
    let sites: Vec<_> = (-SITES / 2..SITES / 2).map(|x| sample_site(&spec, 11, x)).collect();
    for (p, w) in [(0.3, 0.2), (0.6, 0.5), (0.9, 0.3)] {
        let f = frequency(sites.iter().filter(|s| s.p == p).count());
        assert!((f - w).abs() <= 4.0 * binomial_se(w, SITES as usize), "p = {p}: {f} vs {w}");
    }
    for (m, w) in [(Cookies::Finite(0), 0.5), (Cookies::Infinite, 0.1), (Cookies::Finite(2), 0.25), (Cookies::Finite(7), 0.15)] {
        let f = frequency(sites.iter().filter(|s| s.m == m).count());
        assert!((f - w).abs() <= 4.0 * binomial_se(w, SITES as usize), "M = {m}: {f} vs {w}");
    }
}

#[test]
fn geometric_cookie_frequencies() {
    let q = 0.4;
    let spec = EnvironmentSpec::new(PLaw::Constant { p: 0.7 }, MLaw::Geometric { q }).unwrap();
    let ms: Vec<_> = (0..SITES).map(|x| spec.m_law.sample(5, x)).collect();
    for k in 0..5u64 {
        let w = q * (1.0 - q).powi(k as i32);
        let f = frequency(ms.iter().filter(|&&m| m == Cookies::Finite(k)).count());
        assert!((f - w).abs() <= 4.0 * binomial_se(w, SITES as usize), "M = {k}: {f} vs {w}");
    }
}

#[test]
fn log_heavy_tail_has_the_declared_lambda() {
    for (lambda, zero_mass) in [(0.4, 0.5), (1.5, 0.2)] {
        let spec = EnvironmentSpec::new(PLaw::Constant { p: 0.6 }, MLaw::LogHeavyTail { lambda, zero_mass }).unwrap();
        let logs: Vec<f64> = (0..SITES).map(|x| spec.m_law.sample(3, x).as_f64().ln()).collect();
        for t in [5.0, 10.0, 20.0] {
            let tail = frequency(logs.iter().filter(|&&l| l > t).count());
            let se = t * binomial_se(lambda / t, SITES as usize);
            assert!((t * tail - lambda).abs() <= 3.0 * se, "lambda {lambda}, t = {t}: {} vs {lambda}", t * tail);
        }
    }
}

#[test]
fn log_rho_is_uncorrelated_across_sites() {
    let spec = finite_spec();
    let xs: Vec<f64> = (0..SITES).map(|x| sample_site(&spec, 23, x).rho.ln()).collect();
    let bound = 4.0 / (SITES as f64).sqrt();
    for lag in 1..=4 {
        let r = lag_correlation(&xs, lag);
        assert!(r.abs() <= bound, "lag {lag}: {r}");
    }
}

#[test]
fn beta_p_law_mean() {
    let (a, b) = (3.0, 2.0);
    let spec = EnvironmentSpec::new(PLaw::Beta { alpha: a, beta: b }, MLaw::Constant { m: 0 }).unwrap();
    let ps: Vec<f64> = (0..SITES).map(|x| sample_site(&spec, 9, x).p).collect();
    let mean = ps.iter().sum::<f64>() / ps.len() as f64;
    let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
    assert!((mean - a / (a + b)).abs() <= 4.0 * (var / SITES as f64).sqrt(), "{mean}");
}
