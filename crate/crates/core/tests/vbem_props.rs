use std::sync::Arc;

use pathvb::model::exact_posterior_small;
use pathvb::vbem::{m_step, Engine, Step};
use pathvb::{
    fit, fit_uncensored, select, CoefficientIndex, CoordinateRule, FitConfig, Hyperparams, ModelParams, PathwayLayout,
    SurvivalDataset, TauRule,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Ten genes in three pathways with one shared gene, `n` subjects, two
/// planted mains and one planted interaction, and roughly `censor` of the
/// subjects right-censored.
fn instance(seed: u64, n: usize, censor: f64) -> SurvivalDataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = PathwayLayout::new(vec![vec![0, 1, 2, 3], vec![3, 4, 5, 6], vec![7, 8, 9]], 10).unwrap();
    let x: Vec<f64> = (0..n * 10).map(|_| normal(&mut rng)).collect();
    let a = rng.random_range(0..10);
    let b = (a + 1 + rng.random_range(0..9)) % 10;
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let row = &x[i * 10..(i + 1) * 10];
            1.2 * row[a] - 0.9 * row[b] + 0.8 * row[a] * row[b] + 0.7 * normal(&mut rng)
        })
        .collect();
    let (time, delta) = censor_at(&y, censor, &mut rng);
    SurvivalDataset::from_gene_matrix(layout, &x, time, delta).unwrap()
}

/// Censoring bounds drawn so that about `rate` of subjects are censored,
/// keeping at least two events.
fn censor_at(y: &[f64], rate: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let mut time = y.to_vec();
    let mut delta = vec![true; y.len()];
    for i in 2..y.len() {
        if rng.random_bool(rate) {
            time[i] = y[i] - rng.random_range(0.05..1.5);
            delta[i] = false;
        }
    }
    (time, delta)
}

fn spikes(rng: &mut ChaCha8Rng) -> Hyperparams<f64> {
    let pick = |rng: &mut ChaCha8Rng| [1e-4, 1e-3, 1e-2][rng.random_range(0..3)];
    Hyperparams::with_spikes(pick(rng), pick(rng)).unwrap()
}

#[test]
fn every_update_is_monotone_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..25 {
        let data = instance(seed, 60, 0.3);
        let hyper = spikes(&mut rng);
        for rule in [CoordinateRule::Joint, CoordinateRule::Sequential] {
            let config = FitConfig { coordinate_rule: rule, ..FitConfig::default() };
            let mut e = Engine::new(&data, hyper, config).unwrap();
            let mut last = e.elbo().unwrap();
            for _ in 0..15 {
                e.iterate_with(|step, eng| {
                    let now = eng.elbo()?;
                    assert!(now - last >= -1e-8, "seed {seed}, {rule:?}, {step:?}: {last} -> {now}");
                    last = now;
                    Ok(())
                })
                .unwrap();
            }
        }
    }
}

#[test]
fn fit_trace_is_non_decreasing() {
    for seed in 0..20 {
        let data = instance(100 + seed, 60, 0.4);
        let r = fit(&data, &Hyperparams::default(), &FitConfig::default()).unwrap();
        for w in r.elbo_trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-8, "seed {seed}: {} -> {}", w[0], w[1]);
        }
        assert_eq!(r.iterations + 1, r.elbo_trace.len());
    }
}

#[test]
fn residual_cache_matches_recomputation_after_sweeps() {
    let data = instance(7, 60, 0.3);
    let mut e = Engine::new(&data, Hyperparams::default(), FitConfig::default()).unwrap();
    for _ in 0..30 {
        e.iterate().unwrap();
        for (a, b) in e.state().residual.iter().zip(e.fresh_residuals()) {
            assert!((a - b).abs() < 1e-8);
        }
    }
    let st = e.state();
    assert!(st.sigma2.iter().all(|&s| s > 0.0));
    assert!(st.eta.iter().chain(&st.r_hl).all(|&p| (0.0..=1.0).contains(&p)));
    for (&i, &z) in st.censored.iter().zip(&st.z_mean) {
        assert!(z > data.time()[i]);
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probabilities that rounded to exactly 0 or 1 have an infinite logit; the
/// bound is flat in that coordinate there.
fn interior(p: f64) -> bool {
    p > 0.0 && p < 1.0 && logit(p).is_finite()
}

/// Central differences of the bound in every coefficient and indicator
/// coordinate; returns the largest magnitude relative to the tolerance.
fn worst_gradient(e: &Engine<'_, f64>) -> f64 {
    let h = 1e-5;
    let base = e.elbo().unwrap();
    let tol = 1e-4 * (1.0 + base.abs() * 1e-6);
    let st = e.state().clone();
    let diff = |set: &dyn Fn(&mut Engine<'_, f64>, f64)| -> f64 {
        let mut up = e.clone();
        set(&mut up, h);
        let mut down = e.clone();
        set(&mut down, -h);
        (up.elbo().unwrap() - down.elbo().unwrap()) / (2.0 * h)
    };
    let mut worst = 0.0f64;
    for j in 0..st.m.len() {
        let (m, s, p) = (st.m[j], st.sigma2[j], st.eta[j]);
        let g = [
            diff(&|en, d| en.set_mean(j, m + d)),
            diff(&|en, d| en.set_variance(j, (s.ln() + d).exp())),
        ];
        worst = g.iter().fold(worst, |w, v| w.max(v.abs() / tol));
        if interior(p) {
            worst = worst.max(diff(&|en, d| en.set_eta(j, sigmoid(logit(p) + d))).abs() / tol);
        }
    }
    for b in 0..st.r_hl.len() {
        let r = st.r_hl[b];
        if interior(r) {
            worst = worst.max(diff(&|en, d| en.set_r_hl(b, sigmoid(logit(r) + d))).abs() / tol);
        }
    }
    worst
}

fn converge(e: &mut Engine<'_, f64>, max: usize) {
    let mut last = e.elbo().unwrap();
    for _ in 0..max {
        e.iterate().unwrap();
        let now = e.elbo().unwrap();
        if (now - last).abs() <= 1e-13 * now.abs() {
            break;
        }
        last = now;
    }
}

#[test]
fn converged_fits_are_stationary() {
    for seed in 0..8 {
        let data = instance(200 + seed, 60, 0.3);
        let mut e = Engine::new(&data, Hyperparams::with_spikes(1e-2, 1e-2).unwrap(), FitConfig::default()).unwrap();
        converge(&mut e, 5000);
        let worst = worst_gradient(&e);
        assert!(worst <= 1.0, "seed {seed}: gradient at {worst} times the tolerance");
    }
}

#[test]
fn no_censoring_reduces_bitwise() {
    for seed in 0..5 {
        let data = instance(300 + seed, 60, 0.0);
        assert_eq!(data.n_events(), data.n());
        let config = FitConfig { max_iterations: 40, elbo_rel_tol: 1e-300, ..FitConfig::default() };
        let a = fit(&data, &Hyperparams::default(), &config).unwrap();
        let b = fit_uncensored(&data, &Hyperparams::default(), &config).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.state.m, b.state.m);
        assert_eq!(a.state.eta, b.state.eta);
        assert_eq!(a.state.r_hl, b.state.r_hl);
        assert_eq!(a.elbo_trace, b.elbo_trace);
    }
    assert!(fit_uncensored(&instance(1, 60, 0.3), &Hyperparams::default(), &FitConfig::default()).is_err());
}

#[test]
fn fits_are_deterministic() {
    let data = instance(5, 60, 0.3);
    let config = FitConfig {
        init_scheme: pathvb::InitScheme::Jitter { scale: 0.1 },
        seed: 17,
        ..FitConfig::default()
    };
    let a = fit(&data, &Hyperparams::default(), &config).unwrap();
    let b = fit(&data, &Hyperparams::default(), &config).unwrap();
    assert_eq!(a, b);
    let c = fit(&data, &Hyperparams::default(), &FitConfig { seed: 18, ..config }).unwrap();
    assert_ne!(a.state.m, c.state.m);
}

/// The observed-subject precision and indicator rates from an explicitly
/// expanded design.
fn m_step_by_expansion(
    data: &SurvivalDataset<f64>,
    m: &[f64],
    sigma2: &[f64],
    eta: &[f64],
    r: &[f64],
) -> ModelParams<f64> {
    let cols: Vec<Vec<f64>> = (0..m.len()).map(|j| data.interaction_column(j).unwrap()).collect();
    let mut denom = 0.0;
    for i in 0..data.n() {
        let xm: f64 = cols.iter().zip(m).map(|(c, &w)| c[i] * w).sum();
        if data.delta()[i] {
            let y = data.time()[i];
            denom += y * y - 2.0 * xm * y + xm * xm;
        }
        denom += cols.iter().zip(sigma2).map(|(c, &s)| c[i] * c[i] * s).sum::<f64>();
    }
    let clamp = |z: f64| z.clamp(1e-8, 1.0 - 1e-8);
    ModelParams {
        tau: data.n_events() as f64 / denom,
        zeta1: clamp(eta.iter().sum::<f64>() / eta.len() as f64),
        zeta2: clamp(r.iter().sum::<f64>() / r.len() as f64),
    }
}

#[test]
fn m_step_matches_displayed_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..50 {
        let data = instance(400 + seed, 60, 0.3);
        let mut e = Engine::new(&data, Hyperparams::default(), FitConfig::default()).unwrap();
        let pc = e.state().m.len();
        for j in 0..pc {
            e.set_mean(j, 0.3 * normal(&mut rng));
            e.set_variance(j, rng.random_range(1e-4..0.5));
            e.set_eta(j, rng.random_range(0.0..1.0));
        }
        for b in 0..e.state().r_hl.len() {
            let v = if seed % 10 == 0 { 1.0 } else { rng.random_range(0.0..1.0) };
            e.set_r_hl(b, v);
        }
        let st = e.state();
        let got = m_step(st, &data).unwrap();
        let want = m_step_by_expansion(&data, &st.m, &st.sigma2, &st.eta, &st.r_hl);
        assert!((got.tau - want.tau).abs() <= 1e-12 * want.tau, "{} vs {}", got.tau, want.tau);
        assert!((got.zeta1 - want.zeta1).abs() <= 1e-12);
        assert!((got.zeta2 - want.zeta2).abs() <= 1e-12);
    }
}

#[test]
fn m_step_examples() {
    // Three coefficients over two genes of one pathway.
    let layout = PathwayLayout::new(vec![vec![0, 1]], 2).unwrap();
    let x = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0];
    let y = vec![1.0, 2.0, 3.5, 0.5];
    let data = SurvivalDataset::from_gene_matrix(layout, &x, y.clone(), vec![true; 4]).unwrap();
    let mut e = Engine::new(&data, Hyperparams::default(), FitConfig::default()).unwrap();
    for (j, p) in [1.0, 0.0, 0.5].into_iter().enumerate() {
        e.set_eta(j, p);
    }
    e.set_r_hl(0, 1.0);
    assert_eq!(m_step(e.state(), &data).unwrap().zeta1, 0.5);
    assert_eq!(m_step(e.state(), &data).unwrap().zeta2, 1.0 - 1e-8);

    // Least-squares means with vanishing variances give n over the RSS.
    let cols: Vec<Vec<f64>> = (0..3).map(|j| data.interaction_column(j).unwrap()).collect();
    let ls = least_squares(&cols, &y);
    for (j, &w) in ls.iter().enumerate() {
        e.set_mean(j, w);
        e.set_variance(j, 1e-300);
    }
    let rss: f64 = (0..4)
        .map(|i| {
            let f: f64 = cols.iter().zip(&ls).map(|(c, w)| c[i] * w).sum();
            (y[i] - f).powi(2)
        })
        .sum();
    let tau = m_step(e.state(), &data).unwrap().tau;
    assert!((tau - 4.0 / rss).abs() < 1e-9 * tau);
}

/// Normal equations solved by Gaussian elimination.
fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = cols.len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for r in 0..p {
        for c in 0..p {
            a[r][c] = cols[r].iter().zip(&cols[c]).map(|(u, v)| u * v).sum();
        }
        a[r][p] = cols[r].iter().zip(y).map(|(u, v)| u * v).sum();
    }
    for k in 0..p {
        let piv = (k..p).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, piv);
        for i in k + 1..p {
            let f = a[i][k] / a[k][k];
            for c in k..=p {
                a[i][c] -= f * a[k][c];
            }
        }
    }
    let mut w = vec![0.0; p];
    for k in (0..p).rev() {
        w[k] = (a[k][p] - (k + 1..p).map(|c| a[k][c] * w[c]).sum::<f64>()) / a[k][k];
    }
    w
}

#[test]
fn exact_tau_rule_maximizes_the_bound() {
    let data = instance(11, 60, 0.4);
    let mut e = Engine::new(&data, Hyperparams::default(), FitConfig::default()).unwrap();
    for _ in 0..3 {
        e.iterate().unwrap();
    }
    let tau = e.params().tau;
    let at = |t: f64| {
        let mut c = e.clone();
        c.set_params(ModelParams { tau: t, ..*e.params() }).unwrap();
        c.elbo().unwrap()
    };
    let h = 1e-6 * tau;
    assert!(((at(tau + h) - at(tau - h)) / (2.0 * h)).abs() < 1e-4);

    let observed = FitConfig { tau_rule: TauRule::ObservedOnly, ..FitConfig::default() };
    let mut o = Engine::new(&data, Hyperparams::default(), observed).unwrap();
    o.iterate().unwrap();
    assert_eq!(o.params().tau, m_step(o.state(), &data).unwrap().tau);
}

/// Uncensored `n = 100` data over four genes in two pathways (ten
/// coefficients) with strong planted effects.
fn oracle_instance(seed: u64) -> SurvivalDataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = PathwayLayout::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
    let n = 100;
    let x: Vec<f64> = (0..n * 4).map(|_| normal(&mut rng)).collect();
    let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let w0 = sign(&mut rng) * rng.random_range(1.5..2.5);
    let w2 = sign(&mut rng) * rng.random_range(1.5..2.5);
    let w02 = sign(&mut rng) * rng.random_range(1.5..2.5);
    let y = (0..n)
        .map(|i| {
            let r = &x[i * 4..(i + 1) * 4];
            w0 * r[0] + w2 * r[2] + w02 * r[0] * r[2] + normal(&mut rng)
        })
        .collect();
    SurvivalDataset::from_gene_matrix(layout, &x, y, vec![true; n]).unwrap()
}

#[test]
fn selections_agree_with_enumeration() {
    let hyper = Hyperparams::default();
    let mut agree = 0;
    for seed in 0..10 {
        let data = oracle_instance(seed);
        let r = fit(&data, &hyper, &FitConfig::default()).unwrap();
        let exact = exact_posterior_small(&data, &hyper, &r.params, data.index()).unwrap();
        let vb: Vec<usize> = select(&r, 0.5).selected_lower;
        let ex: Vec<usize> = (0..exact.eta.len()).filter(|&j| exact.eta[j] > 0.5).collect();
        if vb == ex {
            agree += 1;
        }
        for j in vb.iter().filter(|j| ex.contains(j)) {
            assert_eq!(r.state.m[*j].signum(), exact.mean[*j].signum(), "seed {seed}, coefficient {j}");
        }
    }
    assert!(agree >= 9, "{agree} of 10 agree");
}

#[test]
fn bound_never_exceeds_log_evidence() {
    let hyper = Hyperparams::with_spikes(1e-2, 1e-3).unwrap();
    for seed in 0..10 {
        let data = oracle_instance(50 + seed);
        let mut e = Engine::new(&data, hyper, FitConfig::default()).unwrap();
        let phi = ModelParams { tau: 0.9, zeta1: 0.3, zeta2: 0.4 };
        e.set_params(phi).unwrap();
        // E-steps only, so the parameters stay where the evidence is taken.
        for _ in 0..50 {
            for j in 0..e.state().m.len() {
                e.update_coordinate(j).unwrap();
            }
            for b in 0..e.state().r_hl.len() {
                e.update_alpha_block(b).unwrap();
            }
        }
        let bound = e.elbo().unwrap();
        let ev = exact_posterior_small(&data, &hyper, &phi, data.index()).unwrap().log_evidence;
        assert!(bound <= ev + 1e-9, "seed {seed}: bound {bound} above evidence {ev}");
    }
}

#[test]
fn bound_equals_evidence_when_the_posterior_is_gaussian() {
    // One gene: one coefficient in one block. With both indicators fixed at
    // one, the posterior of the coefficient is Gaussian and the bound at it
    // is the joint log density of the data and the indicators.
    let layout = PathwayLayout::new(vec![vec![0]], 1).unwrap();
    let x = vec![0.4, -1.3, 0.8, 2.1, -0.2];
    let y = vec![0.9, -2.0, 1.1, 3.9, 0.3];
    let data = SurvivalDataset::from_gene_matrix(layout, &x, y.clone(), vec![true; 5]).unwrap();
    let hyper = Hyperparams { r1: 2.0, r2: 0.01, s1: 0.5, s2: 0.02 };
    let phi = ModelParams { tau: 1.7, zeta1: 0.3, zeta2: 0.6 };
    let mut e = Engine::new(&data, hyper, FitConfig::default()).unwrap();
    e.set_params(phi).unwrap();
    let prior_prec = 1.0 / hyper.r1 + 1.0 / hyper.s1;
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let xy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let post_var = 1.0 / (phi.tau * xx + prior_prec);
    e.set_mean(0, post_var * phi.tau * xy);
    e.set_variance(0, post_var);
    e.set_eta(0, 1.0);
    e.set_r_hl(0, 1.0);

    // N(w|0,r1) N(w|0,s1) = N(0|0,r1+s1) N(w|0,v), and with w ~ N(0,v) the
    // data are N(0, I/τ + v x xᵀ).
    let v = 1.0 / prior_prec;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mismatch = -0.5 * (ln2pi + (hyper.r1 + hyper.s1).ln());
    // Sherman–Morrison for the inverse and the determinant.
    let c = v * phi.tau;
    let log_det = -(5.0 * phi.tau.ln()) + (1.0 + c * xx).ln();
    let yy: f64 = y.iter().map(|a| a * a).sum();
    let quad = phi.tau * yy - phi.tau * c * xy * xy / (1.0 + c * xx);
    let marginal = -0.5 * (5.0 * ln2pi + log_det + quad);
    let want = phi.zeta1.ln() + phi.zeta2.ln() + mismatch + marginal;
    let got = e.elbo().unwrap();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

/// Pure-noise data over the ten-gene layout.
fn null_instance(seed: u64) -> SurvivalDataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = PathwayLayout::new(vec![vec![0, 1, 2, 3], vec![3, 4, 5, 6], vec![7, 8, 9]], 10).unwrap();
    let n = 100;
    let x: Vec<f64> = (0..n * 10).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let (time, delta) = censor_at(&y, 0.2, &mut rng);
    SurvivalDataset::from_gene_matrix(layout, &x, time, delta).unwrap()
}

#[test]
fn zero_signal_selects_nothing() {
    let clean = (0..20)
        .filter(|&seed| {
            let r = fit(&null_instance(seed), &Hyperparams::default(), &FitConfig::default()).unwrap();
            r.converged && r.state.eta.iter().chain(&r.state.r_hl).all(|&p| p < 0.5)
        })
        .count();
    assert!(clean >= 18, "{clean} of 20 null fits are clean");
}

#[test]
fn planted_strong_main_effect_is_found() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, p) = (200, 20);
    let layout = PathwayLayout::new((0..4).map(|k| (5 * k..5 * k + 5).collect()).collect(), p).unwrap();
    let x: Vec<f64> = (0..n * p).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|i| x[i * p + 6] + normal(&mut rng)).collect();
    let data = SurvivalDataset::from_gene_matrix(layout, &x, y, vec![true; n]).unwrap();
    let r = fit(&data, &Hyperparams::default(), &FitConfig::default()).unwrap();
    let map = data.index();
    let j = map.flatten(CoefficientIndex::Main { k: 1, j: 1 }).unwrap();
    assert!(r.state.eta[j] > 0.9, "eta = {}", r.state.eta[j]);
    let b = map.block_id(1, 1).unwrap();
    assert!(r.state.r_hl[b] > 0.9, "r = {}", r.state.r_hl[b]);
    assert!((r.state.m[j] - 1.0).abs() < 0.2);
}

#[test]
fn ridge_limit_recovers_least_squares() {
    let layout = PathwayLayout::new(vec![vec![0]], 1).unwrap();
    let x = vec![0.5, -0.5, 0.5, -0.5];
    let y = vec![1.0, -0.6, 1.4, -1.2];
    let data = SurvivalDataset::from_gene_matrix(layout, &x, y.clone(), vec![true; 4]).unwrap();
    let hyper = Hyperparams { r1: 1e8, r2: 0.999e8, s1: 1e8, s2: 0.999e8 };
    let mut e = Engine::new(&data, hyper, FitConfig::default()).unwrap();
    e.update_coordinate(0).unwrap();
    let tau = e.params().tau;
    let ls: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
    assert!((e.state().m[0] - ls).abs() < 1e-6);
    let (eta, r) = (e.state().eta[0], e.state().r_hl[0]);
    let prec = eta / hyper.r1 + (1.0 - eta) / hyper.r2 + r / hyper.s1 + (1.0 - r) / hyper.s2;
    assert!((e.state().sigma2[0] - 1.0 / (tau + prec)).abs() < 1e-15);
    assert!((e.state().sigma2[0] - 1.0 / tau).abs() < 1e-6);
}

#[test]
fn indicator_without_coefficient_evidence() {
    // The column is orthogonal to the outcomes, so the mean stays at zero.
    let layout = PathwayLayout::new(vec![vec![0]], 1).unwrap();
    let x = vec![1.0, -1.0, 1.0, -1.0];
    let y = vec![1.0, 1.0, -1.0, -1.0];
    let data = SurvivalDataset::from_gene_matrix(layout, &x, y, vec![true; 4]).unwrap();
    let hyper = Hyperparams { r1: 1.0, r2: 0.01, s1: 1.0, s2: 0.05 };
    let config = FitConfig { coordinate_rule: CoordinateRule::Sequential, ..FitConfig::default() };
    let mut e = Engine::new(&data, hyper, config).unwrap();
    e.set_params(ModelParams { tau: 2.0, zeta1: 0.2, zeta2: 0.5 }).unwrap();
    e.update_coordinate(0).unwrap();
    assert_eq!(e.state().m[0], 0.0);
    let s2: f64 = 1.0 / (2.0 * 4.0 + 0.5 / 1.0 + 0.5 / 0.01 + 1.0 / 1.0);
    assert!((e.state().sigma2[0] - s2).abs() < 1e-15);
    let expected = sigmoid(logit(0.2) + 0.5 * (0.01f64 / 1.0).ln() + 0.5 * (1.0 / 0.01 - 1.0) * s2);
    assert!((e.state().eta[0] - expected).abs() < 1e-14);
}

#[test]
fn block_indicator_limits() {
    let data = instance(3, 60, 0.0);
    let hyper = Hyperparams::with_spikes(1e-2, 1e-6).unwrap();
    let mut e = Engine::new(&data, hyper, FitConfig::default()).unwrap();
    let block = data.index().block(2).clone();
    for j in block.coefficients() {
        e.set_mean(j, 0.0);
        e.set_variance(j, 1e-12);
    }
    e.update_alpha_block(2).unwrap();
    let c0 = 0.5 * (1e-6f64).ln();
    let want = sigmoid(block.len() as f64 * c0);
    assert!((e.state().r_hl[2] - want).abs() < 1e-9);
    assert!(e.state().r_hl[2] < 1e-10);

    let j = block.coefficients().next().unwrap();
    e.set_mean(j, 30.0);
    e.update_alpha_block(2).unwrap();
    assert!(e.state().r_hl[2] > 1.0 - 1e-12);
}

fn censored_pair() -> SurvivalDataset<f64> {
    let layout = PathwayLayout::new(vec![vec![0]], 1).unwrap();
    SurvivalDataset::from_gene_matrix(layout, &[0.5, -1.0, 1.5, 0.2], vec![0.3, -0.8, 1.9, 0.0], vec![true, true, true, false])
        .unwrap()
}

#[test]
fn latent_update_examples() {
    let data = censored_pair();
    let mut e = Engine::new(&data, Hyperparams::default(), FitConfig::default()).unwrap();
    e.set_params(ModelParams { tau: 1.0, zeta1: 0.5, zeta2: 0.5 }).unwrap();
    // m = 0 puts the location at the bound c = 0.
    e.update_z(0).unwrap();
    let z = e.state().z_mean[0];
    assert!((z - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
    assert!((e.state().residual[3] - z).abs() < 1e-15);

    // A location far above the bound leaves the latent mean at the location.
    e.set_mean(0, 40.0);
    e.update_z(0).unwrap();
    assert!((e.state().z_mean[0] - 8.0).abs() < 1e-6);
    assert!(e.state().z_mean[0] > 0.0);
}

#[test]
fn single_precision_fit_tracks_double() {
    let data = oracle_instance(4);
    let r64 = fit(&data, &Hyperparams::default(), &FitConfig::default()).unwrap();
    let data32 = data.cast::<f32>();
    let r32 = fit(&data32, &Hyperparams::default(), &FitConfig::default()).unwrap();
    assert!(r32.elbo().is_finite());
    assert_eq!(select(&r64, 0.5).selected_lower, select(&r32, 0.5).selected_lower);
    for (a, b) in r64.state.m.iter().zip(&r32.state.m) {
        assert!((a - *b as f64).abs() < 1e-3 * (1.0 + a.abs()));
    }
}

#[test]
fn selection_hierarchy_holds_softly() {
    let hyper = Hyperparams::with_spikes(1e-4, 1e-4).unwrap();
    let mut pass = 0;
    let total = 40;
    for seed in 0..total {
        let data = instance(500 + seed, 150, 0.2);
        let r = fit(&data, &hyper, &FitConfig::default()).unwrap();
        let map = data.index();
        let st = &r.state;
        let blocks_ok = map.blocks().iter().enumerate().all(|(b, block)| {
            let top = block.coefficients().map(|j| st.eta[j]).fold(0.0, f64::max);
            top <= 0.5 || st.r_hl[b] > 0.5
        });
        let parents_ok = (map.p()..map.len()).all(|j| {
            let (u, v) = map.columns(j);
            st.eta[j] <= 0.5 || (st.eta[u] > 0.5 && st.eta[v] > 0.5)
        });
        if blocks_ok && parents_ok {
            pass += 1;
        }
    }
    assert!(pass * 100 >= 95 * total, "{pass} of {total}");
}

#[test]
fn bound_is_invariant_to_pathway_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 30;
    let x: Vec<f64> = (0..n * 3).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|i| x[i * 3] - x[i * 3 + 2] + 0.5 * normal(&mut rng)).collect();
    let (time, delta) = censor_at(&y, 0.3, &mut rng);
    let a_layout = PathwayLayout::new(vec![vec![0, 1], vec![2]], 3).unwrap();
    let b_layout = PathwayLayout::new(vec![vec![2], vec![0, 1]], 3).unwrap();
    let a = SurvivalDataset::from_gene_matrix(a_layout, &x, time.clone(), delta.clone()).unwrap();
    let b = SurvivalDataset::from_gene_matrix(b_layout, &x, time, delta).unwrap();
    let relabel = |k: usize| 1 - k;
    let mut ea = Engine::new(&a, Hyperparams::default(), FitConfig::default()).unwrap();
    for _ in 0..5 {
        ea.iterate().unwrap();
    }
    let mut eb = Engine::new(&b, Hyperparams::default(), FitConfig::default()).unwrap();
    eb.set_params(*ea.params()).unwrap();
    let (ma, mb) = (a.index(), b.index());
    for flat in 0..ma.len() {
        let target = match ma.unflatten(flat).unwrap() {
            CoefficientIndex::Main { k, j } => CoefficientIndex::Main { k: relabel(k), j },
            CoefficientIndex::Interaction { k, k2, j, l } => {
                let (nk, nk2) = (relabel(k), relabel(k2));
                if nk <= nk2 {
                    CoefficientIndex::Interaction { k: nk, k2: nk2, j, l }
                } else {
                    CoefficientIndex::Interaction { k: nk2, k2: nk, j: l, l: j }
                }
            }
        };
        let to = mb.flatten(target).unwrap();
        eb.set_mean(to, ea.state().m[flat]);
        eb.set_variance(to, ea.state().sigma2[flat]);
        eb.set_eta(to, ea.state().eta[flat]);
    }
    for (id, block) in ma.blocks().iter().enumerate() {
        let (k, k2) = (relabel(block.k).min(relabel(block.k2)), relabel(block.k).max(relabel(block.k2)));
        eb.set_r_hl(mb.block_id(k, k2).unwrap(), ea.state().r_hl[id]);
    }
    for ci in 0..ea.state().censored.len() {
        ea.update_z(ci).unwrap();
        eb.update_z(ci).unwrap();
    }
    let (la, lb) = (ea.elbo().unwrap(), eb.elbo().unwrap());
    assert!((la - lb).abs() < 1e-9 * la.abs(), "{la} vs {lb}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coordinate_updates_never_lower_the_bound(seed in 0u64..10_000, censor in 0.0f64..0.6) {
        let data = instance(seed, 40, censor);
        let mut e = Engine::new(&data, Hyperparams::default(), FitConfig::default()).unwrap();
        e.iterate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pc = e.state().m.len();
        for _ in 0..200 {
            let before = e.elbo().unwrap();
            let j = rng.random_range(0..pc);
            e.update_coordinate(j).unwrap();
            prop_assert!(e.elbo().unwrap() - before >= -1e-8);
        }
    }

    #[test]
    fn observer_sees_every_update_in_order(seed in 0u64..1000) {
        let data = instance(seed, 30, 0.3);
        let mut e = Engine::new(&data, Hyperparams::default(), FitConfig::default()).unwrap();
        let mut steps = Vec::new();
        e.iterate_with(|s, _| { steps.push(s); Ok(()) }).unwrap();
        let nc = data.n() - data.n_events();
        let pc = data.index().len();
        let nb = data.index().blocks().len();
        prop_assert_eq!(steps.len(), nc + pc + nb + 1);
        prop_assert_eq!(steps[nc], Step::Coefficient(0));
        prop_assert_eq!(*steps.last().unwrap(), Step::MStep);
    }
}

#[test]
fn engine_accepts_shared_layouts() {
    let data = instance(1, 20, 0.0);
    let again = SurvivalDataset::from_columns(
        Arc::clone(data.layout_arc()),
        data.x_col_major().to_vec(),
        data.time().to_vec(),
        data.delta().to_vec(),
    )
    .unwrap();
    let a = fit(&data, &Hyperparams::default(), &FitConfig::default()).unwrap();
    let b = fit(&again, &Hyperparams::default(), &FitConfig::default()).unwrap();
    assert_eq!(a, b);
}
