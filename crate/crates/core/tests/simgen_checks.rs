use std::collections::BTreeSet;

use pathvb::simgen::{
    calibrate_censoring, gen_covariates, gen_effects, gen_layout, gene_correlation, generate_replicate, scenario_grid,
    Correlation, EffectPattern, GroundTruth, ScenarioSpec, SimLayout, ACTIVE_PATHWAYS, CONFOUNDER,
};
use pathvb::{CoefficientIndex, Error, IndexMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

/// Hierarchy and count violations found by walking pathway addresses.
fn audit(truth: &GroundTruth, map: &IndexMap) -> Vec<String> {
    let mut problems = Vec::new();
    let nonzero: BTreeSet<usize> = (0..truth.w0.len()).filter(|&j| truth.w0[j] != 0.0).collect();
    let listed: BTreeSet<usize> = truth.active_lower_main.iter().chain(&truth.active_lower_inter).copied().collect();
    if nonzero != listed {
        problems.push("nonzero coefficients differ from the listed actives".into());
    }
    let mut mains = BTreeSet::new();
    let mut inters = Vec::new();
    for &j in &nonzero {
        match map.unflatten(j).unwrap() {
            CoefficientIndex::Main { k, j } => {
                mains.insert((k, j));
            }
            CoefficientIndex::Interaction { k, k2, j, l } => inters.push((k, k2, j, l)),
        }
    }
    let mut blocks = BTreeSet::new();
    for &(k, _) in &mains {
        blocks.insert((k, k));
    }
    for &(k, k2, j, l) in &inters {
        if !mains.contains(&(k, j)) || !mains.contains(&(k2, l)) {
            problems.push(format!("interaction ({k},{k2},{j},{l}) lacks an active parent"));
        }
        blocks.insert((k, k2));
    }
    let active_blocks: BTreeSet<(usize, usize)> = truth
        .active_higher_main
        .iter()
        .chain(&truth.active_higher_inter)
        .map(|&b| (map.block(b).k, map.block(b).k2))
        .collect();
    if !blocks.is_subset(&active_blocks) {
        problems.push("active coefficient outside an active block".into());
    }
    if mains.len() != 20 || inters.len() != 24 {
        problems.push(format!("{} mains and {} interactions", mains.len(), inters.len()));
    }
    if truth.active_higher_main.len() != 4 || truth.active_higher_inter.len() != 2 {
        problems.push("wrong number of active blocks".into());
    }
    if truth.active_higher_main.iter().any(|&b| !map.block(b).is_pathway())
        || truth.active_higher_inter.iter().any(|&b| map.block(b).is_pathway())
    {
        problems.push("block kinds swapped".into());
    }
    if nonzero.iter().any(|&j| !(0.8..=1.2).contains(&truth.w0[j].abs())) {
        problems.push("magnitude outside [0.8, 1.2]".into());
    }
    problems
}

fn layout_and_truth(spec: &ScenarioSpec, seed: u64) -> (SimLayout, IndexMap, GroundTruth) {
    let sim = gen_layout(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let map = IndexMap::build(&sim.layout).unwrap();
    let truth = gen_effects(spec.effect_pattern, &sim, &map, &mut ChaCha8Rng::seed_from_u64(seed + 1)).unwrap();
    (sim, map, truth)
}

#[test]
fn grid_covers_forty_two_scenarios_and_all_pass_the_audit() {
    let grid = scenario_grid(3);
    assert_eq!(grid.len(), 42);
    let labels: BTreeSet<String> = grid.iter().map(|s| s.label()).collect();
    assert_eq!(labels.len(), 42);
    grid.par_iter().enumerate().for_each(|(i, spec)| {
        let (sim, map, truth) = layout_and_truth(spec, i as u64);
        let problems = audit(&truth, &map);
        assert!(problems.is_empty(), "{}: {problems:?}", spec.label());
        assert_eq!(sim.layout.n_genes(), 1000);
        let p = sim.layout.p();
        let (lo, hi) = spec.size_range;
        assert!((spec.k * lo..=spec.k * hi).contains(&p));
        let shared = (0..1000)
            .filter(|g| sim.layout.pathways().iter().filter(|pw| pw.contains(g)).count() > 1)
            .count();
        assert_eq!(shared, 22);
    });
}

#[test]
fn sign_patterns() {
    let base = |pattern| ScenarioSpec::standard(100, Correlation::Ar { rho: 0.6 }, pattern, Some(0.2), 8);
    let (_, _, s1) = layout_and_truth(&base(EffectPattern::S1), 1);
    assert!(s1.w0.iter().all(|&w| w >= 0.0));
    assert!(s1.w0.iter().filter(|&&w| w != 0.0).fold(f64::INFINITY, |a, &b| a.min(b)) >= 0.8);

    let (_, map, s2) = layout_and_truth(&base(EffectPattern::S2), 1);
    let neg_blocks: BTreeSet<usize> = (0..s2.w0.len()).filter(|&j| s2.w0[j] < 0.0).map(|j| map.block_of(j)).collect();
    assert_eq!(neg_blocks.len(), 2);
    let kinds: Vec<bool> = neg_blocks.iter().map(|&b| map.block(b).is_pathway()).collect();
    assert!(kinds.contains(&true) && kinds.contains(&false));
    for &b in &neg_blocks {
        assert!(map.block(b).coefficients().all(|j| s2.w0[j] <= 0.0));
    }

    let (_, _, s3) = layout_and_truth(&base(EffectPattern::S3), 1);
    let negatives = s3.w0.iter().filter(|&&w| w < 0.0).count();
    assert!(negatives > 5 && negatives < 39, "{negatives} negative of 44");
}

#[test]
fn singular_confounded_scenario_is_refused() {
    let spec = ScenarioSpec::standard(50, Correlation::Cr2, EffectPattern::S1, Some(0.2), 1);
    assert!(matches!(generate_replicate(&spec, 0), Err(Error::Config(_))));
}

#[test]
fn covariates_match_target_correlations() {
    for corr in [Correlation::Ar { rho: 0.6 }, Correlation::Cr1] {
        let spec = ScenarioSpec::standard(100, corr, EffectPattern::S1, Some(0.2), 4);
        let sim = gen_layout(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let n = 5000;
        let g = sim.layout.n_genes();
        let x = gen_covariates(corr, &sim, n, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let col = |h: usize| -> Vec<f64> { (0..n).map(|i| x[i * g + h]).collect() };
        let cols: Vec<Vec<f64>> = (0..g).map(col).collect();
        let empirical = |a: usize, b: usize| -> f64 {
            let (u, v) = (&cols[a], &cols[b]);
            let mu = u.iter().sum::<f64>() / n as f64;
            let mv = v.iter().sum::<f64>() / n as f64;
            let c: f64 = u.iter().zip(v).map(|(p, q)| (p - mu) * (q - mv)).sum();
            let su: f64 = u.iter().map(|p| (p - mu).powi(2)).sum();
            let sv: f64 = v.iter().map(|q| (q - mv).powi(2)).sum();
            c / (su * sv).sqrt()
        };
        for h in 0..g {
            let m = cols[h].iter().sum::<f64>() / n as f64;
            let var = cols[h].iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(m.abs() < 0.06 && (var - 1.0).abs() < 0.08, "gene {h}: mean {m}, variance {var}");
        }
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for k in 0..sim.layout.n_pathways() {
            let home: Vec<usize> = (0..g).filter(|&h| sim.home[h] == k).collect();
            for a in 0..home.len() {
                for b in a + 1..home.len() {
                    pairs.push((home[a], home[b]));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            pairs.push((rng.random_range(0..g), rng.random_range(0..g)));
        }
        if corr == Correlation::Cr1 {
            let active: Vec<usize> = (0..g).filter(|&h| sim.home[h] < ACTIVE_PATHWAYS).collect();
            let conf: Vec<usize> = (0..g).filter(|&h| sim.home[h] == CONFOUNDER).collect();
            for &a in &active {
                for &c in &conf {
                    pairs.push((a, c));
                }
            }
        }
        // With thousands of pairs a few 3.5σ deviations are expected, so
        // the band is asserted for nearly all pairs and a wider one for all.
        let pairs: Vec<(usize, usize)> = pairs.into_iter().filter(|(a, b)| a != b).collect();
        let mut outside = 0;
        let mut total_dev = 0.0;
        for &(a, b) in &pairs {
            let want = gene_correlation(corr, &sim, a, b);
            let dev = (empirical(a, b) - want).abs();
            assert!(dev < 0.08, "{}: genes {a},{b} target {want} off by {dev}", corr.label());
            outside += usize::from(dev >= 0.05);
            total_dev += dev;
        }
        assert!(outside * 1000 <= pairs.len(), "{outside} of {} pairs outside 0.05", pairs.len());
        assert!(total_dev / (pairs.len() as f64) < 0.015);
    }
}

#[test]
fn autoregressive_home_positions() {
    let spec = ScenarioSpec::standard(100, Correlation::Ar { rho: 0.6 }, EffectPattern::S1, None, 2);
    let sim = gen_layout(&spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let k = (0..100).find(|&k| sim.layout.pathway(k).iter().all(|&g| sim.home[g] == k)).unwrap();
    let genes = sim.layout.pathway(k);
    for (a, &g) in genes.iter().enumerate() {
        for (b, &h) in genes.iter().enumerate() {
            let want = 0.6f64.powi((a as i32 - b as i32).abs());
            assert!((gene_correlation(spec.correlation, &sim, g, h) - want).abs() < 1e-15);
        }
    }
    let other = (0..100).find(|&q| q != k && sim.layout.pathway(q).iter().all(|&g| sim.home[g] == q)).unwrap();
    assert_eq!(gene_correlation(spec.correlation, &sim, genes[0], sim.layout.pathway(other)[0]), 0.0);
}

/// Fraction of censored outcomes under `law`, from fresh draws.
fn realized_rate(mu: &[f64], scale: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(2.0, scale).unwrap();
    let censored = (0..draws)
        .filter(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let y = mu[rng.random_range(0..mu.len())] + e;
            y > gamma.sample(&mut rng).ln()
        })
        .count();
    censored as f64 / draws as f64
}

#[test]
fn calibration_hits_the_target() {
    let spec = ScenarioSpec::standard(100, Correlation::Ar { rho: 0.6 }, EffectPattern::S1, Some(0.2), 5);
    let rep = generate_replicate(&spec, 0).unwrap();
    let mu = rep.train.linear_predictor(&rep.truth.w0);
    let mut scales = Vec::new();
    for target in [0.2, 0.4] {
        let law = calibrate_censoring(&mu, target, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(law.shape, 2.0);
        let rate = realized_rate(&mu, law.scale, 100_000, 10);
        assert!((rate - target).abs() <= 0.01, "target {target}: realized {rate}");
        scales.push(law.scale);
    }
    assert!(scales[1] < scales[0]);

    let zero = vec![0.0; 400];
    let law = calibrate_censoring(&zero, 0.2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert!((realized_rate(&zero, law.scale, 100_000, 11) - 0.2).abs() <= 0.01);
    assert!(calibrate_censoring(&zero, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
}

#[test]
fn realized_censoring_over_fifty_replicates() {
    let spec = ScenarioSpec::standard(100, Correlation::Ar { rho: 0.6 }, EffectPattern::S1, Some(0.2), 6);
    let fractions: Vec<f64> = (0..50u64)
        .into_par_iter()
        .map(|r| generate_replicate(&spec, r).unwrap().censoring_fraction())
        .collect();
    let mean = fractions.iter().sum::<f64>() / 50.0;
    assert!((0.15..=0.25).contains(&mean), "mean censoring {mean}");
}

#[test]
fn replicates_are_reproducible_and_consistent() {
    let spec = ScenarioSpec::small(120, 6, 8, Correlation::Cr1, EffectPattern::S3, Some(0.4), 12);
    let a = generate_replicate(&spec, 3).unwrap();
    let b = generate_replicate(&spec, 3).unwrap();
    assert_eq!(a.train.time(), b.train.time());
    assert_eq!(a.train.x_col_major(), b.train.x_col_major());
    assert_eq!(a.truth, b.truth);
    let c = generate_replicate(&spec, 4).unwrap();
    assert_ne!(a.train.time(), c.train.time());

    let r = &a.train_response;
    for i in 0..r.y.len() {
        assert_eq!(r.delta[i], r.y[i] <= r.time[i]);
        assert!(r.time[i] <= r.y[i]);
    }
    assert_eq!(a.test.n(), spec.n_test);

    let open = ScenarioSpec { censor_rate: None, ..spec };
    let d = generate_replicate(&open, 0).unwrap();
    assert!(d.train.delta().iter().all(|&v| v));
    assert_eq!(d.train.time(), &d.train_response.y[..]);
}

#[test]
fn response_noise_has_unit_variance() {
    let spec = ScenarioSpec::small(4000, 6, 8, Correlation::Ar { rho: 0.4 }, EffectPattern::S1, None, 13);
    let e: Vec<f64> = (0..10u64)
        .into_par_iter()
        .flat_map_iter(|r| {
            let rep = generate_replicate(&spec, r).unwrap();
            let mu = rep.train.linear_predictor(&rep.truth.w0);
            rep.train_response.y.iter().zip(&mu).map(|(y, m)| y - m).collect::<Vec<_>>()
        })
        .collect();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (e.len() - 1) as f64;
    assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.03, "{mean} {var}");
}
