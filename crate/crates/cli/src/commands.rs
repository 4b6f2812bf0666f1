use std::path::{Path, PathBuf};

use pathvb::metrics::{risk_scores, UnoOptions};
use pathvb::selection::GridPoint;
use pathvb::simgen::{generate_replicate, CensoringLaw, GroundTruth, ScenarioSpec};
use pathvb::{rsse, select, tp_fp, tune, uno_c, Dataset, EvalReport, Fit, Hyper, Params};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{
    assemble, gene_ids, gene_table, pathway_ids, read_covariates, read_json, read_membership, read_outcomes, write_covariates,
    write_json, write_membership, write_outcomes, Document, InputHash, LayoutDoc,
};
use crate::screen::{score_genes, GeneScore, NullFit};

fn required<'a>(v: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    v.as_deref().ok_or_else(|| CliError::Config(format!("missing {what}")))
}

struct Training {
    data: Dataset,
    layout: LayoutDoc,
    inputs: Vec<InputHash>,
}

fn load_training(cfg: &RunConfig) -> CliResult<Training> {
    let cov_path = required(&cfg.data.covariates, "covariates path (--covariates or [data].covariates)")?;
    let mem_path = required(&cfg.data.membership, "membership path (--membership or [data].membership)")?;
    let out_path = required(&cfg.data.outcomes, "outcomes path (--outcomes or [data].outcomes)")?;
    let table = read_covariates(cov_path)?;
    let pairs = read_membership(mem_path)?;
    let outcomes = read_outcomes(out_path)?;
    let layout = LayoutDoc::from_membership(mem_path, &pairs, &table.genes)?;
    let mut data = assemble(&layout, &table, &outcomes, cov_path)?;
    if cfg.data.standardize {
        data = data.standardized();
    }
    let inputs = vec![
        InputHash::of("covariates", cov_path)?,
        InputHash::of("membership", mem_path)?,
        InputHash::of("outcomes", out_path)?,
    ];
    Ok(Training { data, layout, inputs })
}

fn fit_config(cfg: &RunConfig) -> CliResult<pathvb::FitConfig> {
    let fc = cfg.fit;
    fc.validate()?;
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(CliError::Config("threshold must lie in (0, 1)".into()));
    }
    Ok(fc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionDoc {
    pub threshold: f64,
    pub lower: Vec<usize>,
    pub lower_labels: Vec<String>,
    pub higher: Vec<usize>,
    pub higher_labels: Vec<String>,
    /// Posterior means on selected coefficients, zero elsewhere.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningDoc {
    pub best_index: usize,
    pub table: Vec<GridPoint<f64>>,
}

/// Result of `fit` and `tune`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutput {
    pub layout: LayoutDoc,
    pub n: usize,
    pub n_events: usize,
    pub hyper: Hyper,
    pub params: Params,
    pub converged: bool,
    pub iterations: usize,
    pub elbo: f64,
    pub elbo_trace: Vec<f64>,
    pub m: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub eta: Vec<f64>,
    pub r_hl: Vec<f64>,
    pub selection: SelectionDoc,
    pub tuning: Option<TuningDoc>,
}

fn fit_output(t: &Training, fit: &Fit, threshold: f64, tuning: Option<TuningDoc>) -> FitOutput {
    let map = t.data.index();
    let sel = select(fit, threshold);
    let st = &fit.state;
    FitOutput {
        layout: t.layout.clone(),
        n: t.data.n(),
        n_events: t.data.n_events(),
        hyper: fit.hyper,
        params: fit.params,
        converged: fit.converged,
        iterations: fit.iterations,
        elbo: fit.elbo(),
        elbo_trace: fit.elbo_trace.clone(),
        m: st.m.clone(),
        sigma2: st.sigma2.clone(),
        eta: st.eta.clone(),
        r_hl: st.r_hl.clone(),
        selection: SelectionDoc {
            threshold,
            lower_labels: sel.selected_lower.iter().map(|&j| t.layout.coefficient_label(map, j)).collect(),
            higher_labels: sel.selected_higher.iter().map(|&b| t.layout.block_label(map, b)).collect(),
            lower: sel.selected_lower,
            higher: sel.selected_higher,
            coefficients: sel.coefficients,
        },
        tuning,
    }
}

fn summary(out: &FitOutput) -> String {
    format!(
        "{} of {} coefficients and {} of {} blocks selected; ELBO {:.6} after {} iterations ({})",
        out.selection.lower.len(),
        out.m.len(),
        out.selection.higher.len(),
        out.r_hl.len(),
        out.elbo,
        out.iterations,
        if out.converged { "converged" } else { "not converged" }
    )
}

pub fn fit(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let fc = fit_config(cfg)?;
    let hyper = cfg.hyper.to_hyper()?;
    let t = load_training(cfg)?;
    let result = pathvb::fit(&t.data, &hyper, &fc)?;
    let output = fit_output(&t, &result, cfg.threshold, None);
    let line = summary(&output);
    write_json(out, &Document::new("fit", cfg, t.inputs, output))?;
    Ok(line)
}

pub fn tune_cmd(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let fc = fit_config(cfg)?;
    let base = cfg.hyper.to_hyper()?;
    let grid = cfg.grid.points()?;
    let t = load_training(cfg)?;
    let outcome = tune(&t.data, &grid, &base, &fc, cfg.grid.bic)?;
    let tuning = TuningDoc { best_index: outcome.best_index, table: outcome.table };
    let chosen = &tuning.table[tuning.best_index];
    let head = format!("chose s2 = {:e}, r2 = {:e}; ", chosen.s2, chosen.r2);
    let output = fit_output(&t, &outcome.best, cfg.threshold, Some(tuning));
    let line = head + &summary(&output);
    write_json(out, &Document::new("tune", cfg, t.inputs, output))?;
    Ok(line)
}

/// Contents of `truth.json` written by `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthOutput {
    pub scenario: String,
    pub spec: ScenarioSpec,
    pub replicate: u64,
    pub censoring: Option<CensoringLaw>,
    pub train_censored_fraction: f64,
    pub layout: LayoutDoc,
    pub truth: GroundTruth,
    pub active_labels: Vec<String>,
}

pub fn simulate(cfg: &RunConfig, out_dir: &Path) -> CliResult<String> {
    let spec = cfg.simulate.to_spec(cfg.seed)?;
    let rep = generate_replicate(&spec, cfg.simulate.replicate)?;
    let genes = gene_ids(rep.train.layout().n_genes());
    let layout = LayoutDoc::from_layout(rep.train.layout(), genes.clone(), pathway_ids(spec.k));
    let map = rep.train.index();
    let train_table = gene_table(&rep.train, &genes);
    let mut test_table = gene_table(&rep.test, &genes);
    test_table.subjects = (0..rep.test.n()).map(|i| format!("t{}", &test_table.subjects[i][1..])).collect();

    write_covariates(&out_dir.join("covariates.csv"), &train_table)?;
    write_outcomes(&out_dir.join("outcomes.csv"), &train_table.subjects, rep.train.time(), rep.train.delta())?;
    write_covariates(&out_dir.join("test_covariates.csv"), &test_table)?;
    write_outcomes(&out_dir.join("test_outcomes.csv"), &test_table.subjects, rep.test.time(), rep.test.delta())?;
    write_membership(&out_dir.join("membership.csv"), &layout)?;

    let truth = &rep.truth;
    let active_labels = truth
        .active_lower_main
        .iter()
        .chain(&truth.active_lower_inter)
        .map(|&j| layout.coefficient_label(map, j))
        .collect();
    let doc = TruthOutput {
        scenario: spec.label(),
        spec: spec.clone(),
        replicate: rep.replicate,
        censoring: rep.censoring,
        train_censored_fraction: rep.censoring_fraction(),
        layout,
        truth: rep.truth.clone(),
        active_labels,
    };
    write_json(&out_dir.join("truth.json"), &Document::new("simulate", cfg, Vec::new(), doc))?;
    Ok(format!(
        "{}: {} training and {} test subjects, {} genes in {} pathways ({} columns), {:.1}% censored",
        spec.label(),
        rep.train.n(),
        rep.test.n(),
        rep.train.layout().n_genes(),
        spec.k,
        rep.train.layout().p(),
        100.0 * rep.censoring_fraction()
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateOutput {
    pub report: EvalReport,
    pub horizon: Option<f64>,
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let e = &cfg.evaluate;
    let result_path = required(&e.result, "result path (--result or [evaluate].result)")?;
    let truth_path = required(&e.truth, "truth path (--truth or [evaluate].truth)")?;
    let result: Document<FitOutput> = read_json(result_path)?;
    let truth: Document<TruthOutput> = read_json(truth_path)?;
    let mut inputs = vec![InputHash::of("result", result_path)?, InputHash::of("truth", truth_path)?];
    let fit = result.result;
    if fit.layout != truth.result.layout {
        return Err(CliError::Data(format!(
            "{} and {} describe different pathway layouts",
            result_path.display(),
            truth_path.display()
        )));
    }
    let layout = fit.layout.to_layout()?;
    let map = pathvb::IndexMap::build(&layout)?;
    let sel = pathvb::Selection {
        selected_lower: fit.selection.lower.clone(),
        selected_higher: fit.selection.higher.clone(),
        coefficients: fit.selection.coefficients.clone(),
    };
    let counts = tp_fp(&sel, &truth.result.truth, &map)?;
    let (m_rsse, i_rsse) = rsse(&sel.coefficients, &truth.result.truth.w0, &map)?;

    let c_statistic = match (&e.train_outcomes, &e.test_covariates, &e.test_outcomes) {
        (Some(train_path), Some(cov_path), Some(test_path)) => {
            let train = read_outcomes(train_path)?;
            let table = read_covariates(cov_path)?;
            let test_out = read_outcomes(test_path)?;
            let test = assemble(&fit.layout, &table, &test_out, cov_path)?;
            inputs.push(InputHash::of("train_outcomes", train_path)?);
            inputs.push(InputHash::of("test_covariates", cov_path)?);
            inputs.push(InputHash::of("test_outcomes", test_path)?);
            let risk = risk_scores(&test, &sel.coefficients);
            Some(uno_c(
                (&train.log_time, &train.delta),
                (test.time(), test.delta()),
                &risk,
                UnoOptions { horizon: e.horizon },
            )?)
        }
        (None, None, None) => None,
        _ => {
            return Err(CliError::Config(
                "the C-statistic needs train_outcomes, test_covariates and test_outcomes together".into(),
            ))
        }
    };
    let report = EvalReport {
        lm_tp: counts.lm_tp,
        lm_fp: counts.lm_fp,
        li_tp: counts.li_tp,
        li_fp: counts.li_fp,
        hm_tp: counts.hm_tp,
        hm_fp: counts.hm_fp,
        hi_tp: counts.hi_tp,
        hi_fp: counts.hi_fp,
        m_rsse,
        i_rsse,
        c_statistic,
    };
    let line = format!(
        "L-M {}/{}  L-I {}/{}  H-M {}/{}  H-I {}/{}  M:RSSE {:.4}  I:RSSE {:.4}  C {}",
        report.lm_tp,
        report.lm_fp,
        report.li_tp,
        report.li_fp,
        report.hm_tp,
        report.hm_fp,
        report.hi_tp,
        report.hi_fp,
        report.m_rsse,
        report.i_rsse,
        report.c_statistic.map_or("n/a".into(), |c| format!("{c:.4}"))
    );
    write_json(out, &Document::new("evaluate", cfg, inputs, EvaluateOutput { report, horizon: e.horizon }))?;
    Ok(line)
}

/// Metric names in table order.
pub const METRICS: [&str; 11] = [
    "L-M:TP", "L-M:FP", "L-I:TP", "L-I:FP", "H-M:TP", "H-M:FP", "H-I:TP", "H-I:FP", "M:RSSE", "I:RSSE", "C",
];

fn metric_values(r: &EvalReport) -> [f64; 11] {
    [
        r.lm_tp as f64,
        r.lm_fp as f64,
        r.li_tp as f64,
        r.li_fp as f64,
        r.hm_tp as f64,
        r.hm_fp as f64,
        r.hi_tp as f64,
        r.hi_fp as f64,
        r.m_rsse,
        r.i_rsse,
        r.c_statistic.unwrap_or(f64::NAN),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRun {
    pub replicate: u64,
    pub s2: f64,
    pub r2: f64,
    pub censored_fraction: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: String,
    pub spec: ScenarioSpec,
    pub reps: usize,
    pub successes: usize,
    pub failures: Vec<(u64, String)>,
    pub metrics: Vec<String>,
    pub mean: Vec<Option<f64>>,
    pub sd: Vec<Option<f64>>,
    /// `mean(SD)` per metric, two decimals.
    pub row: Vec<String>,
    pub runs: Vec<ReplicateRun>,
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    let xs: Vec<f64> = xs.iter().copied().filter(|v| v.is_finite()).collect();
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

pub fn run_cell(spec: &ScenarioSpec, reps: usize, cfg: &RunConfig) -> CliResult<CellSummary> {
    let fc = fit_config(cfg)?;
    let base = cfg.hyper.to_hyper()?;
    let grid = cfg.grid.points()?;
    let outcomes: Vec<Result<ReplicateRun, String>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let rep = generate_replicate(spec, r).map_err(|e| e.to_string())?;
            let t = tune(&rep.train, &grid, &base, &fc, cfg.grid.bic).map_err(|e| e.to_string())?;
            let sel = select(&t.best, cfg.threshold);
            let report = pathvb::evaluate(&sel, &rep.truth, &rep.train, Some(&rep.test)).map_err(|e| e.to_string())?;
            Ok(ReplicateRun {
                replicate: r,
                s2: t.best.hyper.s2,
                r2: t.best.hyper.r2,
                censored_fraction: rep.censoring_fraction(),
                report,
            })
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(run) => runs.push(run),
            Err(e) => failures.push((r as u64, e)),
        }
    }
    let columns: Vec<[f64; 11]> = runs.iter().map(|r| metric_values(&r.report)).collect();
    let (mut mean, mut sd, mut row) = (Vec::new(), Vec::new(), Vec::new());
    for m in 0..METRICS.len() {
        let xs: Vec<f64> = columns.iter().map(|c| c[m]).collect();
        let (mu, s) = mean_sd(&xs);
        row.push(match (mu, s) {
            (Some(mu), Some(s)) => format!("{mu:.2}({s:.2})"),
            _ => "n/a".into(),
        });
        mean.push(mu);
        sd.push(s);
    }
    Ok(CellSummary {
        scenario: spec.label(),
        spec: spec.clone(),
        reps,
        successes: runs.len(),
        failures,
        metrics: METRICS.iter().map(|s| s.to_string()).collect(),
        mean,
        sd,
        row,
        runs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateOutput {
    pub cells: Vec<CellSummary>,
}

pub fn replicate(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    if cfg.replicate.reps == 0 {
        return Err(CliError::Config("reps must be positive".into()));
    }
    let scenarios = if cfg.replicate.scenarios.is_empty() {
        vec![cfg.simulate.clone()]
    } else {
        cfg.replicate.scenarios.clone()
    };
    let specs = scenarios.iter().map(|s| s.to_spec(cfg.seed)).collect::<CliResult<Vec<_>>>()?;
    let cells = specs
        .iter()
        .map(|spec| run_cell(spec, cfg.replicate.reps, cfg))
        .collect::<CliResult<Vec<_>>>()?;
    let mut table = format!("{:<32} {}\n", "scenario", METRICS.map(|m| format!("{m:>13}")).join(""));
    for c in &cells {
        let fails = if c.failures.is_empty() { String::new() } else { format!("  [{} failed]", c.failures.len()) };
        table += &format!("{:<32} {}{}\n", c.scenario, c.row.iter().map(|v| format!("{v:>13}")).collect::<String>(), fails);
    }
    write_json(out, &Document::new("replicate", cfg, Vec::new(), ReplicateOutput { cells }))?;
    Ok(table.trim_end().to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenOutput {
    pub null_model: NullFit,
    pub kept: Vec<String>,
    pub scores: Vec<GeneScore>,
}

pub fn screen(cfg: &RunConfig, out_dir: &Path) -> CliResult<String> {
    let cov_path = required(&cfg.data.covariates, "covariates path")?;
    let out_path = required(&cfg.data.outcomes, "outcomes path")?;
    if cfg.screen.top == 0 {
        return Err(CliError::Config("screen.top must be positive".into()));
    }
    let table = read_covariates(cov_path)?;
    let outcomes = read_outcomes(out_path)?;
    if table.subjects != outcomes.subjects {
        return Err(CliError::Data(format!(
            "{} and {} list different subjects",
            cov_path.display(),
            out_path.display()
        )));
    }
    let mut inputs = vec![InputHash::of("covariates", cov_path)?, InputHash::of("outcomes", out_path)?];
    let (null_model, scores) = score_genes(&table, &outcomes.log_time, &outcomes.delta)?;
    let keep: Vec<usize> = (0..scores.len()).filter(|&c| scores[c].rank <= cfg.screen.top).collect();
    let kept_table = table.select_genes(&keep);
    write_covariates(&out_dir.join("covariates.csv"), &kept_table)?;

    if let Some(mem_path) = &cfg.data.membership {
        let pairs = read_membership(mem_path)?;
        inputs.push(InputHash::of("membership", mem_path)?);
        let kept: std::collections::HashSet<&str> = kept_table.genes.iter().map(String::as_str).collect();
        let filtered: Vec<(String, String, u64)> = pairs.into_iter().filter(|(_, g, _)| kept.contains(g.as_str())).collect();
        if filtered.is_empty() {
            return Err(CliError::Data("no membership pair survives the screen".into()));
        }
        let layout = LayoutDoc::from_membership(mem_path, &filtered, &kept_table.genes)?;
        write_membership(&out_dir.join("membership.csv"), &layout)?;
    }
    let line = format!("kept {} of {} genes", keep.len(), scores.len());
    let output = ScreenOutput { null_model, kept: kept_table.genes, scores };
    write_json(&out_dir.join("screen.json"), &Document::new("screen", cfg, inputs, output))?;
    Ok(line)
}
