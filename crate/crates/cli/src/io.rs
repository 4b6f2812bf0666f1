//! Delimited-text data formats, JSON documents and atomic file output.
//!
//! Covariates: header `subject_id,<gene>...`, one row per subject.
//! Membership: header `pathway_id,gene_id`, one row per pair; pathways keep
//! the order of their first appearance and genes their listed order.
//! Outcomes: header `subject_id,time,status`, times on the original scale
//! (logged at load), status 1 for an observed event and 0 for censoring.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use pathvb::{Dataset, PathwayLayout};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Seventeen significant digits, enough to recover every `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Config(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

impl InputHash {
    pub fn of(role: &str, path: &Path) -> CliResult<Self> {
        Ok(InputHash {
            role: role.into(),
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Envelope shared by every JSON output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document<T> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<InputHash>,
    pub result: T,
}

impl<T> Document<T> {
    pub fn new(command: &str, config: &RunConfig, inputs: Vec<InputHash>, result: T) -> Self {
        Document {
            tool: "pathvb".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            inputs,
            result,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(format!("serializing output: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::schema(path, e.line() as u64, "document", e.to_string()))
}

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(f))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    CliError::schema(path, line, "record", e.to_string())
}

fn header(path: &Path, rdr: &mut csv::Reader<File>) -> CliResult<Vec<String>> {
    Ok(rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect())
}

fn expect_header(path: &Path, got: &[String], want: &[&str]) -> CliResult<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(a, b)| a != b) {
        return Err(CliError::schema(path, 1, "header", format!("expected `{}`, found `{}`", want.join(","), got.join(","))));
    }
    Ok(())
}

/// Subjects by genes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneTable {
    pub subjects: Vec<String>,
    pub genes: Vec<String>,
    pub values: Vec<f64>,
}

impl GeneTable {
    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Keeps the listed gene columns in the given order.
    pub fn select_genes(&self, cols: &[usize]) -> GeneTable {
        let g = self.genes.len();
        let mut values = Vec::with_capacity(self.n() * cols.len());
        for i in 0..self.n() {
            values.extend(cols.iter().map(|&c| self.values[i * g + c]));
        }
        GeneTable {
            subjects: self.subjects.clone(),
            genes: cols.iter().map(|&c| self.genes[c].clone()).collect(),
            values,
        }
    }
}

pub fn read_covariates(path: &Path) -> CliResult<GeneTable> {
    let mut rdr = reader(path)?;
    let head = header(path, &mut rdr)?;
    if head.first().map(String::as_str) != Some("subject_id") || head.len() < 2 {
        return Err(CliError::schema(path, 1, "header", "expected `subject_id` followed by at least one gene id"));
    }
    let genes: Vec<String> = head[1..].to_vec();
    let mut seen = HashMap::new();
    for (c, g) in genes.iter().enumerate() {
        if seen.insert(g.as_str(), c).is_some() {
            return Err(CliError::schema(path, 1, g, "duplicate gene id"));
        }
    }
    let mut subjects = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        subjects.push(rec[0].to_string());
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::schema(path, line, &genes[c], format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(CliError::schema(path, line, &genes[c], "value is not finite"));
            }
            values.push(v);
        }
    }
    if subjects.is_empty() {
        return Err(CliError::schema(path, 2, "subject_id", "no subjects"));
    }
    Ok(GeneTable { subjects, genes, values })
}

pub fn write_covariates(path: &Path, table: &GeneTable) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(std::iter::once("subject_id").chain(table.genes.iter().map(String::as_str)))
        .map_err(csv_err)?;
    let g = table.genes.len();
    for (i, s) in table.subjects.iter().enumerate() {
        let row = table.values[i * g..(i + 1) * g].iter().map(|&v| fmt_f64(v));
        w.write_record(std::iter::once(s.clone()).chain(row)).map_err(csv_err)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)
}

/// `(pathway_id, gene_id)` pairs with the line each came from.
pub fn read_membership(path: &Path) -> CliResult<Vec<(String, String, u64)>> {
    let mut rdr = reader(path)?;
    let head = header(path, &mut rdr)?;
    expect_header(path, &head, &["pathway_id", "gene_id"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((rec[0].to_string(), rec[1].to_string(), line));
    }
    if out.is_empty() {
        return Err(CliError::schema(path, 2, "pathway_id", "no membership pairs"));
    }
    Ok(out)
}

pub fn write_membership(path: &Path, layout: &LayoutDoc) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["pathway_id", "gene_id"]).map_err(csv_err)?;
    for p in &layout.pathways {
        for g in &p.genes {
            w.write_record([&p.id, g]).map_err(csv_err)?;
        }
    }
    write_atomic(path, &w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)
}

/// Subject ids, log-times and event indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcomes {
    pub subjects: Vec<String>,
    pub log_time: Vec<f64>,
    pub delta: Vec<bool>,
}

pub fn read_outcomes(path: &Path) -> CliResult<Outcomes> {
    let mut rdr = reader(path)?;
    let head = header(path, &mut rdr)?;
    expect_header(path, &head, &["subject_id", "time", "status"])?;
    let mut out = Outcomes { subjects: Vec::new(), log_time: Vec::new(), delta: Vec::new() };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let t: f64 = rec[1]
            .parse()
            .map_err(|_| CliError::schema(path, line, "time", format!("`{}` is not a number", &rec[1])))?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::schema(path, line, "time", format!("time must be positive and finite, got {t}")));
        }
        let d = match &rec[2] {
            "1" => true,
            "0" => false,
            other => return Err(CliError::schema(path, line, "status", format!("status must be 0 or 1, got `{other}`"))),
        };
        out.subjects.push(rec[0].to_string());
        out.log_time.push(t.ln());
        out.delta.push(d);
    }
    if out.subjects.len() < 2 {
        return Err(CliError::schema(path, 2, "subject_id", "at least two subjects are required"));
    }
    Ok(out)
}

/// Writes outcomes given log-times, exponentiating back to the original scale.
pub fn write_outcomes(path: &Path, subjects: &[String], log_time: &[f64], delta: &[bool]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["subject_id", "time", "status"]).map_err(csv_err)?;
    for ((s, &y), &d) in subjects.iter().zip(log_time).zip(delta) {
        w.write_record([s.clone(), fmt_f64(y.exp()), if d { "1".into() } else { "0".into() }])
            .map_err(csv_err)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayDoc {
    pub id: String,
    pub genes: Vec<String>,
}

/// Named pathway layout; coefficient indices in every output follow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDoc {
    pub genes: Vec<String>,
    pub pathways: Vec<PathwayDoc>,
}

impl LayoutDoc {
    pub fn from_layout(layout: &PathwayLayout, genes: Vec<String>, pathway_ids: Vec<String>) -> Self {
        let pathways = layout
            .pathways()
            .iter()
            .zip(pathway_ids)
            .map(|(members, id)| PathwayDoc {
                id,
                genes: members.iter().map(|&g| genes[g].clone()).collect(),
            })
            .collect();
        LayoutDoc { genes, pathways }
    }

    /// Layout over the distinct genes that appear in membership pairs, in
    /// covariate column order.
    pub fn from_membership(path: &Path, pairs: &[(String, String, u64)], covariate_genes: &[String]) -> CliResult<Self> {
        let known: HashMap<&str, usize> = covariate_genes.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
        let mut order: Vec<String> = Vec::new();
        let mut members: HashMap<&str, Vec<String>> = HashMap::new();
        let mut used = vec![false; covariate_genes.len()];
        for (p, g, line) in pairs {
            let Some(&c) = known.get(g.as_str()) else {
                return Err(CliError::schema(path, *line, "gene_id", format!("gene `{g}` has no covariate column")));
            };
            used[c] = true;
            let list = members.entry(p.as_str()).or_insert_with(|| {
                order.push(p.clone());
                Vec::new()
            });
            if list.contains(g) {
                return Err(CliError::schema(path, *line, "gene_id", format!("gene `{g}` listed twice in pathway `{p}`")));
            }
            list.push(g.clone());
        }
        let genes = covariate_genes.iter().zip(&used).filter(|(_, &u)| u).map(|(g, _)| g.clone()).collect();
        let pathways = order
            .into_iter()
            .map(|id| {
                let genes = members.remove(id.as_str()).unwrap_or_default();
                PathwayDoc { id, genes }
            })
            .collect();
        Ok(LayoutDoc { genes, pathways })
    }

    pub fn to_layout(&self) -> CliResult<PathwayLayout> {
        let pos: HashMap<&str, usize> = self.genes.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
        let pathways = self
            .pathways
            .iter()
            .map(|p| {
                p.genes
                    .iter()
                    .map(|g| pos.get(g.as_str()).copied().ok_or_else(|| CliError::Data(format!("pathway `{}` lists unknown gene `{g}`", p.id))))
                    .collect::<CliResult<Vec<usize>>>()
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(PathwayLayout::new(pathways, self.genes.len())?)
    }

    /// Coefficient label: `P:g` for a main effect, `P:g*Q:h` for an interaction.
    pub fn coefficient_label(&self, map: &pathvb::IndexMap, flat: usize) -> String {
        use pathvb::CoefficientIndex as C;
        let name = |k: usize, j: usize| format!("{}:{}", self.pathways[k].id, self.pathways[k].genes[j]);
        match map.unflatten(flat) {
            Ok(C::Main { k, j }) => name(k, j),
            Ok(C::Interaction { k, k2, j, l }) => format!("{}*{}", name(k, j), name(k2, l)),
            Err(_) => format!("#{flat}"),
        }
    }

    pub fn block_label(&self, map: &pathvb::IndexMap, b: usize) -> String {
        let blk = map.block(b);
        if blk.k == blk.k2 {
            self.pathways[blk.k].id.clone()
        } else {
            format!("{}*{}", self.pathways[blk.k].id, self.pathways[blk.k2].id)
        }
    }
}

/// Builds a dataset whose genes follow `layout`, reading the named columns
/// from `table` and checking that subjects line up with `outcomes`.
pub fn assemble(layout: &LayoutDoc, table: &GeneTable, outcomes: &Outcomes, covariates_path: &Path) -> CliResult<Dataset> {
    if table.subjects != outcomes.subjects {
        let first = table
            .subjects
            .iter()
            .zip(&outcomes.subjects)
            .position(|(a, b)| a != b)
            .unwrap_or(table.n().min(outcomes.subjects.len()));
        return Err(CliError::schema(
            covariates_path,
            first as u64 + 2,
            "subject_id",
            format!("covariate and outcome subjects differ ({} vs {} rows, first mismatch at row {})", table.n(), outcomes.subjects.len(), first + 1),
        ));
    }
    let col: HashMap<&str, usize> = table.genes.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let cols = layout
        .genes
        .iter()
        .map(|g| col.get(g.as_str()).copied().ok_or_else(|| CliError::schema(covariates_path, 1, g, "gene missing from covariates")))
        .collect::<CliResult<Vec<usize>>>()?;
    let genes = table.select_genes(&cols);
    let ds = Dataset::from_gene_matrix(layout.to_layout()?, &genes.values, outcomes.log_time.clone(), outcomes.delta.clone())?;
    Ok(ds)
}

/// Reconstructs the distinct-gene matrix of a dataset from its pathway-aligned columns.
pub fn gene_table(data: &Dataset, genes: &[String]) -> GeneTable {
    let n = data.n();
    let g = data.layout().n_genes();
    let mut values = vec![0.0; n * g];
    for (c, &gene) in data.layout().column_genes().iter().enumerate() {
        for (i, &v) in data.col(c).iter().enumerate() {
            values[i * g + gene] = v;
        }
    }
    GeneTable {
        subjects: subject_ids(n),
        genes: genes.to_vec(),
        values,
    }
}

pub fn subject_ids(n: usize) -> Vec<String> {
    let w = n.to_string().len();
    (0..n).map(|i| format!("s{:0w$}", i + 1)).collect()
}

pub fn gene_ids(n: usize) -> Vec<String> {
    let w = n.to_string().len();
    (0..n).map(|i| format!("g{:0w$}", i + 1)).collect()
}

pub fn pathway_ids(k: usize) -> Vec<String> {
    let w = k.to_string().len();
    (0..k).map(|i| format!("P{:0w$}", i + 1)).collect()
}
