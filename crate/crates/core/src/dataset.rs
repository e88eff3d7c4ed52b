//! Association and similarity data: loading, validation, splitting,
//! negative sampling and planted synthetic bundles.
//!
//! File formats are UTF-8 tab-separated text:
//!
//! * matrix: the first row holds a corner label followed by column ids, every
//!   following row holds a row id followed by one value per column;
//! * triples: a header line, then `drug_id<TAB>disease_id<TAB>value` rows.
//!   Cells that are not listed are 0.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{squared_distance, DenseMatrix, RngStream};

/// Tolerance below which an asymmetric similarity pair is averaged instead of rejected.
pub const ASYMMETRY_TOLERANCE: f64 = 1e-6;
/// Tolerance on the unit diagonal of a similarity matrix.
pub const DIAGONAL_TOLERANCE: f64 = 1e-9;

const SPLIT_STREAM: u64 = 0x0053_504c_4954;
const NEGATIVE_STREAM: u64 = 0x004e_4547_4154;
const SYNTH_STREAM: u64 = 0x0053_594e_5448;

/// One problem found while validating input data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self { location: location.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{} violation(s){}", .0.len(), format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("need {needed} negative cells but only {available} zero cells exist")]
    InsufficientNegatives { needed: usize, available: usize },
    #[error("invalid generator parameters: {0}")]
    Generator(String),
}

impl DatasetError {
    /// The individual violations, when this is a validation failure.
    pub fn violations(&self) -> &[Violation] {
        match self {
            DatasetError::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("\n  {x}")).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// A (drug, disease) cell of the association matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub drug: usize,
    pub disease: usize,
}

impl Pair {
    pub const fn new(drug: usize, disease: usize) -> Self {
        Self { drug, disease }
    }
}

/// Binary drug × disease matrix with identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationMatrix {
    drug_ids: Vec<String>,
    disease_ids: Vec<String>,
    values: Vec<u8>,
}

impl AssociationMatrix {
    pub fn new(drug_ids: Vec<String>, disease_ids: Vec<String>, values: Vec<u8>) -> Result<Self, DatasetError> {
        let mut violations = Vec::new();
        check_unique(&drug_ids, "drug ids", &mut violations);
        check_unique(&disease_ids, "disease ids", &mut violations);
        if values.len() != drug_ids.len() * disease_ids.len() {
            violations.push(Violation::new(
                "shape",
                format!("{} values for {} drugs x {} diseases", values.len(), drug_ids.len(), disease_ids.len()),
            ));
        }
        let n_cols = disease_ids.len().max(1);
        for (k, &v) in values.iter().enumerate() {
            if v > 1 {
                violations.push(Violation::new(
                    format!("cell ({}, {})", k / n_cols, k % n_cols),
                    format!("non-binary value {v}"),
                ));
            }
        }
        if violations.is_empty() {
            Ok(Self { drug_ids, disease_ids, values })
        } else {
            Err(DatasetError::Invalid(violations))
        }
    }

    /// All-zero matrix with the given positives set to 1.
    pub fn from_positives(
        drug_ids: Vec<String>,
        disease_ids: Vec<String>,
        positives: &[Pair],
    ) -> Result<Self, DatasetError> {
        let cols = disease_ids.len();
        let mut values = vec![0u8; drug_ids.len() * cols];
        for p in positives {
            if p.drug >= drug_ids.len() || p.disease >= cols {
                return Err(DatasetError::Invalid(vec![Violation::new(
                    format!("cell ({}, {})", p.drug, p.disease),
                    "index out of range",
                )]));
            }
            values[p.drug * cols + p.disease] = 1;
        }
        Self::new(drug_ids, disease_ids, values)
    }

    pub fn drug_ids(&self) -> &[String] {
        &self.drug_ids
    }

    pub fn disease_ids(&self) -> &[String] {
        &self.disease_ids
    }

    pub fn n_drugs(&self) -> usize {
        self.drug_ids.len()
    }

    pub fn n_diseases(&self) -> usize {
        self.disease_ids.len()
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn get(&self, drug: usize, disease: usize) -> bool {
        self.values[drug * self.n_diseases() + disease] == 1
    }

    #[inline]
    pub fn contains(&self, pair: Pair) -> bool {
        self.get(pair.drug, pair.disease)
    }

    pub fn n_positives(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn n_zeros(&self) -> usize {
        self.n_cells() - self.n_positives()
    }

    /// Positive cells in row-major order.
    pub fn positives(&self) -> Vec<Pair> {
        let cols = self.n_diseases();
        self.values.iter().enumerate().filter(|(_, &v)| v == 1).map(|(k, _)| Pair::new(k / cols, k % cols)).collect()
    }

    /// Row `drug` as a 0/1 vector over diseases.
    pub fn drug_profile(&self, drug: usize) -> Vec<f64> {
        let cols = self.n_diseases();
        self.values[drug * cols..(drug + 1) * cols].iter().map(|&v| f64::from(v)).collect()
    }

    /// Column `disease` as a 0/1 vector over drugs.
    pub fn disease_profile(&self, disease: usize) -> Vec<f64> {
        (0..self.n_drugs()).map(|i| f64::from(self.values[i * self.n_diseases() + disease])).collect()
    }

    pub fn drug_index(&self, id: &str) -> Option<usize> {
        self.drug_ids.iter().position(|d| d == id)
    }

    pub fn disease_index(&self, id: &str) -> Option<usize> {
        self.disease_ids.iter().position(|d| d == id)
    }

    /// Same identifiers, with only `positives` set.
    pub fn restricted_to(&self, positives: &[Pair]) -> Result<Self, DatasetError> {
        Self::from_positives(self.drug_ids.clone(), self.disease_ids.clone(), positives)
    }
}

/// Square symmetric matrix of similarities in `[0, 1]` with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    ids: Vec<String>,
    values: DenseMatrix,
}

impl SimilarityMatrix {
    /// Validates and symmetrizes pairs that differ by at most [`ASYMMETRY_TOLERANCE`].
    pub fn new(ids: Vec<String>, values: DenseMatrix) -> Result<Self, DatasetError> {
        let violations = validate_similarity(&ids, &values);
        if !violations.is_empty() {
            return Err(DatasetError::Invalid(violations));
        }
        let mut values = values;
        let n = ids.len();
        for i in 0..n {
            values.set(i, i, 1.0);
            for j in i + 1..n {
                let (a, b) = (values.get(i, j), values.get(j, i));
                if a != b {
                    let mean = 0.5 * (a + b);
                    values.set(i, j, mean);
                    values.set(j, i, mean);
                }
            }
        }
        Ok(Self { ids, values })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values.get(a, b)
    }
}

/// Every invariant violation of a candidate similarity matrix, with cell locations.
pub fn validate_similarity(ids: &[String], values: &DenseMatrix) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = ids.len();
    if values.shape() != (n, n) {
        out.push(Violation::new(
            "shape",
            format!("{}x{} values for {n} ids (must be square)", values.rows(), values.cols()),
        ));
        return out;
    }
    check_unique(ids, "ids", &mut out);
    for i in 0..n {
        for j in 0..n {
            let v = values.get(i, j);
            let loc = || format!("cell ({}, {})", ids[i], ids[j]);
            if !(0.0..=1.0).contains(&v) {
                out.push(Violation::new(loc(), format!("value {v} outside [0, 1]")));
            } else if i == j && (v - 1.0).abs() > DIAGONAL_TOLERANCE {
                out.push(Violation::new(loc(), format!("diagonal value {v} is not 1")));
            } else if j > i {
                let w = values.get(j, i);
                if (0.0..=1.0).contains(&w) && (v - w).abs() > ASYMMETRY_TOLERANCE {
                    out.push(Violation::new(loc(), format!("asymmetric: {v} vs transposed {w}")));
                }
            }
        }
    }
    out
}

fn check_unique(ids: &[String], what: &str, out: &mut Vec<Violation>) {
    let mut seen = HashSet::new();
    for (k, id) in ids.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            out.push(Violation::new(format!("{what}[{k}]"), format!("duplicate identifier {id:?}")));
        }
    }
}

/// Associations plus the two similarity matrices, with matching identifier order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub associations: AssociationMatrix,
    pub drug_sim: SimilarityMatrix,
    pub disease_sim: SimilarityMatrix,
}

impl DatasetBundle {
    pub fn new(
        associations: AssociationMatrix,
        drug_sim: SimilarityMatrix,
        disease_sim: SimilarityMatrix,
    ) -> Result<Self, DatasetError> {
        let mut v = Vec::new();
        if let Some(x) = order_mismatch("drug", associations.drug_ids(), drug_sim.ids()) {
            v.push(x);
        }
        if let Some(x) = order_mismatch("disease", associations.disease_ids(), disease_sim.ids()) {
            v.push(x);
        }
        if v.is_empty() {
            Ok(Self { associations, drug_sim, disease_sim })
        } else {
            Err(DatasetError::Invalid(v))
        }
    }

    pub fn n_drugs(&self) -> usize {
        self.associations.n_drugs()
    }

    pub fn n_diseases(&self) -> usize {
        self.associations.n_diseases()
    }
}

fn order_mismatch(side: &str, assoc: &[String], sim: &[String]) -> Option<Violation> {
    if assoc == sim {
        return None;
    }
    let first = assoc.iter().zip(sim).position(|(a, b)| a != b).unwrap_or(assoc.len().min(sim.len()));
    let window = |ids: &[String]| {
        let end = (first + 5).min(ids.len());
        let tail = if end < ids.len() { ", ..." } else { "" };
        format!("[{}{}]", ids[first.min(ids.len())..end].join(", "), tail)
    };
    Some(Violation::new(
        format!("{side} ids, position {first}"),
        format!(
            "order differs: associations ({} ids) {} vs similarity ({} ids) {}",
            assoc.len(),
            window(assoc),
            sim.len(),
            window(sim)
        ),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssociationFormat {
    Matrix,
    Triples,
}

impl std::str::FromStr for AssociationFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "matrix" => Ok(Self::Matrix),
            "triples" => Ok(Self::Triples),
            other => Err(format!("unknown association format {other:?}")),
        }
    }
}

struct TsvTable {
    col_ids: Vec<String>,
    row_ids: Vec<String>,
    cells: Vec<Vec<f64>>,
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(k, l)| (k + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.trim().is_empty())
}

fn parse_tsv_table(path: &Path, text: &str) -> Result<TsvTable, DatasetError> {
    let parse_err = |line: usize, message: String| DatasetError::Parse { path: path.to_path_buf(), line, message };
    let mut lines = data_lines(text);
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
    let mut fields = header.split('\t');
    fields.next();
    let col_ids: Vec<String> = fields.map(str::to_string).collect();
    let mut row_ids = Vec::new();
    let mut cells = Vec::new();
    for (line, text) in lines {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != col_ids.len() + 1 {
            return Err(parse_err(line, format!("{} fields, expected {}", fields.len(), col_ids.len() + 1)));
        }
        row_ids.push(fields[0].to_string());
        let row = fields[1..]
            .iter()
            .enumerate()
            .map(|(c, f)| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("column {}: cannot parse {f:?} as a number", c + 2)))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        cells.push(row);
    }
    Ok(TsvTable { col_ids, row_ids, cells })
}

/// Loads an association matrix. Triples files take their identifier lists
/// from first appearance; use [`load_association_triples`] to declare them.
pub fn load_association_matrix(
    path: impl AsRef<Path>,
    format: AssociationFormat,
) -> Result<AssociationMatrix, DatasetError> {
    match format {
        AssociationFormat::Matrix => load_association_tsv_matrix(path.as_ref()),
        AssociationFormat::Triples => load_association_triples(path, None),
    }
}

fn load_association_tsv_matrix(path: &Path) -> Result<AssociationMatrix, DatasetError> {
    let table = parse_tsv_table(path, &read_text(path)?)?;
    let mut values = Vec::with_capacity(table.row_ids.len() * table.col_ids.len());
    let mut violations = Vec::new();
    for (r, row) in table.cells.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v == 0.0 || v == 1.0 {
                values.push(v as u8);
            } else {
                violations.push(Violation::new(
                    format!("{}: cell ({}, {})", path.display(), table.row_ids[r], table.col_ids[c]),
                    format!("non-binary value {v}"),
                ));
                values.push(0);
            }
        }
    }
    match AssociationMatrix::new(table.row_ids, table.col_ids, values) {
        Ok(m) if violations.is_empty() => Ok(m),
        Ok(_) => Err(DatasetError::Invalid(violations)),
        Err(DatasetError::Invalid(more)) => {
            violations.extend(more);
            Err(DatasetError::Invalid(violations))
        }
        Err(e) => Err(e),
    }
}

/// Loads a triples file. With `ids = Some((drugs, diseases))` every triple must
/// name a declared identifier and the matrix takes exactly that shape.
pub fn load_association_triples(
    path: impl AsRef<Path>,
    ids: Option<(&[String], &[String])>,
) -> Result<AssociationMatrix, DatasetError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let parse_err = |line: usize, message: String| DatasetError::Parse { path: path.to_path_buf(), line, message };
    let mut lines = data_lines(&text);
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header line".into()))?;
    if header.split('\t').count() != 3 {
        return Err(parse_err(1, format!("header must have 3 columns, got {header:?}")));
    }

    let (mut drugs, mut diseases, declared) = match ids {
        Some((d, s)) => (d.to_vec(), s.to_vec(), true),
        None => (Vec::new(), Vec::new(), false),
    };
    let mut drug_pos: HashMap<String, usize> = drugs.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
    let mut disease_pos: HashMap<String, usize> = diseases.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
    let mut cells: HashMap<Pair, u8> = HashMap::new();

    for (line, text) in lines {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(line, format!("{} fields, expected 3", fields.len())));
        }
        let value: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("cannot parse {:?} as a number", fields[2])))?;
        if value != 0.0 && value != 1.0 {
            return Err(parse_err(line, format!("non-binary value {value}")));
        }
        let index_of = |id: &str, pos: &mut HashMap<String, usize>, list: &mut Vec<String>| {
            if let Some(&k) = pos.get(id) {
                Ok(k)
            } else if declared {
                Err(parse_err(line, format!("undeclared identifier {id:?}")))
            } else {
                list.push(id.to_string());
                pos.insert(id.to_string(), list.len() - 1);
                Ok(list.len() - 1)
            }
        };
        let drug = index_of(fields[0], &mut drug_pos, &mut drugs)?;
        let disease = index_of(fields[1], &mut disease_pos, &mut diseases)?;
        if cells.insert(Pair::new(drug, disease), value as u8).is_some() {
            return Err(parse_err(line, format!("duplicate triple for ({}, {})", fields[0], fields[1])));
        }
    }

    let cols = diseases.len();
    let mut values = vec![0u8; drugs.len() * cols];
    for (p, v) in cells {
        values[p.drug * cols + p.disease] = v;
    }
    AssociationMatrix::new(drugs, diseases, values)
}

/// Loads and validates a similarity matrix in matrix format.
pub fn load_similarity_matrix(path: impl AsRef<Path>) -> Result<SimilarityMatrix, DatasetError> {
    let path = path.as_ref();
    let table = parse_tsv_table(path, &read_text(path)?)?;
    let n = table.col_ids.len();
    if table.row_ids.len() != n {
        return Err(DatasetError::Invalid(vec![Violation::new(
            path.display().to_string(),
            format!("{} rows x {n} columns (must be square)", table.row_ids.len()),
        )]));
    }
    if table.row_ids != table.col_ids {
        let mut v = vec![order_mismatch("row/column", &table.col_ids, &table.row_ids).expect("lists differ")];
        v[0].location = format!("{}: {}", path.display(), v[0].location);
        return Err(DatasetError::Invalid(v));
    }
    let values = DenseMatrix::from_vec(n, n, table.cells.concat())
        .map_err(|_| DatasetError::Invalid(vec![Violation::new(path.display().to_string(), "non-finite value")]))?;
    SimilarityMatrix::new(table.col_ids, values).map_err(|e| match e {
        DatasetError::Invalid(v) => DatasetError::Invalid(
            v.into_iter().map(|x| Violation::new(format!("{}: {}", path.display(), x.location), x.message)).collect(),
        ),
        other => other,
    })
}

pub fn load_bundle(
    assoc: impl AsRef<Path>,
    format: AssociationFormat,
    drug_sim: impl AsRef<Path>,
    disease_sim: impl AsRef<Path>,
) -> Result<DatasetBundle, DatasetError> {
    let drug_sim = load_similarity_matrix(drug_sim)?;
    let disease_sim = load_similarity_matrix(disease_sim)?;
    let associations = match format {
        AssociationFormat::Matrix => load_association_matrix(assoc, format)?,
        AssociationFormat::Triples => load_association_triples(assoc, Some((drug_sim.ids(), disease_sim.ids())))?,
    };
    DatasetBundle::new(associations, drug_sim, disease_sim)
}

fn write_file(path: &Path, body: &str) -> Result<(), DatasetError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(body.as_bytes()).map_err(io_err(path))
}

fn matrix_text<F: Fn(usize, usize) -> String>(corner: &str, rows: &[String], cols: &[String], cell: F) -> String {
    let mut out = String::new();
    out.push_str(corner);
    for c in cols {
        out.push('\t');
        out.push_str(c);
    }
    out.push('\n');
    for (r, id) in rows.iter().enumerate() {
        out.push_str(id);
        for c in 0..cols.len() {
            out.push('\t');
            out.push_str(&cell(r, c));
        }
        out.push('\n');
    }
    out
}

pub fn write_association_matrix(path: impl AsRef<Path>, assoc: &AssociationMatrix) -> Result<(), DatasetError> {
    let body = matrix_text("drug", assoc.drug_ids(), assoc.disease_ids(), |r, c| {
        if assoc.get(r, c) { "1" } else { "0" }.to_string()
    });
    write_file(path.as_ref(), &body)
}

/// Writes positives only; reload with the same declared identifier lists.
pub fn write_association_triples(path: impl AsRef<Path>, assoc: &AssociationMatrix) -> Result<(), DatasetError> {
    let mut body = String::from("drug_id\tdisease_id\tvalue\n");
    for p in assoc.positives() {
        body.push_str(&format!("{}\t{}\t1\n", assoc.drug_ids()[p.drug], assoc.disease_ids()[p.disease]));
    }
    write_file(path.as_ref(), &body)
}

pub fn write_similarity_matrix(path: impl AsRef<Path>, sim: &SimilarityMatrix) -> Result<(), DatasetError> {
    // `{}` on f64 prints the shortest string that parses back to the same value.
    let body = matrix_text("id", sim.ids(), sim.ids(), |r, c| format!("{}", sim.get(r, c)));
    write_file(path.as_ref(), &body)
}

/// Disjoint train/test partition of the positive cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_positives: Vec<Pair>,
    pub test_positives: Vec<Pair>,
    pub seed: u64,
    pub ratio: f64,
}

/// Uniformly partitions the positives of `assoc`; `round(ratio · total)` go to training.
/// Both halves are returned in row-major order.
pub fn split_associations(assoc: &AssociationMatrix, ratio: f64, seed: u64) -> Result<DataSplit, DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::Split(format!("ratio {ratio} not in (0, 1)")));
    }
    let mut positives = assoc.positives();
    let total = positives.len();
    if total < 2 {
        return Err(DatasetError::Split(format!("{total} positive(s); at least 2 required")));
    }
    let n_train = (ratio * total as f64).round() as usize;
    if n_train == 0 || n_train == total {
        return Err(DatasetError::Split(format!("ratio {ratio} over {total} positives leaves one side empty")));
    }
    RngStream::derived(seed, SPLIT_STREAM, 0).shuffle(&mut positives);
    let mut test_positives = positives.split_off(n_train);
    let mut train_positives = positives;
    train_positives.sort_unstable();
    test_positives.sort_unstable();
    Ok(DataSplit { train_positives, test_positives, seed, ratio })
}

/// Negatives drawn for one batch of positives.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeBatch {
    /// `per_positive` consecutive entries per positive, in batch order.
    pub pairs: Vec<Pair>,
    pub per_positive: usize,
}

/// Draws `per_positive` zero cells for every positive in `batch_positives`,
/// uniformly and without replacement across the whole batch. The stream is a
/// function of `(seed, epoch)` only.
pub fn sample_negatives(
    assoc: &AssociationMatrix,
    per_positive: usize,
    batch_positives: &[Pair],
    seed: u64,
    epoch: u64,
) -> Result<NegativeBatch, DatasetError> {
    let needed = per_positive * batch_positives.len();
    let available = assoc.n_zeros();
    if needed > available {
        return Err(DatasetError::InsufficientNegatives { needed, available });
    }
    let mut rng = RngStream::derived(seed, NEGATIVE_STREAM, epoch);
    let cols = assoc.n_diseases();
    let pairs = if needed * 2 > available {
        // Dense request: partial shuffle of the explicit zero list.
        let mut zeros: Vec<Pair> =
            (0..assoc.n_cells()).map(|k| Pair::new(k / cols, k % cols)).filter(|&p| !assoc.contains(p)).collect();
        for k in 0..needed {
            let j = k + rng.below(zeros.len() - k);
            zeros.swap(k, j);
        }
        zeros.truncate(needed);
        zeros
    } else {
        let mut seen = HashSet::with_capacity(needed);
        let mut out = Vec::with_capacity(needed);
        while out.len() < needed {
            let k = rng.below(assoc.n_cells());
            let p = Pair::new(k / cols, k % cols);
            if !assoc.contains(p) && seen.insert(p) {
                out.push(p);
            }
        }
        out
    };
    Ok(NegativeBatch { pairs, per_positive })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Drugs,
    Diseases,
}

/// Jaccard index between binary profiles along `axis`. Two distinct empty
/// profiles score 0; the diagonal is 1.
pub fn jaccard_similarity_from_associations(assoc: &AssociationMatrix, axis: Axis) -> SimilarityMatrix {
    let (ids, sets): (Vec<String>, Vec<Vec<usize>>) = match axis {
        Axis::Drugs => (
            assoc.drug_ids().to_vec(),
            (0..assoc.n_drugs()).map(|i| (0..assoc.n_diseases()).filter(|&j| assoc.get(i, j)).collect()).collect(),
        ),
        Axis::Diseases => (
            assoc.disease_ids().to_vec(),
            (0..assoc.n_diseases()).map(|j| (0..assoc.n_drugs()).filter(|&i| assoc.get(i, j)).collect()).collect(),
        ),
    };
    let n = ids.len();
    let mut values = DenseMatrix::identity(n);
    for a in 0..n {
        for b in a + 1..n {
            let inter = sorted_intersection(&sets[a], &sets[b]);
            let union = sets[a].len() + sets[b].len() - inter;
            let s = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            values.set(a, b, s);
            values.set(b, a, s);
        }
    }
    SimilarityMatrix { ids, values }
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_drugs: usize,
    pub n_diseases: usize,
    pub latent_dim: usize,
    pub density: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SynthParams {
    /// The 200 × 150 reference bundle used for ablation and recovery checks.
    pub fn standard(noise: f64, seed: u64) -> Self {
        Self { n_drugs: 200, n_diseases: 150, latent_dim: 8, density: 0.05, noise, seed }
    }
}

/// A generated bundle together with the hidden geometry that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticBundle {
    pub bundle: DatasetBundle,
    pub params: SynthParams,
    pub drug_points: DenseMatrix,
    pub disease_points: DenseMatrix,
}

impl SyntheticBundle {
    pub fn planted_distance(&self, drug: usize, disease: usize) -> f64 {
        squared_distance(self.drug_points.row(drug), self.disease_points.row(disease))
    }

    /// Index of the disease whose planted point is closest to `drug`.
    pub fn nearest_disease(&self, drug: usize) -> usize {
        (0..self.disease_points.rows())
            .min_by(|&a, &b| self.planted_distance(drug, a).total_cmp(&self.planted_distance(drug, b)))
            .expect("at least two diseases")
    }
}

/// Plants uniform points in `[0,1)^latent_dim` for both sides and labels the
/// `round(density · n_drugs · n_diseases)` closest pairs positive. With noise,
/// `round(noise · positives)` positives and as many negatives swap labels.
/// Similarities are `exp(-d² / mean d²)` over planted points of the same side.
pub fn generate_synthetic(params: SynthParams) -> Result<SyntheticBundle, DatasetError> {
    let SynthParams { n_drugs, n_diseases, latent_dim, density, noise, seed } = params;
    if n_drugs < 2 || n_diseases < 2 || latent_dim == 0 {
        return Err(DatasetError::Generator(format!("degenerate sizes {n_drugs} x {n_diseases}, dim {latent_dim}")));
    }
    if !(density > 0.0 && density < 1.0) {
        return Err(DatasetError::Generator(format!("density {density} not in (0, 1)")));
    }
    if !(0.0..0.5).contains(&noise) {
        return Err(DatasetError::Generator(format!("noise {noise} not in [0, 0.5)")));
    }
    let n_cells = n_drugs * n_diseases;
    let n_pos = (density * n_cells as f64).round() as usize;
    if n_pos == 0 || n_pos == n_cells {
        return Err(DatasetError::Generator(format!("density {density} gives {n_pos} positives of {n_cells}")));
    }
    let n_flip = (noise * n_pos as f64).round() as usize;
    if n_flip > n_cells - n_pos {
        return Err(DatasetError::Generator(format!(
            "noise {noise} needs {n_flip} negatives to flip, only {} exist",
            n_cells - n_pos
        )));
    }

    let mut rng = RngStream::derived(seed, SYNTH_STREAM, 0);
    let mut points = |n: usize| {
        let data = (0..n * latent_dim).map(|_| rng.uniform()).collect();
        DenseMatrix::from_vec(n, latent_dim, data).expect("finite")
    };
    let drug_points = points(n_drugs);
    let disease_points = points(n_diseases);

    let dist: Vec<f64> = (0..n_cells)
        .map(|k| squared_distance(drug_points.row(k / n_diseases), disease_points.row(k % n_diseases)))
        .collect();
    let mut order: Vec<usize> = (0..n_cells).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    let mut values = vec![0u8; n_cells];
    for &k in &order[..n_pos] {
        values[k] = 1;
    }

    if n_flip > 0 {
        let mut noise_rng = RngStream::derived(seed, SYNTH_STREAM, 1);
        let mut pos = order[..n_pos].to_vec();
        let mut neg = order[n_pos..].to_vec();
        pos.sort_unstable();
        neg.sort_unstable();
        for k in 0..n_flip {
            let a = k + noise_rng.below(pos.len() - k);
            pos.swap(k, a);
            let b = k + noise_rng.below(neg.len() - k);
            neg.swap(k, b);
            values[pos[k]] = 0;
            values[neg[k]] = 1;
        }
    }

    let drug_ids: Vec<String> = (0..n_drugs).map(|i| format!("drug{i:04}")).collect();
    let disease_ids: Vec<String> = (0..n_diseases).map(|j| format!("disease{j:04}")).collect();
    let associations = AssociationMatrix::new(drug_ids.clone(), disease_ids.clone(), values)?;
    let drug_sim = SimilarityMatrix::new(drug_ids, planted_similarity(&drug_points))?;
    let disease_sim = SimilarityMatrix::new(disease_ids, planted_similarity(&disease_points))?;
    Ok(SyntheticBundle {
        bundle: DatasetBundle::new(associations, drug_sim, disease_sim)?,
        params,
        drug_points,
        disease_points,
    })
}

fn planted_similarity(points: &DenseMatrix) -> DenseMatrix {
    let n = points.rows();
    let mut d2 = DenseMatrix::zeros(n, n);
    let mut sum = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            let d = squared_distance(points.row(a), points.row(b));
            d2.set(a, b, d);
            sum += d;
        }
    }
    let scale = sum / (n * (n - 1) / 2) as f64;
    let mut out = DenseMatrix::identity(n);
    for a in 0..n {
        for b in a + 1..n {
            let s = (-d2.get(a, b) / scale).exp();
            out.set(a, b, s);
            out.set(b, a, s);
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct Provenance {
    generator: String,
    params: SynthParams,
    rng: String,
    files: Vec<String>,
}

pub const SYNTH_ASSOC_FILE: &str = "associations.tsv";
pub const SYNTH_DRUG_SIM_FILE: &str = "drug_sim.tsv";
pub const SYNTH_DISEASE_SIM_FILE: &str = "disease_sim.tsv";
pub const SYNTH_PROVENANCE_FILE: &str = "provenance.json";

/// Writes the bundle in matrix format plus a JSON sidecar with the generator
/// parameters. Returns the written paths.
pub fn write_synthetic(dir: impl AsRef<Path>, synth: &SyntheticBundle) -> Result<Vec<PathBuf>, DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = [SYNTH_ASSOC_FILE, SYNTH_DRUG_SIM_FILE, SYNTH_DISEASE_SIM_FILE];
    write_association_matrix(dir.join(files[0]), &synth.bundle.associations)?;
    write_similarity_matrix(dir.join(files[1]), &synth.bundle.drug_sim)?;
    write_similarity_matrix(dir.join(files[2]), &synth.bundle.disease_sim)?;
    let provenance = Provenance {
        generator: "planted-geometry".into(),
        params: synth.params,
        rng: RngStream::ALGORITHM.into(),
        files: files.iter().map(|s| s.to_string()).collect(),
    };
    let json = serde_json::to_string_pretty(&provenance).expect("serializable") + "\n";
    let sidecar = dir.join(SYNTH_PROVENANCE_FILE);
    write_file(&sidecar, &json)?;
    let mut out: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    out.push(sidecar);
    Ok(out)
}
