//! On-disk formats: graph text files, CSV matrices, suite manifests,
//! checkpoints and sweep tables.
//!
//! Every `parse_*` function takes untrusted text and must fail with an error
//! rather than panic.

use std::fs;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{suite_gaps, ModelSpec};
use crate::graph::{Edge, Graph};
use crate::matrix::Matrix;
use crate::model::ModelParams;
use crate::synthetic::{Role, SbmParams, ShiftKind, ShiftSuite, SuiteSeeds, LABEL_GENERATOR_VERSION, SUITE_SIZE};

pub const MANIFEST_FORMAT: &str = "advdiff-suite/1";
pub const CHECKPOINT_FORMAT: &str = "advdiff-checkpoint/1";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Node-count ceiling accepted by the parsers.
pub const MAX_NODES: usize = 1 << 20;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `n <count>` followed by one `u v w` line per edge.
pub fn format_graph(g: &Graph) -> String {
    let mut out = format!("n {}\n", g.n());
    for e in g.edges() {
        out.push_str(&format!("{} {} {}\n", e.u, e.v, e.weight));
    }
    out
}

/// Parses the graph text format. Blank lines and `#` comments are skipped.
pub fn parse_graph(text: &str) -> Result<Graph> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (line, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing `n <count>` header".into(),
    })?;
    let mut parts = header.split_whitespace();
    let n = match (parts.next(), parts.next(), parts.next()) {
        (Some("n"), Some(count), None) => count.parse::<usize>().map_err(|e| Error::Parse {
            line,
            message: format!("bad node count: {e}"),
        })?,
        _ => {
            return Err(Error::Parse {
                line,
                message: "expected `n <count>`".into(),
            })
        }
    };
    if n > MAX_NODES {
        return Err(Error::Parse {
            line,
            message: format!("node count {n} exceeds {MAX_NODES}"),
        });
    }
    let mut edges = Vec::new();
    for (line, l) in lines {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected `u v w`, found {} fields", fields.len()),
            });
        }
        let parse_node = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line,
                message: format!("bad node index {s:?}: {e}"),
            })
        };
        let weight = fields[2].parse::<f64>().map_err(|e| Error::Parse {
            line,
            message: format!("bad weight {:?}: {e}", fields[2]),
        })?;
        edges.push(Edge {
            u: parse_node(fields[0])?,
            v: parse_node(fields[1])?,
            weight,
        });
    }
    Graph::new(n, edges)
}

/// One row per matrix row, comma separated, no header.
pub fn format_matrix_csv(m: &Matrix) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_matrix_csv(text: &str) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {c} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        for field in record.iter() {
            let v = field.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad number {field:?}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "non-finite value".into(),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestGraph {
    pub index: usize,
    pub role: Role,
    pub file: String,
    pub labels: String,
    pub params: SbmParams,
    pub edge_seed: u64,
    pub edge_count: usize,
    /// `‖Ã_i − Ã_1‖₂` under symmetric normalization.
    pub adjacency_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub kind: ShiftKind,
    pub seed: u64,
    pub n: usize,
    pub seeds: SuiteSeeds,
    pub label_generator: String,
    /// Latents, features and label weights are drawn once per suite.
    pub shared_latents: bool,
    pub latents: String,
    pub features: String,
    pub graphs: Vec<ManifestGraph>,
}

fn check_relative(name: &str) -> Result<()> {
    let path = Path::new(name);
    let plain = !name.is_empty() && path.components().all(|c| matches!(c, Component::Normal(_)));
    if plain {
        Ok(())
    } else {
        Err(Error::Format(format!(
            "manifest path {name:?} must be a plain relative path"
        )))
    }
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("unsupported manifest format {:?}", self.format)));
        }
        if self.n == 0 || self.n > MAX_NODES {
            return Err(Error::Format(format!("node count {} out of range", self.n)));
        }
        check_relative(&self.latents)?;
        check_relative(&self.features)?;
        if self.graphs.len() < 3 {
            return Err(Error::Format("a suite needs train, valid and test graphs".into()));
        }
        for (i, g) in self.graphs.iter().enumerate() {
            if g.index != i + 1 || g.role != Role::of_index(g.index) {
                return Err(Error::Format(format!(
                    "graph entry {} has index {} and role {:?}",
                    i + 1,
                    g.index,
                    g.role
                )));
            }
            if g.params.n != self.n {
                return Err(Error::Format(format!(
                    "graph {} has n={} but the suite has n={}",
                    g.index, g.params.n, self.n
                )));
            }
            g.params.validate()?;
            check_relative(&g.file)?;
            check_relative(&g.labels)?;
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(text)?;
    m.validate()?;
    Ok(m)
}

pub fn format_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes the suite files and its manifest into `dir`.
pub fn write_suite(dir: &Path, suite: &ShiftSuite) -> Result<Manifest> {
    let gaps = suite_gaps(suite)?;
    let mut graphs = Vec::with_capacity(suite.graphs.len());
    write_text(
        &dir.join("latents.csv"),
        &format_matrix_csv(&Matrix::column(&suite.latents))?,
    )?;
    write_text(&dir.join("features.csv"), &format_matrix_csv(&suite.features)?)?;
    for (i, g) in suite.graphs.iter().enumerate() {
        let index = i + 1;
        let file = format!("graph_{index:02}.txt");
        let labels = format!("labels_{index:02}.csv");
        write_text(&dir.join(&file), &format_graph(g))?;
        write_text(&dir.join(&labels), &format_matrix_csv(suite.label(index))?)?;
        graphs.push(ManifestGraph {
            index,
            role: Role::of_index(index),
            file,
            labels,
            params: suite.params[i],
            edge_seed: SuiteSeeds::graph(suite.seed, index),
            edge_count: g.edge_count(),
            adjacency_gap: gaps[i],
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        kind: suite.kind,
        seed: suite.seed,
        n: suite.n(),
        seeds: SuiteSeeds::from_seed(suite.seed),
        label_generator: LABEL_GENERATOR_VERSION.to_string(),
        shared_latents: true,
        latents: "latents.csv".into(),
        features: "features.csv".into(),
        graphs,
    };
    write_text(&dir.join(MANIFEST_FILE), &format_json(&manifest)?)?;
    Ok(manifest)
}

/// Loads a suite written by [`write_suite`].
pub fn read_suite(dir: &Path) -> Result<ShiftSuite> {
    let manifest = parse_manifest(&read_text(&dir.join(MANIFEST_FILE))?)?;
    let latents = parse_matrix_csv(&read_text(&dir.join(&manifest.latents))?)?;
    if latents.shape() != (manifest.n, 1) {
        return Err(Error::Format(format!(
            "latents have shape {:?}, expected ({}, 1)",
            latents.shape(),
            manifest.n
        )));
    }
    let features = parse_matrix_csv(&read_text(&dir.join(&manifest.features))?)?;
    if features.rows() != manifest.n {
        return Err(Error::Alignment {
            left: features.rows(),
            right: manifest.n,
        });
    }
    let mut graphs = Vec::new();
    let mut labels = Vec::new();
    let mut params = Vec::new();
    for entry in &manifest.graphs {
        let g = parse_graph(&read_text(&dir.join(&entry.file))?)?;
        if g.n() != manifest.n {
            return Err(Error::Alignment {
                left: g.n(),
                right: manifest.n,
            });
        }
        let y = parse_matrix_csv(&read_text(&dir.join(&entry.labels))?)?;
        if y.rows() != manifest.n {
            return Err(Error::Alignment {
                left: y.rows(),
                right: manifest.n,
            });
        }
        graphs.push(g);
        labels.push(y);
        params.push(entry.params);
    }
    if manifest.graphs.len() != SUITE_SIZE {
        log::warn!("suite has {} graphs instead of {SUITE_SIZE}", manifest.graphs.len());
    }
    Ok(ShiftSuite {
        kind: manifest.kind,
        seed: manifest.seed,
        latents: latents.into_vec(),
        features,
        graphs,
        labels,
        params,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelSpec,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(model: &ModelSpec, params: &ModelParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            model: model.clone(),
            tensors: params
                .named_tensors()
                .into_iter()
                .map(|(name, m)| NamedTensor {
                    name,
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_parts(self) -> Result<(ModelSpec, ModelParams)> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        self.model.validate()?;
        let named = self
            .tensors
            .into_iter()
            .map(|t| {
                let m = Matrix::from_vec(t.rows, t.cols, t.data)?;
                if !m.is_finite() {
                    return Err(Error::Format(format!("tensor {:?} holds non-finite values", t.name)));
                }
                Ok((t.name, m))
            })
            .collect::<Result<Vec<_>>>()?;
        let params = ModelParams::from_named(named)?;
        self.model.check_params(&params)?;
        Ok((self.model, params))
    }
}

pub fn parse_checkpoint(text: &str) -> Result<(ModelSpec, ModelParams)> {
    let c: Checkpoint = serde_json::from_str(text)?;
    c.into_parts()
}

/// One row of the sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub shift: ShiftKind,
    pub seed: u64,
    pub graph: usize,
    pub adjacency_gap: f64,
    /// Empty when the fit failed.
    pub rmse: Option<f64>,
    /// `ok`, or the failure message.
    pub status: String,
}

pub fn format_sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["model", "shift", "seed", "graph", "adjacency_gap", "rmse", "status"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, csv::Error>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_round_trip() {
        let g = Graph::new(
            4,
            vec![
                Edge {
                    u: 0,
                    v: 3,
                    weight: 0.25,
                },
                Edge {
                    u: 1,
                    v: 2,
                    weight: 1.0,
                },
            ],
        )
        .unwrap();
        let text = format_graph(&g);
        assert_eq!(text, "n 4\n0 3 0.25\n1 2 1\n");
        assert_eq!(parse_graph(&text).unwrap(), g);
    }

    #[test]
    fn graph_parse_errors_carry_lines() {
        assert!(matches!(parse_graph(""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_graph("n 3\n0 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            parse_graph("n 3\n# c\n0 x 1\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(parse_graph("n 3\n0 5 1\n"), Err(Error::Graph(_))));
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = Matrix::from_rows(&[&[1.5, -0.1], &[1e-300, 3.0]]);
        let text = format_matrix_csv(&m).unwrap();
        assert_eq!(parse_matrix_csv(&text).unwrap(), m);
        assert!(parse_matrix_csv("1,2\n3\n").is_err());
        assert!(parse_matrix_csv("1,NaN\n").is_err());
    }

    #[test]
    fn manifest_rejects_escaping_paths() {
        assert!(check_relative("../x.csv").is_err());
        assert!(check_relative("/etc/passwd").is_err());
        assert!(check_relative("").is_err());
        assert!(check_relative("graph_01.txt").is_ok());
    }

    #[test]
    fn sweep_round_trip() {
        let rows = vec![
            SweepRow {
                model: "diff_linear".into(),
                shift: ShiftKind::Density,
                seed: 3,
                graph: 4,
                adjacency_gap: 0.123456789,
                rmse: Some(0.5),
                status: "ok".into(),
            },
            SweepRow {
                model: "advdifformer_i".into(),
                shift: ShiftKind::Block,
                seed: 0,
                graph: 3,
                adjacency_gap: 1.0,
                rmse: None,
                status: "matrix is singular, pivot 2".into(),
            },
        ];
        let text = format_sweep_csv(&rows).unwrap();
        assert!(text.starts_with("model,shift,seed,graph,adjacency_gap,rmse,status\n"));
        assert_eq!(parse_sweep_csv(&text).unwrap(), rows);
        assert_eq!(parse_sweep_csv(&format_sweep_csv(&[]).unwrap()).unwrap(), vec![]);
    }
}
