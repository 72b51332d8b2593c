use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mesh::{ColumnStats, FieldSample, Mesh, NormStats, Pair, Unpaired};
use crate::error::{Error, Result};
use crate::grad::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MESHES_FILE: &str = "meshes.jsonl";
pub const SAMPLES_FILE: &str = "samples.jsonl";

const FORMAT_NAME: &str = "meshsr-dataset";
const FORMAT_VERSION: u32 = 1;

/// Paired LR/HR training data, unpaired LR data and held-out test pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub meshes: Vec<Mesh>,
    pub paired: Vec<Pair>,
    pub unpaired: Vec<Unpaired>,
    pub test: Vec<Pair>,
    pub stats: NormStats,
    /// Free-form record of how the data was produced.
    pub provenance: serde_json::Value,
}

impl SplitDataset {
    /// `(N, N_h)`: all training LR samples and the paired subset.
    pub fn counts(&self) -> (usize, usize) {
        (self.paired.len() + self.unpaired.len(), self.paired.len())
    }

    pub fn mesh(&self, id: usize) -> Result<&Mesh> {
        self.meshes
            .get(id)
            .ok_or_else(|| Error::Validation(format!("unknown mesh id {id}")))
    }

    /// Solution columns `d`.
    pub fn field_dim(&self) -> usize {
        self.stats.field.cols()
    }

    /// Spatial dimension `D`.
    pub fn space_dim(&self) -> usize {
        self.meshes.first().map_or(0, Mesh::dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paired.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 paired samples, got {}",
                self.paired.len()
            )));
        }
        let d = self.field_dim();
        let dim = self.space_dim();
        if self.stats.position.cols() != dim || self.stats.edge.cols() != 2 * dim {
            return Err(Error::Validation(
                "normalization stats do not match the mesh dimension".into(),
            ));
        }
        for m in &self.meshes {
            if m.dim() != dim {
                return Err(Error::Validation(
                    "meshes differ in spatial dimension".into(),
                ));
            }
        }
        let check = |s: &FieldSample, what: &str| -> Result<()> {
            let mesh = self.mesh(s.mesh_id)?;
            if s.values.rows() != mesh.n_nodes() || s.values.cols() != d {
                return Err(Error::Validation(format!(
                    "{what}: values {:?} on a mesh of {} nodes with d = {d}",
                    s.values.shape(),
                    mesh.n_nodes()
                )));
            }
            if !s.values.all_finite() {
                return Err(Error::Validation(format!("{what}: non-finite values")));
            }
            Ok(())
        };
        for (i, p) in self.paired.iter().chain(&self.test).enumerate() {
            check(&p.lr, &format!("pair {i} lr"))?;
            check(&p.hr, &format!("pair {i} hr"))?;
            if p.lr.mu != p.hr.mu {
                return Err(Error::Validation(format!(
                    "pair {i}: LR and HR parameters differ"
                )));
            }
        }
        for (i, u) in self.unpaired.iter().enumerate() {
            check(&u.lr, &format!("unpaired {i}"))?;
            self.mesh(u.hr_mesh_id)?;
        }
        Ok(())
    }

    /// Only the paired samples as training data (the fully supervised view).
    pub fn paired_only(&self) -> SplitDataset {
        SplitDataset {
            unpaired: Vec::new(),
            ..self.clone()
        }
    }

    /// Keeps the paired samples at `keep` as pairs and demotes every other
    /// paired sample to unpaired, discarding its HR solution.
    pub fn restrict_paired(&self, keep: &[usize]) -> Result<SplitDataset> {
        let mut selected = vec![false; self.paired.len()];
        for &i in keep {
            if i >= self.paired.len() {
                return Err(Error::Validation(format!(
                    "paired index {i} out of range for {} pairs",
                    self.paired.len()
                )));
            }
            if selected[i] {
                return Err(Error::Validation(format!(
                    "paired index {i} selected twice"
                )));
            }
            selected[i] = true;
        }
        let mut out = self.clone();
        out.paired = keep.iter().map(|&i| self.paired[i].clone()).collect();
        let demoted = self
            .paired
            .iter()
            .zip(&selected)
            .filter(|(_, &s)| !s)
            .map(|(p, _)| Unpaired {
                lr: p.lr.clone(),
                hr_mesh_id: p.hr.mesh_id,
            });
        out.unpaired = demoted.chain(self.unpaired.iter().cloned()).collect();
        out.validate()?;
        Ok(out)
    }

    /// Recomputes normalization statistics from the LR training pool.
    pub fn recompute_stats(&mut self) -> Result<()> {
        self.stats = compute_stats(&self.meshes, self.lr_pool())?;
        Ok(())
    }

    /// Every training LR sample, paired first.
    pub fn lr_pool(&self) -> impl Iterator<Item = &FieldSample> + '_ {
        self.paired
            .iter()
            .map(|p| &p.lr)
            .chain(self.unpaired.iter().map(|u| &u.lr))
    }
}

/// Z-score statistics of LR field values, LR node positions and LR directed
/// edge features over the given samples.
pub fn compute_stats<'a>(
    meshes: &[Mesh],
    lr: impl IntoIterator<Item = &'a FieldSample>,
) -> Result<NormStats> {
    let lr: Vec<&FieldSample> = lr.into_iter().collect();
    let Some(first) = lr.first() else {
        return Err(Error::Validation(
            "no LR samples to compute statistics from".into(),
        ));
    };
    let d = first.values.cols();
    let dim = meshes
        .get(first.mesh_id)
        .ok_or_else(|| Error::Validation(format!("unknown mesh id {}", first.mesh_id)))?
        .dim();
    let mut positions = Vec::new();
    let mut edge_blocks = Vec::new();
    for s in &lr {
        let mesh = meshes
            .get(s.mesh_id)
            .ok_or_else(|| Error::Validation(format!("unknown mesh id {}", s.mesh_id)))?;
        positions.push(mesh.positions());
        edge_blocks.push(raw_edge_features(mesh));
    }
    Ok(NormStats {
        field: ColumnStats::from_rows(d, lr.iter().map(|s| &s.values)),
        position: ColumnStats::from_rows(dim, positions),
        edge: ColumnStats::from_rows(2 * dim, edge_blocks.iter()),
    })
}

/// Unnormalized `[source position, target position]` per directed edge.
pub fn raw_edge_features(mesh: &Mesh) -> Tensor {
    let dim = mesh.dim();
    let directed = mesh.directed_edges();
    let mut data = Vec::with_capacity(directed.len() * 2 * dim);
    for &(s, t) in &directed {
        data.extend_from_slice(mesh.position(s));
        data.extend_from_slice(mesh.position(t));
    }
    Tensor::matrix(directed.len(), 2 * dim, data)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    n: usize,
    n_h: usize,
    n_test: usize,
    d: usize,
    dim: usize,
    n_meshes: usize,
    stats: NormStats,
    provenance: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct MeshRecord {
    id: usize,
    positions: Vec<Vec<f64>>,
    edges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize, PartialEq, Clone, Copy, Debug)]
#[serde(rename_all = "lowercase")]
enum Role {
    Lr,
    Hr,
}

#[derive(Serialize, Deserialize, PartialEq, Clone, Copy, Debug)]
#[serde(rename_all = "lowercase")]
enum Split {
    Train,
    Test,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    mesh_id: usize,
    role: Role,
    pair_id: Option<usize>,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hr_mesh_id: Option<usize>,
    mu: Vec<f64>,
    values: Vec<Vec<f64>>,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn write_json_line<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        record: 0,
        message: e.to_string(),
    })?;
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

/// Writes the dataset directory (created if missing).
pub fn save_dataset(ds: &SplitDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let (n, n_h) = ds.counts();
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        n,
        n_h,
        n_test: ds.test.len(),
        d: ds.field_dim(),
        dim: ds.space_dim(),
        n_meshes: ds.meshes.len(),
        stats: ds.stats.clone(),
        provenance: ds.provenance.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;

    let path = dir.join(MESHES_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for (id, m) in ds.meshes.iter().enumerate() {
        let rec = MeshRecord {
            id,
            positions: rows_of(m.positions()),
            edges: m.edges().to_vec(),
        };
        write_json_line(&mut w, &path, &rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(SAMPLES_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    let record = |s: &FieldSample, role, pair_id, split, hr_mesh_id| SampleRecord {
        mesh_id: s.mesh_id,
        role,
        pair_id,
        split,
        hr_mesh_id,
        mu: s.mu.clone(),
        values: rows_of(&s.values),
    };
    for (i, p) in ds.paired.iter().enumerate() {
        write_json_line(
            &mut w,
            &path,
            &record(&p.lr, Role::Lr, Some(i), Split::Train, None),
        )?;
        write_json_line(
            &mut w,
            &path,
            &record(&p.hr, Role::Hr, Some(i), Split::Train, None),
        )?;
    }
    for u in &ds.unpaired {
        write_json_line(
            &mut w,
            &path,
            &record(&u.lr, Role::Lr, None, Split::Train, Some(u.hr_mesh_id)),
        )?;
    }
    for (i, p) in ds.test.iter().enumerate() {
        write_json_line(
            &mut w,
            &path,
            &record(&p.lr, Role::Lr, Some(i), Split::Test, None),
        )?;
        write_json_line(
            &mut w,
            &path,
            &record(&p.hr, Role::Hr, Some(i), Split::Test, None),
        )?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn parse_err(path: &Path, record: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        record,
        message: message.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn to_tensor(rows: &[Vec<f64>], path: &Path, record: usize) -> Result<Tensor> {
    Tensor::from_rows(rows).map_err(|e| parse_err(path, record, e.to_string()))
}

/// Reads a dataset directory written by [`save_dataset`].
///
/// Parse failures report the file and 1-based line number of the record.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SplitDataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| parse_err(&path, e.line(), e.to_string()))?;
    if manifest.format != FORMAT_NAME || manifest.version != FORMAT_VERSION {
        return Err(parse_err(
            &path,
            1,
            format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            ),
        ));
    }

    let path = dir.join(MESHES_FILE);
    let mut meshes = Vec::new();
    for (line_no, line) in read_lines(&path)? {
        let rec: MeshRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(&path, line_no, e.to_string()))?;
        if rec.id != meshes.len() {
            return Err(parse_err(
                &path,
                line_no,
                format!("mesh id {} out of sequence", rec.id),
            ));
        }
        let pos = to_tensor(&rec.positions, &path, line_no)?;
        let mesh =
            Mesh::new(pos, rec.edges).map_err(|e| parse_err(&path, line_no, e.to_string()))?;
        meshes.push(mesh);
    }
    if meshes.len() != manifest.n_meshes {
        return Err(parse_err(
            &path,
            meshes.len(),
            format!(
                "manifest lists {} meshes, file has {}",
                manifest.n_meshes,
                meshes.len()
            ),
        ));
    }

    let path = dir.join(SAMPLES_FILE);
    let mut train_pairs: Vec<(Option<FieldSample>, Option<FieldSample>)> = Vec::new();
    let mut test_pairs: Vec<(Option<FieldSample>, Option<FieldSample>)> = Vec::new();
    let mut unpaired = Vec::new();
    for (line_no, line) in read_lines(&path)? {
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(&path, line_no, e.to_string()))?;
        if rec.mesh_id >= meshes.len() {
            return Err(parse_err(
                &path,
                line_no,
                format!("unknown mesh id {}", rec.mesh_id),
            ));
        }
        let sample = FieldSample {
            mesh_id: rec.mesh_id,
            values: to_tensor(&rec.values, &path, line_no)?,
            mu: rec.mu,
        };
        match rec.pair_id {
            None => {
                if rec.role != Role::Lr || rec.split != Split::Train {
                    return Err(parse_err(
                        &path,
                        line_no,
                        "unpaired records must be training LR samples",
                    ));
                }
                let hr_mesh_id =
                    rec.hr_mesh_id
                        .filter(|&id| id < meshes.len())
                        .ok_or_else(|| {
                            parse_err(&path, line_no, "unpaired record lacks a valid hr_mesh_id")
                        })?;
                unpaired.push(Unpaired {
                    lr: sample,
                    hr_mesh_id,
                });
            }
            Some(id) => {
                let table = match rec.split {
                    Split::Train => &mut train_pairs,
                    Split::Test => &mut test_pairs,
                };
                if table.len() <= id {
                    table.resize_with(id + 1, || (None, None));
                }
                let slot = match rec.role {
                    Role::Lr => &mut table[id].0,
                    Role::Hr => &mut table[id].1,
                };
                if slot.is_some() {
                    return Err(parse_err(
                        &path,
                        line_no,
                        format!("duplicate {:?} record for pair {id}", rec.role),
                    ));
                }
                *slot = Some(sample);
            }
        }
    }
    let finish =
        |table: Vec<(Option<FieldSample>, Option<FieldSample>)>, what: &str| -> Result<Vec<Pair>> {
            table
                .into_iter()
                .enumerate()
                .map(|(i, (lr, hr))| match (lr, hr) {
                    (Some(lr), Some(hr)) => Ok(Pair { lr, hr }),
                    _ => Err(parse_err(
                        &path,
                        0,
                        format!("{what} pair {i} is incomplete"),
                    )),
                })
                .collect()
        };
    let paired = finish(train_pairs, "training")?;
    let test = finish(test_pairs, "test")?;

    let n = paired.len() + unpaired.len();
    if n != manifest.n || paired.len() != manifest.n_h || test.len() != manifest.n_test {
        return Err(parse_err(
            &path,
            0,
            format!(
                "manifest expects N={}, N_h={}, test={}; file has N={n}, N_h={}, test={}",
                manifest.n,
                manifest.n_h,
                manifest.n_test,
                paired.len(),
                test.len()
            ),
        ));
    }
    let ds = SplitDataset {
        meshes,
        paired,
        unpaired,
        test,
        stats: manifest.stats,
        provenance: manifest.provenance,
    };
    if manifest.d != ds.field_dim() || manifest.dim != ds.space_dim() {
        return Err(Error::Validation(format!(
            "manifest d={}, D={} disagree with the stored data",
            manifest.d, manifest.dim
        )));
    }
    ds.validate()?;
    Ok(ds)
}

/// Paths of the three dataset files under `dir`.
pub fn dataset_files(dir: impl AsRef<Path>) -> [PathBuf; 3] {
    let dir = dir.as_ref();
    [
        dir.join(MANIFEST_FILE),
        dir.join(MESHES_FILE),
        dir.join(SAMPLES_FILE),
    ]
}
