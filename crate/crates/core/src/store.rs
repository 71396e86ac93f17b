//! Binary containers for reduced models and truth snapshots.
//!
//! Layout: 8 magic bytes, `u32` version, `u32` section count, then per section
//! a `u32` name length, the name, a `u8` kind and the payload. Matrices are
//! stored as `u64` rows, `u64` cols and row-major `f64`; texts as `u64` length
//! and UTF-8 bytes. All integers and floats are little endian.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::eim::EimApproximation;
use crate::error::{Error, Result};
use crate::geometry::{parse_geometry, write_geometry};
use crate::material::{BhTable, Curve, RegionReluctivity, ReluctivityModel};
use crate::offline::{LoadKind, LoadPiece, RbModel};
use crate::truth::TruthSolution;

const MODEL_MAGIC: &[u8; 8] = b"QRBMODEL";
const SNAPSHOT_MAGIC: &[u8; 8] = b"QRBSNAPS";
pub const MODEL_VERSION: u32 = 1;

const KIND_MATRIX: u8 = 1;
const KIND_TEXT: u8 = 2;

enum Section {
    Matrix(usize, usize, Vec<f64>),
    Text(String),
}

#[derive(Default)]
struct Writer {
    sections: Vec<(String, Section)>,
}

impl Writer {
    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        self.sections.push((name.into(), Section::Matrix(r, c, data)));
    }

    fn rows(&mut self, name: &str, cols: usize, rows: &[Vec<f64>]) {
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        self.sections.push((name.into(), Section::Matrix(rows.len(), cols, data)));
    }

    fn values(&mut self, name: &str, v: &[f64]) {
        self.sections.push((name.into(), Section::Matrix(1, v.len(), v.to_vec())));
    }

    fn indices(&mut self, name: &str, v: &[usize]) {
        let f: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        self.values(name, &f);
    }

    fn text(&mut self, name: &str, s: String) {
        self.sections.push((name.into(), Section::Text(s)));
    }

    fn finish(self, magic: &[u8; 8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(magic);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, sec) in self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match sec {
                Section::Matrix(r, c, data) => {
                    out.push(KIND_MATRIX);
                    out.extend_from_slice(&(r as u64).to_le_bytes());
                    out.extend_from_slice(&(c as u64).to_le_bytes());
                    for x in data {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Section::Text(s) => {
                    out.push(KIND_TEXT);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Corrupt(format!("length {v} too large")))
    }
}

struct Reader {
    sections: BTreeMap<String, Section>,
}

impl Reader {
    fn parse(bytes: &[u8], magic: &[u8; 8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != magic {
            return Err(Error::Corrupt("bad magic bytes".into()));
        }
        let version = cur.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let count = cur.u32()?;
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Corrupt("section name is not UTF-8".into()))?
                .to_string();
            let kind = cur.take(1)?[0];
            let sec = match kind {
                KIND_MATRIX => {
                    let r = cur.u64()?;
                    let c = cur.u64()?;
                    let n = r
                        .checked_mul(c)
                        .and_then(|n| n.checked_mul(8))
                        .ok_or_else(|| Error::Corrupt(format!("section {name}: size overflow")))?;
                    let raw = cur.take(n)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                        .collect();
                    Section::Matrix(r, c, data)
                }
                KIND_TEXT => {
                    let n = cur.u64()?;
                    let s = std::str::from_utf8(cur.take(n)?)
                        .map_err(|_| Error::Corrupt(format!("section {name} is not UTF-8")))?;
                    Section::Text(s.to_string())
                }
                k => return Err(Error::Corrupt(format!("section {name}: unknown kind {k}"))),
            };
            sections.insert(name, sec);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(Self { sections })
    }

    fn raw(&self, name: &str) -> Result<(usize, usize, &[f64])> {
        match self.sections.get(name) {
            Some(Section::Matrix(r, c, d)) => Ok((*r, *c, d)),
            Some(Section::Text(_)) => Err(Error::Corrupt(format!("section {name} is not a matrix"))),
            None => Err(Error::Corrupt(format!("missing section {name}"))),
        }
    }

    fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let (r, c, d) = self.raw(name)?;
        Ok(DMatrix::from_row_slice(r, c, d))
    }

    fn rows(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let (r, c, d) = self.raw(name)?;
        Ok((0..r).map(|i| d[i * c..(i + 1) * c].to_vec()).collect())
    }

    fn values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.raw(name)?.2.to_vec())
    }

    fn indices(&self, name: &str) -> Result<Vec<usize>> {
        self.values(name)?
            .into_iter()
            .map(|x| {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(Error::Corrupt(format!("section {name}: {x} is not an index")))
                }
            })
            .collect()
    }

    fn text(&self, name: &str) -> Result<&str> {
        match self.sections.get(name) {
            Some(Section::Text(s)) => Ok(s),
            Some(Section::Matrix(..)) => Err(Error::Corrupt(format!("section {name} is not text"))),
            None => Err(Error::Corrupt(format!("missing section {name}"))),
        }
    }
}

fn stack(blocks: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(blocks.len() * n, n);
    for (b, m) in blocks.iter().enumerate() {
        out.view_mut((b * n, 0), (n, n)).copy_from(m);
    }
    out
}

fn unstack(m: &DMatrix<f64>, count: usize, n: usize, name: &str) -> Result<Vec<DMatrix<f64>>> {
    if m.nrows() != count * n || m.ncols() != n {
        return Err(Error::Corrupt(format!(
            "{name}: shape {:?}, expected ({}, {n})",
            m.shape(),
            count * n
        )));
    }
    Ok((0..count).map(|b| m.view((b * n, 0), (n, n)).into_owned()).collect())
}

fn material_row(m: &ReluctivityModel) -> (Vec<f64>, Vec<Vec<f64>>) {
    let r = &m.regions;
    let mut row = vec![0.0, m.nu0, r.air, r.magnet, r.coil, 0.0, 0.0, 0.0];
    let mut table = Vec::new();
    match &m.curve {
        Curve::Exponential { k1, k2, k3 } => row[5..8].copy_from_slice(&[*k1, *k2, *k3]),
        Curve::Constant(c) => {
            row[0] = 1.0;
            row[5] = *c;
        }
        Curve::Table(t) => {
            row[0] = 2.0;
            table = t.b.iter().zip(&t.h).map(|(b, h)| vec![*b, *h]).collect();
        }
    }
    (row, table)
}

fn material_from(row: &[f64], table: &[Vec<f64>]) -> Result<ReluctivityModel> {
    if row.len() != 8 {
        return Err(Error::Corrupt("material record has the wrong length".into()));
    }
    let curve = match row[0] as i64 {
        0 => Curve::Exponential {
            k1: row[5],
            k2: row[6],
            k3: row[7],
        },
        1 => Curve::Constant(row[5]),
        2 => {
            let samples: Vec<(f64, f64)> = table.iter().map(|r| (r[0], r[1])).collect();
            Curve::Table(BhTable::new(&samples)?)
        }
        k => return Err(Error::Corrupt(format!("unknown curve kind {k}"))),
    };
    Ok(ReluctivityModel {
        curve,
        nu0: row[1],
        regions: RegionReluctivity {
            air: row[2],
            magnet: row[3],
            coil: row[4],
        },
    })
}

fn piece_row(p: &LoadPiece) -> Vec<f64> {
    let (kind, comp, dir) = match p.kind {
        LoadKind::Current => (0.0, 0.0, 0.0),
        LoadKind::Field { component, direction } => (1.0, component as f64, direction as f64),
    };
    vec![p.macro_index as f64, kind, comp, dir, p.value]
}

fn piece_from(r: &[f64]) -> Result<LoadPiece> {
    let kind = match r[1] as i64 {
        0 => LoadKind::Current,
        1 => LoadKind::Field {
            component: r[2] as usize,
            direction: r[3] as usize,
        },
        k => return Err(Error::Corrupt(format!("unknown load kind {k}"))),
    };
    Ok(LoadPiece {
        macro_index: r[0] as usize,
        kind,
        value: r[4],
    })
}

/// Serializes a model; the output is a pure function of the model.
pub fn model_to_bytes(model: &RbModel) -> Vec<u8> {
    let mut w = Writer::default();
    let n = model.n();
    w.text("geometry", write_geometry(&model.geometry));
    let (row, table) = material_row(&model.material);
    w.values("material", &row);
    w.rows("bh_table", 2, &table);
    w.values("nu_lb", &[model.nu_lb_floor, model.nu_lb_observed]);
    w.matrix("basis", &model.basis);
    w.rows("parameters", model.geometry.parameter_box.dims(), &model.parameters);
    let e = &model.eim;
    w.rows("eim_basis", e.point_count(), &e.basis);
    w.indices("eim_magic", &e.magic);
    w.matrix("eim_matrix", &e.matrix);
    w.values("eim_history", &e.history);
    w.indices("eim_selected", &e.selected);
    w.rows("eim_parameters", model.geometry.parameter_box.dims(), &e.parameters);
    w.indices("iron_macros", &model.iron_macros);
    w.indices("other_macros", &model.other_macros);
    w.matrix("nonlinear_blocks", &stack(&model.nonlinear_blocks, n));
    w.matrix("linear_blocks", &stack(&model.linear_blocks, n));
    let pieces: Vec<Vec<f64>> = model.load_pieces.iter().map(piece_row).collect();
    w.rows("load_pieces", 5, &pieces);
    w.matrix("load_vectors", &model.load_vectors);
    w.indices("magic_macro", &model.magic_macro);
    w.matrix("magic_gradients", &model.magic_gradients);
    w.indices("iron_macro", &model.iron_macro);
    w.matrix("iron_gradients", &model.iron_gradients);
    w.matrix("gram", &model.gram);
    w.finish(MODEL_MAGIC)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<RbModel> {
    let r = Reader::parse(bytes, MODEL_MAGIC)?;
    let geometry = parse_geometry(r.text("geometry")?)?;
    let material = material_from(&r.values("material")?, &r.rows("bh_table")?)?;
    let nu = r.values("nu_lb")?;
    if nu.len() != 2 {
        return Err(Error::Corrupt("nu_lb must hold two values".into()));
    }
    let basis = r.matrix("basis")?;
    let n = basis.ncols();
    let magic = r.indices("eim_magic")?;
    let m = magic.len();
    let eim = EimApproximation {
        basis: r.rows("eim_basis")?,
        magic,
        matrix: r.matrix("eim_matrix")?,
        history: r.values("eim_history")?,
        selected: r.indices("eim_selected")?,
        parameters: r.rows("eim_parameters")?,
    };
    let iron_macros = r.indices("iron_macros")?;
    let other_macros = r.indices("other_macros")?;
    let nonlinear_blocks = unstack(
        &r.matrix("nonlinear_blocks")?,
        m * iron_macros.len() * 4,
        n,
        "nonlinear_blocks",
    )?;
    let linear_blocks = unstack(&r.matrix("linear_blocks")?, other_macros.len() * 4, n, "linear_blocks")?;
    let load_pieces = r
        .rows("load_pieces")?
        .iter()
        .map(|row| piece_from(row))
        .collect::<Result<Vec<_>>>()?;
    let model = RbModel {
        geometry,
        material,
        nu_lb_floor: nu[0],
        nu_lb_observed: nu[1],
        basis,
        parameters: r.rows("parameters")?,
        eim,
        iron_macros,
        other_macros,
        nonlinear_blocks,
        linear_blocks,
        load_pieces,
        load_vectors: r.matrix("load_vectors")?,
        magic_macro: r.indices("magic_macro")?,
        magic_gradients: r.matrix("magic_gradients")?,
        iron_macro: r.indices("iron_macro")?,
        iron_gradients: r.matrix("iron_gradients")?,
        gram: r.matrix("gram")?,
    };
    if model.gram.nrows() != model.q_r() || model.gram.ncols() != model.q_r() {
        return Err(Error::Corrupt(format!(
            "residual Gram matrix is {:?}, expected Q_r = {}",
            model.gram.shape(),
            model.q_r()
        )));
    }
    Ok(model)
}

pub fn save_model(model: &RbModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RbModel> {
    model_from_bytes(&std::fs::read(path)?)
}

/// Writes truth snapshots, one row per solution (parameter, then values).
pub fn save_snapshots(solutions: &[TruthSolution], path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer::default();
    let params: Vec<Vec<f64>> = solutions.iter().map(|s| s.parameter.clone()).collect();
    let values: Vec<Vec<f64>> = solutions.iter().map(|s| s.values.clone()).collect();
    let stats: Vec<Vec<f64>> = solutions
        .iter()
        .map(|s| vec![s.iterations as f64, s.residual])
        .collect();
    w.rows("parameters", params.first().map_or(0, Vec::len), &params);
    w.rows("values", values.first().map_or(0, Vec::len), &values);
    w.rows("stats", 2, &stats);
    std::fs::write(path, w.finish(SNAPSHOT_MAGIC))?;
    Ok(())
}

pub fn load_snapshots(path: impl AsRef<Path>) -> Result<Vec<TruthSolution>> {
    let r = Reader::parse(&std::fs::read(path)?, SNAPSHOT_MAGIC)?;
    let params = r.rows("parameters")?;
    let values = r.rows("values")?;
    let stats = r.rows("stats")?;
    if params.len() != values.len() || params.len() != stats.len() {
        return Err(Error::Corrupt("snapshot sections disagree in length".into()));
    }
    Ok(params
        .into_iter()
        .zip(values)
        .zip(stats)
        .map(|((parameter, values), st)| TruthSolution {
            parameter,
            values,
            iterations: st[0] as usize,
            residual: st[1],
            history: Vec::new(),
        })
        .collect())
}
