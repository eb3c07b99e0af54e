//! Model persistence: one Matrix Market array file per block plus a JSON
//! manifest mapping block names to file paths (relative to the manifest).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{LtiSystem, PhSystem, STRUCTURE_TOL};

const MTX_HEADER: &str = "%%MatrixMarket matrix array real general";

/// Writes `m` in Matrix Market array format (column-major). Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_mtx(path: &Path, m: &Mat) -> Result<()> {
    let mut out = String::with_capacity(32 * m.len() + 64);
    out.push_str(MTX_HEADER);
    out.push('\n');
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for v in m.iter() {
        out.push_str(&format!("{v:?}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_mtx(path: &Path) -> Result<Mat> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, "empty file"))?;
    let fields: Vec<String> = header
        .split_whitespace()
        .map(|s| s.to_ascii_lowercase())
        .collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(Error::parse(path, "missing %%MatrixMarket matrix header"));
    }
    if fields[2] != "array" || fields[3] != "real" || fields[4] != "general" {
        return Err(Error::parse(
            path,
            format!("unsupported format '{} {} {}', need 'array real general'", fields[2], fields[3], fields[4]),
        ));
    }
    let mut data = lines
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('%'));
    let size = data
        .next()
        .ok_or_else(|| Error::parse(path, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(path, format!("bad size line '{size}': {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(Error::parse(path, format!("size line '{size}' needs two entries")));
    };
    let mut values = Vec::with_capacity(rows * cols);
    for line in data {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::parse(path, format!("bad value '{tok}': {e}")))?;
            values.push(v);
        }
    }
    if values.len() != rows * cols {
        return Err(Error::parse(
            path,
            format!("expected {} values for {rows}x{cols}, found {}", rows * cols, values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(path, "non-finite entry"));
    }
    Ok(Mat::from_column_slice(rows, cols, &values))
}

/// Model kind tag stored in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    PortHamiltonian,
    LtiContinuous,
    LtiDiscrete,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_kind")]
    pub kind: ModelKind,
    /// Sampling step of a discrete-time model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(flatten)]
    pub blocks: BTreeMap<String, PathBuf>,
}

fn default_kind() -> ModelKind {
    ModelKind::PortHamiltonian
}

/// Either kind of model a manifest can describe.
#[derive(Debug, Clone)]
pub enum Model {
    Ph(PhSystem),
    Lti {
        sys: LtiSystem,
        discrete_dt: Option<f64>,
    },
}

impl Model {
    pub fn n_ports(&self) -> (usize, usize) {
        match self {
            Model::Ph(s) => (s.n_ports(), s.n_ports()),
            Model::Lti { sys, .. } => (sys.n_inputs(), sys.n_outputs()),
        }
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::parse(&path, e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn save_blocks(dir: &Path, blocks: &[(&str, &Mat)]) -> Result<BTreeMap<String, PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut map = BTreeMap::new();
    for (name, m) in blocks {
        let file = PathBuf::from(format!("{name}.mtx"));
        write_mtx(&dir.join(&file), m)?;
        map.insert((*name).to_string(), file);
    }
    Ok(map)
}

/// Writes `H.mtx … N.mtx` and `manifest.json` into `dir`; returns the
/// manifest path.
pub fn save_system(sys: &PhSystem, dir: &Path) -> Result<PathBuf> {
    let blocks = save_blocks(
        dir,
        &[
            ("H", &sys.h),
            ("J", &sys.j),
            ("R", &sys.r),
            ("G", &sys.g),
            ("P", &sys.p),
            ("S", &sys.s),
            ("N", &sys.n),
        ],
    )?;
    write_manifest(
        dir,
        &Manifest {
            kind: ModelKind::PortHamiltonian,
            dt: None,
            blocks,
        },
    )
}

pub fn save_lti(sys: &LtiSystem, discrete_dt: Option<f64>, dir: &Path) -> Result<PathBuf> {
    let blocks = save_blocks(
        dir,
        &[("A", &sys.a), ("B", &sys.b), ("C", &sys.c), ("D", &sys.d)],
    )?;
    write_manifest(
        dir,
        &Manifest {
            kind: if discrete_dt.is_some() {
                ModelKind::LtiDiscrete
            } else {
                ModelKind::LtiContinuous
            },
            dt: discrete_dt,
            blocks,
        },
    )
}

fn read_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let path = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, base))
}

fn load_block(manifest: &Manifest, base: &Path, name: &str, manifest_path: &Path) -> Result<Mat> {
    let rel = manifest.blocks.get(name).ok_or_else(|| {
        Error::parse(manifest_path, format!("manifest has no entry for block '{name}'"))
    })?;
    read_mtx(&base.join(rel))
}

/// Loads a pH system from a manifest file (or a directory containing
/// `manifest.json`) and rejects structurally invalid systems.
pub fn load_system(path: &Path) -> Result<PhSystem> {
    match load_model(path)? {
        Model::Ph(sys) => Ok(sys),
        Model::Lti { .. } => Err(Error::parse(path, "manifest describes an LTI model, not a pH system")),
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    let (manifest, base) = read_manifest(path)?;
    let load = |name: &str| load_block(&manifest, &base, name, path);
    match manifest.kind {
        ModelKind::PortHamiltonian => {
            let sys = PhSystem::new(
                load("H")?,
                load("J")?,
                load("R")?,
                load("G")?,
                load("P")?,
                load("S")?,
                load("N")?,
            )?;
            let violations = sys.validate(STRUCTURE_TOL);
            if violations.is_empty() {
                Ok(Model::Ph(sys))
            } else {
                Err(Error::Structure(violations))
            }
        }
        kind => {
            let sys = LtiSystem::new(load("A")?, load("B")?, load("C")?, load("D")?)?;
            let discrete_dt = match kind {
                ModelKind::LtiDiscrete => Some(manifest.dt.ok_or_else(|| {
                    Error::parse(path, "discrete-time model manifest needs 'dt'")
                })?),
                _ => None,
            };
            Ok(Model::Lti { sys, discrete_dt })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{msd_builder, Violation};

    #[test]
    fn mtx_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mat::from_row_slice(2, 3, &[0.1, 1.0 / 3.0, -2e-300, 1e300, 5.0, -0.0]);
        let path = dir.path().join("m.mtx");
        write_mtx(&path, &m).unwrap();
        let back = read_mtx(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn system_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sys = msd_builder(3, 4.0, 4.0, 1.0, 1).unwrap();
        let manifest = save_system(&sys, dir.path()).unwrap();
        assert_eq!(load_system(&manifest).unwrap(), sys);
        assert_eq!(load_system(dir.path()).unwrap(), sys);
    }

    #[test]
    fn rejects_non_spd_h() {
        let dir = tempfile::tempdir().unwrap();
        let mut sys = msd_builder(3, 4.0, 4.0, 1.0, 1).unwrap();
        sys.h[(0, 0)] = -1.0;
        save_system(&sys, dir.path()).unwrap();
        match load_system(dir.path()) {
            Err(Error::Structure(v)) => {
                assert!(v.iter().any(|x| matches!(x, Violation::HNotSpd { .. })));
                assert!(Error::Structure(v).to_string().contains("H not SPD"));
            }
            other => panic!("expected structure error, got {other:?}"),
        }
    }

    #[test]
    fn missing_block_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let sys = msd_builder(1, 1.0, 1.0, 1.0, 1).unwrap();
        save_system(&sys, dir.path()).unwrap();
        fs::remove_file(dir.path().join("R.mtx")).unwrap();
        let err = load_system(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("R.mtx"));
    }

    #[test]
    fn malformed_mtx() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mtx");
        fs::write(&path, "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n").unwrap();
        assert!(matches!(read_mtx(&path), Err(Error::Parse { .. })));
        fs::write(&path, "%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 2\n").unwrap();
        assert!(matches!(read_mtx(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn lti_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sys = msd_builder(2, 1.0, 1.0, 0.3, 1).unwrap().to_lti().unwrap();
        save_lti(&sys, Some(0.04), dir.path()).unwrap();
        match load_model(dir.path()).unwrap() {
            Model::Lti { sys: back, discrete_dt } => {
                assert_eq!(back, sys);
                assert_eq!(discrete_dt, Some(0.04));
            }
            _ => panic!("expected LTI model"),
        }
        assert!(load_system(dir.path()).is_err());
    }
}
