use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use netar::model::{read_matrix_csv, NarSpec};
use netar::panel_io::{ingest_panel, GapPolicy, PanelDataset, PanelSchema};
use netar::NarError;
use serde::Deserialize;

use crate::args::{DataArgs, GapArg};
use crate::CliError;

/// Model spec file. `a[l]`, `b[l]` hold the lag-`l+1` coefficients of every
/// node, `gamma` has one row of `p` values per node and `w_path` is relative
/// to the spec file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub n: usize,
    pub q1: usize,
    pub q2: usize,
    pub p: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub gamma: Vec<Vec<f64>>,
    pub w_path: PathBuf,
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Nar(NarError::Data(format!("{}: {e}", path.display()))))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    Ok(read_matrix_csv(open(path)?)?)
}

pub fn load_spec(path: &Path) -> Result<NarSpec<f64>, CliError> {
    let spec: SpecFile = serde_json::from_reader(open(path)?)?;
    let data_err = |m: String| CliError::Nar(NarError::Data(m));
    if spec.a.len() != spec.q1 || spec.b.len() != spec.q2 {
        return Err(data_err("a and b must list q1 and q2 lag vectors".into()));
    }
    if spec.gamma.is_empty() && spec.p > 0 || !spec.gamma.is_empty() && spec.gamma.len() != spec.n {
        return Err(data_err("gamma must have n rows of p values".into()));
    }
    if spec.gamma.iter().any(|r| r.len() != spec.p) {
        return Err(data_err("gamma rows must have p values".into()));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let w = read_matrix(&base.join(&spec.w_path))?;
    if w.shape() != (spec.n, spec.n) {
        return Err(data_err(format!("W must be {0}x{0}", spec.n)));
    }
    let vecs = |v: &Vec<Vec<f64>>| -> Vec<DVector<f64>> { v.iter().map(|l| DVector::from_vec(l.clone())).collect() };
    let gamma = DMatrix::from_fn(spec.n, spec.p, |i, k| spec.gamma[i][k]);
    Ok(NarSpec::new(vecs(&spec.a), vecs(&spec.b), gamma, w)?)
}

pub fn load_panel(args: &DataArgs) -> Result<(PanelDataset, DMatrix<f64>), CliError> {
    let schema = PanelSchema {
        time_col: args.time_col.clone(),
        node_col: args.node_col.clone(),
        value_col: args.value_col.clone(),
        covariate_cols: args.covariates.clone(),
    };
    let policy = match args.gap_policy {
        GapArg::Error => GapPolicy::Error,
        GapArg::ForwardFill => GapPolicy::ForwardFill,
        GapArg::DropNode => GapPolicy::DropNode,
    };
    let data = ingest_panel(open(&args.data)?, &schema, policy, args.log)?;
    let w = read_matrix(&args.w)?;
    if w.nrows() != data.node_ids.len() || !w.is_square() {
        return Err(CliError::Nar(NarError::Dimension(format!(
            "W is {}x{} but the panel has {} nodes",
            w.nrows(),
            w.ncols(),
            data.node_ids.len()
        ))));
    }
    Ok((data, w))
}

pub fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_json<T: serde::Serialize>(out: &Option<PathBuf>, value: &T) -> Result<(), CliError> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
