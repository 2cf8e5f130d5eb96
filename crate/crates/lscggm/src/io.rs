//! File interchange: dense CSV matrices (row-major, '.' decimal, no header)
//! and the dataset directory layout
//! `design.json`, `truth/*.csv`, `data_z.csv`, `data_x.csv`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::GroundTruthModel;
use crate::simulate::{SimulationDesign, SyntheticDataset};

/// Write a matrix as dense CSV. Values use the shortest round-trip decimal
/// form. A matrix with zero rows produces an empty file.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{}", m[(i, j)])?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dense CSV matrix. Empty files produce a 0×0 matrix.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    crate::linalg::from_rows(&rows)
}

/// Persist a dataset directory: design.json, the five nominal matrices plus
/// the marginalised pair under truth/, and the two data matrices.
pub fn save_dataset(dir: &Path, ds: &SyntheticDataset) -> Result<()> {
    fs::create_dir_all(dir.join("truth"))?;
    let design_json = serde_json::to_string_pretty(&ds.design)
        .map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join("design.json"), design_json)?;
    let t = &ds.truth;
    write_matrix_csv(&dir.join("truth/m_x.csv"), t.m_x())?;
    write_matrix_csv(&dir.join("truth/m_xh.csv"), t.m_xh())?;
    write_matrix_csv(&dir.join("truth/m_h.csv"), t.m_h())?;
    write_matrix_csv(&dir.join("truth/m_zx.csv"), t.m_zx())?;
    write_matrix_csv(&dir.join("truth/m_zh.csv"), t.m_zh())?;
    write_matrix_csv(&dir.join("truth/s_star.csv"), t.s_star())?;
    write_matrix_csv(&dir.join("truth/l_star.csv"), t.l_star())?;
    write_matrix_csv(&dir.join("data_z.csv"), &ds.data_z)?;
    write_matrix_csv(&dir.join("data_x.csv"), &ds.data_x)?;
    Ok(())
}

/// Load the data matrices of a dataset directory.
pub fn load_data(dir: &Path) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let data_z = read_matrix_csv(&dir.join("data_z.csv"))?;
    let data_x = read_matrix_csv(&dir.join("data_x.csv"))?;
    if data_x.nrows() > 0 && data_z.nrows() == 0 {
        // a dataset without inputs: give data_z the right row count
        return Ok((DMatrix::zeros(data_x.nrows(), 0), data_x));
    }
    Ok((data_z, data_x))
}

/// Load the ground truth of a dataset directory.
pub fn load_truth(dir: &Path) -> Result<GroundTruthModel> {
    let m_x = read_matrix_csv(&dir.join("truth/m_x.csv"))?;
    let p = m_x.nrows();
    let m_h = read_matrix_csv(&dir.join("truth/m_h.csv"))?;
    let h = m_h.nrows();
    let m_zx = read_matrix_csv(&dir.join("truth/m_zx.csv"))?;
    let m = m_zx.nrows();
    let fix = |mat: DMatrix<f64>, r: usize, c: usize| -> DMatrix<f64> {
        if mat.nrows() == r && mat.ncols() == c {
            mat
        } else {
            DMatrix::zeros(r, c)
        }
    };
    let m_xh = fix(read_matrix_csv(&dir.join("truth/m_xh.csv"))?, p, h);
    let m_zh = fix(read_matrix_csv(&dir.join("truth/m_zh.csv"))?, m, h);
    GroundTruthModel::new(m_x, m_xh, m_h, m_zx, m_zh)
}

/// Load a full dataset directory.
pub fn load_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let design_text = fs::read_to_string(dir.join("design.json"))?;
    let design: SimulationDesign =
        serde_json::from_str(&design_text).map_err(|e| Error::Parse(e.to_string()))?;
    let truth = load_truth(dir)?;
    let (data_z, data_x) = load_data(dir)?;
    Ok(SyntheticDataset { truth, data_z, data_x, design })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::simulate;

    #[test]
    fn matrix_csv_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(
            2,
            3,
            &[1.0 / 3.0, -2.5e-17, 0.0, f64::MIN_POSITIVE, 1e300, -7.25],
        );
        write_matrix_csv(&path, &m).unwrap();
        let back = read_matrix_csv(&path).unwrap();
        assert_eq!(m, back);
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains(';'), "decimal point must be '.' and sep ','");
    }

    #[test]
    fn dataset_directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let design = simulate::SimulationDesign::new(8, 20, 1, 1, 5).unwrap();
        let ds = simulate::sample_dataset(&design).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.data_z, back.data_z);
        assert_eq!(ds.data_x, back.data_x);
        assert!(linalg::frob_dist(ds.truth.s_star(), back.truth.s_star()) == 0.0);
        assert!(linalg::frob_dist(ds.truth.l_star(), back.truth.l_star()) < 1e-15);
        assert_eq!(back.design.seed, 5);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_matrix_csv(&dir.path().join("nope.csv")),
            Err(Error::Io(_))
        ));
    }
}
