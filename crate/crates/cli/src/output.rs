//! Deterministic CSV and JSON emission.

use std::fmt::Write as _;
use std::path::Path;

use epnozzle_core::background::BackgroundSolution;
use epnozzle_core::spectral::{CrossSection, ModalField};

use crate::CliError;

/// Shortest decimal that round-trips to the same double.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        "nan".to_string()
    }
}

pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_file(dir, name, &text)
}

/// `background.csv`: one row per radial node.
pub fn background_csv(bg: &BackgroundSolution) -> String {
    let mut s = String::from("r,rho,U,E,Phi,c2,K\n");
    for i in 0..bg.len() {
        let row = [bg.grid_r[i], bg.rho_bar[i], bg.u_bar[i], bg.e_bar[i], bg.phi_bar[i], bg.c2_bar[i], bg.k_bar[i]];
        let cells: Vec<String> = row.iter().map(|v| num(*v)).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

/// Modal dump `i,j,r,value`, mode-major, radial nodes in order.
pub fn modal_csv(cs: &CrossSection, r: &[f64], f: &ModalField) -> String {
    let mut s = String::from("i,j,r,value\n");
    for k in 0..f.n_modes() {
        let (i, j) = cs.mode(k);
        for (n, v) in f.row(k).iter().enumerate() {
            let _ = writeln!(s, "{i},{j},{},{}", num(r[n]), num(*v));
        }
    }
    s
}

/// Rows of equal-length numeric records under a header.
pub fn table_csv(header: &str, rows: &[impl AsRef<[f64]>]) -> String {
    let mut s = format!("{header}\n");
    for row in rows {
        let cells: Vec<String> = row.as_ref().iter().map(|v| num(*v)).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}
