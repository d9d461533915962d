//! Flat `key = value` configuration with `[section]` headers.
//!
//! ```text
//! [inflow]
//! gamma = 3
//! ...
//! [potential3d]
//! u1_en.0.0 = 1e-4      # field.i.j
//! b_star.0.0.1 = 2e-4   # b_star.i.j.p
//! [axisym]
//! s_en.1 = 1e-3         # field.j
//! b_star.0.0 = 1e-4     # b_star.j.p
//! ```
//!
//! `#` starts a comment. Unknown sections or keys and repeated keys are errors.

use std::collections::BTreeMap;

use epnozzle_core::axisym::{AxiConfig, BoundaryDataAxi};
use epnozzle_core::background::InflowData;
use epnozzle_core::potential3d::{BoundaryData3D, PicardConfig};
use epnozzle_core::spectral::ModalTable;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Everything one invocation needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub inflow: InflowData,
    /// Modes per direction beyond the constant one.
    pub m: usize,
    pub n_nodes: usize,
    /// Refinement factor of the verification comparison.
    pub refine: usize,
    pub seed: u64,
    pub sonic_floor: f64,
    /// Absolute level below which residuals and differences count as roundoff.
    pub verify_floor: f64,
    pub verify_min_rate: f64,
    pub picard: PicardConfig,
    pub axi: AxiConfig,
    pub data3d: BoundaryData3D,
    pub data_axi: BoundaryDataAxi,
    /// SHA-256 of the config text.
    pub hash: String,
}

type Section = BTreeMap<String, (f64, usize)>;

fn err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>, CliError> {
    const SECTIONS: [&str; 5] = ["run", "inflow", "tolerances", "potential3d", "axisym"];
    let mut out: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| err(line_no, "unterminated section header"))?.trim();
            if !SECTIONS.contains(&name) {
                return Err(err(line_no, format!("unknown section [{name}]")));
            }
            out.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| err(line_no, "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        let section = current.as_ref().ok_or_else(|| err(line_no, "key outside any section"))?;
        let v: f64 = value.parse().map_err(|_| err(line_no, format!("{key}: '{value}' is not a number")))?;
        if !v.is_finite() {
            return Err(err(line_no, format!("{key}: value must be finite")));
        }
        let sec = out.get_mut(section).expect("section inserted on header");
        if sec.insert(key.to_string(), (v, line_no)).is_some() {
            return Err(err(line_no, format!("repeated key {key} in [{section}]")));
        }
    }
    Ok(out)
}

struct Reader {
    sec: Section,
    name: &'static str,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<(f64, usize)> {
        self.sec.remove(key)
    }

    fn float(&mut self, key: &str, default: Option<f64>) -> Result<f64, CliError> {
        match (self.take(key), default) {
            (Some((v, _)), _) => Ok(v),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(CliError::Config(format!("[{}] is missing required key {key}", self.name))),
        }
    }

    fn positive(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = self.float(key, Some(default))?;
        if v <= 0.0 {
            return Err(CliError::Config(format!("[{}] {key} must be positive", self.name)));
        }
        Ok(v)
    }

    fn count(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, _)) if v >= 0.0 && v.fract() == 0.0 && v < 1e9 => Ok(v as usize),
            Some((_, line)) => Err(err(line, format!("{key} must be a non-negative integer"))),
        }
    }

    /// Drains `field.a.b...` entries with exactly `arity` integer indices.
    fn indexed(&mut self, field: &str, arity: usize) -> Result<Vec<(Vec<usize>, f64)>, CliError> {
        let prefix = format!("{field}.");
        let keys: Vec<String> = self.sec.keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
        let mut out = Vec::new();
        for k in keys {
            let (v, line) = self.sec.remove(&k).expect("key listed above");
            let idx: Result<Vec<usize>, _> = k[prefix.len()..].split('.').map(|s| s.parse::<usize>()).collect();
            match idx {
                Ok(idx) if idx.len() == arity => out.push((idx, v)),
                _ => return Err(err(line, format!("{k}: expected {field} with {arity} integer indices"))),
            }
        }
        Ok(out)
    }

    fn table_ij(&mut self, field: &str) -> Result<ModalTable, CliError> {
        let e = self.indexed(field, 2)?;
        Ok(ModalTable { entries: e.into_iter().map(|(i, v)| (i[0], i[1], v)).collect() })
    }

    fn table_j(&mut self, field: &str) -> Result<ModalTable, CliError> {
        let e = self.indexed(field, 1)?;
        Ok(ModalTable { entries: e.into_iter().map(|(i, v)| (0, i[0], v)).collect() })
    }

    fn finish(self) -> Result<(), CliError> {
        if let Some((k, (_, line))) = self.sec.into_iter().next() {
            return Err(err(line, format!("unknown key {k} in [{}]", self.name)));
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut secs = parse_sections(text)?;
        let mut reader = |name: &'static str| Reader { sec: secs.remove(name).unwrap_or_default(), name };
        let mut inflow_r = reader("inflow");
        let mut run = reader("run");
        let mut tol = reader("tolerances");
        let mut p3 = reader("potential3d");
        let mut ax = reader("axisym");

        let inflow = InflowData {
            gamma: inflow_r.float("gamma", None)?,
            b0: inflow_r.float("b0", None)?,
            rho0: inflow_r.float("rho0", None)?,
            u0: inflow_r.float("u0", None)?,
            s0: inflow_r.float("s0", Some(0.0))?,
            e0: inflow_r.float("e0", Some(0.0))?,
            r0: inflow_r.float("r0", None)?,
            r1: inflow_r.float("r1", None)?,
            theta0: inflow_r.float("theta0", None)?,
        };
        inflow_r.finish()?;

        let m = run.count("m", 8)?;
        let n_nodes = run.count("n_nodes", 129)?;
        let refine = run.count("refine", 2)?;
        let seed = run.count("seed", 0)? as u64;
        run.finish()?;
        if m == 0 {
            return Err(CliError::Config("[run] m must be at least 1".into()));
        }

        let tol_fix = tol.positive("tol_fix", 1e-10)?;
        let max_iter = tol.count("max_iter", 50)?;
        let tol_outer = tol.positive("tol_outer", tol_fix)?;
        let max_outer = tol.count("max_outer", 30)?;
        let sonic_floor = tol.positive("sonic_floor", 1e-6)?;
        let verify_floor = tol.positive("verify_floor", 1e-13)?;
        let verify_min_rate = tol.positive("verify_min_rate", 1.5)?;
        let gmres_tol = tol.positive("gmres_tol", 1e-13)?;
        tol.finish()?;

        let mut picard = PicardConfig { tol_fix, max_iter, ..Default::default() };
        picard.bvp.rel_tol = gmres_tol;
        picard.delta_star = p3.positive("delta_star", picard.delta_star)?;
        picard.damping = p3.positive("damping", 1.0)?;
        let data3d = BoundaryData3D {
            b_star: p3.indexed("b_star", 3)?.into_iter().map(|(i, v)| (i[0], i[1], i[2], v)).collect(),
            u1_en: p3.table_ij("u1_en")?,
            e_en: p3.table_ij("e_en")?,
            phi_ex: p3.table_ij("phi_ex")?,
        };
        p3.finish()?;

        let mut axi = AxiConfig { tol_inner: tol_fix, tol_outer, max_inner: max_iter, max_outer, ..Default::default() };
        axi.bvp.rel_tol = gmres_tol;
        axi.delta1_star = ax.positive("delta1_star", axi.delta1_star)?;
        axi.delta2_star = ax.positive("delta2_star", axi.delta2_star)?;
        axi.damping = ax.positive("damping", 1.0)?;
        axi.u1_floor = ax.positive("u1_floor", axi.u1_floor)?;
        let data_axi = BoundaryDataAxi {
            b_star: ax.indexed("b_star", 2)?.into_iter().map(|(i, v)| (i[0], i[1], v)).collect(),
            u1_en: ax.table_j("u1_en")?,
            u2_en: ax.table_j("u2_en")?,
            u3_en: ax.table_j("u3_en")?,
            k_en: ax.table_j("k_en")?,
            s_en: ax.table_j("s_en")?,
            e_en: ax.table_j("e_en")?,
            phi_ex: ax.table_j("phi_ex")?,
        };
        ax.finish()?;
        if picard.damping > 1.0 || axi.damping > 1.0 {
            return Err(CliError::Config("damping must lie in (0, 1]".into()));
        }

        let hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            inflow,
            m,
            n_nodes,
            refine,
            seed,
            sonic_floor,
            verify_floor,
            verify_min_rate,
            picard,
            axi,
            data3d,
            data_axi,
            hash,
        })
    }

    pub fn read(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
