//! CSV/JSON serialization helpers with byte-stable formatting.
//!
//! Floats print through Rust's shortest round-trip formatter, so identical
//! bit patterns always serialize to identical bytes. Coefficient files store
//! components in the numerically orthonormalized basis; the degree-1 modes
//! are the coordinate functions e_i scaled to unit L^2 norm (e_i has L^2 norm
//! pi/sqrt(2) on S^3), which makes the files portable across runs.

use crate::error::Result;
use crate::extension::ExtensionField;
use crate::radial::ModalRadialField;
use crate::sphere::{mode_from_flat, BoundaryData};
use std::fmt::Write as _;
use std::path::Path;

/// Formats one float with full round-trip fidelity.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // normalize -0.0 for byte stability across algebraically equal paths
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// BoundaryData as CSV rows `l,index,coefficient`.
pub fn boundary_data_csv(data: &BoundaryData) -> String {
    let mut out = String::from("l,index,coefficient\n");
    for (mode, c) in data.iter_modes() {
        let _ = writeln!(out, "{},{},{}", mode.degree, mode.index, fmt_f64(c));
    }
    out
}

/// Parses the CSV form written by [`boundary_data_csv`].
pub fn boundary_data_from_csv(text: &str, regularity: u8) -> Result<BoundaryData> {
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    let mut max_degree = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with('l')) || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(crate::error::Error::InvalidConfig(format!(
                "bad boundary-data row: {line}"
            )));
        }
        let l: usize = parts[0]
            .trim()
            .parse()
            .map_err(|e| crate::error::Error::InvalidConfig(format!("bad degree: {e}")))?;
        let idx: usize = parts[1]
            .trim()
            .parse()
            .map_err(|e| crate::error::Error::InvalidConfig(format!("bad index: {e}")))?;
        let v: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|e| crate::error::Error::InvalidConfig(format!("bad value: {e}")))?;
        max_degree = max_degree.max(l);
        rows.push((l, idx, v));
    }
    let mut data = BoundaryData::zero(max_degree, regularity);
    for (l, idx, v) in rows {
        *data.coeff_mut(crate::sphere::HarmonicMode::new(l, idx)) = v;
    }
    Ok(data)
}

/// ModalRadialField as CSV rows `l,index,r,value`.
pub fn modal_field_csv(field: &ModalRadialField) -> String {
    let mut out = String::from("l,index,r,value\n");
    for (flat, values) in field.values.iter().enumerate() {
        let mode = mode_from_flat(flat);
        for (i, r) in field.grid.nodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                mode.degree,
                mode.index,
                fmt_f64(*r),
                fmt_f64(values[i])
            );
        }
    }
    out
}

/// ExtensionField as JSON: per mode, the list of (power, log_power, coeff).
pub fn extension_field_json(field: &ExtensionField) -> Result<String> {
    Ok(serde_json::to_string_pretty(field)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_data_round_trips_through_csv() {
        let mut d = BoundaryData::zero(3, 4);
        for (i, c) in d.coeffs.iter_mut().enumerate() {
            *c = (i as f64 * 0.123).sin();
        }
        let csv = boundary_data_csv(&d);
        let back = boundary_data_from_csv(&csv, 4).unwrap();
        assert_eq!(d.coeffs, back.coeffs);
    }

    #[test]
    fn formatting_is_stable() {
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(-0.0), "0");
        assert_eq!(fmt_f64(1.0 / 3.0), fmt_f64(1.0 / 3.0));
    }
}
