//! CS curve export: `layer_index,layer_name,scale,cs`, one row per
//! (tap, scale), taps outer and scales inner.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{CSCurveSet, CurveMeta};
use crate::data::bin::{read_file, write_file};
use crate::error::{Error, Result};
use crate::nn::Window;

pub const CS_CSV_HEADER: &str = "layer_index,layer_name,scale,cs";

pub fn cs_csv_string(curves: &CSCurveSet) -> Result<String> {
    let mut out = String::from(CS_CSV_HEADER);
    out.push('\n');
    for (i, (&layer, name)) in curves.layer_indices.iter().zip(&curves.layer_names).enumerate() {
        if name.contains([',', '\n', '\r']) {
            return Err(Error::invalid(format!("layer name {name:?} cannot be written to CSV")));
        }
        for (s, scale) in curves.scales.iter().enumerate() {
            writeln!(out, "{layer},{name},{scale},{:.6}", curves.values[i][s]).expect("writing to a String");
        }
    }
    Ok(out)
}

pub fn write_cs_csv(curves: &CSCurveSet, path: &Path) -> Result<()> {
    write_file(path, cs_csv_string(curves)?.as_bytes())
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        what: "CS csv",
        msg: format!("line {line}: {}", msg.into()),
    }
}

/// Parses CSV text produced by [`cs_csv_string`]. Metadata is not stored in
/// the file and comes back as defaults.
pub fn parse_cs_csv(text: &str) -> Result<CSCurveSet> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CS_CSV_HEADER) {
        return Err(bad(1, format!("expected header {CS_CSV_HEADER:?}")));
    }
    let mut curves = CSCurveSet {
        scales: Vec::new(),
        layer_indices: Vec::new(),
        layer_names: Vec::new(),
        values: Vec::new(),
        meta: CurveMeta::default(),
    };
    let mut col = 0;
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [layer, name, scale, cs] = fields[..] else {
            return Err(bad(lineno, format!("expected 4 fields, got {}", fields.len())));
        };
        let layer: usize = layer.parse().map_err(|_| bad(lineno, format!("bad layer index {layer:?}")))?;
        let scale: Window = scale.parse().map_err(|_| bad(lineno, format!("bad scale {scale:?}")))?;
        let cs: f64 = cs.parse().map_err(|_| bad(lineno, format!("bad cs {cs:?}")))?;
        if !(0.0..=1.0).contains(&cs) {
            return Err(bad(lineno, format!("cs {cs} outside [0, 1]")));
        }
        let new_tap = curves.layer_indices.last() != Some(&layer);
        if new_tap {
            if !curves.values.is_empty() && col != curves.scales.len() {
                return Err(bad(lineno, "previous layer has missing scales"));
            }
            curves.layer_indices.push(layer);
            curves.layer_names.push(name.to_string());
            curves.values.push(Vec::new());
            col = 0;
        }
        if curves.values.len() == 1 {
            curves.scales.push(scale);
        } else if curves.scales.get(col) != Some(&scale) {
            return Err(bad(lineno, format!("unexpected scale {scale}")));
        }
        curves.values.last_mut().expect("row pushed above").push(cs);
        col += 1;
    }
    if !curves.values.is_empty() && col != curves.scales.len() {
        return Err(bad(0, "last layer has missing scales"));
    }
    Ok(curves)
}

pub fn read_cs_csv(path: &Path) -> Result<CSCurveSet> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Format {
        what: "CS csv",
        msg: "not valid UTF-8".into(),
    })?;
    parse_cs_csv(&text)
}
