use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{IntensityMap, SpectralOrder};
use crate::connectome::FlowClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub manifest: PathBuf,
}

/// Rows are neurons in `order`, columns are time steps. Values are written
/// in shortest round-trip form.
pub fn write_intensity_csv(map: &IntensityMap, order: &[usize], ids: &[usize], flow: &[FlowClass], superclass: &[String], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["neuron".to_string(), "flow_class".into(), "superclass".into()];
    header.extend((0..map.steps).map(|t| format!("t{t}")));
    w.write_record(&header)?;
    for &n in order {
        let mut rec = vec![ids[n].to_string(), flow[n].to_string(), superclass[n].clone()];
        rec.extend((0..map.steps).map(|t| map.get(t, n).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn color(v: f64) -> String {
    // Dark blue to yellow.
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(20.0, 250.0), lerp(30.0, 220.0), lerp(90.0, 40.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Heatmap with neurons grouped by (flow class, superclass); within a group
/// neurons keep their position in `order`. Groups are separated by lines.
pub fn write_svg_heatmap(map: &IntensityMap, order: &[usize], flow: &[FlowClass], superclass: &[String]) -> String {
    let mut rows: Vec<usize> = order.to_vec();
    rows.sort_by_key(|&n| (flow[n], superclass[n].clone()));
    let (cw, rh, left) = (2.0, 2.0, 140.0);
    let width = left + cw * map.steps as f64 + 10.0;
    let height = rh * rows.len() as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let mut prev: Option<(FlowClass, &str)> = None;
    for (k, &n) in rows.iter().enumerate() {
        let y = 5.0 + rh * k as f64;
        let key = (flow[n], superclass[n].as_str());
        if prev != Some(key) {
            let _ = writeln!(s, r#"<line x1="0" y1="{y}" x2="{width}" y2="{y}" stroke="black" stroke-width="0.5"/>"#);
            let _ = writeln!(
                s,
                r#"<text x="2" y="{}" font-size="6" font-family="sans-serif">{} / {}</text>"#,
                y + 6.0,
                key.0,
                escape(key.1)
            );
            prev = Some(key);
        }
        for t in 0..map.steps {
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{y}" width="{cw}" height="{rh}" fill="{}"/>"#,
                left + cw * t as f64,
                color(map.get(t, n))
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `intensity.csv`, `heatmap.svg` and `manifest.txt` into `dir`.
#[allow(clippy::too_many_arguments)]
pub fn emit_report(
    dir: &Path,
    map: &IntensityMap,
    order: &SpectralOrder,
    ids: &[usize],
    flow: &[FlowClass],
    superclass: &[String],
    manifest: &[(String, String)],
) -> Result<ReportFiles> {
    if order.perm.len() != map.neurons || ids.len() != map.neurons || flow.len() != map.neurons || superclass.len() != map.neurons {
        return Err(Error::shape("report inputs are not aligned with the intensity map"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let files = ReportFiles {
        csv: dir.join("intensity.csv"),
        svg: dir.join("heatmap.svg"),
        manifest: dir.join("manifest.txt"),
    };
    let mut csv_bytes = Vec::new();
    write_intensity_csv(map, &order.perm, ids, flow, superclass, &mut csv_bytes)?;
    fs::write(&files.csv, csv_bytes).map_err(|e| Error::file(&files.csv, e))?;
    fs::write(&files.svg, write_svg_heatmap(map, &order.perm, flow, superclass)).map_err(|e| Error::file(&files.svg, e))?;
    let mut text = String::new();
    for (k, v) in manifest {
        let _ = writeln!(text, "{k} = {v}");
    }
    let _ = writeln!(text, "fiedler_value = {}", order.fiedler_value);
    let _ = writeln!(text, "degenerate = {}", order.degenerate);
    let _ = writeln!(text, "pc1_loadings = {:?}", map.loadings);
    let _ = writeln!(text, "clip = {:?}", map.clip);
    fs::write(&files.manifest, text).map_err(|e| Error::file(&files.manifest, e))?;
    Ok(files)
}
