use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Seventeen significant digits, enough to reproduce any `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// CSV text with a header row; numbers use [`fmt_f64`].
pub fn csv_text(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.into_iter().map(fmt_f64).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// File name fragment with only `[A-Za-z0-9.-]`.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub arguments: Vec<String>,
    pub seed: u64,
    pub formats: Vec<String>,
    pub config_sha256: String,
    /// Config exactly as consumed, re-serialised.
    pub config: String,
    pub files: Vec<FileEntry>,
}

/// Collects output files in one directory and writes them through a single
/// serializer, recording a digest of each.
#[derive(Debug)]
pub struct OutputWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: contents.len(),
            sha256: sha256_hex(contents),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, mut manifest: Manifest) -> Result<Vec<FileEntry>> {
        manifest.files = self.files.clone();
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.files)
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Line plot of each series against `x`, at most `max_points` vertices per line.
pub fn svg_plot(title: &str, x: &[f64], series: &[(String, Vec<f64>)], max_points: usize) -> String {
    let (w, h, pad) = (800.0, 420.0, 50.0);
    let finite = |v: &f64| v.is_finite();
    let (x0, x1) = bounds(x.iter().copied().filter(finite));
    let (y0, y1) = bounds(series.iter().flat_map(|(_, s)| s.iter().copied().filter(finite)));
    let sx = |v: f64| pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v - y0) / (y1 - y0) * (h - 2.0 * pad);
    let stride = (x.len() / max_points.max(1)).max(1);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(out, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"30\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>",
        w / 2.0,
        escape(title)
    );
    for (v, anchor, px, py) in [
        (x0, "start", pad, h - pad + 18.0),
        (x1, "end", w - pad, h - pad + 18.0),
    ] {
        let _ = writeln!(
            out,
            "<text x=\"{px}\" y=\"{py}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            short(v)
        );
    }
    for (v, py) in [(y0, h - pad), (y1, pad + 10.0)] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{py}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            pad - 4.0,
            short(v)
        );
    }
    for (k, (name, ys)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut points = String::new();
        for i in (0..x.len().min(ys.len())).step_by(stride) {
            if x[i].is_finite() && ys[i].is_finite() {
                let _ = write!(points, "{:.2},{:.2} ", sx(x[i]), sy(ys[i]));
            }
        }
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.2\" points=\"{}\"/>",
            points.trim_end()
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{colour}\">{}</text>",
            w - pad + 4.0,
            pad + 14.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn short(v: f64) -> String {
    format!("{v:.4}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn csv_layout() {
        let t = csv_text(&["t".into(), "x".into()], vec![vec![0.0, 1.5]]);
        assert_eq!(t, "t,x\n0.0000000000000000e0,1.5000000000000000e0\n");
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("gamma=0.8"), "gamma_0.8");
        assert_eq!(slug("vbar0=-0.900"), "vbar0_-0.900");
    }

    #[test]
    fn svg_is_well_formed() {
        let x = [0.0, 1.0, 2.0];
        let s = svg_plot("a<b", &x, &[("y".into(), vec![1.0, f64::NAN, 3.0])], 100);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("a&lt;b"));
        assert_eq!(s.matches("<polyline").count(), 1);
    }

    #[test]
    fn writer_records_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = OutputWriter::new(dir.path()).unwrap();
        w.write("a.txt", b"abc").unwrap();
        let files = w
            .finish(Manifest {
                tool: "t",
                version: "0",
                command: "c".into(),
                arguments: vec![],
                seed: 1,
                formats: vec![],
                config_sha256: String::new(),
                config: String::new(),
                files: vec![],
            })
            .unwrap();
        assert_eq!(files[0].bytes, 3);
        let m = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(m.contains("ba7816bf"));
    }
}
