//! Cohort manifests and archives.
//!
//! A manifest is UTF-8 CSV with the header
//! `subject_id,visit_year,L_CC,L_MLO,R_CC,R_MLO,diagnosis_year,last_followup_year`,
//! one row per visit. Lines starting with `#` are ignored. Each payload cell
//! is either a path to a PFM image (relative to the manifest's directory) or
//! an inline embedding written as `;`-separated numbers.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Image, Payload, Slot, SubjectTimeline, VisitRecord};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
const HEADER: [&str; 8] = [
    "subject_id",
    "visit_year",
    "L_CC",
    "L_MLO",
    "R_CC",
    "R_MLO",
    "diagnosis_year",
    "last_followup_year",
];

struct Pending {
    visits: Vec<VisitRecord>,
    diagnosis_year: Option<i32>,
    last_followup_year: i32,
    line: u64,
}

pub fn load_manifest(path: &Path) -> Result<Vec<SubjectTimeline>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", HEADER.join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut subjects: HashMap<String, Pending> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let perr = |message: String| Error::Parse { line, message };
        let int = |i: usize| -> Result<i32> {
            record[i]
                .parse::<i32>()
                .map_err(|e| perr(format!("{} {:?}: {e}", HEADER[i], &record[i])))
        };

        let subject_id = record[0].to_string();
        if subject_id.is_empty() {
            return Err(perr("empty subject_id".into()));
        }
        let visit_year = int(1)?;
        let diagnosis_year = if record[6].is_empty() { None } else { Some(int(6)?) };
        let last_followup_year = int(7)?;
        let mut payloads = Vec::with_capacity(4);
        for (k, slot) in Slot::ALL.iter().enumerate() {
            let cell = &record[2 + k];
            payloads.push(parse_payload(cell, base).map_err(|e| perr(format!("{slot}: {e}")))?);
        }
        let images: [Payload; 4] = payloads.try_into().expect("four payloads");
        let visit = VisitRecord::new(subject_id.clone(), visit_year, images)?;

        match subjects.get_mut(&subject_id) {
            Some(p) => {
                if p.diagnosis_year != diagnosis_year || p.last_followup_year != last_followup_year {
                    return Err(Error::Validation {
                        subject: subject_id,
                        message: format!(
                            "line {line}: diagnosis/follow-up disagree with line {}",
                            p.line
                        ),
                    });
                }
                p.visits.push(visit);
            }
            None => {
                order.push(subject_id.clone());
                subjects.insert(
                    subject_id,
                    Pending { visits: vec![visit], diagnosis_year, last_followup_year, line },
                );
            }
        }
    }

    order
        .into_iter()
        .map(|id| {
            let p = subjects.remove(&id).unwrap();
            SubjectTimeline::new(id, p.visits, p.diagnosis_year, p.last_followup_year)
        })
        .collect()
}

fn parse_payload(cell: &str, base: &Path) -> Result<Payload> {
    if cell.is_empty() {
        return Err(Error::Format("empty payload cell".into()));
    }
    let numbers: Option<Vec<f64>> = cell.split(';').map(|t| t.trim().parse::<f64>().ok()).collect();
    match numbers {
        Some(v) => Ok(Payload::Embedding(v)),
        None => Ok(Payload::Image(read_pfm(&base.join(cell))?)),
    }
}

/// Writes `timelines` as a cohort archive: `manifest.csv` plus one PFM file
/// per image under `images/`. Embedding payloads are written inline.
pub fn write_cohort_archive(dir: &Path, timelines: &[SubjectTimeline]) -> Result<()> {
    let img_dir = dir.join("images");
    let mut out = BufWriter::new(std::fs::File::create(dir.join(MANIFEST_FILE))?);
    writeln!(out, "{}", HEADER.join(","))?;
    for t in timelines {
        for v in &t.visits {
            let mut cells = Vec::with_capacity(4);
            for slot in Slot::ALL {
                match v.payload(slot) {
                    Payload::Image(img) => {
                        std::fs::create_dir_all(&img_dir)?;
                        let rel = format!("images/{}_{}_{}.pfm", t.subject_id, v.visit_year, slot);
                        write_pfm(&dir.join(&rel), img)?;
                        cells.push(rel);
                    }
                    Payload::Embedding(e) => cells.push(
                        e.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
                    ),
                }
            }
            let dx = t.diagnosis_year.map(|d| d.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{}",
                t.subject_id,
                v.visit_year,
                cells.join(","),
                dx,
                t.last_followup_year
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes a grayscale Portable Float Map (little-endian, `f32`).
pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    let mut buf = format!("Pf\n{} {}\n-1.0\n", img.cols(), img.rows()).into_bytes();
    for r in (0..img.rows()).rev() {
        for c in 0..img.cols() {
            buf.extend_from_slice(&(img.get(r, c) as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path)?;
    let ferr = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    // Header: three whitespace-separated tokens groups, then one whitespace byte.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ferr("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| ferr("bad header"))?);
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(ferr("only grayscale PFM (Pf) is supported"));
    }
    let cols: usize = fields[1].parse().map_err(|_| ferr("bad width"))?;
    let rows: usize = fields[2].parse().map_err(|_| ferr("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| ferr("bad scale"))?;
    let little = scale < 0.0;
    let body = bytes.get(pos..).ok_or_else(|| ferr("missing data"))?;
    if body.len() != rows * cols * 4 {
        return Err(ferr("pixel data length mismatch"));
    }
    let mut data = vec![0.0; rows * cols];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (r_file, c) = (i / cols, i % cols);
        data[(rows - 1 - r_file) * cols + c] = f64::from(v);
    }
    Image::new(rows, cols, data)
}
