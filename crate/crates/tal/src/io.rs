//! On-disk formats: the JSON-lines dataset, proposal dumps, per-unit
//! probability summaries and label files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tal_core::dataset::{ActionInstance, DatasetError, VideoRecord};
use tal_core::linalg::Matrix;
use tal_core::proposal::{Proposal, UnitProbSummary};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationLine {
    label: usize,
    t_start: f64,
    t_end: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoLine {
    video_id: String,
    fps: f64,
    unit_length: usize,
    features: Vec<Vec<f64>>,
    annotations: Vec<AnnotationLine>,
}

/// Parses one dataset line. `line` is only used in error messages.
pub fn parse_video_line(text: &str, path: &Path, line: usize) -> Result<VideoRecord> {
    let raw: VideoLine =
        serde_json::from_str(text).map_err(|e| Error::Parse { path: path.into(), line, reason: e.to_string() })?;
    let features = if raw.features.is_empty() {
        Matrix::zeros(0, 0)
    } else {
        Matrix::from_rows(&raw.features).ok_or_else(|| DatasetError::Schema {
            video_id: raw.video_id.clone(),
            reason: "feature rows have different lengths".into(),
        })?
    };
    let video = VideoRecord {
        video_id: raw.video_id,
        fps: raw.fps,
        unit_length: raw.unit_length,
        features,
        annotations: raw
            .annotations
            .into_iter()
            .map(|a| ActionInstance { label: a.label, t_start: a.t_start, t_end: a.t_end })
            .collect(),
    };
    video.validate(None)?;
    Ok(video)
}

/// Reads a dataset file: one JSON object per line, blank lines skipped.
pub fn parse_dataset(path: &Path) -> Result<Vec<VideoRecord>> {
    read_lines(path)?.into_iter().map(|(n, text)| parse_video_line(&text, path, n)).collect()
}

pub fn video_to_line(video: &VideoRecord) -> String {
    let line = VideoLine {
        video_id: video.video_id.clone(),
        fps: video.fps,
        unit_length: video.unit_length,
        features: video.features.iter_rows().map(<[f64]>::to_vec).collect(),
        annotations: video
            .annotations
            .iter()
            .map(|a| AnnotationLine { label: a.label, t_start: a.t_start, t_end: a.t_end })
            .collect(),
    };
    serde_json::to_string(&line).expect("dataset records always serialise")
}

pub fn write_dataset(path: &Path, videos: &[VideoRecord]) -> Result<()> {
    let mut out = String::new();
    for v in videos {
        out.push_str(&video_to_line(v));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Column order of a proposal dump.
pub const DUMP_HEADER: [&str; 9] =
    ["video_id", "t_start", "t_end", "start_unit", "end_unit", "p_start_avg", "p_end_avg", "phi", "final_score"];

/// Proposals of one video, in dump order.
pub type VideoProposals = (String, Vec<Proposal>);

/// Serialises proposals as comma-separated rows with six decimals.
pub fn dump_to_string(run: &[VideoProposals]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DUMP_HEADER).expect("in-memory write");
    for (id, proposals) in run {
        for p in proposals {
            w.write_record([
                id.clone(),
                format!("{:.6}", p.t_start),
                format!("{:.6}", p.t_end),
                p.start_unit.to_string(),
                p.end_unit.to_string(),
                format!("{:.6}", p.p_start_avg),
                format!("{:.6}", p.p_end_avg),
                format!("{:.6}", p.phi),
                format!("{:.6}", p.final_score),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn write_dump(path: &Path, run: &[VideoProposals]) -> Result<()> {
    write_atomic(path, dump_to_string(run).as_bytes())
}

/// Reads a proposal dump, grouping consecutive rows by video id. A video
/// that appears in two separate runs of rows is an error.
pub fn read_dump(path: &Path) -> Result<Vec<VideoProposals>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if header.iter().ne(DUMP_HEADER) {
        return Err(Error::Parse { path: path.into(), line: 1, reason: format!("expected header {}", DUMP_HEADER.join(",")) });
    }
    let mut out: Vec<VideoProposals> = Vec::new();
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { path: path.into(), line, reason: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |reason: String| Error::Parse { path: path.into(), line, reason };
        let num = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", DUMP_HEADER[i])))
        };
        let unit = |i: usize| -> Result<usize> {
            record[i].parse::<usize>().map_err(|e| bad(format!("column {}: {e}", DUMP_HEADER[i])))
        };
        let p = Proposal {
            t_start: num(1)?,
            t_end: num(2)?,
            start_unit: unit(3)?,
            end_unit: unit(4)?,
            p_start_avg: num(5)?,
            p_end_avg: num(6)?,
            phi: num(7)?,
            final_score: num(8)?,
            label: None,
        };
        let id = &record[0];
        match out.last_mut() {
            Some((last, ps)) if last == id => ps.push(p),
            _ => {
                if seen.insert(id.to_string(), ()).is_some() {
                    return Err(bad(format!("rows of video `{id}` are not contiguous")));
                }
                out.push((id.to_string(), vec![p]));
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryLine {
    video_id: String,
    start: Vec<f64>,
    end: Vec<f64>,
    action: Vec<f64>,
}

pub fn write_summaries(path: &Path, summaries: &[(String, UnitProbSummary)]) -> Result<()> {
    let mut out = Vec::new();
    for (id, s) in summaries {
        let line = SummaryLine { video_id: id.clone(), start: s.start.clone(), end: s.end.clone(), action: s.action.clone() };
        serde_json::to_writer(&mut out, &line).expect("summaries always serialise");
        out.write_all(b"\n").expect("in-memory write");
    }
    write_atomic(path, &out)
}

pub fn read_summaries(path: &Path) -> Result<BTreeMap<String, UnitProbSummary>> {
    let mut out = BTreeMap::new();
    for (n, text) in read_lines(path)? {
        let s: SummaryLine =
            serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), line: n, reason: e.to_string() })?;
        if s.start.len() != s.end.len() || s.start.len() != s.action.len() {
            return Err(Error::Parse { path: path.into(), line: n, reason: "signals differ in length".into() });
        }
        out.insert(s.video_id, UnitProbSummary { start: s.start, end: s.end, action: s.action });
    }
    Ok(out)
}

/// Reads `video_id,label` rows (with a header) into a map.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::Parse { path: path.into(), line, reason: "expected video_id,label".into() });
        }
        let label = record[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse { path: path.into(), line, reason: e.to_string() })?;
        out.insert(record[0].to_string(), label);
    }
    Ok(out)
}

/// The label covering the most annotated time; ties go to the smaller label.
pub fn dominant_label(video: &VideoRecord) -> Option<usize> {
    let mut total: BTreeMap<usize, f64> = BTreeMap::new();
    for a in &video.annotations {
        *total.entry(a.label).or_default() += a.t_end - a.t_start;
    }
    total.into_iter().fold(None, |best: Option<(usize, f64)>, (l, t)| match best {
        Some((_, bt)) if bt >= t => best,
        _ => Some((l, t)),
    })
    .map(|(l, _)| l)
}
