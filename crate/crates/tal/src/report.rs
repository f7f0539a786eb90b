//! Evaluation tables: a long-format CSV per run, an aligned text summary,
//! side-by-side comparison tables and an SVG plot of the AR@AN curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use tal_core::metrics::EvalReport;

/// Serialises a report as `table,key,value` rows. Tables are `ar` (key AN),
/// `recall` (key tIoU), `map` (key IoU) and `ap.<class>` (key IoU).
pub fn eval_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut row = |table: &str, key: String, value: f64| {
        w.write_record([table, &key, &format!("{value:.6}")]).expect("in-memory write");
    };
    for &(an, v) in &report.ar_at_an {
        row("ar", an.to_string(), v);
    }
    for &(t, v) in &report.recall_at_100 {
        row("recall", format!("{t:.2}"), v);
    }
    if let Some(map) = &report.map_at_iou {
        for &(t, v) in map {
            row("map", format!("{t:.2}"), v);
        }
    }
    for (t, per) in &report.per_class_ap {
        for (c, v) in per {
            row(&format!("ap.{c}"), format!("{t:.2}"), *v);
        }
    }
    drop(row);
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Inverse of [`eval_csv`] (values come back at six decimals).
pub fn parse_eval_csv(text: &str) -> Result<EvalReport, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut report = EvalReport { ar_at_an: Vec::new(), recall_at_100: Vec::new(), map_at_iou: None, per_class_ap: Vec::new() };
    let mut per_class: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let r = record.map_err(|e| e.to_string())?;
        if r.len() != 3 {
            return Err(format!("line {}: expected table,key,value", i + 1));
        }
        let value: f64 = r[2].parse().map_err(|e| format!("line {}: {e}", i + 1))?;
        let key_f = || r[1].parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1));
        match &r[0] {
            "ar" => report.ar_at_an.push((r[1].parse().map_err(|e| format!("line {}: {e}", i + 1))?, value)),
            "recall" => report.recall_at_100.push((key_f()?, value)),
            "map" => report.map_at_iou.get_or_insert_with(Vec::new).push((key_f()?, value)),
            t => {
                let class = t
                    .strip_prefix("ap.")
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| format!("line {}: unknown table `{t}`", i + 1))?;
                per_class.entry(r[1].to_string()).or_default().insert(class, value);
            }
        }
    }
    if let Some(map) = &report.map_at_iou {
        for (t, _) in map {
            let per = per_class.remove(&format!("{t:.2}")).unwrap_or_default();
            report.per_class_ap.push((*t, per));
        }
    }
    Ok(report)
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn table(title: &str, header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let width: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (c, cell) in cells.iter().enumerate() {
            if c == 0 {
                let _ = write!(s, "{cell:<w$}", w = width[c]);
            } else {
                let _ = write!(s, "  {cell:>w$}", w = width[c]);
            }
        }
        s.push('\n');
        s
    };
    let mut out = format!("{title}\n");
    out.push_str(&line(header));
    out.push_str(&format!("{}\n", "-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1))));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// One evaluated pipeline variant, e.g. `interpolated.listwise`.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub tag: String,
    pub report: EvalReport,
}

fn ar_table(runs: &[Run]) -> (Vec<String>, Vec<Vec<String>>) {
    let ans: Vec<usize> = runs.first().map(|r| r.report.ar_at_an.iter().map(|x| x.0).collect()).unwrap_or_default();
    let header = std::iter::once("run".to_string()).chain(ans.iter().map(|a| format!("AR@{a}"))).collect();
    let rows = runs
        .iter()
        .map(|r| std::iter::once(r.tag.clone()).chain(r.report.ar_at_an.iter().map(|x| pct(x.1))).collect())
        .collect();
    (header, rows)
}

fn recall_table(runs: &[Run]) -> (Vec<String>, Vec<Vec<String>>) {
    let ts: Vec<f64> = runs.first().map(|r| r.report.recall_at_100.iter().map(|x| x.0).collect()).unwrap_or_default();
    let header = std::iter::once("run".to_string()).chain(ts.iter().map(|t| format!("tIoU={t:.1}"))).collect();
    let rows = runs
        .iter()
        .map(|r| std::iter::once(r.tag.clone()).chain(r.report.recall_at_100.iter().map(|x| pct(x.1))).collect())
        .collect();
    (header, rows)
}

fn map_table(runs: &[Run]) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let first = runs.iter().find_map(|r| r.report.map_at_iou.as_ref())?;
    let header = std::iter::once("run".to_string()).chain(first.iter().map(|x| format!("IoU={:.1}", x.0))).collect();
    let rows = runs
        .iter()
        .map(|r| {
            let cells: Vec<String> = match &r.report.map_at_iou {
                Some(m) => m.iter().map(|x| pct(x.1)).collect(),
                None => vec!["-".into(); first.len()],
            };
            std::iter::once(r.tag.clone()).chain(cells).collect()
        })
        .collect();
    Some((header, rows))
}

/// Aligned text with the AR@AN, recall@AN and mAP tables (percentages).
pub fn summary_text(runs: &[Run], recall_an: usize) -> String {
    let mut out = String::new();
    let (h, r) = ar_table(runs);
    out.push_str(&table("Average recall at average number of proposals (%)", &h, &r));
    out.push('\n');
    let (h, r) = recall_table(runs);
    out.push_str(&table(&format!("Recall at AN={recall_an} (%)"), &h, &r));
    if let Some((h, r)) = map_table(runs) {
        out.push('\n');
        out.push_str(&table("mAP (%)", &h, &r));
    }
    out
}

fn csv_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Comparison tables as `(file suffix, csv)`; values are fractions.
pub fn comparison_csvs(runs: &[Run]) -> Vec<(&'static str, String)> {
    let frac = |runs: &[Run], f: fn(&EvalReport) -> Vec<f64>| -> Vec<Vec<String>> {
        runs.iter()
            .map(|r| std::iter::once(r.tag.clone()).chain(f(&r.report).into_iter().map(|v| format!("{v:.6}"))).collect())
            .collect()
    };
    let mut out = Vec::new();
    let (h, _) = ar_table(runs);
    out.push(("ar", csv_table(&h, &frac(runs, |r| r.ar_at_an.iter().map(|x| x.1).collect()))));
    let (h, _) = recall_table(runs);
    out.push(("recall", csv_table(&h, &frac(runs, |r| r.recall_at_100.iter().map(|x| x.1).collect()))));
    if let Some((h, _)) = map_table(runs) {
        let with_map: Vec<Run> = runs.iter().filter(|r| r.report.map_at_iou.is_some()).cloned().collect();
        out.push((
            "map",
            csv_table(&h, &frac(&with_map, |r| r.map_at_iou.iter().flatten().map(|x| x.1).collect())),
        ));
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line plot of AR against AN for every run.
pub fn ar_svg(runs: &[Run]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 180.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let max_an = runs.iter().flat_map(|r| r.report.ar_at_an.iter().map(|x| x.0)).max().unwrap_or(1).max(1) as f64;
    let x = |an: usize| left + pw * an as f64 / max_an;
    let y = |v: f64| top + ph * (1.0 - v);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<path d=\"M{left} {top} V{} H{}\" fill=\"none\" stroke=\"black\"/>",
        top + ph,
        left + pw
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{:.1}</text>", left - 6.0, y(v) + 4.0, v);
    }
    if let Some(r) = runs.first() {
        for &(an, _) in &r.report.ar_at_an {
            let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{an}</text>", x(an), top + ph + 18.0);
        }
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">AN</text>", left + pw / 2.0, h - 8.0);
    let _ = writeln!(
        s,
        "<text transform=\"translate(16 {}) rotate(-90)\" text-anchor=\"middle\">AR</text>",
        top + ph / 2.0
    );
    for (i, r) in runs.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = r.report.ar_at_an.iter().map(|&(an, v)| format!("{:.1},{:.1}", x(an), y(v))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\"/>", points.join(" "));
        let ly = top + 16.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{colour}\" stroke-width=\"2\"/>",
            left + pw + 12.0,
            left + pw + 32.0
        );
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", left + pw + 38.0, ly + 4.0, escape(&r.tag));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
