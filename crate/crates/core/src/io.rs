//! Result persistence: atomic files, long-format CSV, JSONL traces and a
//! small SVG emitter.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::plans::{CellKey, CellRun, PlanAReport, PlanBReport, PlanCReport, PlanDReport};
use crate::grid::{SlotRecord, EPISODE_SCHEMA};

/// Write to a sibling temp file, flush to disk, then rename over `path`.
/// Readers see either the old file or the complete new one.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

/// First line of every JSONL trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub manifest_hash: String,
    pub seed: u64,
}

pub fn trace_jsonl(records: &[SlotRecord], manifest_hash: &str, seed: u64) -> Result<String> {
    let header = TraceHeader { schema: EPISODE_SCHEMA.into(), manifest_hash: manifest_hash.into(), seed };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse a trace written by [`trace_jsonl`].
pub fn read_trace(text: &str) -> Result<(TraceHeader, Vec<SlotRecord>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: TraceHeader = serde_json::from_str(lines.next().ok_or(Error::Empty("trace"))?)?;
    if header.schema != EPISODE_SCHEMA {
        return Err(Error::Schema { expected: EPISODE_SCHEMA.into(), found: header.schema });
    }
    let records = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
    Ok((header, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetectionRow {
    manifest_hash: String,
    seed: u64,
    episode: u64,
    slot: usize,
    agent: usize,
    true_marginal: f64,
    bid_price: f64,
    observed_price: f64,
    deviated: bool,
    detected: bool,
}

pub fn detections_csv(records: &[SlotRecord], manifest_hash: &str, seed: u64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        for d in &r.detections {
            w.serialize(DetectionRow {
                manifest_hash: manifest_hash.into(),
                seed,
                episode: r.episode,
                slot: r.slot,
                agent: d.agent,
                true_marginal: d.true_marginal,
                bid_price: d.bid_price,
                observed_price: d.observed_price,
                deviated: d.deviated,
                detected: d.detected,
            })
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Domain(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Domain(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One long-format result row. Unused key columns stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub manifest_hash: String,
    pub seed: u64,
    pub plan: String,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub penalty: Option<f64>,
    pub gamma: Option<f64>,
    pub entropy_coef: Option<f64>,
    pub hidden: Option<usize>,
    pub episode: Option<usize>,
    pub metric: String,
    pub value: f64,
}

impl LongRow {
    fn keyed(plan: &str, hash: &str, seed: u64, k: &CellKey, metric: &str, value: f64) -> Self {
        LongRow {
            manifest_hash: hash.into(),
            seed,
            plan: plan.into(),
            alpha: Some(k.alpha),
            epsilon: Some(k.epsilon),
            penalty: Some(k.penalty),
            gamma: Some(k.gamma),
            entropy_coef: Some(k.entropy_coef),
            hidden: Some(k.hidden),
            episode: None,
            metric: metric.into(),
            value,
        }
    }
}

/// Per-run metrics and TruthFrac curves.
pub fn run_rows(plan: &str, hash: &str, runs: &[CellRun]) -> Vec<LongRow> {
    let mut rows = Vec::new();
    for r in runs {
        let m = &r.result.metrics;
        let s = r.result.seed;
        let mut push = |metric: &str, v: f64| rows.push(LongRow::keyed(plan, hash, s, &r.key, metric, v));
        push("truth_frac", m.truth_frac_eps);
        push("misreport_rate", m.misreport_rate);
        push("mean_reward", m.mean_reward);
        push("diverged", if r.result.diverged.is_some() { 1.0 } else { 0.0 });
        if let Some(v) = m.welfare_distortion {
            push("welfare_distortion", v);
        }
        if let Some(v) = m.price_distortion {
            push("price_distortion", v);
        }
        if let Some(v) = m.convergence_episode {
            push("convergence_episode", v as f64);
        }
        for p in &r.result.curve {
            let mut row = LongRow::keyed(plan, hash, s, &r.key, "truth_frac_curve", p.truth_frac);
            row.episode = Some(p.episode);
            rows.push(row);
        }
    }
    rows
}

pub fn plan_c_rows(report: &PlanCReport, seed: u64) -> Vec<LongRow> {
    let row = |alpha: Option<f64>, epsilon: Option<f64>, metric: &str, value: f64| LongRow {
        manifest_hash: report.manifest_hash.clone(),
        seed,
        plan: "c".into(),
        alpha,
        epsilon,
        penalty: None,
        gamma: None,
        entropy_coef: None,
        hidden: None,
        episode: None,
        metric: metric.into(),
        value,
    };
    let mut rows = Vec::new();
    for c in &report.cells {
        let v = c.search.pi_star.unwrap_or(f64::NAN);
        rows.push(row(Some(c.alpha), Some(c.epsilon), "pi_star", v));
    }
    for f in &report.fits {
        rows.push(row(None, Some(f.epsilon), "fit_slope", f.slope));
        rows.push(row(None, Some(f.epsilon), "fit_intercept", f.intercept));
        rows.push(row(None, Some(f.epsilon), "fit_r2", f.r2));
        rows.push(row(None, Some(f.epsilon), "fit_slope_ratio", f.slope_ratio));
    }
    rows.push(row(None, None, "c_empirical", report.c_empirical));
    rows
}

pub fn long_csv(rows: &[LongRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    finish(w)
}

pub fn read_long_csv(text: &str) -> Result<Vec<LongRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

/// What a plan run leaves on disk, relative to the output directory.
pub fn write_plan_a(out: &Path, r: &PlanAReport) -> Result<()> {
    let rows = run_rows("a", &r.manifest_hash, &r.runs);
    atomic_write(&out.join("results/plan_a.csv"), long_csv(&rows)?.as_bytes())?;
    write_json(&out.join("results/plan_a.json"), r)?;
    for (name, svg) in render_report(&rows)? {
        atomic_write(&out.join("figs").join(name), svg.as_bytes())?;
    }
    Ok(())
}

pub fn write_plan_b(out: &Path, r: &PlanBReport) -> Result<()> {
    let rows = run_rows("b", &r.manifest_hash, &r.runs);
    atomic_write(&out.join("results/plan_b.csv"), long_csv(&rows)?.as_bytes())?;
    write_json(&out.join("results/plan_b.json"), r)?;
    for (name, svg) in render_report(&rows)? {
        atomic_write(&out.join("figs").join(name), svg.as_bytes())?;
    }
    Ok(())
}

pub fn write_plan_c(out: &Path, r: &PlanCReport, seed: u64) -> Result<()> {
    let rows = plan_c_rows(r, seed);
    atomic_write(&out.join("results/plan_c.csv"), long_csv(&rows)?.as_bytes())?;
    write_json(&out.join("results/plan_c.json"), r)?;
    for (name, svg) in render_report(&rows)? {
        atomic_write(&out.join("figs").join(name), svg.as_bytes())?;
    }
    Ok(())
}

pub fn write_plan_d(out: &Path, r: &PlanDReport) -> Result<()> {
    let rows = run_rows("d", &r.manifest_hash, &r.runs);
    atomic_write(&out.join("results/plan_d.csv"), long_csv(&rows)?.as_bytes())?;
    write_json(&out.join("results/plan_d.json"), r)?;
    for (name, svg) in render_report(&rows)? {
        atomic_write(&out.join("figs").join(name), svg.as_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------- SVG

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return "-".into();
    }
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" { "0".into() } else { s.into() }
}

fn svg_open(w: f64, h: f64, title: &str, meta: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n<!-- {} -->\n<metadata>{}</metadata>\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        esc(meta),
        esc(meta),
        w / 2.0,
        esc(title)
    )
}

/// Sequential white-to-blue ramp for values in [0, 1].
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

/// Heatmap with `values[row][col]`, rows along y. Values are drawn on a
/// [0, 1] scale and printed in each cell.
pub fn svg_heatmap(
    title: &str,
    x_label: &str,
    y_label: &str,
    cols: &[String],
    rows: &[String],
    values: &[Vec<Option<f64>>],
    meta: &str,
) -> String {
    let (cw, ch, left, top) = (80.0, 40.0, 90.0, 40.0);
    let w = left + cw * cols.len() as f64 + 20.0;
    let h = top + ch * rows.len() as f64 + 60.0;
    let mut s = svg_open(w, h, title, meta);
    for (i, row) in rows.iter().enumerate() {
        let y = top + ch * i as f64;
        s += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            left - 6.0,
            y + ch / 2.0 + 4.0,
            esc(row)
        );
        for (j, _) in cols.iter().enumerate() {
            let x = left + cw * j as f64;
            let v = values.get(i).and_then(|r| r.get(j)).copied().flatten();
            let fill = v.map_or("#dddddd".to_string(), ramp);
            let ink = if v.unwrap_or(0.0) > 0.55 { "white" } else { "black" };
            s += &format!("<rect x=\"{x}\" y=\"{y}\" width=\"{cw}\" height=\"{ch}\" fill=\"{fill}\" stroke=\"white\"/>\n");
            s += &format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{ink}\">{}</text>\n",
                x + cw / 2.0,
                y + ch / 2.0 + 4.0,
                v.map_or("n/a".into(), fmt_num)
            );
        }
    }
    let base = top + ch * rows.len() as f64;
    for (j, col) in cols.iter().enumerate() {
        s += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            left + cw * j as f64 + cw / 2.0,
            base + 16.0,
            esc(col)
        );
    }
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        left + cw * cols.len() as f64 / 2.0,
        base + 40.0,
        esc(x_label)
    );
    s += &format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        top + ch * rows.len() as f64 / 2.0,
        top + ch * rows.len() as f64 / 2.0,
        esc(y_label)
    );
    s + "</svg>\n"
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Line chart, one polyline per named series.
pub fn svg_lines(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)], meta: &str) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 160.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    y0 = y0.min(0.0);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
    let mut s = svg_open(w, h, title, meta);
    s += &format!(
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        s += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            sx(xv),
            top + ph + 16.0,
            fmt_num(xv)
        );
        s += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            left - 6.0,
            sy(yv) + 4.0,
            fmt_num(yv)
        );
    }
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        left + pw / 2.0,
        h - 10.0,
        esc(x_label)
    );
    s += &format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        top + ph / 2.0,
        top + ph / 2.0,
        esc(y_label)
    );
    for (i, (name, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = p
            .iter()
            .filter(|q| q.0.is_finite() && q.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s += &format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", path.join(" "));
        let ly = top + 14.0 * i as f64;
        s += &format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{}\">{}</text>\n",
            w - right + 10.0,
            w - right + 30.0,
            w - right + 34.0,
            ly + 4.0,
            esc(name)
        );
    }
    s + "</svg>\n"
}

// ---------------------------------------------------------------- report

fn uniq(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a LongRow>) -> Option<f64> {
    let v: Vec<f64> = rows.map(|r| r.value).filter(|v| v.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn meta_of(rows: &[LongRow]) -> String {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let hash = rows.first().map_or("", |r| r.manifest_hash.as_str());
    format!("manifest_hash={hash} seeds={seeds:?}")
}

/// Figures for a long-format CSV, by plan: `(file name, svg)`.
pub fn render_report(rows: &[LongRow]) -> Result<Vec<(String, String)>> {
    let plan = rows.first().map(|r| r.plan.clone()).ok_or(Error::Empty("result rows"))?;
    let meta = meta_of(rows);
    let metric = |m: &'static str| rows.iter().filter(move |r| r.metric == m);
    let mut figs = Vec::new();
    match plan.as_str() {
        "a" => {
            let alphas = uniq(metric("truth_frac").filter_map(|r| r.alpha));
            let eps = uniq(metric("truth_frac").filter_map(|r| r.epsilon));
            for (m, title) in [("truth_frac", "TruthFrac"), ("welfare_distortion", "Welfare distortion")] {
                let values: Vec<Vec<Option<f64>>> = eps
                    .iter()
                    .rev()
                    .map(|&e| {
                        alphas
                            .iter()
                            .map(|&a| mean_of(metric(m).filter(|r| r.alpha == Some(a) && r.epsilon == Some(e))))
                            .collect()
                    })
                    .collect();
                figs.push((
                    format!("plan_a_{m}.svg"),
                    svg_heatmap(
                        &format!("{title} over (alpha, epsilon)"),
                        "alpha",
                        "epsilon",
                        &alphas.iter().map(|a| fmt_num(*a)).collect::<Vec<_>>(),
                        &eps.iter().rev().map(|e| fmt_num(*e)).collect::<Vec<_>>(),
                        &values,
                        &meta,
                    ),
                ));
            }
        }
        "b" => {
            let pis = uniq(metric("truth_frac_curve").filter_map(|r| r.penalty));
            let gammas = uniq(metric("truth_frac_curve").filter_map(|r| r.gamma));
            let mut series = Vec::new();
            for &p in &pis {
                for &g in &gammas {
                    let eps = uniq(
                        metric("truth_frac_curve")
                            .filter(|r| r.penalty == Some(p) && r.gamma == Some(g))
                            .filter_map(|r| r.episode.map(|e| e as f64)),
                    );
                    let pts = eps
                        .iter()
                        .filter_map(|&e| {
                            mean_of(metric("truth_frac_curve").filter(|r| {
                                r.penalty == Some(p) && r.gamma == Some(g) && r.episode.map(|x| x as f64) == Some(e)
                            }))
                            .map(|v| (e, v))
                        })
                        .collect();
                    series.push((format!("pi={} gamma={}", fmt_num(p), fmt_num(g)), pts));
                }
            }
            figs.push((
                "plan_b_curves.svg".into(),
                svg_lines("TruthFrac during training", "episode", "TruthFrac", &series, &meta),
            ));
        }
        "c" => {
            let eps = uniq(metric("pi_star").filter_map(|r| r.epsilon));
            let series = eps
                .iter()
                .map(|&e| {
                    let pts = metric("pi_star")
                        .filter(|r| r.epsilon == Some(e))
                        .filter_map(|r| r.alpha.map(|a| (a, r.value)))
                        .collect();
                    (format!("epsilon={}", fmt_num(e)), pts)
                })
                .collect::<Vec<_>>();
            figs.push(("plan_c_pi_star.svg".into(), svg_lines("Minimal penalty", "alpha", "pi*", &series, &meta)));
        }
        "d" => {
            let ents = uniq(metric("truth_frac").filter_map(|r| r.entropy_coef));
            let widths = uniq(metric("truth_frac").filter_map(|r| r.hidden.map(|h| h as f64)));
            let values: Vec<Vec<Option<f64>>> = widths
                .iter()
                .rev()
                .map(|&w| {
                    ents.iter()
                        .map(|&e| {
                            mean_of(
                                metric("truth_frac")
                                    .filter(|r| r.entropy_coef == Some(e) && r.hidden.map(|h| h as f64) == Some(w)),
                            )
                        })
                        .collect()
                })
                .collect();
            figs.push((
                "plan_d_truth_frac.svg".into(),
                svg_heatmap(
                    "TruthFrac over (entropy, width)",
                    "entropy coefficient",
                    "hidden width",
                    &ents.iter().map(|e| fmt_num(*e)).collect::<Vec<_>>(),
                    &widths.iter().rev().map(|w| fmt_num(*w)).collect::<Vec<_>>(),
                    &values,
                    &meta,
                ),
            ));
        }
        other => return Err(Error::Config(format!("unknown plan {other:?} in result rows"))),
    }
    Ok(figs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        atomic_write(&p, b"first version").unwrap();
        atomic_write(&p, b"second").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "second");
        let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn long_csv_roundtrip() {
        let k = CellKey { alpha: 0.5, epsilon: 1.0, penalty: 3.0, gamma: 0.95, entropy_coef: 0.01, hidden: 64 };
        let mut rows = vec![LongRow::keyed("a", "abc", 7, &k, "truth_frac", 0.25)];
        rows.push(LongRow { alpha: None, episode: Some(10), ..rows[0].clone() });
        let text = long_csv(&rows).unwrap();
        assert!(text.starts_with("manifest_hash,seed,plan,"));
        assert_eq!(read_long_csv(&text).unwrap(), rows);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let s = svg_heatmap(
            "t<1>",
            "x",
            "y",
            &["a".into(), "b".into()],
            &["r".into()],
            &[vec![Some(0.2), None]],
            "manifest_hash=h seeds=[1]",
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("t&lt;1&gt;") && s.contains("n/a") && s.contains("manifest_hash=h"));
        let l = svg_lines("t", "x", "y", &[("s".into(), vec![(0.0, 1.0), (1.0, 2.0)])], "m");
        assert_eq!(l.matches("<polyline").count(), 1);
        let empty = svg_lines("t", "x", "y", &[], "m");
        assert!(empty.contains("</svg>"));
    }

    #[test]
    fn report_rejects_unknown_plan() {
        let k = CellKey { alpha: 0.5, epsilon: 1.0, penalty: 3.0, gamma: 0.95, entropy_coef: 0.01, hidden: 64 };
        let rows = vec![LongRow::keyed("z", "h", 1, &k, "truth_frac", 0.5)];
        assert!(render_report(&rows).is_err());
        assert!(render_report(&[]).is_err());
        let rows = vec![LongRow::keyed("a", "h", 1, &k, "truth_frac", 0.5)];
        let figs = render_report(&rows).unwrap();
        assert_eq!(figs.len(), 2);
    }
}
