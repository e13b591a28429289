//! Plain SVG output: count histograms and per-cutoff CI panels.
//!
//! Bars and markers carry `data-*` attributes with the numbers they draw so
//! the files can be checked without rasterizing them.

use std::fmt::Write as _;
use std::path::Path;

use ebscreen_core::eb::EbMethod;
use ebscreen_core::sim::Dataset;

use crate::runner::{Metric, SummaryRow, TestRow, METHODS};
use crate::HarnessError;

const WIDTH: f64 = 720.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const PANEL_HEIGHT: f64 = 170.0;
const PANEL_GAP: f64 = 50.0;
const TOP: f64 = 50.0;

fn method_colour(method: &str) -> &'static str {
    if method == EbMethod::CganEb.label() {
        "#d95f02"
    } else {
        "#1b9e77"
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Number of sites with each observed count `0..=max`.
pub fn count_bins(counts: &[u64]) -> Vec<u64> {
    let max = counts.iter().copied().max().unwrap_or(0) as usize;
    let mut bins = vec![0u64; max + 1];
    for &c in counts {
        bins[c as usize] += 1;
    }
    bins
}

pub fn histogram_svg(counts: &[u64], title: &str) -> String {
    let bins = count_bins(counts);
    let height = 360.0;
    let plot_h = height - 90.0;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let tallest = bins.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = plot_w / bins.len() as f64;
    let base = 40.0 + plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN_RIGHT
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="40" x2="{MARGIN_LEFT}" y2="{base}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN_LEFT}" y="36" text-anchor="middle">{}</text>"#,
        tallest as u64
    );
    let label_every = (bins.len() / 20).max(1);
    for (value, &n) in bins.iter().enumerate() {
        let h = plot_h * n as f64 / tallest;
        let x = MARGIN_LEFT + value as f64 * bar_w;
        let _ = writeln!(
            s,
            r##"<rect class="bar" data-value="{value}" data-count="{n}" x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#4c72b0"/>"##,
            base - h,
            (bar_w - 1.0).max(0.5)
        );
        if value % label_every == 0 {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{value}</text>"#,
                x + bar_w / 2.0,
                base + 14.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">crash count</text>"#,
        WIDTH / 2.0,
        height - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">sites</text>"#,
        40.0 + plot_h / 2.0,
        40.0 + plot_h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn emit_histogram(dataset: &Dataset, path: &Path, title: &str) -> Result<(), HarnessError> {
    if dataset.is_empty() {
        return Err(HarnessError::Spec("cannot plot an empty dataset".into()));
    }
    std::fs::write(path, histogram_svg(&dataset.counts(), title))
        .map_err(|e| HarnessError::io(path, e))
}

/// Experiment ids in order of first appearance.
fn experiment_order(summaries: &[SummaryRow]) -> Vec<String> {
    let mut ids: Vec<String> = vec![];
    for s in summaries {
        if !ids.contains(&s.experiment_id) {
            ids.push(s.experiment_id.clone());
        }
    }
    ids
}

fn cutoff_order(summaries: &[SummaryRow]) -> Vec<f64> {
    let mut cutoffs: Vec<f64> = vec![];
    for s in summaries {
        if !cutoffs.contains(&s.cutoff) {
            cutoffs.push(s.cutoff);
        }
    }
    cutoffs.sort_by(f64::total_cmp);
    cutoffs
}

/// One panel per cutoff; per experiment a mean dot and CI whisker for each
/// method, and a `*` over the pair when the paired test rejects.
pub fn ci_plot_svg(summaries: &[SummaryRow], tests: &[TestRow], metric: Metric) -> String {
    let rows: Vec<SummaryRow> = summaries
        .iter()
        .filter(|s| s.metric == metric.name())
        .cloned()
        .collect();
    let ids = experiment_order(&rows);
    let cutoffs = cutoff_order(&rows);
    let height = TOP + cutoffs.len().max(1) as f64 * (PANEL_HEIGHT + PANEL_GAP) + 20.0;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} mean and 95% CI</text>"#,
        WIDTH / 2.0,
        metric.name().to_uppercase()
    );
    for (k, method) in METHODS.iter().enumerate() {
        let x = MARGIN_LEFT + 10.0 + 110.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{x}" cy="34" r="4" fill="{}"/><text x="{}" y="38">{}</text>"#,
            method_colour(method.label()),
            x + 8.0,
            method.label()
        );
    }
    if ids.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#,
            WIDTH / 2.0,
            TOP + 40.0
        );
        s.push_str("</svg>\n");
        return s;
    }

    let slot = plot_w / ids.len() as f64;
    for (p, &cutoff) in cutoffs.iter().enumerate() {
        let top = TOP + p as f64 * (PANEL_HEIGHT + PANEL_GAP) + 20.0;
        let bottom = top + PANEL_HEIGHT;
        let panel: Vec<&SummaryRow> = rows.iter().filter(|r| r.cutoff == cutoff).collect();
        let lo = panel
            .iter()
            .map(|r| r.ci_low.unwrap_or(r.mean))
            .fold(f64::INFINITY, f64::min);
        let hi = panel
            .iter()
            .map(|r| r.ci_high.unwrap_or(r.mean))
            .fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.1).max(1e-3);
        let (lo, hi) = (lo - pad, hi + pad);
        // room above the data for significance markers
        let y_of = |v: f64| bottom - (v - lo) / (hi - lo) * (PANEL_HEIGHT - 18.0);

        let _ = writeln!(
            s,
            r#"<g class="panel" data-cutoff="{cutoff}"><text x="{MARGIN_LEFT}" y="{}">top {}% sites</text>"#,
            top - 6.0,
            cutoff * 100.0
        );
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#888"/>"##
        );
        for v in [lo + pad, hi - pad] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
                MARGIN_LEFT - 4.0,
                y_of(v) + 4.0
            );
        }
        for (i, id) in ids.iter().enumerate() {
            let cx = MARGIN_LEFT + slot * (i as f64 + 0.5);
            let _ = writeln!(
                s,
                r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
                bottom + 14.0,
                escape(id)
            );
            for (k, method) in METHODS.iter().enumerate() {
                let Some(r) = panel
                    .iter()
                    .find(|r| &r.experiment_id == id && r.method == method.label())
                else {
                    continue;
                };
                let x = cx + (k as f64 - 0.5) * slot.min(40.0) * 0.5;
                let colour = method_colour(method.label());
                if let (Some(a), Some(b)) = (r.ci_low, r.ci_high) {
                    let _ = writeln!(
                        s,
                        r#"<line class="ci" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{colour}" stroke-width="2"/>"#,
                        y_of(a),
                        y_of(b)
                    );
                }
                let _ = writeln!(
                    s,
                    r#"<circle class="mean" data-experiment="{}" data-method="{}" data-mean="{}" cx="{x:.2}" cy="{:.2}" r="3.5" fill="{colour}"/>"#,
                    escape(id),
                    method.label(),
                    r.mean,
                    y_of(r.mean)
                );
            }
            let significant = tests.iter().any(|t| {
                &t.experiment_id == id
                    && t.cutoff == cutoff
                    && t.metric == metric.name()
                    && t.significant
            });
            if significant {
                let _ = writeln!(
                    s,
                    r#"<text class="sig" data-experiment="{}" data-cutoff="{cutoff}" x="{cx:.2}" y="{}" text-anchor="middle" font-size="16">*</text>"#,
                    escape(id),
                    top + 16.0
                );
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
