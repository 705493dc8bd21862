//! FA/FR tables over experiment reports.

use std::collections::BTreeMap;
use std::fmt::Write;

use geoverity::cpv::{evaluate_fa_fr, FaFr};
use geoverity::netsim::{aggregate, cpv_reference, ExperimentReport, PublishedReference, Summary};

fn pct(rate: Option<f64>) -> String {
    rate.map_or_else(|| "undefined".to_string(), |r| format!("{:.2}%", 100.0 * r))
}

fn row(out: &mut String, label: &str, r: &FaFr, reference: Option<PublishedReference>) {
    let reference = reference.map_or_else(String::new, |p| format!("{:.1}% / {:.1}%", p.false_accept_pct, p.false_reject_pct));
    let _ = writeln!(
        out,
        "{label:<10} {:>10} {:>9} {:>10} {:>9} {:>6} {:>18}",
        pct(r.false_accept_rate),
        format!("{}/{}", r.false_accepts, r.outside_total),
        pct(r.false_reject_rate),
        format!("{}/{}", r.false_rejects, r.inside_total),
        r.indeterminate,
        reference,
    );
}

/// Summary plus a per-n CPV breakdown, as a fixed-width table.
pub fn render(reports: &[ExperimentReport]) -> (Summary, String) {
    let summary = aggregate(reports);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>9} {:>10} {:>9} {:>6} {:>18}",
        "", "FA", "", "FR", "", "indet", "published FA / FR"
    );
    let mut by_n: BTreeMap<u32, Vec<_>> = BTreeMap::new();
    for r in reports.iter().flat_map(|r| r.cpv_records()) {
        by_n.entry(r.n).or_default().push((r.true_inside, r.outcome));
    }
    if by_n.len() > 1 {
        for (n, recs) in &by_n {
            row(&mut out, &format!("CPV n={n}"), &evaluate_fa_fr(recs.iter().map(|(t, d)| (*t, d))), cpv_reference(*n));
        }
    }
    if let Some(cpv) = &summary.cpv {
        row(&mut out, "CPV", cpv, summary.cpv_reference);
    }
    if let Some(slv) = &summary.slv {
        row(&mut out, "SLV", slv, summary.slv_reference);
    }
    let _ = writeln!(out, "excluded (margin band): {}, skipped triangles: {}", summary.excluded, summary.skipped_triangles);
    (summary, out)
}
