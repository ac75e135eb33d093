use std::fmt::Write as _;
use std::path::Path;

use super::{mann_whitney_u, AlphaMetrics, CvReport, EvalError, PValueMethod};

pub const REPORT_FILE: &str = "report.csv";
pub const UNCERTAINTY_FILE: &str = "uncertainty.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn metric_row(out: &mut String, fold: &str, m: &AlphaMetrics) {
    let _ = writeln!(
        out,
        "{fold},{},{},{},{},{},{}",
        m.alpha,
        opt(m.accuracy),
        m.coverage,
        opt(m.macro_f1),
        m.n_committed,
        m.n_total
    );
}

/// Per-fold rows, then `mean` and `pooled` rows, one per alpha each. An
/// undefined accuracy or F1 is an empty field.
pub fn report_csv(report: &CvReport) -> String {
    let mut out = String::from("fold,alpha,accuracy,coverage,macro_f1,n_committed,n_total\n");
    for f in &report.folds {
        for m in &f.sweep.rows {
            metric_row(&mut out, &f.fold.to_string(), m);
        }
    }
    for m in &report.mean {
        metric_row(&mut out, "mean", m);
    }
    for m in &report.pooled {
        metric_row(&mut out, "pooled", m);
    }
    out
}

pub fn confusion_file_name(alpha: f64) -> String {
    format!("confusion_{alpha}.csv")
}

/// Pooled confusion counts at one alpha; rows are true classes.
pub fn confusion_csv(labels: &[String], metrics: &AlphaMetrics) -> String {
    let mut out = String::from("true_class");
    for l in labels {
        let _ = write!(out, ",{l}");
    }
    out.push_str(",abstain\n");
    for (label, row) in labels.iter().zip(&metrics.confusion) {
        out.push_str(label);
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

pub fn uncertainty_csv(report: &CvReport) -> String {
    let mut out = String::from("subject,trial,true_class,posterior_variance\n");
    for u in report.uncertainty() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            u.subject_id, u.trial_id, report.labels[u.true_zone], u.posterior_variance
        );
    }
    out
}

fn parse_opt(field: &str) -> Result<Option<f64>, EvalError> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| EvalError::MalformedReport(format!("bad number `{field}`")))
}

fn records(text: &str, header: &[&str]) -> Result<Vec<csv::StringRecord>, EvalError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| EvalError::MalformedReport(e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(EvalError::MalformedReport(format!(
            "expected header `{}`",
            header.join(",")
        )));
    }
    reader
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| EvalError::MalformedReport(e.to_string()))
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// Plain-text summary derived only from `report.csv` and `uncertainty.csv`
/// contents, so it can be regenerated from the files alone.
pub fn summary_from_csv(report: &str, uncertainty: &str) -> Result<String, EvalError> {
    let rows = records(
        report,
        &["fold", "alpha", "accuracy", "coverage", "macro_f1", "n_committed", "n_total"],
    )?;
    let mut folds: Vec<&str> = rows
        .iter()
        .map(|r| &r[0])
        .filter(|f| *f != "mean" && *f != "pooled")
        .collect();
    folds.dedup();
    let mut out = String::new();
    let _ = writeln!(out, "folds: {}", folds.len());
    let _ = writeln!(
        out,
        "{:>6}  {:>9}  {:>9}  {:>9}  {:>11}  {:>11}",
        "alpha", "accuracy", "coverage", "macro_f1", "pooled_acc", "pooled_cov"
    );
    let pooled: Vec<&csv::StringRecord> = rows.iter().filter(|r| &r[0] == "pooled").collect();
    for m in rows.iter().filter(|r| &r[0] == "mean") {
        let p = pooled.iter().find(|p| p[1] == m[1]);
        let _ = writeln!(
            out,
            "{:>6}  {:>9}  {:>9}  {:>9}  {:>11}  {:>11}",
            &m[1],
            fmt_metric(parse_opt(&m[2])?),
            fmt_metric(parse_opt(&m[3])?),
            fmt_metric(parse_opt(&m[4])?),
            fmt_metric(p.map(|p| parse_opt(&p[2])).transpose()?.flatten()),
            fmt_metric(p.map(|p| parse_opt(&p[3])).transpose()?.flatten()),
        );
    }

    let urows = records(uncertainty, &["subject", "trial", "true_class", "posterior_variance"])?;
    let of = |class: &str| -> Result<Vec<f64>, EvalError> {
        urows
            .iter()
            .filter(|r| &r[2] == class)
            .map(|r| parse_opt(&r[3]).map(|v| v.unwrap_or(f64::NAN)))
            .collect()
    };
    let (low, high) = (of("low")?, of("high")?);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for (name, v) in [("low", &low), ("high", &high)] {
        if v.is_empty() {
            let _ = writeln!(out, "posterior variance, {name} valence: no trials");
        } else {
            let _ = writeln!(
                out,
                "posterior variance, {name} valence: n = {}, mean = {:.6}",
                v.len(),
                mean(v)
            );
        }
    }
    match mann_whitney_u(&low, &high) {
        Ok(mw) => {
            let direction = match mw.direction() {
                1 => "low-valence posteriors have higher variance",
                -1 => "high-valence posteriors have higher variance",
                _ => "no difference in variance ranks",
            };
            let method = match mw.method {
                PValueMethod::Exact => "exact",
                PValueMethod::Normal => "normal approximation",
            };
            let _ = writeln!(
                out,
                "Mann-Whitney U = {} (low vs high), p = {:.6} ({method}), direction: {direction}",
                mw.u_a, mw.p_two_sided
            );
        }
        Err(e) => {
            let _ = writeln!(out, "Mann-Whitney U not computed: {e}");
        }
    }
    Ok(out)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), EvalError> {
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

/// Writes `report.csv`, one `confusion_<alpha>.csv` per alpha,
/// `uncertainty.csv` and `summary.txt` into `dir`.
pub fn write_report(dir: &Path, report: &CvReport) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let main = report_csv(report);
    let unc = uncertainty_csv(report);
    write(dir, REPORT_FILE, &main)?;
    for m in &report.pooled {
        write(dir, &confusion_file_name(m.alpha), &confusion_csv(&report.labels, m))?;
    }
    write(dir, UNCERTAINTY_FILE, &unc)?;
    write(dir, SUMMARY_FILE, &summary_from_csv(&main, &unc)?)
}
