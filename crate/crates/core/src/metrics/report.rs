use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::ScalarMetrics;

/// One line of a metric report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    pub metrics: ScalarMetrics,
    pub auc: Option<f64>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{:.2}", 100.0 * x))
}

/// CSV with header `method,dataset,sn,sp,acc,auc,f1`; values are percentages
/// with two decimals, `NA` where undefined.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("method,dataset,sn,sp,acc,auc,f1\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method,
            r.dataset,
            pct(r.metrics.sn),
            pct(r.metrics.sp),
            pct(r.metrics.acc),
            pct(r.auc),
            pct(r.metrics.f1)
        );
    }
    out
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    std::fs::write(path, report_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_percentages() {
        let row = ReportRow {
            method: "LMBF-Net".into(),
            dataset: "SYNTH".into(),
            metrics: ScalarMetrics { sn: Some(0.8348), sp: Some(0.98771), acc: None, f1: Some(1.0) },
            auc: Some(0.5),
        };
        assert_eq!(
            report_csv(&[row]),
            "method,dataset,sn,sp,acc,auc,f1\nLMBF-Net,SYNTH,83.48,98.77,NA,50.00,100.00\n"
        );
    }
}
