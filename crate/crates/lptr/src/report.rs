//! Benchmark result rows and their CSV / markdown rendering.

/// One benchmark result, mirroring the comparison-table columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub alg: String,
    /// Final objective F(u_K) with the exact regularizer.
    pub objective: f64,
    pub iterations: u64,
    pub eps_final: f64,
    /// Norm of the last accepted step, `||u_K - u_{K-1}||`.
    pub step_norm: f64,
    pub h_final: f64,
    /// Stationarity with the nonconvex regularizer; absent in H01.
    pub h_final_nc: Option<f64>,
    /// Measure of the zero set of the final control.
    pub sparsity: f64,
    pub f_evals: u64,
    pub hess_evals: u64,
    pub prox_lp_evals: u64,
    pub wallclock_s: f64,
}

pub const CSV_HEADER: &str = "alg,F,iter,eps_K,dF,h_K,h_K_nc,sparsity,feval,hess,prox_lp,time_s";

/// Output format for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "markdown" | "md" => Some(ReportFormat::Markdown),
            _ => None,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render rows; CSV uses shortest round-trip decimals and LF endings.
pub fn emit_report(rows: &[ReportRow], format: ReportFormat) -> String {
    assert!(!rows.is_empty(), "report needs at least one row");
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.alg,
                    r.objective,
                    r.iterations,
                    r.eps_final,
                    r.step_norm,
                    r.h_final,
                    opt(r.h_final_nc),
                    r.sparsity,
                    r.f_evals,
                    r.hess_evals,
                    r.prox_lp_evals,
                    r.wallclock_s
                ));
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| alg | F | iter | eps_K | dF | h_K | h_K_nc | sparsity | feval | hess | prox_lp | time_s |\n",
            );
            out.push_str("| --- | --- | --- | --- | --- | --- | --- | --- | --- | --- | --- | --- |\n");
            for r in rows {
                out.push_str(&format!(
                    "| {} | {:.5} | {} | {:.4e} | {:.4e} | {:.4e} | {} | {:.5} | {} | {} | {} | {:.2} |\n",
                    r.alg,
                    r.objective,
                    r.iterations,
                    r.eps_final,
                    r.step_norm,
                    r.h_final,
                    r.h_final_nc
                        .map(|v| format!("{v:.4e}"))
                        .unwrap_or_default(),
                    r.sparsity,
                    r.f_evals,
                    r.hess_evals,
                    r.prox_lp_evals,
                    r.wallclock_s
                ));
            }
            out
        }
    }
}

/// Parse CSV text produced by [`emit_report`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty report")?;
    if header != CSV_HEADER {
        return Err(format!("unexpected header: {header}"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(format!("line {}: expected 12 fields, got {}", i + 2, fields.len()));
        }
        let num = |s: &str| -> Result<f64, String> {
            s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2))
        };
        let int = |s: &str| -> Result<u64, String> {
            s.parse::<u64>().map_err(|e| format!("line {}: {e}", i + 2))
        };
        rows.push(ReportRow {
            alg: fields[0].to_string(),
            objective: num(fields[1])?,
            iterations: int(fields[2])?,
            eps_final: num(fields[3])?,
            step_norm: num(fields[4])?,
            h_final: num(fields[5])?,
            h_final_nc: if fields[6].is_empty() {
                None
            } else {
                Some(num(fields[6])?)
            },
            sparsity: num(fields[7])?,
            f_evals: int(fields[8])?,
            hess_evals: int(fields[9])?,
            prox_lp_evals: int(fields[10])?,
            wallclock_s: num(fields[11])?,
        });
    }
    Ok(rows)
}
