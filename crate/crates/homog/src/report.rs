//! Consolidation of run records into one comparison table: the `report`
//! subcommand reads any number of `run.json` files and emits a CSV with one
//! row per run — estimates, bounds, and their relative errors against the
//! closed-form reference — so table-style comparisons across methods come
//! straight from recorded runs.

use std::path::PathBuf;

use crate::config::{MaterialKind, MethodKind};
use crate::run::{fmt_opt, RunRecord};

struct ReportRow {
    method: MethodKind,
    record: RunRecord,
}

pub const REPORT_HEADER: &str = "method,form,material,epsilon,params,n_test,epochs,seed,\
exact,primal_estimate,primal_error_pct,dual_estimate,dual_error_pct,\
upper_bound,upper_error_pct,lower_bound,lower_error_pct,gap,suspected,aborted,\
best_primal,best_dual";

/// Consolidate run records into one CSV table. `paths` may name run
/// directories (their `run.json` is read) or record files directly.
/// Unreadable or unparsable records are skipped with a warning on stderr.
/// Within each method group the rows with the smallest primal and dual
/// estimate-error magnitudes are marked in the `best_*` columns. Empty
/// input yields the header alone.
pub fn cmd_report(paths: &[PathBuf]) -> String {
    let mut rows = Vec::new();
    for path in paths {
        let file = if path.is_dir() {
            path.join("run.json")
        } else {
            path.clone()
        };
        let text = match std::fs::read_to_string(&file) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", file.display());
                continue;
            }
        };
        match serde_json::from_str::<RunRecord>(&text) {
            Ok(record) => rows.push(ReportRow {
                method: record.config.method,
                record,
            }),
            Err(e) => {
                eprintln!(
                    "warning: skipping {}: not a run record ({e})",
                    file.display()
                );
            }
        }
    }

    // Best-in-group: smallest estimate-error magnitude per method.
    let best_flag = |rows: &[ReportRow],
                     index: usize,
                     error_of: &dyn Fn(&RunRecord) -> Option<f64>|
     -> bool {
        let here = match error_of(&rows[index].record) {
            Some(e) => e.abs(),
            None => return false,
        };
        rows.iter()
            .filter(|r| r.method == rows[index].method)
            .filter_map(|r| error_of(&r.record))
            .all(|other| here <= other.abs())
    };

    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for i in 0..rows.len() {
        let r = &rows[i].record;
        let c = &r.config;
        let params = c
            .network_config()
            .ok()
            .filter(|_| c.method != MethodKind::Fem)
            .map(|nc| nc.param_count().to_string())
            .unwrap_or_default();
        let n_test = match c.method {
            MethodKind::Vspinn | MethodKind::Vnpinn => c
                .basis()
                .ok()
                .flatten()
                .map(|b| b.len().to_string())
                .unwrap_or_default(),
            _ => String::new(),
        };
        let epsilon = if c.material == MaterialKind::Smoothed {
            c.epsilon.to_string()
        } else {
            String::new()
        };
        let epochs = if c.method == MethodKind::Fem {
            String::new()
        } else {
            c.epochs.to_string()
        };
        let pct = |v: Option<f64>| fmt_opt(v.map(|e| e * 100.0));
        let line = [
            c.method.to_string(),
            c.form.to_string(),
            c.material.to_string(),
            epsilon,
            params,
            n_test,
            epochs,
            c.seed.to_string(),
            r.exact_reference.to_string(),
            fmt_opt(r.primal.as_ref().map(|s| s.quick_estimate)),
            pct(r.primal.as_ref().map(|s| s.estimate_error)),
            fmt_opt(r.dual.as_ref().map(|s| s.quick_estimate)),
            pct(r.dual.as_ref().map(|s| s.estimate_error)),
            fmt_opt(r.primal.as_ref().map(|s| s.bound)),
            pct(r.primal.as_ref().map(|s| s.bound_error)),
            fmt_opt(r.dual.as_ref().map(|s| s.bound)),
            pct(r.dual.as_ref().map(|s| s.bound_error)),
            fmt_opt(r.gap),
            r.suspected_failure.to_string(),
            r.aborted().is_some().to_string(),
            if best_flag(&rows, i, &|r| r.primal.as_ref().map(|s| s.estimate_error)) {
                "*".to_string()
            } else {
                String::new()
            },
            if best_flag(&rows, i, &|r| r.dual.as_ref().map(|s| s.estimate_error)) {
                "*".to_string()
            } else {
                String::new()
            },
        ];
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{FormChoice, RunConfig};
    use crate::run::{cmd_fem, cmd_train};
    use std::path::Path;

    fn tiny_train_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.method = MethodKind::Vspinn;
        cfg.material = MaterialKind::Piecewise;
        cfg.n_periodic = 2;
        cfg.n_hidden = 3;
        cfg.n_layers = 1;
        cfg.spectral_m = 1;
        cfg.spectral_n = 1;
        cfg.grid_n = 16;
        cfg.fem_n = 8;
        cfg.epochs = 30;
        cfg.log_every = 10;
        cfg.out_dir = dir.to_string_lossy().into_owned();
        cfg
    }

    #[test]
    fn report_consolidates_and_skips_corrupt_records() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut fem_cfg = RunConfig::default();
        fem_cfg.method = MethodKind::Fem;
        fem_cfg.material = MaterialKind::Piecewise;
        fem_cfg.fem_n = 8;
        fem_cfg.out_dir = dir_a.path().to_string_lossy().into_owned();
        cmd_fem(&fem_cfg).unwrap();
        let train_cfg = tiny_train_config(dir_b.path());
        cmd_train(&train_cfg).unwrap();

        let corrupt = tempfile::tempdir().unwrap();
        std::fs::write(corrupt.path().join("run.json"), "{ not json").unwrap();
        let missing = corrupt.path().join("nothing_here");

        let csv = cmd_report(&[
            dir_a.path().to_path_buf(),
            dir_b.path().to_path_buf(),
            corrupt.path().to_path_buf(),
            missing,
        ]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines.len(), 3); // header + two valid rows
        assert!(lines[1].starts_with("fem,"));
        assert!(lines[2].starts_with("vspinn,"));
        // Sole member of each method group is best in group.
        assert!(lines[1].ends_with("*,*"));
        assert!(lines[2].ends_with("*,*"));

        // Empty input: header only.
        let empty = cmd_report(&[]);
        assert_eq!(empty.trim_end(), REPORT_HEADER);
    }

    #[test]
    fn report_marks_best_within_method_group() {
        // Two records differing only in how close the estimates are; the
        // closer one must carry the primal asterisk.
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = tiny_train_config(dir_a.path());
        cfg_a.epochs = 40;
        let mut cfg_b = tiny_train_config(dir_b.path());
        cfg_b.epochs = 2;
        let rec_a = cmd_train(&cfg_a).unwrap();
        let rec_b = cmd_train(&cfg_b).unwrap();
        let err_a = rec_a.primal.unwrap().estimate_error.abs();
        let err_b = rec_b.primal.unwrap().estimate_error.abs();
        let csv = cmd_report(&[dir_a.path().to_path_buf(), dir_b.path().to_path_buf()]);
        let lines: Vec<&str> = csv.lines().collect();
        let a_best = lines[1].split(',').nth_back(1).unwrap() == "*";
        let b_best = lines[2].split(',').nth_back(1).unwrap() == "*";
        assert_eq!(a_best, err_a <= err_b);
        assert_eq!(b_best, err_b <= err_a);
    }

    #[test]
    fn report_row_count_matches_inputs_and_no_stray_commas() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_train_config(dir.path());
        cmd_train(&cfg).unwrap();
        let csv = cmd_report(&[dir.path().to_path_buf()]);
        for line in csv.lines() {
            assert_eq!(
                line.split(',').count(),
                REPORT_HEADER.split(',').count(),
                "ragged row: {line}"
            );
        }
    }

    #[test]
    fn single_form_record_leaves_other_columns_empty() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_train_config(dir.path());
        cfg.form = FormChoice::Primal;
        cmd_train(&cfg).unwrap();
        let csv = cmd_report(&[dir.path().to_path_buf()]);
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        let header: Vec<&str> = REPORT_HEADER.split(',').collect();
        let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
        assert!(!row[col("primal_estimate")].is_empty());
        assert!(row[col("dual_estimate")].is_empty());
        assert!(row[col("dual_error_pct")].is_empty());
        assert!(row[col("lower_bound")].is_empty());
        assert!(row[col("gap")].is_empty());
    }
}
