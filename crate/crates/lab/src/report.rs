//! Derived tables: variant comparisons and tidy plot series.

use crst_core::evalkit::welch_t;
use crst_core::math::{mean, sample_variance};
use crst_core::trainer::TrainHistory;

use crate::csvio::{ComparisonRow, PlotRow};
use crate::error::{LabError, Result};

/// `"mean ± std"` of fractions, in percentage points.
pub fn mean_pm_std(values: &[f64]) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean(values), 100.0 * sample_variance(values).sqrt())
}

/// One row per variant, in input order; every row but the baseline's carries
/// Welch's test of that variant against the baseline.
pub fn comparison_table(groups: &[(String, Vec<f64>)], baseline: Option<&str>) -> Result<Vec<ComparisonRow>> {
    let base = match baseline {
        Some(b) => Some(
            groups
                .iter()
                .find(|(n, _)| n == b)
                .map(|(_, v)| v)
                .ok_or_else(|| LabError::Config(format!("baseline '{b}' is not among the runs")))?,
        ),
        None => None,
    };
    groups
        .iter()
        .map(|(name, values)| {
            if values.is_empty() {
                return Err(LabError::Data(format!("variant '{name}' has no runs")));
            }
            let welch = match base {
                Some(b) if Some(name.as_str()) != baseline => Some(welch_t(values, b)?),
                _ => None,
            };
            Ok(ComparisonRow {
                variant: name.clone(),
                runs: values.len(),
                mean: mean(values),
                std: sample_variance(values).sqrt(),
                summary: mean_pm_std(values),
                welch_t: welch.map(|w| w.t),
                welch_df: welch.map(|w| w.df),
                p_value: welch.map(|w| w.p),
            })
        })
        .collect()
}

/// Ramp weights, losses and reliabilities per step plus validation F per epoch.
pub fn plot_rows(history: &TrainHistory) -> Vec<PlotRow> {
    let mut rows = Vec::new();
    let mut push = |step: u64, series: String, value: f64| rows.push(PlotRow { step, series, value });
    for r in &history.steps {
        push(r.step, "omega".into(), r.omega);
        push(r.step, "delta".into(), r.delta);
        for (k, m) in r.models.iter().enumerate() {
            push(r.step, format!("loss_total_m{k}"), m.loss.total);
            push(r.step, format!("loss_strong_m{k}"), m.loss.classification_strong);
            push(r.step, format!("loss_weak_m{k}"), m.loss.classification_weak);
            push(r.step, format!("loss_consistency_m{k}"), m.loss.consistency);
            if let Some(g) = m.gamma_s {
                push(r.step, format!("gamma_s_m{k}"), g);
            }
            if let Some(g) = m.gamma_w {
                push(r.step, format!("gamma_w_m{k}"), g);
            }
        }
    }
    for e in &history.epochs {
        push(e.step, "validation_macro_f".into(), e.validation_macro_f);
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_uses_sample_std_in_points() {
        assert_eq!(mean_pm_std(&[0.3, 0.4, 0.5]), "40.00 ± 10.00");
    }

    #[test]
    fn baseline_row_has_no_test() {
        let groups = vec![("a".to_string(), vec![0.1, 0.2, 0.15]), ("b".to_string(), vec![0.5, 0.52, 0.55])];
        let rows = comparison_table(&groups, Some("a")).unwrap();
        assert!(rows[0].p_value.is_none());
        let p = rows[1].p_value.unwrap();
        assert!(p > 0.0 && p < 0.01, "{p}");
        assert!(rows[1].welch_t.unwrap() > 0.0);
        assert!(comparison_table(&groups, Some("zzz")).is_err());
    }
}
