//! Named config variants evaluated side by side.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{evaluate, EvalReport};
use crate::error::{ConfigError, Result};
use crate::model::{SelectionConfig, SelectionMode, Task};
use crate::rank::Backends;

pub const CSV_HEADER: &str = "variant,ex,n_included,n_excluded,resample_rate,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridVariant {
    pub name: String,
    /// Fields of [`SelectionConfig`] to override on top of the base config.
    #[serde(default)]
    pub overrides: serde_json::Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub variants: Vec<GridVariant>,
}

impl Grid {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::parse(path.display().to_string(), e))
    }

    /// Resolves each variant against `base`; unknown fields are rejected.
    pub fn resolve(
        &self,
        base: &SelectionConfig,
    ) -> Result<Vec<(String, SelectionConfig)>, ConfigError> {
        if self.variants.is_empty() {
            return Err(ConfigError::Invalid("ablation grid has no variants".into()));
        }
        let base = serde_json::to_value(base).expect("config serializes");
        let mut out = Vec::new();
        for v in &self.variants {
            let mut merged = base.clone();
            let obj = merged.as_object_mut().expect("config is an object");
            for (k, val) in &v.overrides {
                obj.insert(k.clone(), val.clone());
            }
            let cfg: SelectionConfig = serde_json::from_value(merged)
                .map_err(|e| ConfigError::parse(format!("grid variant {:?}", v.name), e))?;
            cfg.validate()?;
            out.push((v.name.clone(), cfg));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub name: String,
    pub report: EvalReport,
    pub wall_ms: u64,
    /// EX minus the r3 baseline's EX.
    pub delta_ex: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub variants: Vec<VariantResult>,
    pub baseline: Option<String>,
    /// Whether mean r_list never rises with tau among variants that differ
    /// only in tau; `None` when there is no such sweep.
    pub tau_monotone: Option<bool>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for v in &self.variants {
            out.push_str(&format!(
                "{},{:.2},{},{},{:.4},{}\n",
                v.name,
                v.report.ex,
                v.report.n_included,
                v.report.n_excluded,
                v.report.resample_rate,
                v.wall_ms
            ));
        }
        out
    }

    pub fn deltas_text(&self) -> String {
        let w = self
            .variants
            .iter()
            .map(|v| v.name.len())
            .max()
            .unwrap_or(7)
            .max(7);
        let mut out = format!("{:<w$}  {:>7}  {:>8}\n", "variant", "EX", "delta");
        for v in &self.variants {
            let d = v.delta_ex.map_or("-".to_string(), |d| format!("{d:+.2}"));
            out.push_str(&format!("{:<w$}  {:>7.2}  {:>8}\n", v.name, v.report.ex, d));
        }
        if let Some(m) = self.tau_monotone {
            out.push_str(&format!("tau sweep r_list monotone: {m}\n"));
        }
        out
    }

    pub fn complete(&self) -> bool {
        self.variants.iter().all(|v| v.report.complete)
    }
}

fn tau_monotone(variants: &[(String, SelectionConfig)], reports: &[EvalReport]) -> Option<bool> {
    let mut result = None;
    for (i, (_, ci)) in variants.iter().enumerate() {
        let mut sweep: Vec<(f64, f64)> = variants
            .iter()
            .zip(reports)
            .filter(|((_, c), _)| {
                SelectionConfig {
                    tau: ci.tau,
                    ..c.clone()
                } == *ci
            })
            .map(|((_, c), r)| (c.tau, r.mean_r_list))
            .collect();
        // each sweep is considered once, from its first member
        let first = variants.iter().position(|(_, c)| {
            SelectionConfig {
                tau: ci.tau,
                ..c.clone()
            } == *ci
        });
        if sweep.len() < 2 || first != Some(i) {
            continue;
        }
        sweep.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ok = sweep.windows(2).all(|w| w[1].1 <= w[0].1);
        result = Some(result.unwrap_or(true) && ok);
    }
    result
}

/// Evaluates each grid variant on `tasks` with the same seed.
pub fn ablate(
    tasks: &[Task],
    base: &SelectionConfig,
    grid: &Grid,
    backends: &Backends,
    seed: u64,
) -> Result<AblationReport> {
    let variants = grid.resolve(base)?;
    let mut results = Vec::new();
    for (name, cfg) in &variants {
        let t = Instant::now();
        let run = evaluate(tasks, cfg, backends, seed)?;
        results.push(VariantResult {
            name: name.clone(),
            report: run.report,
            wall_ms: t.elapsed().as_millis() as u64,
            delta_ex: None,
        });
    }
    let baseline = variants.iter().position(|(n, _)| n == "r3").or_else(|| {
        variants
            .iter()
            .position(|(_, c)| c.mode == SelectionMode::R3)
    });
    if let Some(b) = baseline {
        let base_ex = results[b].report.ex;
        for r in &mut results {
            r.delta_ex = Some(r.report.ex - base_ex);
        }
    }
    let reports: Vec<EvalReport> = results.iter().map(|r| r.report.clone()).collect();
    Ok(AblationReport {
        tau_monotone: tau_monotone(&variants, &reports),
        baseline: baseline.map(|b| variants[b].0.clone()),
        variants: results,
    })
}
