//! Experiment tables: window-stride sweep and loss-weight ablation.

use crate::data::LabeledRaster;

use super::{
    compute_metrics, connected_components, majority_vote_postprocess, plan_tiles, predict_image, scaled_min_area,
    summarize, InferenceError, MetricsReport, MetricsSummary, WindowModel,
};

#[derive(Debug, Clone, PartialEq)]
pub struct StrideRow {
    pub stride: usize,
    /// Windows per image (images share one size).
    pub windows: usize,
    pub summary: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StrideTable {
    pub rows: Vec<StrideRow>,
}

fn best_by<T>(rows: &[T], key: impl Fn(&T) -> f64, higher: bool) -> Option<&T> {
    rows.iter().fold(None, |best: Option<&T>, r| match best {
        Some(b) if (higher && key(b) >= key(r)) || (!higher && key(b) <= key(r)) => Some(b),
        _ => Some(r),
    })
}

impl StrideTable {
    pub const HEADER: &'static str = "Stride,#,Accuracy,BER,F1";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.stride,
                r.windows,
                r.summary.accuracy.cell(2),
                r.summary.ber.cell(3),
                r.summary.f1.cell(2)
            ));
        }
        out
    }

    /// One line naming the best stride per metric.
    pub fn best_summary(&self) -> String {
        let name = |r: Option<&StrideRow>| r.map_or("-".to_string(), |r| r.stride.to_string());
        format!(
            "best stride: accuracy {}, BER {}, F1 {}",
            name(best_by(&self.rows, |r| r.summary.accuracy.mean, true)),
            name(best_by(&self.rows, |r| r.summary.ber.mean, false)),
            name(best_by(&self.rows, |r| r.summary.f1.mean, true)),
        )
    }
}

/// Metrics of one whole scene, optionally after majority voting over the
/// model's segment map.
pub fn evaluate_scene(
    model: &dyn WindowModel,
    scene: &LabeledRaster,
    stride: usize,
    postprocess: bool,
) -> Result<(MetricsReport, Vec<u8>), InferenceError> {
    let plan = plan_tiles(scene.height, scene.width, model.window(), stride)?;
    let map = predict_image(&scene.image_tensor(), model, &plan)?;
    let mut labels = map.hard_labels();
    if postprocess {
        if let Some(seg) = &map.segments {
            let comps =
                connected_components(seg, scene.height, scene.width, scaled_min_area(scene.height, scene.width));
            labels = majority_vote_postprocess(&labels, &comps.eligible_segments())?;
        }
    }
    Ok((compute_metrics(&labels, &scene.mask)?, labels))
}

/// Evaluates every scene at each stride; mean and std are taken across scenes.
pub fn stride_sweep(
    model: &dyn WindowModel,
    scenes: &[LabeledRaster],
    strides: &[usize],
    postprocess: bool,
) -> Result<StrideTable, InferenceError> {
    let mut rows = Vec::with_capacity(strides.len());
    for &stride in strides {
        let mut reports = Vec::with_capacity(scenes.len());
        let mut windows = 0;
        for (i, scene) in scenes.iter().enumerate() {
            if i == 0 {
                windows = plan_tiles(scene.height, scene.width, model.window(), stride)?.len();
            }
            reports.push(evaluate_scene(model, scene, stride, postprocess)?.0);
        }
        rows.push(StrideRow { stride, windows, summary: summarize(&reports) });
    }
    Ok(StrideTable { rows })
}

/// One point of the loss-weight grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSetting {
    /// `Baseline`, `lambda_c` or `lambda_r`.
    pub param: String,
    /// The varied value; `None` for the baseline.
    pub value: Option<f64>,
    pub lambda_c: f64,
    pub lambda_r: f64,
}

/// Baseline plus each weight scaled to 0.4 and 1.6 with the other held fixed.
pub fn lambda_grid(lambda_c: f64, lambda_r: f64) -> Vec<LambdaSetting> {
    let mut grid = vec![LambdaSetting { param: "Baseline".into(), value: None, lambda_c, lambda_r }];
    for v in [0.4, 1.6] {
        grid.push(LambdaSetting { param: "lambda_c".into(), value: Some(v), lambda_c: v, lambda_r });
    }
    for v in [0.4, 1.6] {
        grid.push(LambdaSetting { param: "lambda_r".into(), value: Some(v), lambda_c, lambda_r: v });
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    /// Observed max − min of the per-step total training loss.
    pub loss_range: f64,
    pub summary: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub setting: LambdaSetting,
    pub result: Result<AblationCell, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const HEADER: &'static str = "Param.,Val.,Loss Val.,Accuracy,BER,F1";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let val = r.setting.value.map_or(String::new(), |v| v.to_string());
            match &r.result {
                Ok(c) => out.push_str(&format!(
                    "{},{},{:.2},{},{},{}\n",
                    r.setting.param,
                    val,
                    c.loss_range,
                    c.summary.accuracy.cell(2),
                    c.summary.ber.cell(3),
                    c.summary.f1.cell(2)
                )),
                Err(e) => {
                    let msg = format!("failed: {}", e.replace([',', '\n'], ";"));
                    out.push_str(&format!("{},{},{msg},{msg},{msg},{msg}\n", r.setting.param, val));
                }
            }
        }
        out
    }

    pub fn best_summary(&self) -> String {
        let ok: Vec<(&LambdaSetting, &AblationCell)> =
            self.rows.iter().filter_map(|r| r.result.as_ref().ok().map(|c| (&r.setting, c))).collect();
        let name = |r: Option<&(&LambdaSetting, &AblationCell)>| {
            r.map_or("-".to_string(), |(s, _)| match s.value {
                Some(v) => format!("{}={v}", s.param),
                None => s.param.clone(),
            })
        };
        format!(
            "best setting: accuracy {}, BER {}, F1 {}",
            name(best_by(&ok, |r| r.1.summary.accuracy.mean, true)),
            name(best_by(&ok, |r| r.1.summary.ber.mean, false)),
            name(best_by(&ok, |r| r.1.summary.f1.mean, true)),
        )
    }
}

/// Runs `train_and_eval` once per grid point; failures are recorded per row.
pub fn lambda_ablation<E: std::fmt::Display>(
    grid: &[LambdaSetting],
    mut train_and_eval: impl FnMut(&LambdaSetting) -> Result<AblationCell, E>,
) -> AblationTable {
    AblationTable {
        rows: grid
            .iter()
            .map(|s| AblationRow { setting: s.clone(), result: train_and_eval(s).map_err(|e| e.to_string()) })
            .collect(),
    }
}
