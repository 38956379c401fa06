use std::fmt::Write as _;

use super::filter::unwrap_angles;
use super::series::PoseSeries;
use crate::kinematics::{transform_to_euler, wrap_angle, VISIBLE_JOINTS};
use crate::{Error, Result};

pub fn rmse(err: &[f64]) -> f64 {
    if err.is_empty() {
        return 0.0;
    }
    (err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64).sqrt()
}

/// RMSE as a percentage of the reference range; `None` when the range is 0.
pub fn nrmse(rmse: f64, reference: &[f64]) -> Option<f64> {
    let lo = reference.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    (range > 0.0).then(|| rmse / range * 100.0)
}

/// Percentage of the noisy RMSE removed by the correction.
pub fn reduction(rmse_noisy: f64, rmse_corrected: f64) -> f64 {
    if rmse_noisy == 0.0 {
        return if rmse_corrected == 0.0 { 100.0 } else { f64::NEG_INFINITY };
    }
    (rmse_noisy - rmse_corrected) / rmse_noisy * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NrmseRange {
    Truth,
    Noisy,
}

impl std::str::FromStr for NrmseRange {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "truth" => Ok(Self::Truth),
            "noisy" => Ok(Self::Noisy),
            _ => Err(format!("unknown range {s:?} (expected truth or noisy)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Translation,
    Rotation,
    Joints,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Translation, Group::Rotation, Group::Joints];

    /// Axis names followed by `overall`.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Group::Translation => &["x", "y", "z", "overall"],
            Group::Rotation => &["roll", "pitch", "yaw", "overall"],
            Group::Joints => &["q4", "q5", "q6", "q7", "overall"],
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Group::Translation => "mm",
            _ => "deg",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Translation => "translation",
            Group::Rotation => "rotation",
            Group::Joints => "joints",
        }
    }
}

/// Per-axis values of one series in reporting units: translation in mm,
/// roll/pitch/yaw (unwrapped) and joints in degrees.
fn axis_values(s: &PoseSeries, g: Group) -> Vec<Vec<f64>> {
    match g {
        Group::Translation => (0..3).map(|a| s.ee.iter().map(|e| e.translation[a] * 1000.0).collect()).collect(),
        Group::Rotation => {
            let eul: Vec<[f64; 3]> = s.ee.iter().map(|e| transform_to_euler(e).0.euler).collect();
            // Stored order is [z, y, x]; report roll (x), pitch (y), yaw (z).
            [2, 1, 0]
                .iter()
                .map(|&a| unwrap_angles(&eul.iter().map(|e| e[a]).collect::<Vec<_>>()).into_iter().map(f64::to_degrees).collect())
                .collect()
        }
        Group::Joints => (0..VISIBLE_JOINTS).map(|j| s.joints.iter().map(|q| q[j].to_degrees()).collect()).collect(),
    }
}

/// Per-frame errors per axis (angles as shortest-arc differences).
pub fn axis_errors(pred: &PoseSeries, truth: &PoseSeries, g: Group) -> Vec<Vec<f64>> {
    let (p, t) = (axis_values(pred, g), axis_values(truth, g));
    p.iter()
        .zip(&t)
        .map(|(pa, ta)| {
            pa.iter()
                .zip(ta)
                .map(|(a, b)| if g == Group::Rotation { wrap_angle((a - b).to_radians()).to_degrees() } else { a - b })
                .collect()
        })
        .collect()
}

/// RMSE per axis followed by the overall value: Euclidean for translation,
/// quadratic mean of the axes otherwise.
fn group_rmse(errs: &[Vec<f64>], g: Group) -> Vec<f64> {
    let mut out: Vec<f64> = errs.iter().map(|e| rmse(e)).collect();
    let sq: f64 = out.iter().map(|r| r * r).sum();
    out.push(if g == Group::Translation { sq.sqrt() } else { (sq / out.len() as f64).sqrt() });
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub group: Group,
    /// Axis values then the overall value.
    pub rmse: Vec<f64>,
    pub rmse_noisy: Vec<f64>,
    pub nrmse: Vec<Option<f64>>,
    pub reduction: Vec<f64>,
}

impl GroupMetrics {
    pub fn overall_reduction(&self) -> f64 {
        *self.reduction.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMetrics {
    pub groups: Vec<GroupMetrics>,
}

impl TrajectoryMetrics {
    pub fn group(&self, g: Group) -> &GroupMetrics {
        self.groups.iter().find(|m| m.group == g).expect("all groups present")
    }
}

pub fn trajectory_metrics(pred: &PoseSeries, truth: &PoseSeries, noisy: &PoseSeries, range: NrmseRange) -> Result<TrajectoryMetrics> {
    if pred.len() != truth.len() || noisy.len() != truth.len() {
        return Err(Error::Length { expected: truth.len(), got: pred.len().min(noisy.len()) });
    }
    let mut groups = Vec::new();
    for g in Group::ALL {
        let rmse_pred = group_rmse(&axis_errors(pred, truth, g), g);
        let rmse_noisy = group_rmse(&axis_errors(noisy, truth, g), g);
        let reference = axis_values(if range == NrmseRange::Truth { truth } else { noisy }, g);
        let mut nr: Vec<Option<f64>> = reference.iter().zip(&rmse_pred).map(|(r, e)| nrmse(*e, r)).collect();
        // Overall NRMSE: mean of the axis values.
        let overall = nr.iter().copied().collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / v.len() as f64);
        nr.push(overall);
        let red = rmse_noisy.iter().zip(&rmse_pred).map(|(n, p)| reduction(*n, *p)).collect();
        groups.push(GroupMetrics { group: g, rmse: rmse_pred, rmse_noisy, nrmse: nr, reduction: red });
    }
    Ok(TrajectoryMetrics { groups })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub group: Group,
    pub rmse: Vec<MeanStd>,
    pub rmse_noisy: Vec<MeanStd>,
    pub nrmse: Vec<Option<MeanStd>>,
    pub reduction: Vec<MeanStd>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_trajectory: Vec<TrajectoryMetrics>,
    pub groups: Vec<GroupSummary>,
}

impl MetricsReport {
    pub fn group(&self, g: Group) -> &GroupSummary {
        self.groups.iter().find(|m| m.group == g).expect("all groups present")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            let cols = g.group.columns();
            let _ = writeln!(s, "[{}] ({} trajectories)", g.group.name(), self.per_trajectory.len());
            let _ = writeln!(s, "{:<18}{}", "", cols.iter().map(|c| format!("{c:>18}")).collect::<String>());
            let row = |label: String, vals: Vec<String>| format!("{label:<18}{}\n", vals.iter().map(|v| format!("{v:>18}")).collect::<String>());
            s += &row(format!("RMSE ({})", g.group.unit()), g.rmse.iter().map(|m| m.to_string()).collect());
            s += &row(format!("noisy ({})", g.group.unit()), g.rmse_noisy.iter().map(|m| m.to_string()).collect());
            s += &row("NRMSE (%)".into(), g.nrmse.iter().map(|m| m.map_or("n/a".into(), |m| m.to_string())).collect());
            s += &row("reduction (%)".into(), g.reduction.iter().map(|m| m.to_string()).collect());
        }
        s
    }

    /// Long-format CSV: one row per group, metric and column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,metric,column,mean,std\n");
        for g in &self.groups {
            for (i, c) in g.group.columns().iter().enumerate() {
                let mut put = |metric: &str, m: Option<MeanStd>| {
                    let (a, b) = m.map_or(("nan".to_string(), "nan".to_string()), |m| (m.mean.to_string(), m.std.to_string()));
                    let _ = writeln!(s, "{},{metric},{c},{a},{b}", g.group.name());
                };
                put(&format!("rmse_{}", g.group.unit()), Some(g.rmse[i]));
                put(&format!("rmse_noisy_{}", g.group.unit()), Some(g.rmse_noisy[i]));
                put("nrmse_pct", g.nrmse[i]);
                put("reduction_pct", Some(g.reduction[i]));
            }
        }
        s
    }
}

/// Metrics for paired trajectories, then mean ± std across them.
pub fn evaluate(pred: &[PoseSeries], truth: &[PoseSeries], noisy: &[PoseSeries], range: NrmseRange) -> Result<MetricsReport> {
    if pred.is_empty() || pred.len() != truth.len() || noisy.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "need matching non-empty series lists (pred {}, truth {}, noisy {})",
            pred.len(),
            truth.len(),
            noisy.len()
        )));
    }
    let per: Vec<TrajectoryMetrics> =
        pred.iter().zip(truth).zip(noisy).map(|((p, t), n)| trajectory_metrics(p, t, n, range)).collect::<Result<_>>()?;
    let groups = Group::ALL
        .iter()
        .map(|&g| {
            let ms: Vec<&GroupMetrics> = per.iter().map(|t| t.group(g)).collect();
            let cols = ms[0].rmse.len();
            let summary = |f: &dyn Fn(&GroupMetrics) -> &Vec<f64>| -> Vec<MeanStd> {
                (0..cols).map(|c| MeanStd::of(&ms.iter().map(|m| f(m)[c]).collect::<Vec<_>>())).collect()
            };
            let nrmse = (0..cols)
                .map(|c| ms.iter().map(|m| m.nrmse[c]).collect::<Option<Vec<f64>>>().map(|v| MeanStd::of(&v)))
                .collect();
            GroupSummary { group: g, rmse: summary(&|m| &m.rmse), rmse_noisy: summary(&|m| &m.rmse_noisy), nrmse, reduction: summary(&|m| &m.reduction) }
        })
        .collect();
    Ok(MetricsReport { per_trajectory: per, groups })
}
