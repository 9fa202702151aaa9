use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Decision, EvalError};

/// Per-flow ERDE costs. `c_fp = None` means "attack flows / all flows".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErdeCosts {
    pub c_fp: Option<f64>,
    pub c_fn: f64,
    pub c_tp: f64,
}

impl Default for ErdeCosts {
    fn default() -> Self {
        Self {
            c_fp: None,
            c_fn: 1.0,
            c_tp: 1.0,
        }
    }
}

/// Latency cost `1 − 1/(1 + e^(k−o))`.
pub fn lc(k: usize, o: usize) -> f64 {
    1.0 - 1.0 / (1.0 + (k as f64 - o as f64).exp())
}

fn label_of(d: &Decision) -> Result<usize, EvalError> {
    d.label
        .ok_or_else(|| EvalError::Unlabelled(d.flow_id.clone()))
}

/// Mean per-flow early risk detection error under the benign/attack mapping.
pub fn erde(
    decisions: &[Decision],
    benign_class: usize,
    o: usize,
    costs: &ErdeCosts,
) -> Result<f64, EvalError> {
    if decisions.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut attacks = 0usize;
    for d in decisions {
        attacks += usize::from(label_of(d)? != benign_class);
    }
    let c_fp = costs
        .c_fp
        .unwrap_or(attacks as f64 / decisions.len() as f64);
    let mut total = 0.0;
    for d in decisions {
        let is_attack = label_of(d)? != benign_class;
        let said_attack = d.predicted != benign_class;
        total += match (is_attack, said_attack) {
            (false, true) => c_fp,
            (true, false) => costs.c_fn,
            (true, true) => costs.c_tp * lc(d.k, o),
            (false, false) => 0.0,
        };
    }
    Ok(total / decisions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau: f64,
    pub benign_class: usize,
    pub flows: usize,
    pub benign_flows: usize,
    pub attack_flows: usize,
    pub top1_accuracy: f64,
    /// Over flows decided correctly after crossing `τ`; `None` if there are none.
    pub max_earliness: Option<usize>,
    pub mean_earliness: Option<f64>,
    /// Flows decided on their full length without reaching `τ`.
    pub never_crossed: usize,
    /// Attack flows decided benign / attack flows (0 when there are none).
    pub fnr: f64,
    /// Benign flows decided attack / benign flows (0 when there are none).
    pub far: f64,
    pub erde: BTreeMap<usize, f64>,
    /// `confusion[label][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub decisions: Vec<Decision>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(
    decisions: &[Decision],
    classes: usize,
    benign_class: usize,
    tau: f64,
    o_list: &[usize],
    costs: &ErdeCosts,
) -> Result<EvalReport, EvalError> {
    if decisions.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    let mut early = Vec::new();
    let (mut benign, mut attack, mut false_neg, mut false_alarm) = (0, 0, 0, 0);
    for d in decisions {
        let label = label_of(d)?;
        for c in [label, d.predicted] {
            if c >= classes {
                return Err(EvalError::LabelOutOfRange {
                    flow: d.flow_id.clone(),
                    label: c,
                    classes,
                });
            }
        }
        confusion[label][d.predicted] += 1;
        if label == d.predicted {
            correct += 1;
            if d.crossed_threshold {
                early.push(d.k);
            }
        }
        if label == benign_class {
            benign += 1;
            false_alarm += usize::from(d.predicted != benign_class);
        } else {
            attack += 1;
            false_neg += usize::from(d.predicted == benign_class);
        }
    }
    let mut erde_map = BTreeMap::new();
    for &o in o_list {
        erde_map.insert(o, erde(decisions, benign_class, o, costs)?);
    }
    Ok(EvalReport {
        tau,
        benign_class,
        flows: decisions.len(),
        benign_flows: benign,
        attack_flows: attack,
        top1_accuracy: ratio(correct, decisions.len()),
        max_earliness: early.iter().copied().max(),
        mean_earliness: (!early.is_empty())
            .then(|| early.iter().sum::<usize>() as f64 / early.len() as f64),
        never_crossed: decisions.iter().filter(|d| !d.crossed_threshold).count(),
        fnr: ratio(false_neg, attack),
        far: ratio(false_alarm, benign),
        erde: erde_map,
        confusion,
        decisions: decisions.to_vec(),
    })
}

impl EvalReport {
    /// Human-readable summary table.
    pub fn table(&self, class_names: Option<&[String]>) -> String {
        let mut s = String::new();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "threshold        {:.4}", self.tau);
        let _ = writeln!(
            s,
            "flows            {} ({} benign, {} attack)",
            self.flows, self.benign_flows, self.attack_flows
        );
        let _ = writeln!(s, "top-1 accuracy   {:.2}%", 100.0 * self.top1_accuracy);
        let _ = writeln!(
            s,
            "max earliness    {}",
            opt(self.max_earliness.map(|v| v.to_string()))
        );
        let _ = writeln!(
            s,
            "mean earliness   {}",
            opt(self.mean_earliness.map(|v| format!("{v:.2}")))
        );
        let _ = writeln!(s, "never confident  {}", self.never_crossed);
        let _ = writeln!(s, "FNR              {:.2}%", 100.0 * self.fnr);
        let _ = writeln!(s, "FAR              {:.2}%", 100.0 * self.far);
        for (o, v) in &self.erde {
            let _ = writeln!(s, "ERDE_{o:<11} {v:.4}");
        }
        let name = |i: usize| {
            class_names
                .and_then(|n| n.get(i).cloned())
                .unwrap_or_else(|| i.to_string())
        };
        let width = (0..self.confusion.len())
            .map(|i| name(i).len())
            .max()
            .unwrap_or(1)
            .max(5);
        let _ = write!(s, "\n{:>width$} |", "true\\pred");
        for j in 0..self.confusion.len() {
            let _ = write!(s, " {:>width$}", name(j));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{:>width$} |", name(i));
            for v in row {
                let _ = write!(s, " {v:>width$}");
            }
            s.push('\n');
        }
        s
    }
}
