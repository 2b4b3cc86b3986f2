use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::filters::FilterBank;

use super::{break_even_rank, method_error_curve, select_rank, theoretical_speedup, Method};

/// Rank analysis of one layer (or one group of a grouped layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRank {
    pub layer: String,
    pub group: Option<usize>,
    pub full_rank: usize,
    pub rank: usize,
    pub rank_ratio: f64,
    pub tau: f64,
    /// `e_M / e_0` for `M = 1..=N`.
    pub error_curve: Vec<f64>,
    pub theoretical_speedup: f64,
    pub break_even_rank: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub method: Option<Method>,
    pub per_layer: Vec<LayerRank>,
}

/// Rank of every group of `bank` at error fraction `tau`.
///
/// `out_hw` is the output feature-map size, needed for the speedup figure.
pub fn analyze_layer(
    name: &str,
    bank: &FilterBank,
    tau: f64,
    out_hw: (usize, usize),
    method: Method,
    seed: u64,
) -> Result<Vec<LayerRank>> {
    let grouped = bank.groups() > 1;
    let mut out = Vec::with_capacity(bank.groups());
    for fm in bank.group_matrices() {
        let curve = method_error_curve(&fm, method, seed)?;
        let total = fm.frobenius_norm_sq();
        let n = fm.rows();
        let rank = if total < 1e-15 { 1 } else { select_rank(&curve, tau) };
        let s = fm.shape;
        out.push(LayerRank {
            layer: name.to_string(),
            group: if grouped { fm.group } else { None },
            full_rank: n,
            rank,
            rank_ratio: rank as f64 / n as f64,
            tau,
            error_curve: curve,
            theoretical_speedup: theoretical_speedup(
                n, s.channels, s.height, s.width, out_hw.0, out_hw.1, rank,
            ),
            break_even_rank: break_even_rank(n, s.channels, s.height, s.width),
        });
    }
    Ok(out)
}

impl RankReport {
    pub fn average_rank_ratio(&self) -> f64 {
        if self.per_layer.is_empty() {
            return 0.0;
        }
        self.per_layer.iter().map(|l| l.rank_ratio).sum::<f64>() / self.per_layer.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `layer,N,M,rank_ratio,tau,theoretical_speedup`; grouped layers are
    /// written as `name[gK]`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,N,M,rank_ratio,tau,theoretical_speedup\n");
        for l in &self.per_layer {
            let name = match l.group {
                Some(g) => format!("{}[g{g}]", l.layer),
                None => l.layer.clone(),
            };
            writeln!(
                s,
                "{name},{},{},{},{},{}",
                l.full_rank, l.rank, l.rank_ratio, l.tau, l.theoretical_speedup
            )
            .unwrap();
        }
        s
    }
}
