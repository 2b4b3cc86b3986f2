//! Whole-network decomposition: every convolution becomes a rank-`M` basis
//! convolution followed by a 1x1 combining convolution.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::archive::{DecomposedEntry, DecompositionInfo};
use crate::error::{Error, Result};
use crate::lowrank::{
    break_even_rank, factorize, select_rank_from_spectrum, split_grouped_layer, theoretical_speedup, Method,
};
use crate::filters::covariance_spectrum;
use crate::nn::{Conv2d, Layer, NamedLayer, Net};
use crate::rng::derive_seed;

/// How the rank of each convolution is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum RankChoice {
    /// Smallest PCA rank with `e_M/e_0 ≤ tau`; grouped layers take the
    /// largest rank over their groups.
    Tau(f64),
    /// One rank per convolution, in network order.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub layer: String,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub m: usize,
    pub break_even_rank: f64,
    pub theoretical_speedup: f64,
    pub macs_full: u64,
    pub macs_split: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeedupTable {
    pub layers: Vec<SpeedupRow>,
    /// Σ full MACs / Σ split MACs over the listed layers.
    pub total_theoretical_speedup: f64,
    /// Forward-pass wall-clock ratio; measured, machine-dependent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_speedup: Option<f64>,
}

impl SpeedupTable {
    pub fn from_rows(layers: Vec<SpeedupRow>) -> Self {
        let full: u64 = layers.iter().map(|r| r.macs_full).sum();
        let split: u64 = layers.iter().map(|r| r.macs_split).sum();
        SpeedupTable {
            total_theoretical_speedup: if split == 0 { 0.0 } else { full as f64 / split as f64 },
            layers,
            measured_speedup: None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,N,C,H,W,H_out,W_out,M,break_even_rank,theoretical_speedup\n");
        for r in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{:.6},{:.6}",
                r.layer, r.n, r.c, r.h, r.w, r.h_out, r.w_out, r.m, r.break_even_rank, r.theoretical_speedup
            );
        }
        let _ = writeln!(s, "total,,,,,,,,,{:.6}", self.total_theoretical_speedup);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }
}

/// Per-group multiply-accumulate counts of a convolution and its split.
fn speedup_row(name: &str, conv: &Conv2d<f32>, out_hw: (usize, usize), m: usize) -> SpeedupRow {
    let g = conv.groups;
    let (n, c) = (conv.out_channels / g, conv.in_channels / g);
    let (h, w) = conv.kernel;
    let (ho, wo) = out_hw;
    let full = (g * n * c * h * w * ho * wo) as u64;
    let split = (g * (m * c * h * w * ho * wo + n * m * ho * wo)) as u64;
    SpeedupRow {
        layer: name.to_string(),
        n,
        c,
        h,
        w,
        h_out: ho,
        w_out: wo,
        m,
        break_even_rank: break_even_rank(n, c, h, w),
        theoretical_speedup: theoretical_speedup(n, c, h, w, ho, wo, m),
        macs_full: full,
        macs_split: split,
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub net: Net<f32>,
    pub info: DecompositionInfo,
    pub speedup: SpeedupTable,
}

/// Rank each convolution would get at `tau` (max over groups).
pub fn tau_ranks(net: &Net<f32>, tau: f64) -> Result<Vec<usize>> {
    net.conv_layers()
        .map(|(i, _, _)| {
            let bank = net.filter_bank(i)?;
            let mut m = 1;
            for fm in bank.group_matrices() {
                let spec = covariance_spectrum(&fm)?;
                m = m.max(select_rank_from_spectrum(&spec.eigenvalues, tau));
            }
            Ok(m)
        })
        .collect()
}

/// Replaces every convolution `name` by `name_basis` (M filters, original
/// stride and padding, no bias) and `name_combine` (1x1, original bias).
pub fn decompose_net(net: &Net<f32>, method: Method, ranks: &RankChoice, seed: u64) -> Result<Decomposition> {
    if let RankChoice::Tau(t) = ranks {
        if !(0.0..1.0).contains(t) {
            return Err(Error::InvalidArgument(format!("tau must be in [0, 1), got {t}")));
        }
    }
    let ranks = match ranks {
        RankChoice::Tau(t) => tau_ranks(net, *t)?,
        RankChoice::Explicit(r) => {
            let convs = net.conv_layers().count();
            if r.len() != convs {
                return Err(Error::InvalidArgument(format!(
                    "{} ranks given for {convs} convolutions",
                    r.len()
                )));
            }
            r.clone()
        }
    };
    let shapes = net.output_shapes()?;
    let mut layers = Vec::with_capacity(net.layers.len() + ranks.len());
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    let mut k = 0;
    for (i, l) in net.layers.iter().enumerate() {
        let Layer::Conv2d(conv) = &l.layer else {
            layers.push(l.clone());
            continue;
        };
        let m = ranks[k];
        k += 1;
        let bank = net.filter_bank(i)?;
        let per = bank.filters_per_group();
        if m == 0 || m > per {
            return Err(Error::InvalidArgument(format!(
                "rank {m} for {} is outside 1..={per}",
                l.name
            )));
        }
        let facts = bank
            .group_matrices()
            .iter()
            .enumerate()
            .map(|(g, fm)| factorize(fm, method, m, derive_seed(seed, &format!("{}/{g}", l.name))))
            .collect::<Result<Vec<_>>>()?;
        let split = split_grouped_layer(&bank, &facts)?;
        let g = conv.groups;
        let basis = Conv2d::new(
            split.basis_layer.data().iter().map(|&v| v as f32).collect(),
            None,
            g * m,
            conv.in_channels,
            conv.kernel,
            conv.stride,
            conv.pad,
            g,
        )?;
        let combine = Conv2d::new(
            split.combine_layer.data().iter().map(|&v| v as f32).collect(),
            conv.bias.clone(),
            conv.out_channels,
            g * m,
            (1, 1),
            1,
            0,
            g,
        )?;
        layers.push(NamedLayer {
            name: format!("{}_basis", l.name),
            layer: Layer::Conv2d(basis),
        });
        layers.push(NamedLayer {
            name: format!("{}_combine", l.name),
            layer: Layer::Conv2d(combine),
        });
        entries.push(DecomposedEntry {
            layer: l.name.clone(),
            full_rank: per,
            rank: m,
        });
        let out = shapes[i];
        rows.push(speedup_row(&l.name, conv, (out[1], out[2]), m));
    }
    Ok(Decomposition {
        net: Net::new(net.input, net.classes, layers)?,
        info: DecompositionInfo {
            method,
            tau: None,
            layers: entries,
        },
        speedup: SpeedupTable::from_rows(rows),
    })
}

/// Theoretical speedup of `split` over `full`, matching each convolution
/// `name` of `full` with `name_basis`/`name_combine` in `split`.
pub fn compare_speedup(full: &Net<f32>, split: &Net<f32>) -> Result<SpeedupTable> {
    if full.input != split.input || full.classes != split.classes {
        return Err(Error::Shape("archives have different inputs or classes".into()));
    }
    let full_shapes = full.output_shapes()?;
    let split_shapes = split.output_shapes()?;
    let mut rows = Vec::new();
    for (i, name, conv) in full.conv_layers() {
        let out = full_shapes[i];
        let basis = split.layers.iter().position(|l| l.name == format!("{name}_basis"));
        let m = match basis {
            Some(b) => {
                let Layer::Conv2d(bc) = &split.layers[b].layer else {
                    return Err(Error::Shape(format!("{name}_basis is not a convolution")));
                };
                let combine = split.layer(&format!("{name}_combine"));
                let ok = matches!(combine, Some(NamedLayer { layer: Layer::Conv2d(cc), .. })
                    if cc.out_channels == conv.out_channels && cc.in_channels == bc.out_channels);
                if !ok || split_shapes[b][1..] != out[1..] || bc.groups != conv.groups {
                    return Err(Error::Shape(format!("{name}: split layers do not match the original")));
                }
                bc.out_channels / bc.groups
            }
            None => match split.layer(name) {
                Some(NamedLayer { layer: Layer::Conv2d(c), .. })
                    if (c.out_channels, c.in_channels, c.kernel) == (conv.out_channels, conv.in_channels, conv.kernel) =>
                {
                    // left intact: no saving
                    let mut row = speedup_row(name, conv, (out[1], out[2]), conv.out_channels / conv.groups);
                    row.macs_split = row.macs_full;
                    row.theoretical_speedup = 1.0;
                    rows.push(row);
                    continue;
                }
                _ => return Err(Error::Shape(format!("{name} has no counterpart in the decomposed model"))),
            },
        };
        rows.push(speedup_row(name, conv, (out[1], out[2]), m));
    }
    Ok(SpeedupTable::from_rows(rows))
}
