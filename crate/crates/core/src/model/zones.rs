//! The four attention zones induced by the question/passage split, and the
//! additive masks that drop them.
//!
//! With rows as attending positions and columns as attended positions, the
//! non-pad cells of the attention matrix partition into question-to-question
//! (Q2), question-to-passage (Q2P), passage-to-question (P2Q), and
//! passage-to-passage (P2). `[CLS]` and the first `[SEP]` belong to the
//! question block, the final `[SEP]` to the passage block, so the four zones
//! stay a true partition.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, DROP_SENTINEL};
use crate::text::SequenceLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Q2,
    Q2P,
    P2Q,
    P2,
    All,
    None,
}

impl Zone {
    /// The five ablation columns in their canonical order.
    pub const ABLATION_SET: [Zone; 5] = [Zone::All, Zone::Q2, Zone::Q2P, Zone::P2Q, Zone::P2];

    /// The four elementary zones (partition of the non-pad cells).
    pub const ELEMENTARY: [Zone; 4] = [Zone::Q2, Zone::Q2P, Zone::P2Q, Zone::P2];

    pub fn label(self) -> &'static str {
        match self {
            Zone::Q2 => "q2",
            Zone::Q2P => "q2p",
            Zone::P2Q => "p2q",
            Zone::P2 => "p2",
            Zone::All => "all",
            Zone::None => "none",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Zone {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "q2" => Ok(Zone::Q2),
            "q2p" => Ok(Zone::Q2P),
            "p2q" => Ok(Zone::P2Q),
            "p2" => Ok(Zone::P2),
            "all" => Ok(Zone::All),
            "none" => Ok(Zone::None),
            other => Err(format!(
                "unknown zone '{other}' (expected q2, q2p, p2q, p2, all, or none)"
            )),
        }
    }
}

/// Which encoder layers a zone mask applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerSelector {
    /// Mask the zone in every layer (the `--mask_layer=None` convention).
    EveryLayer,
    /// Mask the zone in one 0-based layer.
    Layer(usize),
}

/// One ablation cell: a zone and the layer(s) it is dropped from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub layers: LayerSelector,
    pub zone: Zone,
}

impl ZoneSpec {
    /// The identity spec: nothing is masked anywhere.
    pub fn baseline() -> Self {
        Self {
            layers: LayerSelector::EveryLayer,
            zone: Zone::None,
        }
    }

    pub fn applies_to_layer(&self, layer: usize) -> bool {
        match self.layers {
            LayerSelector::EveryLayer => true,
            LayerSelector::Layer(i) => i == layer,
        }
    }
}

impl fmt::Display for ZoneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layers {
            LayerSelector::EveryLayer => write!(f, "layer all, zone {}", self.zone),
            LayerSelector::Layer(i) => write!(f, "layer {i}, zone {}", self.zone),
        }
    }
}

fn fill_block(mask: &mut Tensor, n: usize, rows: Range<usize>, cols: Range<usize>) {
    let data = mask.data_mut();
    for i in rows {
        for j in cols.clone() {
            data[i * n + j] = DROP_SENTINEL;
        }
    }
}

/// Additive `[n x n]` mask dropping exactly the cells of `zone`.
///
/// Pad rows and columns belong to no zone; the separate [`padding_mask`]
/// drops attention into pad columns regardless of zone.
pub fn zone_mask(layout: &SequenceLayout, zone: Zone) -> Tensor {
    let n = layout.seq_len();
    let mut mask = Tensor::zeros(vec![n, n]);
    let qb = layout.question_block();
    let pb = layout.passage_block();
    match zone {
        Zone::None => {}
        Zone::Q2 => fill_block(&mut mask, n, qb.clone(), qb),
        Zone::Q2P => fill_block(&mut mask, n, qb, pb),
        Zone::P2Q => fill_block(&mut mask, n, pb, qb),
        Zone::P2 => fill_block(&mut mask, n, pb.clone(), pb),
        Zone::All => {
            let nonpad = qb.start..pb.end;
            fill_block(&mut mask, n, nonpad.clone(), nonpad);
        }
    }
    mask
}

/// Additive `[n x n]` mask dropping every pad row and pad column,
/// regardless of zone. Fully dropped pad rows fall back to all-zero
/// attention output.
pub fn padding_mask(layout: &SequenceLayout) -> Tensor {
    let n = layout.seq_len();
    let mut mask = Tensor::zeros(vec![n, n]);
    let data = mask.data_mut();
    for i in 0..n {
        for j in 0..n {
            if layout.pad_range.contains(&i) || layout.pad_range.contains(&j) {
                data[i * n + j] = DROP_SENTINEL;
            }
        }
    }
    mask
}
