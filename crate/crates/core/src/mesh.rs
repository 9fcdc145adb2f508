//! Placement of multichannel EEG onto a 9x9 scalp grid, one frame per
//! 128-sample window.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_io::Subsample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRID: usize = 9;
pub const WINDOW: usize = 128;

/// Versioned coordinate table shipped with the crate.
pub const STANDARD_LAYOUT_TABLE: &str = include_str!("../data/layout_v1.txt");

/// Channel-to-cell assignment on the 9x9 grid, in the storage order of the
/// recording's channels.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshLayout {
    channel_names: Vec<String>,
    cells: Vec<(usize, usize)>,
    table_hash: String,
}

fn parse_table(text: &str) -> Result<HashMap<String, (usize, usize)>> {
    let mut table = HashMap::new();
    let mut occupied = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Argument(format!("layout line {}: `{line}`", lineno + 1));
        if parts.len() != 3 {
            return Err(bad());
        }
        let row: usize = parts[1].parse().map_err(|_| bad())?;
        let col: usize = parts[2].parse().map_err(|_| bad())?;
        if row >= GRID || col >= GRID {
            return Err(Error::Argument(format!(
                "layout line {}: cell ({row}, {col}) outside the {GRID}x{GRID} grid",
                lineno + 1
            )));
        }
        if let Some(prev) = occupied.insert((row, col), parts[0].to_string()) {
            return Err(Error::Argument(format!(
                "layout assigns `{}` and `{prev}` to cell ({row}, {col})",
                parts[0]
            )));
        }
        if table.insert(parts[0].to_string(), (row, col)).is_some() {
            return Err(Error::Argument(format!("layout lists `{}` twice", parts[0])));
        }
    }
    Ok(table)
}

impl MeshLayout {
    /// Builds a layout for `channel_names` from a `NAME row col` table.
    pub fn from_table(text: &str, channel_names: &[impl AsRef<str>]) -> Result<Self> {
        let table = parse_table(text)?;
        let mut cells = Vec::with_capacity(channel_names.len());
        for name in channel_names {
            let name = name.as_ref();
            let cell = table
                .get(name)
                .ok_or_else(|| Error::Argument(format!("channel `{name}` missing from layout")))?;
            cells.push(*cell);
        }
        Ok(MeshLayout {
            channel_names: channel_names.iter().map(|s| s.as_ref().to_string()).collect(),
            cells,
            table_hash: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn cell(&self, channel: usize) -> (usize, usize) {
        self.cells[channel]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n == name)
    }

    pub fn cell_of(&self, name: &str) -> Option<(usize, usize)> {
        self.index_of(name).map(|i| self.cells[i])
    }

    /// SHA-256 of the coordinate table, recorded in experiment results.
    pub fn table_hash(&self) -> &str {
        &self.table_hash
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }
}

/// Standard layout for the 32 DEAP labels; Cz sits at the center cell.
pub fn build_standard_layout(channel_names: &[impl AsRef<str>]) -> Result<MeshLayout> {
    MeshLayout::from_table(STANDARD_LAYOUT_TABLE, channel_names)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ElectrodeSetName {
    F,
    CP,
    T,
    OP,
    FP,
    All,
}

impl ElectrodeSetName {
    pub const EVERY: [ElectrodeSetName; 6] = [
        ElectrodeSetName::F,
        ElectrodeSetName::CP,
        ElectrodeSetName::T,
        ElectrodeSetName::OP,
        ElectrodeSetName::FP,
        ElectrodeSetName::All,
    ];
}

impl fmt::Display for ElectrodeSetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElectrodeSetName::F => "F",
            ElectrodeSetName::CP => "CP",
            ElectrodeSetName::T => "T",
            ElectrodeSetName::OP => "OP",
            ElectrodeSetName::FP => "FP",
            ElectrodeSetName::All => "ALL",
        })
    }
}

impl FromStr for ElectrodeSetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ElectrodeSetName::EVERY
            .into_iter()
            .find(|n| n.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown electrode set `{s}`")))
    }
}

impl TryFrom<String> for ElectrodeSetName {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ElectrodeSetName> for String {
    fn from(n: ElectrodeSetName) -> String {
        n.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectrodeSet {
    pub name: ElectrodeSetName,
    pub channels: Vec<String>,
}

impl ElectrodeSet {
    /// Indices of the set's channels within `layout`, in set order.
    pub fn indices(&self, layout: &MeshLayout) -> Result<Vec<usize>> {
        self.channels
            .iter()
            .map(|c| {
                layout
                    .index_of(c)
                    .ok_or_else(|| Error::Argument(format!("active channel `{c}` not in layout")))
            })
            .collect()
    }
}

/// Named five-electrode subsets (and the full montage).
///
/// Only F is named explicitly in the source study; the other four are the
/// nearest DEAP-montage labels to the highlighted scalp regions.
pub fn electrode_set(name: ElectrodeSetName) -> ElectrodeSet {
    let channels: &[&str] = match name {
        ElectrodeSetName::F => &["F3", "F4", "Fz", "F7", "F8"],
        ElectrodeSetName::CP => &["C3", "Cz", "C4", "CP1", "CP2"],
        ElectrodeSetName::T => &["T7", "T8", "CP5", "CP6", "FC5"],
        ElectrodeSetName::OP => &["O1", "Oz", "O2", "PO3", "PO4"],
        ElectrodeSetName::FP => &["Fz", "F3", "F4", "Pz", "P3"],
        ElectrodeSetName::All => &crate::data_io::DEAP_CHANNELS,
    };
    ElectrodeSet {
        name,
        channels: channels.iter().map(|s| s.to_string()).collect(),
    }
}

/// `[windows, 9, 9, 128]` network input for one subsample.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshSequence {
    pub subject_id: u32,
    pub tensor: Tensor,
}

impl MeshSequence {
    pub fn n_windows(&self) -> usize {
        self.tensor.shape()[0]
    }

    /// Reads back the placed (normalized) time series of one channel.
    pub fn channel_series(&self, layout: &MeshLayout, channel: usize) -> Vec<f64> {
        let (r, c) = layout.cell(channel);
        let mut out = Vec::with_capacity(self.n_windows() * WINDOW);
        for w in 0..self.n_windows() {
            let base = self.tensor.offset(&[w, r, c, 0]);
            out.extend_from_slice(&self.tensor.data()[base..base + WINDOW]);
        }
        out
    }
}

/// Places each active channel into its cell, window by window, after
/// normalizing it to zero mean and unit (population) variance over the
/// whole subsample. Every other cell stays zero.
pub fn encode_subsample(sub: &Subsample, layout: &MeshLayout, active: &ElectrodeSet) -> Result<MeshSequence> {
    let t = sub.data.shape()[1];
    if t == 0 || !t.is_multiple_of(WINDOW) {
        return Err(Error::Shape(format!("subsample length {t} not a multiple of {WINDOW}")));
    }
    if sub.n_channels() != layout.channel_names().len() {
        return Err(Error::Shape(format!(
            "subsample has {} channels, layout has {}",
            sub.n_channels(),
            layout.channel_names().len()
        )));
    }
    let indices = active.indices(layout)?;
    let windows = t / WINDOW;
    let mut tensor = Tensor::zeros(&[windows, GRID, GRID, WINDOW]);
    for &ch in &indices {
        let x = sub.channel(ch);
        let mean = x.iter().sum::<f64>() / t as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::Fit(format!(
                "channel `{}` has zero variance in subject {} trial {}",
                layout.channel_names()[ch],
                sub.subject_id,
                sub.trial_id
            )));
        }
        let inv = 1.0 / var.sqrt();
        let (r, c) = layout.cell(ch);
        for w in 0..windows {
            let base = tensor.offset(&[w, r, c, 0]);
            let src = &x[w * WINDOW..(w + 1) * WINDOW];
            for (dst, v) in tensor.data_mut()[base..base + WINDOW].iter_mut().zip(src) {
                *dst = (v - mean) * inv;
            }
        }
    }
    Ok(MeshSequence {
        subject_id: sub.subject_id,
        tensor,
    })
}
