//! Declarative architecture descriptions.
//!
//! An [`ArchitectureSpec`] fully determines a model: the variant, the input
//! width each modality contributes, per-stream layer widths, cross-connection
//! widths (strategy A only), the fully-connected head, and which modalities
//! share recurrent weights. Specs serialize to and from JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Input channel family. Order (`wt`, `sl`, `st`) fixes feature-column layout
/// and every concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum Modality {
    #[serde(rename = "wt")]
    Wt,
    #[serde(rename = "sl")]
    Sl,
    #[serde(rename = "st")]
    St,
}

pub const MODALITIES: [Modality; 3] = [Modality::Wt, Modality::Sl, Modality::St];

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Wt => "wt",
            Modality::Sl => "sl",
            Modality::St => "st",
        }
    }

    /// Per-day feature count of the modality in the canonical data schema.
    pub fn default_input_dim(self) -> usize {
        match self {
            Modality::Wt => 1,
            Modality::Sl => 8,
            Modality::St => 1,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wt" => Ok(Modality::Wt),
            "sl" => Ok(Modality::Sl),
            "st" => Ok(Modality::St),
            other => Err(Error::validation(
                "modality",
                format!("unknown modality `{other}` (expected wt, sl or st)"),
            )),
        }
    }
}

/// Key of one recurrent stream: a single modality, or the merged `all` stream
/// of the plain LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum StreamKey {
    #[serde(rename = "wt")]
    Wt,
    #[serde(rename = "sl")]
    Sl,
    #[serde(rename = "st")]
    St,
    #[serde(rename = "all")]
    All,
}

impl StreamKey {
    pub fn name(self) -> &'static str {
        match self {
            StreamKey::Wt => "wt",
            StreamKey::Sl => "sl",
            StreamKey::St => "st",
            StreamKey::All => "all",
        }
    }

    pub fn modality(self) -> Option<Modality> {
        match self {
            StreamKey::Wt => Some(Modality::Wt),
            StreamKey::Sl => Some(Modality::Sl),
            StreamKey::St => Some(Modality::St),
            StreamKey::All => None,
        }
    }
}

impl From<Modality> for StreamKey {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Wt => StreamKey::Wt,
            Modality::Sl => StreamKey::Sl,
            Modality::St => StreamKey::St,
        }
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered cross-connection `src -> dst`, serialized as `"wt->sl"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CrossKey {
    pub src: Modality,
    pub dst: Modality,
}

impl CrossKey {
    pub fn new(src: Modality, dst: Modality) -> Self {
        CrossKey { src, dst }
    }
}

impl fmt::Display for CrossKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src, self.dst)
    }
}

impl FromStr for CrossKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (src, dst) = s.split_once("->").ok_or_else(|| {
            Error::validation(
                "cross_widths",
                format!("bad cross key `{s}`, want `src->dst`"),
            )
        })?;
        Ok(CrossKey::new(src.parse()?, dst.parse()?))
    }
}

impl Serialize for CrossKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CrossKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Single deep LSTM over the concatenated input.
    Lstm,
    /// Per-modality streams, cross-connections through dedicated LSTM layers.
    XlstmA,
    /// Per-modality streams, identity cross-connections.
    XlstmB,
    /// Per-modality streams without cross-connections.
    XlstmN,
    /// Recurrent weights shared across all three modality streams.
    ShAll,
    /// Recurrent weights shared across weight & sleep; independent steps stream.
    ShWsl,
    /// Recurrent weights shared across weight & sleep; steps dropped.
    ShCut,
    /// Feedforward baseline over the flattened last days.
    Dnn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::XlstmA => "xlstm_a",
            Variant::XlstmB => "xlstm_b",
            Variant::XlstmN => "xlstm_n",
            Variant::ShAll => "sh_all",
            Variant::ShWsl => "sh_wsl",
            Variant::ShCut => "sh_cut",
            Variant::Dnn => "dnn",
        }
    }

    pub fn is_sharing(self) -> bool {
        matches!(self, Variant::ShAll | Variant::ShWsl | Variant::ShCut)
    }

    pub fn is_stream_based(self) -> bool {
        !matches!(self, Variant::Lstm | Variant::Dnn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const RECURRENT_DEPTH: usize = 3;

fn default_static_dim() -> usize {
    4
}

fn default_head_widths() -> Vec<usize> {
    vec![128, 64, 1]
}

pub const DEFAULT_DNN_LAST_DAYS: usize = 10;
pub const DEFAULT_DNN_HIDDEN: [usize; 5] = [120; 5];

/// Declarative description of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    /// Per-day input width of each modality the model consumes.
    pub modality_input_dims: BTreeMap<Modality, usize>,
    /// Widths of the three recurrent layers per stream (empty for `dnn`).
    pub stream_widths: BTreeMap<StreamKey, Vec<usize>>,
    /// Cross-connection LSTM widths; populated for `xlstm_a` only.
    #[serde(default)]
    pub cross_widths: BTreeMap<CrossKey, usize>,
    /// Fully-connected head sizes; the final entry is the output neuron.
    #[serde(default = "default_head_widths")]
    pub head_widths: Vec<usize>,
    /// Number of static user features concatenated before the head.
    #[serde(default = "default_static_dim")]
    pub static_dim: usize,
    /// Sets of modalities whose recurrent matrices are shared per layer.
    #[serde(default)]
    pub share_groups: Vec<BTreeSet<Modality>>,
    /// `dnn` only: how many trailing days are flattened.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dnn_last_days: Option<usize>,
    /// `dnn` only: hidden layer widths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dnn_hidden: Option<Vec<usize>>,
}

impl ArchitectureSpec {
    /// Canonical input dims: weight 1, sleep 8, steps 1.
    pub fn default_input_dims() -> BTreeMap<Modality, usize> {
        MODALITIES
            .iter()
            .map(|&m| (m, m.default_input_dim()))
            .collect()
    }

    /// Single-stream deep LSTM over the concatenated input.
    pub fn lstm(widths: [usize; RECURRENT_DEPTH]) -> Self {
        let mut stream_widths = BTreeMap::new();
        stream_widths.insert(StreamKey::All, widths.to_vec());
        ArchitectureSpec {
            variant: Variant::Lstm,
            modality_input_dims: Self::default_input_dims(),
            stream_widths,
            cross_widths: BTreeMap::new(),
            head_widths: default_head_widths(),
            static_dim: default_static_dim(),
            share_groups: Vec::new(),
            dnn_last_days: None,
            dnn_hidden: None,
        }
    }

    /// The paper-scale baseline: 21/42/84 features, 128/64/1 head.
    pub fn baseline_lstm() -> Self {
        Self::lstm([21, 42, 84])
    }

    /// LSTM over a single modality (used to measure unimodal scores).
    pub fn unimodal_lstm(m: Modality, widths: [usize; RECURRENT_DEPTH]) -> Self {
        let mut spec = Self::lstm(widths);
        spec.modality_input_dims = [(m, m.default_input_dim())].into_iter().collect();
        spec
    }

    pub fn xlstm(
        variant: Variant,
        stream_widths: BTreeMap<Modality, Vec<usize>>,
        cross_widths: BTreeMap<CrossKey, usize>,
    ) -> Self {
        debug_assert!(matches!(
            variant,
            Variant::XlstmA | Variant::XlstmB | Variant::XlstmN
        ));
        ArchitectureSpec {
            variant,
            modality_input_dims: Self::default_input_dims(),
            stream_widths: stream_widths
                .into_iter()
                .map(|(m, w)| (StreamKey::from(m), w))
                .collect(),
            cross_widths,
            head_widths: default_head_widths(),
            static_dim: default_static_dim(),
            share_groups: Vec::new(),
            dnn_last_days: None,
            dnn_hidden: None,
        }
    }

    pub fn sh(variant: Variant, widths: BTreeMap<Modality, Vec<usize>>) -> Self {
        debug_assert!(variant.is_sharing());
        let shared: BTreeSet<Modality> = match variant {
            Variant::ShAll => MODALITIES.iter().copied().collect(),
            _ => [Modality::Wt, Modality::Sl].into_iter().collect(),
        };
        let mut input_dims = Self::default_input_dims();
        if variant == Variant::ShCut {
            input_dims.remove(&Modality::St);
        }
        ArchitectureSpec {
            variant,
            modality_input_dims: input_dims,
            stream_widths: widths
                .into_iter()
                .map(|(m, w)| (StreamKey::from(m), w))
                .collect(),
            cross_widths: BTreeMap::new(),
            head_widths: default_head_widths(),
            static_dim: default_static_dim(),
            share_groups: vec![shared],
            dnn_last_days: None,
            dnn_hidden: None,
        }
    }

    pub fn dnn(last_days: usize, hidden: Vec<usize>) -> Self {
        ArchitectureSpec {
            variant: Variant::Dnn,
            modality_input_dims: Self::default_input_dims(),
            stream_widths: BTreeMap::new(),
            cross_widths: BTreeMap::new(),
            head_widths: default_head_widths(),
            static_dim: default_static_dim(),
            share_groups: Vec::new(),
            dnn_last_days: Some(last_days),
            dnn_hidden: Some(hidden),
        }
    }

    pub fn with_head(mut self, head: Vec<usize>) -> Self {
        self.head_widths = head;
        self
    }

    /// Total per-day input width across the modalities this model consumes.
    pub fn total_input_dim(&self) -> usize {
        self.modality_input_dims.values().sum()
    }

    /// Modalities the model consumes, in canonical order.
    pub fn present_modalities(&self) -> Vec<Modality> {
        MODALITIES
            .iter()
            .copied()
            .filter(|m| self.modality_input_dims.contains_key(m))
            .collect()
    }

    /// Modalities with their own stream, in canonical order.
    pub fn stream_modalities(&self) -> Vec<Modality> {
        MODALITIES
            .iter()
            .copied()
            .filter(|&m| self.stream_widths.contains_key(&StreamKey::from(m)))
            .collect()
    }

    pub fn dnn_last_days(&self) -> usize {
        self.dnn_last_days.unwrap_or(DEFAULT_DNN_LAST_DAYS)
    }

    pub fn dnn_hidden(&self) -> Vec<usize> {
        self.dnn_hidden
            .clone()
            .unwrap_or_else(|| DEFAULT_DNN_HIDDEN.to_vec())
    }

    /// Share-group index for a modality, if its recurrent weights are shared.
    pub fn share_group_of(&self, m: Modality) -> Option<usize> {
        self.share_groups.iter().position(|g| g.contains(&m))
    }

    fn fail(field: &str, msg: impl Into<String>) -> Error {
        Error::validation(field, msg)
    }

    /// Checks every structural invariant of the spec.
    pub fn validate(&self) -> Result<()> {
        for (m, &d) in &self.modality_input_dims {
            if d == 0 {
                return Err(Self::fail(
                    "modality_input_dims",
                    format!("modality {m} has zero input width"),
                ));
            }
        }
        if self.modality_input_dims.is_empty() {
            return Err(Self::fail("modality_input_dims", "no modalities"));
        }
        if self.head_widths.is_empty() || *self.head_widths.last().unwrap() != 1 {
            return Err(Self::fail(
                "head_widths",
                format!(
                    "head must end in a single output neuron, got {:?}",
                    self.head_widths
                ),
            ));
        }
        if self.head_widths.iter().any(|&w| w == 0) {
            return Err(Self::fail("head_widths", "zero-width head layer"));
        }

        let depth_ok = |w: &Vec<usize>| w.len() == RECURRENT_DEPTH && w.iter().all(|&x| x >= 1);
        let check_streams = |keys: &[StreamKey]| -> Result<()> {
            let actual: Vec<StreamKey> = self.stream_widths.keys().copied().collect();
            if actual != keys {
                return Err(Self::fail(
                    "stream_widths",
                    format!("expected streams {keys:?}, got {actual:?}"),
                ));
            }
            for (k, w) in &self.stream_widths {
                if !depth_ok(w) {
                    return Err(Self::fail(
                        "stream_widths",
                        format!("stream {k} needs {RECURRENT_DEPTH} widths >= 1, got {w:?}"),
                    ));
                }
            }
            Ok(())
        };
        let modality_streams: Vec<StreamKey> = self
            .present_modalities()
            .into_iter()
            .map(StreamKey::from)
            .collect();

        match self.variant {
            Variant::Lstm => {
                check_streams(&[StreamKey::All])?;
                if !self.cross_widths.is_empty() {
                    return Err(Self::fail("cross_widths", "lstm variant takes no crosses"));
                }
                if !self.share_groups.is_empty() {
                    return Err(Self::fail("share_groups", "lstm variant shares nothing"));
                }
            }
            Variant::XlstmA => {
                check_streams(&modality_streams)?;
                let mods = self.present_modalities();
                let mut expected = BTreeSet::new();
                for &src in &mods {
                    for &dst in &mods {
                        if src != dst {
                            expected.insert(CrossKey::new(src, dst));
                        }
                    }
                }
                let actual: BTreeSet<CrossKey> = self.cross_widths.keys().copied().collect();
                if actual != expected {
                    return Err(Self::fail(
                        "cross_widths",
                        format!("strategy A needs widths for all ordered pairs {expected:?}"),
                    ));
                }
                if self.cross_widths.values().any(|&w| w == 0) {
                    return Err(Self::fail("cross_widths", "zero-width cross-connection"));
                }
                if !self.share_groups.is_empty() {
                    return Err(Self::fail("share_groups", "xlstm variants share nothing"));
                }
            }
            Variant::XlstmB | Variant::XlstmN => {
                check_streams(&modality_streams)?;
                if !self.cross_widths.is_empty() {
                    return Err(Self::fail(
                        "cross_widths",
                        format!("{} has no cross-connection parameters", self.variant),
                    ));
                }
                if !self.share_groups.is_empty() {
                    return Err(Self::fail("share_groups", "xlstm variants share nothing"));
                }
            }
            Variant::ShAll | Variant::ShWsl | Variant::ShCut => {
                let expected_mods: Vec<Modality> = match self.variant {
                    Variant::ShCut => vec![Modality::Wt, Modality::Sl],
                    _ => MODALITIES.to_vec(),
                };
                if self.present_modalities() != expected_mods {
                    return Err(Self::fail(
                        "modality_input_dims",
                        format!("{} expects modalities {expected_mods:?}", self.variant),
                    ));
                }
                check_streams(&modality_streams)?;
                let expected_group: BTreeSet<Modality> = match self.variant {
                    Variant::ShAll => MODALITIES.iter().copied().collect(),
                    _ => [Modality::Wt, Modality::Sl].into_iter().collect(),
                };
                if self.share_groups != vec![expected_group.clone()] {
                    return Err(Self::fail(
                        "share_groups",
                        format!("{} expects share group {expected_group:?}", self.variant),
                    ));
                }
                // sharing forces equal widths at every depth level
                let mut iter = expected_group.iter();
                let first = self.stream_widths[&StreamKey::from(*iter.next().unwrap())].clone();
                for &m in iter {
                    let w = &self.stream_widths[&StreamKey::from(m)];
                    if *w != first {
                        return Err(Self::fail(
                            "stream_widths",
                            format!(
                                "share group members must have equal widths per layer, got {first:?} vs {w:?} for {m}"
                            ),
                        ));
                    }
                }
                if !self.cross_widths.is_empty() {
                    return Err(Self::fail("cross_widths", "sh variants take no crosses"));
                }
            }
            Variant::Dnn => {
                if !self.stream_widths.is_empty() {
                    return Err(Self::fail("stream_widths", "dnn variant has no streams"));
                }
                if !self.cross_widths.is_empty() || !self.share_groups.is_empty() {
                    return Err(Self::fail(
                        "cross_widths",
                        "dnn variant has no crosses/sharing",
                    ));
                }
                if self.dnn_last_days() == 0 {
                    return Err(Self::fail("dnn_last_days", "must be >= 1"));
                }
                let hidden = self.dnn_hidden();
                if hidden.is_empty() || hidden.iter().any(|&w| w == 0) {
                    return Err(Self::fail(
                        "dnn_hidden",
                        format!("bad hidden widths {hidden:?}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ArchitectureSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}
