use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::nn::CellKind;

/// Where additive attention pooling sits relative to the recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionPlacement {
    /// Pools the embedded inputs; the recurrent layer reads the pooled vector.
    Before,
    /// Pools the recurrent states in place of the final state.
    After,
}

/// Every classifier the toolkit can build.
#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TEGRU,
    TERNN,
    TELSTM,
    TEBiRNN,
    TEBiLSTM,
    TEBiGRU,
    RNN,
    LSTM,
    GRU,
    BiRNN,
    BiLSTM,
    BiGRU,
    RNNAtt,
    LSTMAtt,
    GRUAtt,
    AttRNN,
    AttLSTM,
    AttGRU,
    BiRNNAtt,
    BiLSTMAtt,
    BiGRUAtt,
}

use ModelKind::*;

const TABLE: [(ModelKind, &str, &str); 21] = [
    (TEGRU, "TEGRU", "T-E-GRU"),
    (TERNN, "TERNN", "T-E-RNN"),
    (TELSTM, "TELSTM", "T-E-LSTM"),
    (TEBiRNN, "TEBiRNN", "T-E-BiRNN"),
    (TEBiLSTM, "TEBiLSTM", "T-E-BiLSTM"),
    (TEBiGRU, "TEBiGRU", "T-E-BiGRU"),
    (RNN, "RNN", "RNN"),
    (LSTM, "LSTM", "LSTM"),
    (GRU, "GRU", "GRU"),
    (BiRNN, "BiRNN", "Bi-RNN"),
    (BiLSTM, "BiLSTM", "Bi-LSTM"),
    (BiGRU, "BiGRU", "Bi-GRU"),
    (RNNAtt, "RNNAtt", "RNN-Attention"),
    (LSTMAtt, "LSTMAtt", "LSTM-Attention"),
    (GRUAtt, "GRUAtt", "GRU-Attention"),
    (AttRNN, "AttRNN", "Attention-RNN"),
    (AttLSTM, "AttLSTM", "Attention-LSTM"),
    (AttGRU, "AttGRU", "Attention-GRU"),
    (BiRNNAtt, "BiRNNAtt", "BiRNN-Attention"),
    (BiLSTMAtt, "BiLSTMAtt", "BiLSTM-Attention"),
    (BiGRUAtt, "BiGRUAtt", "BiGRU-Attention"),
];

impl ModelKind {
    pub const ALL: [ModelKind; 21] = [
        TEGRU, TERNN, TELSTM, TEBiRNN, TEBiLSTM, TEBiGRU, RNN, LSTM, GRU, BiRNN, BiLSTM, BiGRU, RNNAtt, LSTMAtt, GRUAtt, AttRNN,
        AttLSTM, AttGRU, BiRNNAtt, BiLSTMAtt, BiGRUAtt,
    ];

    /// Encoder-fronted kinds in ablation-table row order.
    pub const ENCODER_KINDS: [ModelKind; 6] = [TERNN, TELSTM, TEBiRNN, TEBiLSTM, TEBiGRU, TEGRU];

    fn row(self) -> &'static (ModelKind, &'static str, &'static str) {
        TABLE.iter().find(|r| r.0 == self).expect("every kind is tabled")
    }

    /// Compact identifier such as `TEBiGRU`.
    pub fn ident(self) -> &'static str {
        self.row().1
    }

    /// Display name such as `T-E-BiGRU` or `GRU-Attention`.
    pub fn name(self) -> &'static str {
        self.row().2
    }

    pub fn cell(self) -> CellKind {
        let id = self.ident();
        if id.contains("LSTM") {
            CellKind::Lstm
        } else if id.contains("GRU") {
            CellKind::Gru
        } else {
            CellKind::Rnn
        }
    }

    pub fn bidirectional(self) -> bool {
        self.ident().contains("Bi")
    }

    pub fn has_encoder(self) -> bool {
        self.ident().starts_with("TE")
    }

    pub fn attention(self) -> Option<AttentionPlacement> {
        let id = self.ident();
        if id.starts_with("Att") {
            Some(AttentionPlacement::Before)
        } else if id.ends_with("Att") {
            Some(AttentionPlacement::After)
        } else {
            None
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize(s: &str) -> String {
    s.chars().filter(|c| !matches!(c, '-' | '_' | ' ')).collect::<String>().to_ascii_uppercase().replace("ATTENTION", "ATT")
}

impl FromStr for ModelKind {
    type Err = String;

    /// Accepts either the identifier or the display name, ignoring case,
    /// dashes and underscores.
    fn from_str(s: &str) -> Result<Self, String> {
        let key = normalize(s);
        TABLE
            .iter()
            .find(|(_, id, name)| normalize(id) == key || normalize(name) == key)
            .map(|r| r.0)
            .ok_or_else(|| format!("unknown model kind {s:?}"))
    }
}

impl Serialize for ModelKind {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(self.ident())
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
