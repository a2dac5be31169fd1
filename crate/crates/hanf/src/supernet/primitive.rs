//! The candidate-operation catalog.
//!
//! Eight primitives per edge: separable and dilated separable convolutions
//! at 3x3 and 5x5, max and average pooling at 3x3, identity, and a zero
//! operation encoding edge absence. Convolutions follow ReLU-Conv-BN
//! order; separable convolutions apply the depthwise/pointwise pair twice.

use serde::{Deserialize, Serialize};

use crate::error::{HanfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    SepConv3x3,
    SepConv5x5,
    DilConv3x3,
    DilConv5x5,
    MaxPool3x3,
    AvgPool3x3,
    Identity,
    Zero,
}

/// Catalog order is load-bearing: it defines architecture-matrix columns
/// and the tie-break order in discretization.
pub const CATALOG: [PrimitiveKind; 8] = [
    PrimitiveKind::SepConv3x3,
    PrimitiveKind::SepConv5x5,
    PrimitiveKind::DilConv3x3,
    PrimitiveKind::DilConv5x5,
    PrimitiveKind::MaxPool3x3,
    PrimitiveKind::AvgPool3x3,
    PrimitiveKind::Identity,
    PrimitiveKind::Zero,
];

impl PrimitiveKind {
    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::SepConv3x3 => "sep_conv_3x3",
            PrimitiveKind::SepConv5x5 => "sep_conv_5x5",
            PrimitiveKind::DilConv3x3 => "dil_conv_3x3",
            PrimitiveKind::DilConv5x5 => "dil_conv_5x5",
            PrimitiveKind::MaxPool3x3 => "max_pool_3x3",
            PrimitiveKind::AvgPool3x3 => "avg_pool_3x3",
            PrimitiveKind::Identity => "identity",
            PrimitiveKind::Zero => "zero",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        CATALOG
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| HanfError::InvalidArgument(format!("unknown primitive `{name}`")))
    }

    pub fn index(self) -> usize {
        CATALOG.iter().position(|&p| p == self).expect("in catalog")
    }

    /// Kernel extent for the convolutional primitives.
    pub fn kernel(self) -> Option<usize> {
        match self {
            PrimitiveKind::SepConv3x3 | PrimitiveKind::DilConv3x3 => Some(3),
            PrimitiveKind::SepConv5x5 | PrimitiveKind::DilConv5x5 => Some(5),
            _ => None,
        }
    }
}

impl Serialize for PrimitiveKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for PrimitiveKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        PrimitiveKind::from_name(&name).map_err(serde::de::Error::custom)
    }
}
