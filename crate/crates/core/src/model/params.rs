use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::arch::{ArchName, ArchitectureConfig, LayerKind, LayerSpec};
use super::zoo::{build_architecture, DEFAULT_CLASSES, DEFAULT_INPUT};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParameters {
    pub id: String,
    pub kind: LayerKind,
    pub trainable: u64,
    pub non_trainable: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub total: u64,
    pub trainable: u64,
    pub non_trainable: u64,
    /// Layers that own parameters, in graph order.
    pub per_layer: Vec<LayerParameters>,
}

/// Closed-form `(trainable, non_trainable)` parameter count of one layer.
///
/// Batch normalization keeps scale and shift as trainable parameters and the
/// running mean and variance as non-trainable ones.
pub fn layer_parameters(spec: &LayerSpec) -> (u64, u64) {
    let cin = spec.in_channels as u64;
    let cout = spec.out_channels as u64;
    let bias = if spec.bias { cout } else { 0 };
    let (kh, kw) = spec.kernel.map_or((0, 0), |(a, b)| (a as u64, b as u64));
    match spec.kind {
        LayerKind::Conv => (kh * kw * cin * cout + bias, 0),
        LayerKind::SeparableConv => (kh * kw * cin + cin * cout + bias, 0),
        LayerKind::BatchNorm => (2 * cin, 2 * cin),
        LayerKind::FullyConnected => (cin * cout + bias, 0),
        LayerKind::Relu | LayerKind::MaxPool | LayerKind::GlobalAvgPool | LayerKind::Softmax | LayerKind::Add => (0, 0),
    }
}

pub fn count_parameters(arch: &ArchitectureConfig) -> Result<ParameterCount> {
    arch.infer_shapes()?;
    let per_layer: Vec<LayerParameters> = arch
        .nodes
        .iter()
        .filter_map(|n| {
            let (trainable, non_trainable) = layer_parameters(&n.spec);
            (trainable + non_trainable > 0).then(|| LayerParameters {
                id: n.id.clone(),
                kind: n.spec.kind,
                trainable,
                non_trainable,
            })
        })
        .collect();
    let trainable = per_layer.iter().map(|l| l.trainable).sum();
    let non_trainable = per_layer.iter().map(|l| l.non_trainable).sum();
    Ok(ParameterCount {
        total: trainable + non_trainable,
        trainable,
        non_trainable,
        per_layer,
    })
}

/// Number of (convolutional, fully connected) weighted layers.
pub fn weighted_layers(arch: &ArchitectureConfig) -> (usize, usize) {
    let conv = arch.nodes.iter().filter(|n| n.spec.kind.is_conv()).count();
    let fc = arch.nodes.iter().filter(|n| n.spec.kind == LayerKind::FullyConnected).count();
    (conv, fc)
}

pub fn layers_label(arch: &ArchitectureConfig) -> String {
    let (conv, fc) = weighted_layers(arch);
    format!("{conv} Conv + {fc} FC")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub name: String,
    pub total: u64,
    pub trainable: u64,
    pub layers: String,
}

/// One row per architecture, in the order given, for 8-class 96x96x1 input.
pub fn complexity_table(names: &[&str]) -> Result<Vec<ComplexityRow>> {
    names
        .iter()
        .map(|name| {
            let arch = build_architecture(name, DEFAULT_CLASSES, DEFAULT_INPUT)?;
            let count = count_parameters(&arch)?;
            Ok(ComplexityRow {
                name: arch.name.clone(),
                total: count.total,
                trainable: count.trainable,
                layers: layers_label(&arch),
            })
        })
        .collect()
}

pub fn complexity_csv(rows: &[ComplexityRow]) -> String {
    let mut s = String::from("model,total_params,trainable_params,layers\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.name, r.total, r.trainable, r.layers);
    }
    s
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Aligned text with columns CNN Model / Total params / Trainable params / Number of Layers.
pub fn complexity_text(rows: &[ComplexityRow]) -> String {
    let label = |name: &str| name.parse::<ArchName>().map(|a| a.label().to_string()).unwrap_or_else(|_| name.to_string());
    let mut s = format!("{:<10} {:>14} {:>18}  {}\n", "CNN Model", "Total params", "Trainable params", "Number of Layers");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>14} {:>18}  {}",
            label(&r.name),
            thousands(r.total),
            thousands(r.trainable),
            r.layers
        );
    }
    s
}
