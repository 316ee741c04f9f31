//! Declarative network graphs and shape inference.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARCH_SCHEMA_VERSION: u32 = 1;

/// Reserved node id for the graph input.
pub const INPUT: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    SeparableConv,
    BatchNorm,
    Relu,
    MaxPool,
    GlobalAvgPool,
    FullyConnected,
    Softmax,
    Add,
}

impl LayerKind {
    fn windowed(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::SeparableConv | LayerKind::MaxPool)
    }

    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::SeparableConv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output size `ceil(in / stride)`, extra padding on the bottom/right.
    Same,
    Valid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<Padding>,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default)]
    pub bias: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub spec: LayerSpec,
    /// Producer ids; [`INPUT`] names the graph input.
    pub inputs: Vec<String>,
}

/// Feature-map shape `(height, width, channels)`.
pub type Shape = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureConfig {
    pub name: String,
    pub input_shape: Shape,
    pub num_classes: usize,
    /// Topologically ordered; the last node is the softmax output.
    pub nodes: Vec<Node>,
}

/// Output size and leading padding of one spatial axis.
pub fn window_output(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return None;
    }
    match padding {
        Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

fn shape_err(node: &str, msg: impl fmt::Display) -> Error {
    Error::Shape(format!("node `{node}`: {msg}"))
}

/// Output shape of one node given its input shapes; checks channel bookkeeping.
pub fn node_output_shape(id: &str, spec: &LayerSpec, inputs: &[Shape]) -> Result<Shape> {
    let arity = if spec.kind == LayerKind::Add { 2 } else { 1 };
    if inputs.len() != arity {
        return Err(shape_err(id, format!("expected {arity} input(s), got {}", inputs.len())));
    }
    if spec.kind.windowed() != (spec.kernel.is_some() && spec.stride.is_some()) {
        return Err(shape_err(id, "kernel/stride must be set exactly for conv, separable_conv and max_pool"));
    }
    if !spec.kind.windowed() && (spec.kernel.is_some() || spec.stride.is_some()) {
        return Err(shape_err(id, "kernel/stride given for a non-windowed layer"));
    }
    let (h, w, c) = inputs[0];
    let expect_in = |n: usize| -> Result<()> {
        if spec.in_channels != n {
            return Err(shape_err(id, format!("in_channels {} but input provides {n}", spec.in_channels)));
        }
        Ok(())
    };
    let same_channels = || -> Result<()> {
        expect_in(c)?;
        if spec.out_channels != c {
            return Err(shape_err(id, format!("out_channels {} must equal {c}", spec.out_channels)));
        }
        Ok(())
    };
    let windowed = |channels: usize| -> Result<Shape> {
        let (kh, kw) = spec.kernel.expect("checked");
        let s = spec.stride.expect("checked");
        let pad = spec.padding.unwrap_or(Padding::Valid);
        let (oh, _) = window_output(h, kh, s, pad).ok_or_else(|| shape_err(id, format!("kernel {kh} exceeds height {h}")))?;
        let (ow, _) = window_output(w, kw, s, pad).ok_or_else(|| shape_err(id, format!("kernel {kw} exceeds width {w}")))?;
        Ok((oh, ow, channels))
    };
    match spec.kind {
        LayerKind::Conv | LayerKind::SeparableConv => {
            expect_in(c)?;
            if spec.out_channels == 0 {
                return Err(shape_err(id, "out_channels must be positive"));
            }
            windowed(spec.out_channels)
        }
        LayerKind::MaxPool => {
            same_channels()?;
            windowed(c)
        }
        LayerKind::BatchNorm | LayerKind::Relu | LayerKind::Softmax => {
            same_channels()?;
            Ok((h, w, c))
        }
        LayerKind::GlobalAvgPool => {
            same_channels()?;
            Ok((1, 1, c))
        }
        LayerKind::FullyConnected => {
            expect_in(h * w * c)?;
            if spec.out_channels == 0 {
                return Err(shape_err(id, "out_channels must be positive"));
            }
            Ok((1, 1, spec.out_channels))
        }
        LayerKind::Add => {
            if inputs[0] != inputs[1] {
                return Err(shape_err(id, format!("add operands differ: {:?} vs {:?}", inputs[0], inputs[1])));
            }
            same_channels()?;
            Ok((h, w, c))
        }
    }
}

impl ArchitectureConfig {
    /// Validates the graph and returns every node's output shape, in node order.
    pub fn infer_shapes(&self) -> Result<Vec<Shape>> {
        let (h, w, c) = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape(format!("input shape {:?} must be positive", self.input_shape)));
        }
        let last = self.nodes.last().ok_or_else(|| Error::Shape("graph has no nodes".into()))?;
        if last.spec.kind != LayerKind::Softmax {
            return Err(Error::Shape("the last node must be the softmax output".into()));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.nodes.len());
        let mut consumed: HashSet<&str> = HashSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id == INPUT || index.contains_key(node.id.as_str()) {
                return Err(shape_err(&node.id, "duplicate or reserved id"));
            }
            if node.spec.kind == LayerKind::Softmax && i + 1 != self.nodes.len() {
                return Err(shape_err(&node.id, "softmax is only allowed as the final node"));
            }
            let mut ins = Vec::with_capacity(node.inputs.len());
            for src in &node.inputs {
                consumed.insert(src.as_str());
                if src == INPUT {
                    ins.push(self.input_shape);
                } else {
                    let j = *index
                        .get(src.as_str())
                        .ok_or_else(|| shape_err(&node.id, format!("input `{src}` is undefined or not topologically earlier")))?;
                    ins.push(shapes[j]);
                }
            }
            shapes.push(node_output_shape(&node.id, &node.spec, &ins)?);
            index.insert(&node.id, i);
        }
        if !consumed.contains(INPUT) {
            return Err(Error::Shape("graph input is never used".into()));
        }
        for node in &self.nodes[..self.nodes.len() - 1] {
            if !consumed.contains(node.id.as_str()) {
                return Err(shape_err(&node.id, "output is never consumed"));
            }
        }
        let out = *shapes.last().expect("non-empty");
        if out != (1, 1, self.num_classes) {
            return Err(Error::Shape(format!("output shape {out:?} does not match {} classes", self.num_classes)));
        }
        Ok(shapes)
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ArchFile::from(self)).expect("architecture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ArchFile = serde_json::from_str(text)?;
        let arch = file.into_config()?;
        arch.infer_shapes()?;
        Ok(arch)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::write(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ArchFile {
    schema_version: u32,
    name: String,
    input_shape: [usize; 3],
    num_classes: usize,
    nodes: Vec<NodeFile>,
    edges: Vec<[String; 2]>,
}

#[derive(Serialize, Deserialize)]
struct NodeFile {
    id: String,
    kind: LayerKind,
    params: NodeParams,
}

#[derive(Serialize, Deserialize)]
struct NodeParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<Padding>,
    in_channels: usize,
    out_channels: usize,
    #[serde(default)]
    bias: bool,
}

impl From<&ArchitectureConfig> for ArchFile {
    fn from(a: &ArchitectureConfig) -> Self {
        let nodes = a
            .nodes
            .iter()
            .map(|n| NodeFile {
                id: n.id.clone(),
                kind: n.spec.kind,
                params: NodeParams {
                    kernel: n.spec.kernel,
                    stride: n.spec.stride,
                    padding: n.spec.padding,
                    in_channels: n.spec.in_channels,
                    out_channels: n.spec.out_channels,
                    bias: n.spec.bias,
                },
            })
            .collect();
        let edges = a
            .nodes
            .iter()
            .flat_map(|n| n.inputs.iter().map(move |src| [src.clone(), n.id.clone()]))
            .collect();
        ArchFile {
            schema_version: ARCH_SCHEMA_VERSION,
            name: a.name.clone(),
            input_shape: [a.input_shape.0, a.input_shape.1, a.input_shape.2],
            num_classes: a.num_classes,
            nodes,
            edges,
        }
    }
}

impl ArchFile {
    fn into_config(self) -> Result<ArchitectureConfig> {
        if self.schema_version != ARCH_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported architecture schema version {}",
                self.schema_version
            )));
        }
        let mut inputs: HashMap<String, Vec<String>> = HashMap::new();
        for [from, to] in self.edges {
            inputs.entry(to).or_default().push(from);
        }
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| Node {
                inputs: inputs.remove(&n.id).unwrap_or_default(),
                spec: LayerSpec {
                    kind: n.kind,
                    kernel: n.params.kernel,
                    stride: n.params.stride,
                    padding: n.params.padding,
                    in_channels: n.params.in_channels,
                    out_channels: n.params.out_channels,
                    bias: n.params.bias,
                },
                id: n.id,
            })
            .collect();
        if let Some(dangling) = inputs.keys().next() {
            return Err(Error::Shape(format!("edge targets unknown node `{dangling}`")));
        }
        Ok(ArchitectureConfig {
            name: self.name,
            input_shape: (self.input_shape[0], self.input_shape[1], self.input_shape[2]),
            num_classes: self.num_classes,
            nodes,
        })
    }
}

/// Incremental graph construction with eager shape checking.
pub struct GraphBuilder {
    name: String,
    input_shape: Shape,
    num_classes: usize,
    nodes: Vec<Node>,
    shapes: HashMap<String, Shape>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>, input_shape: Shape, num_classes: usize) -> Self {
        let mut shapes = HashMap::new();
        shapes.insert(INPUT.to_string(), input_shape);
        Self {
            name: name.into(),
            input_shape,
            num_classes,
            nodes: Vec::new(),
            shapes,
        }
    }

    pub fn shape(&self, id: &str) -> Shape {
        self.shapes[id]
    }

    fn push(&mut self, id: &str, spec: LayerSpec, inputs: &[&str]) -> Result<String> {
        let ins: Vec<Shape> = inputs
            .iter()
            .map(|s| self.shapes.get(*s).copied().ok_or_else(|| shape_err(id, format!("unknown input `{s}`"))))
            .collect::<Result<_>>()?;
        let out = node_output_shape(id, &spec, &ins)?;
        if self.shapes.insert(id.to_string(), out).is_some() {
            return Err(shape_err(id, "duplicate id"));
        }
        self.nodes.push(Node {
            id: id.to_string(),
            spec,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        Ok(id.to_string())
    }

    fn channels(&self, id: &str) -> usize {
        self.shapes.get(id).map_or(0, |s| s.2)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(&mut self, id: &str, from: &str, filters: usize, k: usize, stride: usize, padding: Padding, bias: bool) -> Result<String> {
        let spec = LayerSpec {
            kind: LayerKind::Conv,
            kernel: Some((k, k)),
            stride: Some(stride),
            padding: Some(padding),
            in_channels: self.channels(from),
            out_channels: filters,
            bias,
        };
        self.push(id, spec, &[from])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn separable(&mut self, id: &str, from: &str, filters: usize, k: usize, stride: usize, padding: Padding, bias: bool) -> Result<String> {
        let spec = LayerSpec {
            kind: LayerKind::SeparableConv,
            kernel: Some((k, k)),
            stride: Some(stride),
            padding: Some(padding),
            in_channels: self.channels(from),
            out_channels: filters,
            bias,
        };
        self.push(id, spec, &[from])
    }

    fn elementwise(&mut self, id: &str, kind: LayerKind, inputs: &[&str]) -> Result<String> {
        let c = self.channels(inputs[0]);
        let spec = LayerSpec {
            kind,
            kernel: None,
            stride: None,
            padding: None,
            in_channels: c,
            out_channels: c,
            bias: false,
        };
        self.push(id, spec, inputs)
    }

    pub fn batch_norm(&mut self, id: &str, from: &str) -> Result<String> {
        self.elementwise(id, LayerKind::BatchNorm, &[from])
    }

    pub fn relu(&mut self, id: &str, from: &str) -> Result<String> {
        self.elementwise(id, LayerKind::Relu, &[from])
    }

    pub fn add(&mut self, id: &str, a: &str, b: &str) -> Result<String> {
        self.elementwise(id, LayerKind::Add, &[a, b])
    }

    pub fn global_avg_pool(&mut self, id: &str, from: &str) -> Result<String> {
        self.elementwise(id, LayerKind::GlobalAvgPool, &[from])
    }

    pub fn softmax(&mut self, id: &str, from: &str) -> Result<String> {
        self.elementwise(id, LayerKind::Softmax, &[from])
    }

    pub fn max_pool(&mut self, id: &str, from: &str, k: usize, stride: usize, padding: Padding) -> Result<String> {
        let c = self.channels(from);
        let spec = LayerSpec {
            kind: LayerKind::MaxPool,
            kernel: Some((k, k)),
            stride: Some(stride),
            padding: Some(padding),
            in_channels: c,
            out_channels: c,
            bias: false,
        };
        self.push(id, spec, &[from])
    }

    pub fn fully_connected(&mut self, id: &str, from: &str, units: usize, bias: bool) -> Result<String> {
        let (h, w, c) = self.shapes.get(from).copied().unwrap_or((0, 0, 0));
        let spec = LayerSpec {
            kind: LayerKind::FullyConnected,
            kernel: None,
            stride: None,
            padding: None,
            in_channels: h * w * c,
            out_channels: units,
            bias,
        };
        self.push(id, spec, &[from])
    }

    pub fn finish(self) -> Result<ArchitectureConfig> {
        let arch = ArchitectureConfig {
            name: self.name,
            input_shape: self.input_shape,
            num_classes: self.num_classes,
            nodes: self.nodes,
        };
        arch.infer_shapes()?;
        Ok(arch)
    }
}

/// The six reference architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchName {
    Fv2021,
    Bondi,
    Marra,
    Vgg16b,
    Resnet50,
    Xception,
}

impl ArchName {
    pub const ALL: [ArchName; 6] = [
        ArchName::Bondi,
        ArchName::Marra,
        ArchName::Vgg16b,
        ArchName::Resnet50,
        ArchName::Xception,
        ArchName::Fv2021,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchName::Fv2021 => "fv2021",
            ArchName::Bondi => "bondi",
            ArchName::Marra => "marra",
            ArchName::Vgg16b => "vgg16b",
            ArchName::Resnet50 => "resnet50",
            ArchName::Xception => "xception",
        }
    }

    /// Display label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            ArchName::Fv2021 => "FV2021",
            ArchName::Bondi => "Bondi",
            ArchName::Marra => "Marra",
            ArchName::Vgg16b => "VGG16",
            ArchName::Resnet50 => "ResNet50",
            ArchName::Xception => "Xception",
        }
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == lower)
            .ok_or_else(|| Error::UnknownArchitecture(s.to_string()))
    }
}
