//! Reference architectures. FV2021 is the compact two-block network; the
//! others are reconstructions of the comparison baselines with a softmax head.

use super::arch::{ArchName, ArchitectureConfig, GraphBuilder, Padding, Shape, INPUT};
use crate::error::{Error, Result};

pub const DEFAULT_INPUT: Shape = (96, 96, 1);
pub const DEFAULT_CLASSES: usize = 8;

/// Knobs of the FV2021 layout. Defaults give the reference configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fv2021Options {
    pub stem_filters: usize,
    pub block2_filters: usize,
    /// Optional hidden fully connected layer before the classifier.
    pub hidden_fc: Option<usize>,
}

impl Default for Fv2021Options {
    fn default() -> Self {
        Self {
            stem_filters: 32,
            block2_filters: 512,
            hidden_fc: None,
        }
    }
}

/// Node ids of FV2021's first block, used by structural tests.
pub mod fv2021_nodes {
    pub const BLOCK1_INPUT: &str = "stem_relu";
    pub const BLOCK1_BRANCH: [&str; 2] = ["b1_sep1", "b1_sep2"];
    pub const BLOCK1_OUTPUT: &str = "b1_relu";
}

pub fn build_architecture(name: &str, num_classes: usize, input_shape: Shape) -> Result<ArchitectureConfig> {
    let arch: ArchName = name.parse()?;
    if num_classes < 2 {
        return Err(Error::InvalidInput(format!("num_classes must be at least 2, got {num_classes}")));
    }
    if input_shape.0 < 32 || input_shape.1 < 32 || input_shape.2 != 1 {
        return Err(Error::Shape(format!(
            "input shape {input_shape:?} must be at least 32x32 with one channel"
        )));
    }
    match arch {
        ArchName::Fv2021 => fv2021(input_shape, num_classes, Fv2021Options::default()),
        ArchName::Bondi => bondi(input_shape, num_classes),
        ArchName::Marra => marra(input_shape, num_classes),
        ArchName::Vgg16b => vgg16b(input_shape, num_classes),
        ArchName::Resnet50 => resnet50(input_shape, num_classes),
        ArchName::Xception => xception(input_shape, num_classes),
    }
}

/// Stem conv 7x7/2, an identity-skip block of two separable convs, a
/// projection-shortcut block of two separable convs (first one strided),
/// global average pooling and a linear classifier.
pub fn fv2021(input: Shape, num_classes: usize, opts: Fv2021Options) -> Result<ArchitectureConfig> {
    let (f1, f2) = (opts.stem_filters, opts.block2_filters);
    let mut g = GraphBuilder::new("fv2021", input, num_classes);
    g.conv("stem_conv", INPUT, f1, 7, 2, Padding::Same, true)?;
    g.batch_norm("stem_bn", "stem_conv")?;
    g.relu("stem_relu", "stem_bn")?;

    g.separable("b1_sep1", "stem_relu", f1, 3, 1, Padding::Same, true)?;
    g.batch_norm("b1_bn1", "b1_sep1")?;
    g.relu("b1_relu1", "b1_bn1")?;
    g.separable("b1_sep2", "b1_relu1", f1, 3, 1, Padding::Same, true)?;
    g.batch_norm("b1_bn2", "b1_sep2")?;
    g.add("b1_add", "b1_bn2", "stem_relu")?;
    g.relu("b1_relu", "b1_add")?;

    g.separable("b2_sep1", "b1_relu", f2, 3, 2, Padding::Same, true)?;
    g.batch_norm("b2_bn1", "b2_sep1")?;
    g.relu("b2_relu1", "b2_bn1")?;
    g.separable("b2_sep2", "b2_relu1", f2, 3, 1, Padding::Same, true)?;
    g.batch_norm("b2_bn2", "b2_sep2")?;
    g.conv("b2_shortcut", "b1_relu", f2, 1, 2, Padding::Same, true)?;
    g.add("b2_add", "b2_bn2", "b2_shortcut")?;
    g.relu("b2_relu", "b2_add")?;

    g.global_avg_pool("gap", "b2_relu")?;
    let mut last = "gap".to_string();
    if let Some(units) = opts.hidden_fc {
        g.fully_connected("fc_hidden", &last, units, true)?;
        g.relu("fc_hidden_relu", "fc_hidden")?;
        last = "fc_hidden_relu".into();
    }
    g.fully_connected("fc", &last, num_classes, true)?;
    g.softmax("softmax", "fc")?;
    g.finish()
}

pub fn bondi(input: Shape, num_classes: usize) -> Result<ArchitectureConfig> {
    let mut g = GraphBuilder::new("bondi", input, num_classes);
    g.conv("conv1", INPUT, 32, 4, 1, Padding::Same, true)?;
    g.batch_norm("bn1", "conv1")?;
    g.relu("relu1", "bn1")?;
    g.max_pool("pool1", "relu1", 2, 2, Padding::Valid)?;
    g.conv("conv2", "pool1", 48, 5, 1, Padding::Same, true)?;
    g.relu("relu2", "conv2")?;
    g.max_pool("pool2", "relu2", 2, 2, Padding::Valid)?;
    g.conv("conv3", "pool2", 64, 5, 1, Padding::Same, true)?;
    g.relu("relu3", "conv3")?;
    g.max_pool("pool3", "relu3", 2, 2, Padding::Valid)?;
    g.conv("conv4", "pool3", 128, 5, 1, Padding::Same, true)?;
    g.relu("relu4", "conv4")?;
    g.fully_connected("fc1", "relu4", 128, true)?;
    g.relu("fc1_relu", "fc1")?;
    g.fully_connected("fc2", "fc1_relu", num_classes, true)?;
    g.softmax("softmax", "fc2")?;
    g.finish()
}

pub fn marra(input: Shape, num_classes: usize) -> Result<ArchitectureConfig> {
    let mut g = GraphBuilder::new("marra", input, num_classes);
    g.conv("conv1", INPUT, 96, 5, 1, Padding::Same, true)?;
    g.relu("relu1", "conv1")?;
    g.max_pool("pool1", "relu1", 2, 2, Padding::Valid)?;
    g.conv("conv2", "pool1", 128, 5, 1, Padding::Same, true)?;
    g.relu("relu2", "conv2")?;
    g.max_pool("pool2", "relu2", 2, 2, Padding::Valid)?;
    g.conv("conv3", "pool2", 128, 3, 1, Padding::Valid, true)?;
    g.relu("relu3", "conv3")?;
    g.fully_connected("fc1", "relu3", 1024, true)?;
    g.relu("fc1_relu", "fc1")?;
    g.fully_connected("fc2", "fc1_relu", num_classes, true)?;
    g.softmax("softmax", "fc2")?;
    g.finish()
}

/// VGG configuration B with the 512-channel stages cut to a single pair of
/// unpadded convolutions, batch normalization after every hidden layer.
pub fn vgg16b(input: Shape, num_classes: usize) -> Result<ArchitectureConfig> {
    let mut g = GraphBuilder::new("vgg16b", input, num_classes);
    let mut last = INPUT.to_string();
    for (stage, &(filters, padding)) in [(64, Padding::Same), (128, Padding::Same), (256, Padding::Same), (512, Padding::Valid)]
        .iter()
        .enumerate()
    {
        for i in 1..=2 {
            let id = format!("block{}_conv{i}", stage + 1);
            g.conv(&id, &last, filters, 3, 1, padding, true)?;
            g.batch_norm(&format!("{id}_bn"), &id)?;
            last = g.relu(&format!("{id}_relu"), &format!("{id}_bn"))?;
        }
        last = g.max_pool(&format!("block{}_pool", stage + 1), &last, 2, 2, Padding::Valid)?;
    }
    for i in 1..=2 {
        let id = format!("fc{i}");
        g.fully_connected(&id, &last, 4096, true)?;
        g.batch_norm(&format!("{id}_bn"), &id)?;
        last = g.relu(&format!("{id}_relu"), &format!("{id}_bn"))?;
    }
    g.fully_connected("fc3", &last, num_classes, true)?;
    g.softmax("softmax", "fc3")?;
    g.finish()
}

fn bottleneck(g: &mut GraphBuilder, name: &str, from: &str, filters: [usize; 3], stride: usize, project: bool) -> Result<String> {
    let [f1, f2, f3] = filters;
    g.conv(&format!("{name}_1_conv"), from, f1, 1, stride, Padding::Same, true)?;
    g.batch_norm(&format!("{name}_1_bn"), &format!("{name}_1_conv"))?;
    g.relu(&format!("{name}_1_relu"), &format!("{name}_1_bn"))?;
    g.conv(&format!("{name}_2_conv"), &format!("{name}_1_relu"), f2, 3, 1, Padding::Same, true)?;
    g.batch_norm(&format!("{name}_2_bn"), &format!("{name}_2_conv"))?;
    g.relu(&format!("{name}_2_relu"), &format!("{name}_2_bn"))?;
    g.conv(&format!("{name}_3_conv"), &format!("{name}_2_relu"), f3, 1, 1, Padding::Same, true)?;
    g.batch_norm(&format!("{name}_3_bn"), &format!("{name}_3_conv"))?;
    let shortcut = if project {
        g.conv(&format!("{name}_0_conv"), from, f3, 1, stride, Padding::Same, true)?;
        g.batch_norm(&format!("{name}_0_bn"), &format!("{name}_0_conv"))?
    } else {
        from.to_string()
    };
    g.add(&format!("{name}_add"), &format!("{name}_3_bn"), &shortcut)?;
    g.relu(&format!("{name}_out"), &format!("{name}_add"))
}

pub fn resnet50(input: Shape, num_classes: usize) -> Result<ArchitectureConfig> {
    let mut g = GraphBuilder::new("resnet50", input, num_classes);
    g.conv("conv1_conv", INPUT, 64, 7, 2, Padding::Same, true)?;
    g.batch_norm("conv1_bn", "conv1_conv")?;
    g.relu("conv1_relu", "conv1_bn")?;
    let mut last = g.max_pool("pool1", "conv1_relu", 3, 2, Padding::Same)?;
    let stages: [(usize, [usize; 3], usize, usize); 4] = [
        (2, [64, 64, 256], 3, 1),
        (3, [128, 128, 512], 4, 2),
        (4, [256, 256, 1024], 6, 2),
        (5, [512, 512, 2048], 3, 2),
    ];
    for (stage, filters, blocks, stride) in stages {
        for b in 1..=blocks {
            let s = if b == 1 { stride } else { 1 };
            last = bottleneck(&mut g, &format!("conv{stage}_block{b}"), &last, filters, s, b == 1)?;
        }
    }
    g.global_avg_pool("avg_pool", &last)?;
    g.fully_connected("fc", "avg_pool", num_classes, true)?;
    g.softmax("softmax", "fc")?;
    g.finish()
}

pub fn xception(input: Shape, num_classes: usize) -> Result<ArchitectureConfig> {
    let mut g = GraphBuilder::new("xception", input, num_classes);
    g.conv("block1_conv1", INPUT, 32, 3, 2, Padding::Valid, false)?;
    g.batch_norm("block1_conv1_bn", "block1_conv1")?;
    g.relu("block1_conv1_act", "block1_conv1_bn")?;
    g.conv("block1_conv2", "block1_conv1_act", 64, 3, 1, Padding::Valid, false)?;
    g.batch_norm("block1_conv2_bn", "block1_conv2")?;
    let mut last = g.relu("block1_conv2_act", "block1_conv2_bn")?;

    // Entry flow: strided blocks with projection shortcuts.
    for (block, filters) in [(2usize, 128usize), (3, 256), (4, 728)] {
        let res = format!("block{block}_res");
        g.conv(&res, &last, filters, 1, 2, Padding::Same, false)?;
        g.batch_norm(&format!("{res}_bn"), &res)?;
        let mut x = last.clone();
        if block != 2 {
            x = g.relu(&format!("block{block}_sepconv1_act"), &x)?;
        }
        g.separable(&format!("block{block}_sepconv1"), &x, filters, 3, 1, Padding::Same, false)?;
        g.batch_norm(&format!("block{block}_sepconv1_bn"), &format!("block{block}_sepconv1"))?;
        g.relu(&format!("block{block}_sepconv2_act"), &format!("block{block}_sepconv1_bn"))?;
        g.separable(
            &format!("block{block}_sepconv2"),
            &format!("block{block}_sepconv2_act"),
            filters,
            3,
            1,
            Padding::Same,
            false,
        )?;
        g.batch_norm(&format!("block{block}_sepconv2_bn"), &format!("block{block}_sepconv2"))?;
        g.max_pool(&format!("block{block}_pool"), &format!("block{block}_sepconv2_bn"), 3, 2, Padding::Same)?;
        last = g.add(&format!("block{block}_add"), &format!("block{block}_pool"), &format!("{res}_bn"))?;
    }

    // Middle flow.
    for block in 5..=12 {
        let mut x = last.clone();
        for i in 1..=3 {
            let p = format!("block{block}_sepconv{i}");
            g.relu(&format!("{p}_act"), &x)?;
            g.separable(&p, &format!("{p}_act"), 728, 3, 1, Padding::Same, false)?;
            x = g.batch_norm(&format!("{p}_bn"), &p)?;
        }
        last = g.add(&format!("block{block}_add"), &x, &last)?;
    }

    // Exit flow.
    g.conv("block13_res", &last, 1024, 1, 2, Padding::Same, false)?;
    g.batch_norm("block13_res_bn", "block13_res")?;
    let mut x = last.clone();
    for (i, filters) in [(1, 728), (2, 1024)] {
        let p = format!("block13_sepconv{i}");
        g.relu(&format!("{p}_act"), &x)?;
        g.separable(&p, &format!("{p}_act"), filters, 3, 1, Padding::Same, false)?;
        x = g.batch_norm(&format!("{p}_bn"), &p)?;
    }
    g.max_pool("block13_pool", &x, 3, 2, Padding::Same)?;
    last = g.add("block13_add", "block13_pool", "block13_res_bn")?;

    for (i, filters) in [(1, 1536), (2, 2048)] {
        let p = format!("block14_sepconv{i}");
        g.separable(&p, &last, filters, 3, 1, Padding::Same, false)?;
        g.batch_norm(&format!("{p}_bn"), &p)?;
        last = g.relu(&format!("{p}_act"), &format!("{p}_bn"))?;
    }
    g.global_avg_pool("avg_pool", &last)?;
    g.fully_connected("predictions", "avg_pool", num_classes, true)?;
    g.softmax("softmax", "predictions")?;
    g.finish()
}
