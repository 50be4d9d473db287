//! Networks assembled from an [`ArchSpec`]: a single block, the point-wise
//! function approximator, a small image classifier and the transfer-only
//! reconstruction chain.

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::mgic::{
    build_mgic_block, init_transfer, level_group_sizes, level_widths, BlockTemplate, ChannelShortcut, GroupClamp,
    MgicBlock, MgicConfig, TemplateInstance,
};
use crate::nn::{BatchNorm2d, Conv2d, ConvSpec, Ctx, Linear, Module};
use crate::params::ParamStore;
use crate::tensor::Float;

/// What fills a block position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BlockChoice {
    Mgic {
        s_g: usize,
        s_c: usize,
        template: BlockTemplate,
        #[serde(default)]
        clamp: GroupClamp,
    },
    /// The template alone with `s` channels per group.
    Grouped { s: usize, template: BlockTemplate },
    /// The template fully coupled.
    Dense { template: BlockTemplate },
}

impl BlockChoice {
    pub fn mgic(config: &MgicConfig) -> Self {
        BlockChoice::Mgic { s_g: config.s_g, s_c: config.s_c, template: config.template.clone(), clamp: config.clamp }
    }

    pub fn template(&self) -> &BlockTemplate {
        match self {
            BlockChoice::Mgic { template, .. }
            | BlockChoice::Grouped { template, .. }
            | BlockChoice::Dense { template } => template,
        }
    }

    fn build<T: Float, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        rng: &mut R,
    ) -> Result<Layer> {
        Ok(match self {
            BlockChoice::Mgic { s_g, s_c, template, clamp } => {
                let cfg = MgicConfig::new(*s_g, *s_c, template.clone()).with_clamp(*clamp);
                Layer::Mgic(build_mgic_block(store, name, c, &cfg, rng)?)
            }
            BlockChoice::Grouped { s, template } => Layer::Template(template.instantiate(store, name, c, *s, rng)?),
            BlockChoice::Dense { template } => Layer::Template(template.instantiate(store, name, c, c, rng)?),
        })
    }
}

fn default_alpha() -> f64 {
    0.6
}

fn default_head() -> usize {
    2
}

fn default_hw() -> [usize; 2] {
    [1, 1]
}

fn default_in_channels() -> usize {
    1
}

fn default_image() -> [usize; 2] {
    [28, 28]
}

fn default_classes() -> usize {
    10
}

fn default_stem() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub width: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub blocks: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArchSpec {
    /// One block on `channels × hw` inputs.
    Block {
        channels: usize,
        #[serde(default = "default_hw")]
        hw: [usize; 2],
        block: BlockChoice,
    },
    /// Point-wise regressor on `N×2×1×1` inputs: 1×1 conv-BN-ReLU to 16,
    /// a width adapter to `round(α·160)`, two blocks, 1×1 conv-BN-ReLU to
    /// 64 and a 1×1 head of `head_width` channels. Training reads channel 0.
    Approx {
        #[serde(default = "default_alpha")]
        alpha: f64,
        block: BlockChoice,
        #[serde(default = "default_head")]
        head_width: usize,
    },
    /// Stem conv, stages of (strided width adapter, BN, blocks), then BN,
    /// ReLU, global pooling and a linear classifier.
    Classify {
        #[serde(default = "default_in_channels")]
        in_channels: usize,
        #[serde(default = "default_image")]
        image: [usize; 2],
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_stem")]
        stem: usize,
        stages: Vec<StageSpec>,
        block: BlockChoice,
    },
    /// Restrictions down to the coarsest width then prolongations back up,
    /// with no templates and no skip connections.
    Reconstruct {
        channels: usize,
        s_g: usize,
        s_c: usize,
        #[serde(default = "default_hw")]
        hw: [usize; 2],
    },
}

impl ArchSpec {
    /// Per-sample input shape `[C, H, W]`.
    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            ArchSpec::Block { channels, hw, .. } | ArchSpec::Reconstruct { channels, hw, .. } => {
                [*channels, hw[0], hw[1]]
            }
            ArchSpec::Approx { .. } => [2, 1, 1],
            ArchSpec::Classify { in_channels, image, .. } => [*in_channels, image[0], image[1]],
        }
    }

    /// Approximator block width `round(α·160)`.
    pub fn approx_width(alpha: f64) -> usize {
        (alpha * 160.0).round() as usize
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Norm(BatchNorm2d),
    Relu,
    Shortcut(ChannelShortcut),
    Mgic(MgicBlock),
    Template(TemplateInstance),
    GlobalPool,
    Linear(Linear),
    /// Keeps channels `start..start+len`.
    Select {
        start: usize,
        len: usize,
    },
}

impl<T: Float> Module<T> for Layer {
    fn forward(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            Layer::Conv(c) => c.forward(cx, x),
            Layer::Norm(n) => n.forward(cx, x),
            Layer::Relu => cx.relu(x),
            Layer::Shortcut(s) => s.forward(cx, x),
            Layer::Mgic(b) => b.forward(cx, x),
            Layer::Template(t) => t.forward(cx, x),
            Layer::GlobalPool => cx.tape.global_avg_pool(x),
            Layer::Linear(l) => l.forward(cx, x),
            Layer::Select { start, len } => cx.tape.slice_channels(x, *start, *len),
        }
    }
}

/// A sequential network and the spec it was built from.
#[derive(Debug, Clone)]
pub struct Network {
    pub arch: ArchSpec,
    pub layers: Vec<(String, Layer)>,
}

impl<T: Float> Module<T> for Network {
    fn forward(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (name, layer) in &self.layers {
            h = match layer {
                // blocks label their own sub-scopes
                Layer::Mgic(_) => layer.forward(cx, h)?,
                _ => cx.scoped(name, |cx| layer.forward(cx, h))?,
            };
        }
        Ok(h)
    }
}

impl Network {
    pub fn blocks(&self) -> impl Iterator<Item = &MgicBlock> {
        self.layers.iter().filter_map(|(_, l)| match l {
            Layer::Mgic(b) => Some(b),
            _ => None,
        })
    }
}

struct Builder<'s, T: Float> {
    store: &'s mut ParamStore<T>,
    layers: Vec<(String, Layer)>,
}

impl<T: Float> Builder<'_, T> {
    fn push(&mut self, name: impl Into<String>, layer: Layer) {
        self.layers.push((name.into(), layer));
    }

    fn conv_bn_relu<R: Rng + ?Sized>(&mut self, name: &str, spec: ConvSpec, rng: &mut R) -> Result<()> {
        let conv = Conv2d::new(self.store, &format!("{name}/conv"), spec, rng)?;
        let norm = BatchNorm2d::new(self.store, &format!("{name}/norm"), spec.c_out)?;
        self.push(format!("{name}/conv"), Layer::Conv(conv));
        self.push(format!("{name}/norm"), Layer::Norm(norm));
        self.push(format!("{name}/relu"), Layer::Relu);
        Ok(())
    }
}

pub fn build_network<T: Float, R: Rng + ?Sized>(
    arch: &ArchSpec,
    store: &mut ParamStore<T>,
    rng: &mut R,
) -> Result<Network> {
    let mut b = Builder { store, layers: Vec::new() };
    match arch {
        ArchSpec::Block { channels, block, .. } => {
            let layer = block.build(b.store, "block", *channels, rng)?;
            b.push("block", layer);
        }
        ArchSpec::Approx { alpha, block, head_width } => {
            if !(*alpha > 0.0) || *head_width == 0 {
                return Err(Error::config("approx needs alpha > 0 and head_width ≥ 1"));
            }
            let width = ArchSpec::approx_width(*alpha);
            b.conv_bn_relu("stem", ConvSpec::pointwise(2, 16, 1), rng)?;
            // point data: a 3×3 adapter would only ever use its centre tap
            let sc = ChannelShortcut::with_kernel(b.store, "adapt", 16, width, 1, 1, rng)?;
            b.push("adapt", Layer::Shortcut(sc));
            for i in 0..2 {
                let layer = block.build(b.store, &format!("block{i}"), width, rng)?;
                b.push(format!("block{i}"), layer);
            }
            b.conv_bn_relu("neck", ConvSpec::pointwise(width, 64, 1), rng)?;
            let head = Conv2d::new(b.store, "head", ConvSpec::pointwise(64, *head_width, 1).with_bias(true), rng)?;
            b.push("head", Layer::Conv(head));
            if *head_width > 1 {
                b.push("select", Layer::Select { start: 0, len: 1 });
            }
        }
        ArchSpec::Classify { in_channels, classes, stem, stages, block, .. } => {
            b.conv_bn_relu("stem", ConvSpec::same(*in_channels, *stem, 3, 1), rng)?;
            let mut c = *stem;
            for (i, st) in stages.iter().enumerate() {
                let name = format!("stage{i}");
                let sc = ChannelShortcut::new(b.store, &format!("{name}/adapt"), c, st.width, st.stride, rng)?;
                b.push(format!("{name}/adapt"), Layer::Shortcut(sc));
                let norm = BatchNorm2d::new(b.store, &format!("{name}/adapt_norm"), st.width)?;
                b.push(format!("{name}/adapt_norm"), Layer::Norm(norm));
                for k in 0..st.blocks {
                    let layer = block.build(b.store, &format!("{name}/block{k}"), st.width, rng)?;
                    b.push(format!("{name}/block{k}"), layer);
                }
                c = st.width;
            }
            let norm = BatchNorm2d::new(b.store, "final_norm", c)?;
            b.push("final_norm", Layer::Norm(norm));
            b.push("final_relu", Layer::Relu);
            b.push("pool", Layer::GlobalPool);
            let fc = Linear::new(b.store, "fc", c, *classes, rng)?;
            b.push("fc", Layer::Linear(fc));
        }
        ArchSpec::Reconstruct { channels, s_g, s_c, .. } => {
            let widths = level_widths(*channels, *s_c)?;
            let sizes = level_group_sizes(*s_g, &widths, GroupClamp::PerLevel)?;
            let mut up = Vec::with_capacity(sizes.len());
            for (j, (&w, &s)) in widths.iter().zip(&sizes).enumerate() {
                let t = init_transfer(b.store, &format!("level{j}"), j, w, s, rng)?;
                b.push(format!("level{j}/restrict"), Layer::Conv(t.restrict));
                up.push((format!("level{j}/prolong"), Layer::Conv(t.prolong)));
            }
            while let Some((name, layer)) = up.pop() {
                b.push(name, layer);
            }
        }
    }
    Ok(Network { arch: arch.clone(), layers: b.layers })
}

/// Parameters of `template` instantiated alone at width `c` and group size `s`.
pub fn template_params(template: &BlockTemplate, c: usize, s: usize) -> Result<usize> {
    let mut store = ParamStore::<f32>::new();
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    template.instantiate(&mut store, "t", c, s, &mut rng)?;
    Ok(store.count())
}

/// Parameters of one MGIC block at width `c`.
pub fn mgic_block_params(config: &MgicConfig, c: usize) -> Result<usize> {
    let mut store = ParamStore::<f32>::new();
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    build_mgic_block(&mut store, "b", c, config, &mut rng)?;
    Ok(store.count())
}

/// The group size `s | c` whose grouped-only template has the parameter
/// count closest to `target`; ties go to the smaller group.
pub fn matched_group_size(template: &BlockTemplate, c: usize, target: usize) -> Result<usize> {
    let mut best: Option<(usize, usize)> = None;
    for s in (1..=c).filter(|s| c % s == 0) {
        let Ok(p) = template_params(template, c, s) else { continue };
        let gap = p.abs_diff(target);
        if best.map_or(true, |(g, _)| gap < g) {
            best = Some((gap, s));
        }
    }
    best.map(|(_, s)| s).ok_or_else(|| Error::config(format!("no group size instantiates the template at width {c}")))
}

/// Fully coupled control for a block spec: the same template at `s = c`.
pub fn dense_counterpart(block: &BlockChoice) -> BlockChoice {
    BlockChoice::Dense { template: block.template().clone() }
}
