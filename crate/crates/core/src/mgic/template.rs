//! Reference CNN blocks that an MGIC block wraps, and their instances at a
//! given width and group size.

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ConvSpec, Ctx, Module};
use crate::params::ParamStore;
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum SeqLayer {
    /// Grouped `d×d` convolution keeping width and spatial size.
    Conv {
        d: usize,
    },
    Norm,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BlockTemplate {
    /// Pre-activation residual unit `x + K·σ(N(x))` with one grouped `d×d`
    /// convolution `K`.
    SimpleConv { d: usize },
    /// Pre-activation bottleneck
    /// `x + K₃·σ(N(K₂·σ(N(K₁·σ(N(x))))))` with `K₁, K₃` pointwise and `K₂`
    /// of size `d×d`. The hidden width is `c·expand/reduce`.
    Bottleneck {
        d: usize,
        #[serde(default = "one")]
        expand: usize,
        #[serde(default = "one")]
        reduce: usize,
    },
    /// Plain layer sequence without a skip connection.
    Sequence { layers: Vec<SeqLayer> },
}

fn one() -> usize {
    1
}

impl BlockTemplate {
    pub fn bottleneck(d: usize, expand: usize, reduce: usize) -> Self {
        BlockTemplate::Bottleneck { d, expand, reduce }
    }

    pub fn validate(&self) -> Result<()> {
        let odd = |d: usize| {
            if d == 0 || d % 2 == 0 {
                Err(Error::config(format!("kernel size {d} must be odd and positive")))
            } else {
                Ok(())
            }
        };
        match self {
            BlockTemplate::SimpleConv { d } => odd(*d),
            BlockTemplate::Bottleneck { d, expand, reduce } => {
                if *expand == 0 || *reduce == 0 {
                    return Err(Error::config("bottleneck expand/reduce must be positive"));
                }
                odd(*d)
            }
            BlockTemplate::Sequence { layers } => {
                for l in layers {
                    if let SeqLayer::Conv { d } = l {
                        odd(*d)?;
                    }
                }
                Ok(())
            }
        }
    }

    /// Spatial kernel size of the template's square convolution.
    pub fn kernel(&self) -> usize {
        match self {
            BlockTemplate::SimpleConv { d } | BlockTemplate::Bottleneck { d, .. } => *d,
            BlockTemplate::Sequence { layers } => layers
                .iter()
                .filter_map(|l| match l {
                    SeqLayer::Conv { d } => Some(*d),
                    _ => None,
                })
                .max()
                .unwrap_or(1),
        }
    }

    /// Instantiates the template at width `c` with `group_size` channels per
    /// group (`group_size == c` gives the fully coupled block).
    pub fn instantiate<T: Float, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        group_size: usize,
        rng: &mut R,
    ) -> Result<TemplateInstance> {
        self.validate()?;
        if group_size == 0 || c % group_size != 0 {
            return Err(Error::config(format!("group size {group_size} does not divide width {c} (`{name}`)")));
        }
        let groups = c / group_size;
        Ok(match self {
            BlockTemplate::SimpleConv { d } => TemplateInstance::SimpleConv {
                norm: BatchNorm2d::new(store, &format!("{name}/norm"), c)?,
                conv: Conv2d::new(store, &format!("{name}/conv"), ConvSpec::same(c, c, *d, groups), rng)?,
            },
            BlockTemplate::Bottleneck { d, expand, reduce } => {
                if (c * expand) % reduce != 0 {
                    return Err(Error::config(format!("hidden width {c}·{expand}/{reduce} is not an integer")));
                }
                let mid = c * expand / reduce;
                if mid % groups != 0 {
                    return Err(Error::config(format!("{groups} groups do not divide hidden width {mid} (`{name}`)")));
                }
                TemplateInstance::Bottleneck {
                    n1: BatchNorm2d::new(store, &format!("{name}/norm1"), c)?,
                    k1: Conv2d::new(store, &format!("{name}/conv1"), ConvSpec::pointwise(c, mid, groups), rng)?,
                    n2: BatchNorm2d::new(store, &format!("{name}/norm2"), mid)?,
                    k2: Conv2d::new(store, &format!("{name}/conv2"), ConvSpec::same(mid, mid, *d, groups), rng)?,
                    n3: BatchNorm2d::new(store, &format!("{name}/norm3"), mid)?,
                    k3: Conv2d::new(store, &format!("{name}/conv3"), ConvSpec::pointwise(mid, c, groups), rng)?,
                }
            }
            BlockTemplate::Sequence { layers } => {
                let mut out = Vec::with_capacity(layers.len());
                for (i, l) in layers.iter().enumerate() {
                    out.push(match l {
                        SeqLayer::Conv { d } => SeqInstance::Conv(Conv2d::new(
                            store,
                            &format!("{name}/{i}/conv"),
                            ConvSpec::same(c, c, *d, groups),
                            rng,
                        )?),
                        SeqLayer::Norm => SeqInstance::Norm(BatchNorm2d::new(store, &format!("{name}/{i}/norm"), c)?),
                        SeqLayer::Relu => SeqInstance::Relu,
                    });
                }
                TemplateInstance::Sequence(out)
            }
        })
    }
}

#[derive(Debug, Clone)]
pub enum SeqInstance {
    Conv(Conv2d),
    Norm(BatchNorm2d),
    Relu,
}

/// A template instantiated at a concrete width and group size.
#[derive(Debug, Clone)]
pub enum TemplateInstance {
    SimpleConv { norm: BatchNorm2d, conv: Conv2d },
    Bottleneck { n1: BatchNorm2d, k1: Conv2d, n2: BatchNorm2d, k2: Conv2d, n3: BatchNorm2d, k3: Conv2d },
    Sequence(Vec<SeqInstance>),
}

impl TemplateInstance {
    pub fn convs(&self) -> Vec<&Conv2d> {
        match self {
            TemplateInstance::SimpleConv { conv, .. } => vec![conv],
            TemplateInstance::Bottleneck { k1, k2, k3, .. } => vec![k1, k2, k3],
            TemplateInstance::Sequence(layers) => layers
                .iter()
                .filter_map(|l| match l {
                    SeqInstance::Conv(c) => Some(c),
                    _ => None,
                })
                .collect(),
        }
    }

    /// Zeroes the last convolution of the residual branch, turning the
    /// instance into the identity map. Sequences have no skip connection and
    /// are rejected.
    pub fn zero_residual<T: Float>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let last = match self {
            TemplateInstance::SimpleConv { conv, .. } => conv,
            TemplateInstance::Bottleneck { k3, .. } => k3,
            TemplateInstance::Sequence(_) => {
                return Err(Error::config("a plain sequence template has no residual branch"));
            }
        };
        let shape = store.value(last.weight).shape().to_vec();
        store.set_value(last.weight, Tensor::zeros(shape)?)
    }
}

fn norm_relu<T: Float>(cx: &mut Ctx<'_, T>, n: &BatchNorm2d, x: Var) -> Result<Var> {
    let y = n.forward(cx, x)?;
    cx.relu(y)
}

impl<T: Float> Module<T> for TemplateInstance {
    fn forward(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            TemplateInstance::SimpleConv { norm, conv } => {
                let h = norm_relu(cx, norm, x)?;
                let r = conv.forward(cx, h)?;
                cx.tape.add(x, r)
            }
            TemplateInstance::Bottleneck { n1, k1, n2, k2, n3, k3 } => {
                let h = norm_relu(cx, n1, x)?;
                let h = k1.forward(cx, h)?;
                let h = norm_relu(cx, n2, h)?;
                let h = k2.forward(cx, h)?;
                let h = norm_relu(cx, n3, h)?;
                let r = k3.forward(cx, h)?;
                cx.tape.add(x, r)
            }
            TemplateInstance::Sequence(layers) => {
                let mut h = x;
                for l in layers {
                    h = match l {
                        SeqInstance::Conv(c) => c.forward(cx, h)?,
                        SeqInstance::Norm(n) => n.forward(cx, h)?,
                        SeqInstance::Relu => cx.relu(h)?,
                    };
                }
                Ok(h)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{infer, Mode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn template_json_shape() {
        let t: BlockTemplate = serde_json::from_str(r#"{"kind":"bottleneck","d":3,"expand":2}"#).unwrap();
        assert_eq!(t, BlockTemplate::bottleneck(3, 2, 1));
        let s: BlockTemplate = serde_json::from_str(r#"{"kind":"simple-conv","d":3}"#).unwrap();
        assert_eq!(s, BlockTemplate::SimpleConv { d: 3 });
        assert!(serde_json::from_str::<BlockTemplate>(r#"{"kind":"simple-conv","d":3,"x":1}"#).is_err());
    }

    #[test]
    fn zero_residual_bottleneck_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let inst = BlockTemplate::bottleneck(3, 1, 4).instantiate(&mut store, "b", 8, 4, &mut rng).unwrap();
        inst.zero_residual(&mut store).unwrap();
        let x = Tensor::randn([2, 8, 3, 3], &mut rng).unwrap();
        let y = infer(&inst, &store, &x).unwrap();
        assert!(y.bit_eq(&x));
        let _ = Mode::Train;
    }

    #[test]
    fn group_size_must_divide_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        assert!(BlockTemplate::SimpleConv { d: 3 }.instantiate(&mut store, "t", 12, 5, &mut rng).is_err());
        assert!(BlockTemplate::SimpleConv { d: 2 }.instantiate(&mut store, "u", 12, 4, &mut rng).is_err());
    }
}
