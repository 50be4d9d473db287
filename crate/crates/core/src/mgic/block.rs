use rand::Rng;

use super::config::{level_group_sizes, level_widths, MgicConfig};
use super::template::TemplateInstance;
use super::transfer::{init_transfer, TransferPair};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Ctx, Module};
use crate::params::ParamStore;
use crate::tensor::Float;

/// One non-coarsest level of the hierarchy.
#[derive(Debug, Clone)]
pub struct Level {
    pub width: usize,
    pub group_size: usize,
    pub transfer: TransferPair,
    /// Grouped template applied after the coarse-grid correction.
    pub relax: TemplateInstance,
    /// Normalization of the prolonged residual.
    pub correction: BatchNorm2d,
}

#[derive(Debug, Clone)]
pub struct MgicBlock {
    pub name: String,
    pub c_in: usize,
    pub config: MgicConfig,
    pub levels: Vec<Level>,
    /// Fully coupled template at the coarsest width.
    pub coarse: TemplateInstance,
    pub coarse_width: usize,
}

/// Builds a block over `c_in` channels. Group sizes follow `config.clamp`.
pub fn build_mgic_block<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    c_in: usize,
    config: &MgicConfig,
    rng: &mut R,
) -> Result<MgicBlock> {
    config.validate()?;
    let widths = level_widths(c_in, config.s_c)?;
    let sizes = level_group_sizes(config.s_g, &widths, config.clamp)?;
    let mut levels = Vec::with_capacity(sizes.len());
    for (j, (&width, &s)) in widths.iter().zip(&sizes).enumerate() {
        let prefix = format!("{name}/level{j}");
        let transfer = init_transfer(store, &prefix, j, width, s, rng)?;
        let relax = config.template.instantiate(store, &format!("{prefix}/relax"), width, s, rng)?;
        let correction = BatchNorm2d::new(store, &format!("{prefix}/correction"), width)?;
        levels.push(Level { width, group_size: s, transfer, relax, correction });
    }
    let coarse_width = *widths.last().expect("at least one level width");
    let coarse = config.template.instantiate(store, &format!("{name}/coarse"), coarse_width, coarse_width, rng)?;
    Ok(MgicBlock { name: name.to_string(), c_in, config: config.clone(), levels, coarse, coarse_width })
}

impl MgicBlock {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Channel widths finest to coarsest.
    pub fn widths(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.width).chain([self.coarse_width]).collect()
    }

    /// Zeroes every template's residual branch and every correction norm, so
    /// the block computes the identity.
    pub fn configure_identity<T: Float>(&self, store: &mut ParamStore<T>) -> Result<()> {
        self.coarse.zero_residual(store)?;
        for l in &self.levels {
            l.relax.zero_residual(store)?;
            l.correction.zero_affine(store)?;
        }
        Ok(())
    }
}

impl<T: Float> Module<T> for MgicBlock {
    fn forward(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = cx.tape.shape(x);
        if shape.len() != 4 || shape[1] != self.c_in {
            return Err(Error::dim(format!(
                "mgic block `{}` expects {} channels, got input {shape:?}",
                self.name, self.c_in
            )));
        }
        let n = self.levels.len();
        let mut xs = Vec::with_capacity(n + 1);
        let mut restricted = Vec::with_capacity(n);
        xs.push(x);
        for (j, l) in self.levels.iter().enumerate() {
            let r =
                cx.scoped(&format!("{}/level{j}/restrict", self.name), |cx| l.transfer.restrict.forward(cx, xs[j]))?;
            restricted.push(r);
            xs.push(r);
        }
        xs[n] = cx.scoped(&format!("{}/coarse", self.name), |cx| self.coarse.forward(cx, xs[n]))?;
        for (j, l) in self.levels.iter().enumerate().rev() {
            let corrected = cx.scoped(&format!("{}/level{j}/correct", self.name), |cx| {
                let residual = cx.tape.sub(xs[j + 1], restricted[j])?;
                let up = l.transfer.prolong.forward(cx, residual)?;
                let up = l.correction.forward(cx, up)?;
                cx.tape.add(xs[j], up)
            })?;
            xs[j] = cx.scoped(&format!("{}/level{j}/relax", self.name), |cx| l.relax.forward(cx, corrected))?;
        }
        Ok(xs[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgic::BlockTemplate;
    use crate::nn::infer;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sixteen_channel_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let cfg = MgicConfig::new(4, 4, BlockTemplate::SimpleConv { d: 3 });
        let b = build_mgic_block(&mut store, "b", 16, &cfg, &mut rng).unwrap();
        assert_eq!(b.num_levels(), 2);
        assert_eq!(b.widths(), vec![16, 8, 4]);
        assert_eq!(
            store.find("b/level1/relax/conv/weight").map(|id| store.value(id).shape().to_vec()),
            Some(vec![8, 4, 3, 3])
        );
        assert_eq!(store.value(store.find("b/coarse/conv/weight").unwrap()).shape(), &[4, 4, 3, 3]);
    }

    #[test]
    fn worked_parameter_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let cfg = MgicConfig::new(8, 8, BlockTemplate::SimpleConv { d: 3 });
        build_mgic_block(&mut store, "b", 64, &cfg, &mut rng).unwrap();
        assert_eq!(store.count_where(|p| p.kind.is_conv_weight()), 9536);
    }

    #[test]
    fn no_levels_is_the_bare_template() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let cfg = MgicConfig::new(8, 8, BlockTemplate::SimpleConv { d: 3 });
        let b = build_mgic_block(&mut store, "b", 8, &cfg, &mut rng).unwrap();
        assert_eq!(b.num_levels(), 0);
        let x = Tensor::randn([2, 8, 4, 4], &mut rng).unwrap();
        let y = infer(&b, &store, &x).unwrap();
        let z = infer(&b.coarse, &store, &x).unwrap();
        assert!(y.bit_eq(&z));
    }

    #[test]
    fn identity_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let cfg = MgicConfig::new(4, 4, BlockTemplate::bottleneck(3, 2, 1));
        let b = build_mgic_block(&mut store, "b", 16, &cfg, &mut rng).unwrap();
        b.configure_identity(&mut store).unwrap();
        let x = Tensor::randn([2, 16, 3, 3], &mut rng).unwrap();
        let y = infer(&b, &store, &x).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn wrong_channel_count_is_a_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let cfg = MgicConfig::new(4, 4, BlockTemplate::SimpleConv { d: 1 });
        let b = build_mgic_block(&mut store, "b", 16, &cfg, &mut rng).unwrap();
        let err = infer(&b, &store, &Tensor::zeros([1, 8, 2, 2]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
    }
}
