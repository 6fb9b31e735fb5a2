use super::{affine, Activation, Init, Network, Param};
use crate::autodiff::{Jet, Real, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer {
    pub w: Param,
    pub b: Param,
    pub act: Activation,
}

/// Fully connected network `y_{i+1} = σ_i(W_i y_i + b_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<MlpLayer>,
}

impl MlpParams {
    /// Zero-initialized network; `sizes` lists input width then each layer's
    /// output width, `acts` one activation per layer.
    pub fn zeros(sizes: &[usize], acts: &[Activation]) -> Self {
        assert_eq!(sizes.len(), acts.len() + 1, "one activation per layer");
        let layers = acts
            .iter()
            .enumerate()
            .map(|(i, &act)| MlpLayer {
                w: Param::zeros(sizes[i + 1], sizes[i]),
                b: Param::zeros(sizes[i + 1], 1),
                act,
            })
            .collect();
        MlpParams { layers }
    }

    pub fn init(sizes: &[usize], acts: &[Activation], seed: u64) -> Self {
        let mut p = Self::zeros(sizes, acts);
        let mut init = Init::new(seed);
        let n = p.layers.len();
        for (i, l) in p.layers.iter_mut().enumerate() {
            if l.w.rows == 0 {
                continue;
            }
            let std = super::init_std(i, n, l.w.rows);
            init.fill(&mut l.w, std);
            init.fill(&mut l.b, std);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.cols)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.rows)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("mlp", "no layers"));
        }
        let mut width = self.input_dim();
        for l in &self.layers {
            if !l.w.check(l.w.rows, width) || !l.b.check(l.w.rows, 1) {
                return Err(Error::invalid("mlp", "layer shapes do not chain"));
            }
            width = l.w.rows;
        }
        Ok(())
    }

    /// Jet forward with parameters bound in `params()` order.
    pub fn forward_jet<'t>(&self, bound: &[Tensor<'t>], x: &Jet<'t>) -> Jet<'t> {
        let mut y = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            y = l
                .act
                .apply_jet(y.linear(bound[2 * i], Some(bound[2 * i + 1])));
        }
        y
    }
}

impl Network for MlpParams {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }
}

/// Forward pass on any scalar type.
pub fn fcnn_forward<T: Real>(p: &MlpParams, x: &[T]) -> Result<Vec<T>> {
    if x.len() != p.input_dim() {
        return Err(Error::dim("fcnn input", p.input_dim(), x.len()));
    }
    let mut y = x.to_vec();
    for l in &p.layers {
        y = affine(&l.w, Some(&l.b), &y)
            .into_iter()
            .map(|v| l.act.apply(v))
            .collect();
    }
    Ok(y)
}
