use crate::error::{Error, Result};
use crate::nets::Param;
use serde::{Deserialize, Serialize};

/// Adam constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [("adam.beta1", self.beta1), ("adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(f, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("adam.eps", "must be positive"));
        }
        Ok(())
    }
}

/// One Adam update in place; `t` is the 1-based step count.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    for (what, len) in [
        ("grads", grads.len()),
        ("first moment", m.len()),
        ("second moment", v.len()),
    ] {
        if len != n {
            return Err(Error::dim(what, n, len));
        }
    }
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..n {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam state over a list of parameter blocks.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(shapes: &[&Param], cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: shapes.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: shapes.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Param>, grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(
                "parameter blocks",
                self.m.len(),
                params.len().min(grads.len()),
            ));
        }
        self.t += 1;
        for (i, p) in params.into_iter().enumerate() {
            adam_step(
                &mut p.data,
                grads[i],
                &mut self.m[i],
                &mut self.v[i],
                self.t,
                lr,
                &self.cfg,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_step(
            &mut p,
            &[0.0, 0.0],
            &mut m,
            &mut v,
            1,
            0.1,
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for cfg in [
            AdamConfig::default(),
            AdamConfig {
                beta1: 0.5,
                beta2: 0.9,
                eps: 1e-8,
            },
        ] {
            let mut p = vec![0.0, 0.0];
            let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
            adam_step(&mut p, &[3.0, -0.5], &mut m, &mut v, 1, 1e-3, &cfg).unwrap();
            assert!((p[0] + 1e-3).abs() < 1e-10 && (p[1] - 1e-3).abs() < 1e-10);
        }
    }
}
