//! Learning-rate schedule and AdamW.

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// `ceil(warmup_frac * total_steps)`.
pub fn warmup_steps(total_steps: usize, warmup_frac: f64) -> usize {
    (warmup_frac * total_steps as f64).ceil() as usize
}

/// Linear warmup from 0 to `peak` over the warmup steps, then half-cosine
/// decay reaching 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, peak: f64, warmup_frac: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::Config(format!(
            "step {step} beyond total_steps {total_steps}"
        )));
    }
    let warm = warmup_steps(total_steps, warmup_frac);
    if step == warm {
        return Ok(peak);
    }
    if step < warm {
        return Ok(peak * step as f64 / warm as f64);
    }
    let progress = (step - warm) as f64 / (total_steps - warm) as f64;
    Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        let m: Vec<Vec<T>> = params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// Moments as a parameter store named `m.<param>` / `v.<param>`.
    pub fn to_store(&self, params: &ParamStore<T>) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (kind, bufs) in [("m", &self.m), ("v", &self.v)] {
            for ((name, t), buf) in params.iter().zip(bufs) {
                out.insert(
                    format!("{kind}.{name}"),
                    Tensor::new(t.shape().to_vec(), buf.clone()).expect("moment shape"),
                );
            }
        }
        out
    }

    pub fn from_store(store: &ParamStore<T>, params: &ParamStore<T>, t: u64) -> Result<Self> {
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (name, p) in params.iter() {
            for (kind, dst) in [("m", &mut m), ("v", &mut v)] {
                let key = format!("{kind}.{name}");
                let buf = store
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks {key}")))?;
                if buf.shape() != p.shape() {
                    return Err(Error::Checkpoint(format!("optimizer state {key} has wrong shape")));
                }
                dst.push(buf.data().to_vec());
            }
        }
        if store.len() != 2 * params.len() {
            return Err(Error::Checkpoint("optimizer state has extra entries".into()));
        }
        Ok(Self { m, v, t })
    }
}

/// One decoupled-weight-decay Adam update with bias correction.
/// `decay[i]` selects which parameters receive weight decay. Nothing is
/// modified if any gradient is non-finite.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    hp: &AdamHyper,
    decay: &[bool],
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || decay.len() != params.len() {
        return Err(Error::shape("gradient / state / parameter counts differ"));
    }
    for ((name, _), g) in params.iter().zip(grads) {
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient in {name}[{i}]; step aborted"
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let wd = if decay[i] { hp.weight_decay } else { 0.0 };
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j].to_f64().unwrap();
            let mut wj = w.to_f64().unwrap();
            wj -= lr * wd * wj;
            let mj = hp.beta1 * m[j].to_f64().unwrap() + (1.0 - hp.beta1) * gj;
            let vj = hp.beta2 * v[j].to_f64().unwrap() + (1.0 - hp.beta2) * gj * gj;
            m[j] = T::lit(mj);
            v[j] = T::lit(vj);
            wj -= lr * (mj / bc1) / ((vj / bc2).sqrt() + hp.eps);
            *w = T::lit(wj);
        }
    }
    Ok(())
}
