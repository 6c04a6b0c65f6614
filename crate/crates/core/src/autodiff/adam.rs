use std::collections::BTreeMap;

use super::{AutodiffError, ParamMap, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const ADAM_LR: f64 = 1e-4;

/// Moment buffers and step counter, keyed like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamMap, lr: f64) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, p)| (k.clone(), Tensor::zeros(p.shape())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update applied in place. Parameters without a
/// gradient entry are treated as having a zero gradient.
pub fn adam_step(
    params: &mut ParamMap,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<(), AutodiffError> {
    for (name, p) in params.iter() {
        let m = state
            .m
            .get(name)
            .ok_or_else(|| AutodiffError::ShapeMismatch(format!("no Adam moments for {name}")))?;
        if m.shape() != p.shape() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "Adam moments for {name} are {:?}, parameter is {:?}",
                m.shape(),
                p.shape()
            )));
        }
        if let Some(g) = grads.get(name) {
            if g.shape() != p.shape() {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "gradient for {name} is {:?}, parameter is {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let m = state.m.get_mut(name).unwrap().data_mut();
        let v = state.v.get_mut(name).unwrap().data_mut();
        let g = grads.get(name);
        for i in 0..p.len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data_mut()[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, t: Tensor) -> ParamMap {
        let mut m = ParamMap::new();
        m.insert(name.into(), t);
        m
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = one("w", Tensor::from_fn(&[2, 3], |i| i as f64));
        let before = p.clone();
        let mut st = AdamState::new(&p, ADAM_LR);
        let g = one("w", Tensor::zeros(&[2, 3]));
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one("w", Tensor::zeros(&[4]));
        let mut st = AdamState::new(&p, ADAM_LR);
        let g = one(
            "w",
            Tensor::new(vec![4], vec![0.3, -2.0, 1e-3, 50.0]).unwrap(),
        );
        adam_step(&mut p, &g, &mut st).unwrap();
        for (x, gi) in p["w"].data().iter().zip(g["w"].data()) {
            // m̂ = g and v̂ = g² at t = 1
            let want = -ADAM_LR * gi / (gi.abs() + ADAM_EPS);
            assert!((x - want).abs() < 1e-18);
            assert!((x.abs() - ADAM_LR).abs() < 1e-8);
        }
    }

    #[test]
    fn second_step_moments_follow_recurrence() {
        let mut p = one("w", Tensor::zeros(&[1]));
        let mut st = AdamState::new(&p, ADAM_LR);
        let g = one("w", Tensor::scalar(0.5));
        adam_step(&mut p, &g, &mut st).unwrap();
        adam_step(&mut p, &g, &mut st).unwrap();
        let m = 0.1 * 0.5 * (1.0 + 0.9);
        let v = 0.001 * 0.25 * (1.0 + 0.999);
        assert!((st.m["w"].item() - m).abs() < 1e-15);
        assert!((st.v["w"].item() - v).abs() < 1e-15);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn rejects_mismatched_gradient() {
        let mut p = one("w", Tensor::zeros(&[3]));
        let mut st = AdamState::new(&p, ADAM_LR);
        let g = one("w", Tensor::zeros(&[4]));
        assert!(adam_step(&mut p, &g, &mut st).is_err());
        assert_eq!(st.t, 0);
    }
}
