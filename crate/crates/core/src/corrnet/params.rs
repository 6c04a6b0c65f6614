use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorrnetError, ModelConfig};
use crate::autodiff::{ParamMap, Tape, Tensor, Var};

/// Channels of the three image-encoder convolution stages.
pub(crate) const CONV_CHANNELS: [usize; 3] = [8, 16, 32];
/// Flattened encoder output: 32 channels over a 7×5×5 grid.
pub(crate) const CONV_FLAT: usize = 32 * 7 * 5 * 5;
/// Per-vertex interpolator input: position, offset and time.
pub(crate) const INTERP_INPUT: usize = 7;

/// Named network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: ParamMap,
}

/// How a parameter is initialised.
#[derive(Clone, Copy)]
enum Init {
    /// Uniform in `±1/√fan_in`.
    FanIn(usize),
    Zero,
}

fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let w = config.geo_width;
    let mut out = Vec::new();
    let linear = |out: &mut Vec<(String, Vec<usize>, Init)>,
                  name: &str,
                  fan_in: usize,
                  fan_out: usize,
                  zero: bool| {
        let init = if zero {
            Init::Zero
        } else {
            Init::FanIn(fan_in)
        };
        out.push((format!("{name}.w"), vec![fan_in, fan_out], init));
        out.push((format!("{name}.b"), vec![fan_out], Init::Zero));
    };
    for (net, input) in [("feat", 3), ("interp", INTERP_INPUT)] {
        linear(&mut out, &format!("{net}.lift"), input, w, false);
        for k in 0..config.geo_depth {
            let p = format!("{net}.block{k}");
            // First MLP layer acts on [h_i ‖ h_j − h_i], fan-in 2w, split
            // into the blocks applied to each half.
            out.push((format!("{p}.wa"), vec![w, w], Init::FanIn(2 * w)));
            out.push((format!("{p}.wb"), vec![w, w], Init::FanIn(2 * w)));
            out.push((format!("{p}.b1"), vec![w], Init::Zero));
            linear(&mut out, &format!("{p}.l2"), w, w, false);
        }
    }
    linear(&mut out, "interp.head", w, 3, true);
    if config.use_image_features {
        let mut cin = 1;
        for (s, &cout) in CONV_CHANNELS.iter().enumerate() {
            out.push((
                format!("img.conv{s}.w"),
                vec![cout, cin, 3, 3, 3],
                Init::FanIn(cin * 27),
            ));
            out.push((format!("img.conv{s}.b"), vec![cout], Init::Zero));
            cin = cout;
        }
        linear(&mut out, "img.fc", CONV_FLAT, config.img_width, false);
    }
    out
}

impl ModelParams {
    /// Seeded initialisation. Parameters are drawn in layout order from one
    /// stream, so the same `(config, seed)` always gives the same weights.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, CorrnetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = ParamMap::new();
        for (name, shape, init) in layout(config) {
            let t = match init {
                Init::Zero => Tensor::zeros(&shape),
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound))
                }
            };
            tensors.insert(name, t);
        }
        Ok(Self { tensors })
    }

    /// Checks that every expected tensor is present with the right shape
    /// and finite, and that nothing unexpected is present.
    pub fn check(&self, config: &ModelConfig) -> Result<(), CorrnetError> {
        config.validate()?;
        let expected = layout(config);
        if expected.len() != self.tensors.len() {
            let extra = self
                .tensors
                .keys()
                .find(|k| !expected.iter().any(|(n, _, _)| n == *k))
                .cloned()
                .unwrap_or_else(|| "<count>".into());
            return Err(CorrnetError::BadParameter(extra));
        }
        for (name, shape, _) in expected {
            match self.tensors.get(&name) {
                Some(t) if t.shape() == shape.as_slice() && t.is_finite() => {}
                _ => return Err(CorrnetError::BadParameter(name)),
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Places every tensor on `tape`, as trainable parameters or constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundParams<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.param(k, t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Parameters living on one tape.
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>, CorrnetError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| CorrnetError::BadParameter(name.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_checked() {
        let c = ModelConfig {
            geo_width: 8,
            geo_depth: 2,
            ..ModelConfig::default()
        };
        let a = ModelParams::init(&c, 3).unwrap();
        assert_eq!(a, ModelParams::init(&c, 3).unwrap());
        assert_ne!(a, ModelParams::init(&c, 4).unwrap());
        a.check(&c).unwrap();
        assert!(a.tensors["interp.head.w"].data().iter().all(|&v| v == 0.0));
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.tensors["feat.lift.w"].max_abs() <= bound);
        let img = ModelConfig {
            use_image_features: true,
            ..c.clone()
        };
        assert!(a.check(&img).is_err());
        assert_eq!(
            ModelParams::init(&img, 3).unwrap().tensors["img.fc.w"].shape(),
            &[5600, 64]
        );
    }

    #[test]
    fn default_parameter_count() {
        let p = ModelParams::init(&ModelConfig::default(), 0).unwrap();
        // 6 blocks of three 128×128 layers in each of the two graph networks
        // plus lifts and the head.
        let block = 3 * 128 * 128 + 2 * 128;
        let want = 2 * 6 * block + (3 * 128 + 128) + (7 * 128 + 128) + (128 * 3 + 3);
        assert_eq!(p.count(), want);
    }
}
