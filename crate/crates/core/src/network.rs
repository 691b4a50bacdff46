//! Backbone → MSC → 1×1 head → ×4 bilinear upsampling.
//!
//! The backbone is six 3×3 convolutions with ReLU, two of them stride 2, for
//! an output stride of 4. Inputs whose sides are not multiples of 4 are
//! zero-padded at the bottom/right and the logits cropped back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{ClassMask, NUM_CLASSES};
use crate::rng::Rng;
use crate::slice_conv::{self, kernel_dims, Direction};
use crate::tensor::kernels::Padding;
use crate::tensor::{Checkpoint, ParamStore, Parameter, Tape, Tensor, Var};

pub const OUTPUT_STRIDE: usize = 4;
pub const MIN_INPUT: usize = 8;
/// MSC kernels start at this fraction of the fan-in bound.
pub const MSC_INIT_SCALE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Channel counts of the three backbone stages.
    pub channels: [usize; 3],
    pub n_classes: usize,
    /// Slice kernel extent `k` (odd).
    pub kernel_size: usize,
    /// Enabled MSC directions in application order; empty is the baseline.
    pub directions: Vec<Direction>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            channels: [16, 32, 64],
            n_classes: NUM_CLASSES,
            kernel_size: 9,
            directions: Direction::ALL.to_vec(),
        }
    }
}

/// `(name, c_in, c_out, stride)` for each backbone conv.
fn backbone_layers(ch: [usize; 3]) -> [(&'static str, usize, usize, usize); 6] {
    [
        ("backbone.conv1", 1, ch[0], 1),
        ("backbone.conv2", ch[0], ch[0], 2),
        ("backbone.conv3", ch[0], ch[1], 1),
        ("backbone.conv4", ch[1], ch[1], 2),
        ("backbone.conv5", ch[1], ch[2], 1),
        ("backbone.conv6", ch[2], ch[2], 1),
    ]
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel size {} must be odd",
                self.kernel_size
            )));
        }
        for (i, d) in self.directions.iter().enumerate() {
            if self.directions[..i].contains(d) {
                return Err(Error::Config(format!("direction {d} listed twice")));
            }
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        self.channels[2]
    }

    /// `(name, shape, fan_in, scale)` of every parameter.
    fn param_specs(&self) -> Vec<(String, Vec<usize>, usize, f64)> {
        let mut specs = Vec::new();
        for (name, ci, co, _) in backbone_layers(self.channels) {
            specs.push((format!("{name}.weight"), vec![co, ci, 3, 3], ci * 9, 1.0));
            specs.push((format!("{name}.bias"), vec![co], 0, 0.0));
        }
        let c = self.feature_channels();
        for d in &self.directions {
            specs.push((
                d.param_name(),
                vec![c, c, self.kernel_size],
                c * self.kernel_size,
                MSC_INIT_SCALE,
            ));
        }
        specs.push(("head.weight".into(), vec![self.n_classes, c, 1, 1], c, 1.0));
        specs.push(("head.bias".into(), vec![self.n_classes], 0, 0.0));
        specs
    }
}

/// FNV-1a, used to give each parameter its own init stream.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sanet {
    arch: Architecture,
    params: ParamStore,
}

impl Sanet {
    /// Uniform `±sqrt(1/fan_in)` weights, zero biases. Each parameter draws
    /// from a stream keyed by its name, so enabling or disabling directions
    /// leaves the others' initial values untouched.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, fan_in, scale) in arch.param_specs() {
            let value = if fan_in == 0 {
                Tensor::zeros(&shape)
            } else {
                let bound = scale * (1.0 / fan_in as f64).sqrt();
                let mut rng = Rng::derive(seed, name_hash(&name));
                Tensor::uniform(&shape, -bound, bound, &mut rng)
            };
            params.insert(Parameter::new(name, value))?;
        }
        Ok(Sanet { arch, params })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let arch: Architecture = serde_json::from_value(ckpt.architecture.clone())
            .map_err(|e| Error::Format(format!("checkpoint architecture: {e}")))?;
        arch.validate()?;
        for (name, shape, _, _) in arch.param_specs() {
            let p = ckpt
                .params
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            if p.value.shape() != &shape[..] {
                return Err(Error::Format(format!(
                    "{name}: checkpoint shape {:?}, architecture expects {shape:?}",
                    p.value.shape()
                )));
            }
        }
        if ckpt.params.len() != arch.param_specs().len() {
            return Err(Error::Format(
                "checkpoint has parameters the architecture does not use".into(),
            ));
        }
        Ok(Sanet {
            arch,
            params: ckpt.params,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = self.params.clone();
        params.zero_grads();
        Checkpoint {
            architecture: serde_json::to_value(&self.arch).expect("architecture serializes"),
            params,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn bind(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
        tape.param(p)
    }

    /// Feature map of a `1×H×W` image with `H`, `W` multiples of 4.
    pub fn backbone(&self, tape: &mut Tape, image: Var) -> Result<Var> {
        let mut x = image;
        for (name, _, _, stride) in backbone_layers(self.arch.channels) {
            let w = self.bind(tape, &format!("{name}.weight"))?;
            let b = self.bind(tape, &format!("{name}.bias"))?;
            // stride-2 layers pad top/left only so even extents halve exactly
            let pad = if stride == 1 {
                Padding::uniform(1)
            } else {
                Padding {
                    top: 1,
                    left: 1,
                    bottom: 0,
                    right: 0,
                }
            };
            x = tape.conv2d_padded(x, w, Some(b), stride, pad)?;
            x = tape.relu(x)?;
        }
        Ok(x)
    }

    pub fn msc(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let kernels = self
            .arch
            .directions
            .iter()
            .map(|&d| Ok((d, self.bind(tape, &d.param_name())?)))
            .collect::<Result<Vec<_>>>()?;
        slice_conv::msc(tape, features, &kernels)
    }

    /// Logits `n_classes×H×W` for a `1×H×W` image.
    pub fn forward(&self, tape: &mut Tape, image: Var) -> Result<Var> {
        let (c, h, w) = tape.value(image).chw()?;
        if c != 1 || h < MIN_INPUT || w < MIN_INPUT {
            return Err(Error::Dimension(format!(
                "network input must be 1×H×W with H, W >= {MIN_INPUT}, got {c}×{h}×{w}"
            )));
        }
        let (hp, wp) = (
            h.next_multiple_of(OUTPUT_STRIDE),
            w.next_multiple_of(OUTPUT_STRIDE),
        );
        let x = if (hp, wp) != (h, w) {
            tape.pad(
                image,
                Padding {
                    top: 0,
                    left: 0,
                    bottom: hp - h,
                    right: wp - w,
                },
            )?
        } else {
            image
        };
        let feat = self.backbone(tape, x)?;
        let feat = self.msc(tape, feat)?;
        let hw = self.bind(tape, "head.weight")?;
        let hb = self.bind(tape, "head.bias")?;
        let logits = tape.conv2d(feat, hw, Some(hb), 1, 0)?;
        let up = tape.upsample_bilinear(logits, OUTPUT_STRIDE)?;
        if (hp, wp) != (h, w) {
            tape.crop(up, h, w)
        } else {
            Ok(up)
        }
    }

    /// Forward pass without keeping the tape.
    pub fn infer(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone())?;
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Zeroes one direction's kernel; used to show the ablation nesting.
    pub fn zero_direction(&mut self, d: Direction) -> Result<()> {
        let p = self
            .params
            .get_mut(&d.param_name())
            .ok_or_else(|| Error::Config(format!("direction {d} not enabled")))?;
        kernel_dims(&p.value)?;
        p.value.data_mut().fill(0.0);
        Ok(())
    }
}

/// Per-pixel argmax; ties go to the smaller class index.
pub fn predict_mask(logits: &Tensor) -> Result<ClassMask> {
    let (n, h, w) = logits.chw()?;
    if n > u8::MAX as usize {
        return Err(Error::Dimension(format!("{n} classes do not fit a mask")));
    }
    let d = logits.data();
    let plane = h * w;
    let mut out = vec![0u8; plane];
    for (i, o) in out.iter_mut().enumerate() {
        let mut best = d[i];
        for c in 1..n {
            let v = d[c * plane + i];
            if v > best {
                best = v;
                *o = c as u8;
            }
        }
    }
    ClassMask::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn small_arch(directions: Vec<Direction>) -> Architecture {
        Architecture {
            channels: [4, 6, 8],
            n_classes: 5,
            kernel_size: 3,
            directions,
        }
    }

    #[test]
    fn logits_shape_matches_input() {
        let net = Sanet::init(Architecture::default(), 1).unwrap();
        let img = Tensor::zeros(&[1, 64, 64]);
        assert_eq!(net.infer(&img).unwrap().shape(), &[5, 64, 64]);
        let small = Sanet::init(small_arch(Direction::ALL.to_vec()), 1).unwrap();
        for (h, w) in [(8, 8), (9, 13), (10, 8), (17, 22)] {
            let mut rng = Rng::new(h as u64);
            let img = Tensor::uniform(&[1, h, w], 0.0, 1.0, &mut rng);
            assert_eq!(small.infer(&img).unwrap().shape(), &[5, h, w]);
        }
    }

    #[test]
    fn backbone_geometry_and_zero_image() {
        let net = Sanet::init(small_arch(vec![]), 3).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 16, 12])).unwrap();
        let f = net.backbone(&mut tape, x).unwrap();
        assert_eq!(tape.value(f).shape(), &[8, 4, 3]);
        assert!(tape.value(f).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_small_inputs() {
        let net = Sanet::init(small_arch(vec![]), 3).unwrap();
        assert!(matches!(
            net.infer(&Tensor::zeros(&[1, 7, 16])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            net.infer(&Tensor::zeros(&[2, 16, 16])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn init_is_deterministic() {
        let a = Sanet::init(Architecture::default(), 9).unwrap();
        let b = Sanet::init(Architecture::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = Sanet::init(Architecture::default(), 10).unwrap();
        assert_ne!(a, c);
        let mut rng = Rng::new(0);
        let img = Tensor::uniform(&[1, 32, 32], 0.0, 1.0, &mut rng);
        let (ya, yb) = (a.infer(&img).unwrap(), b.infer(&img).unwrap());
        assert!(ya
            .data()
            .iter()
            .zip(yb.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn zero_msc_equals_baseline() {
        let mut full = Sanet::init(small_arch(Direction::ALL.to_vec()), 5).unwrap();
        for d in Direction::ALL {
            full.zero_direction(d).unwrap();
        }
        let base = Sanet::init(small_arch(vec![]), 5).unwrap();
        let mut rng = Rng::new(1);
        let img = Tensor::uniform(&[1, 20, 16], 0.0, 1.0, &mut rng);
        assert_eq!(full.infer(&img).unwrap(), base.infer(&img).unwrap());
    }

    #[test]
    fn subset_equals_zeroed_complement() {
        let vh = Direction::VERTICAL_HORIZONTAL.to_vec();
        let mut full = Sanet::init(small_arch(Direction::ALL.to_vec()), 8).unwrap();
        for d in Direction::DIAGONAL {
            full.zero_direction(d).unwrap();
        }
        let sub = Sanet::init(small_arch(vh), 8).unwrap();
        let mut rng = Rng::new(2);
        let img = Tensor::uniform(&[1, 16, 16], 0.0, 1.0, &mut rng);
        assert_eq!(full.infer(&img).unwrap(), sub.infer(&img).unwrap());
    }

    #[test]
    fn predict_mask_rules() {
        let mut l = Tensor::zeros(&[5, 2, 3]);
        assert!(predict_mask(&l).unwrap().data().iter().all(|&v| v == 0));
        l.data_mut()[3 * 6..4 * 6].fill(1.0);
        assert!(predict_mask(&l).unwrap().data().iter().all(|&v| v == 3));
        // 2×2 logits over 3 classes
        let l = Tensor::new(
            vec![3, 2, 2],
            vec![
                0.1, 0.9, 0.5, 0.2, //
                0.3, 0.1, 0.5, 0.7, //
                0.2, 0.8, 0.4, 0.7,
            ],
        )
        .unwrap();
        assert_eq!(predict_mask(&l).unwrap().data(), &[1, 0, 0, 1]);
    }

    #[test]
    fn checkpoint_roundtrip_and_validation() {
        let net =
            Sanet::init(small_arch(vec![Direction::TopDown, Direction::MainDown]), 4).unwrap();
        let back = Sanet::from_checkpoint(net.to_checkpoint()).unwrap();
        assert_eq!(back, net);
        let mut ck = net.to_checkpoint();
        ck.architecture["kernel_size"] = serde_json::json!(5);
        assert!(matches!(Sanet::from_checkpoint(ck), Err(Error::Format(_))));
    }

    #[test]
    fn end_to_end_gradient() {
        let mut net = Sanet::init(small_arch(Direction::ALL.to_vec()), 12).unwrap();
        // larger MSC weights than the default init so the check sees them
        for d in Direction::ALL {
            let mut rng = Rng::new(d.index() as u64);
            let p = net.params_mut().get_mut(&d.param_name()).unwrap();
            let shape = p.value.shape().to_vec();
            p.value = Tensor::uniform(&shape, -0.3, 0.3, &mut rng).with_grad();
        }
        let mut rng = Rng::new(77);
        let img = Tensor::uniform(&[1, 16, 16], 0.0, 1.0, &mut rng);
        let proj: Vec<f64> = (0..5 * 256).map(|_| rng.range(-1.0, 1.0)).collect();
        let r = grad_check(
            |t, v| {
                let y = net.forward(t, v)?;
                t.dot(y, proj.clone())
            },
            &img,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
