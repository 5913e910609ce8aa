//! The multi-path network: one shared encoder, alpha identical decoders
//! with independent parameters. Variant i for input x is D_i(E(x)).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::nn::graph::OperatorGraph;
use crate::nn::tensor::Tensor;

/// Encoder: conv3x3(1->8)+ReLU, stride-2 conv(8->16)+ReLU,
/// stride-2 conv(16->16)+ReLU. Outputs: [first-stage skip, features].
pub fn build_encoder() -> OperatorGraph {
    let mut g = OperatorGraph::new();
    let x = g.add_input("image");
    let c1 = g.add_conv("enc1", x, 1, 8, 3, 1, 1);
    let r1 = g.add_relu("enc1_relu", c1);
    let c2 = g.add_conv("enc2", r1, 8, 16, 3, 2, 1);
    let r2 = g.add_relu("enc2_relu", c2);
    let c3 = g.add_conv("enc3", r2, 16, 16, 3, 2, 1);
    let r3 = g.add_relu("enc3_relu", c3);
    g.set_output(r1);
    g.set_output(r3);
    g
}

/// Decoder: upsample+conv3x3(16->8)+ReLU, upsample+conv3x3(8->8)+ReLU,
/// skip-concat with the first encoder stage, conv1x1(16->1)+sigmoid.
/// Inputs: [features, skip].
pub fn build_decoder(name: &str) -> OperatorGraph {
    let mut g = OperatorGraph::new();
    let feat = g.add_input("features");
    let skip = g.add_input("skip");
    let u1 = g.add_upsample2x(&format!("{}_up1", name), feat);
    let c1 = g.add_conv(&format!("{}_conv1", name), u1, 16, 8, 3, 1, 1);
    let r1 = g.add_relu(&format!("{}_relu1", name), c1);
    let u2 = g.add_upsample2x(&format!("{}_up2", name), r1);
    let c2 = g.add_conv(&format!("{}_conv2", name), u2, 8, 8, 3, 1, 1);
    let r2 = g.add_relu(&format!("{}_relu2", name), c2);
    let cat = g.add_concat(&format!("{}_skip_concat", name), r2, skip);
    let c3 = g.add_conv(&format!("{}_head", name), cat, 16, 1, 1, 1, 0);
    let s = g.add_sigmoid(&format!("{}_sigmoid", name), c3);
    g.set_output(s);
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiPathNet {
    pub encoder: OperatorGraph,
    pub decoders: Vec<OperatorGraph>,
    pub alpha: usize,
}

impl MultiPathNet {
    /// Fresh net with seeded He-uniform init.
    pub fn new(alpha: usize, seed: u64) -> Result<Self> {
        if alpha == 0 {
            return Err(Error::config("alpha must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = build_encoder();
        encoder.init_params(&mut rng);
        let decoders = (0..alpha)
            .map(|i| {
                let mut d = build_decoder(&format!("dec{}", i + 1));
                d.init_params(&mut rng);
                d
            })
            .collect();
        Ok(MultiPathNet {
            encoder,
            decoders,
            alpha,
        })
    }

    /// Stable hash over the encoder and decoder operator layouts.
    pub fn architecture_hash(&self) -> u64 {
        let mut h = self.encoder.architecture_hash();
        h ^= crate::util::fnv1a64(&(self.alpha as u64).to_le_bytes());
        if let Some(d) = self.decoders.first() {
            h ^= d.architecture_hash().rotate_left(17);
        }
        h
    }

    /// All alpha prediction batches for an input batch.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let enc = self.encoder.forward(&[x])?;
        let skip = &enc.0[self.encoder.outputs[0]];
        let feat = &enc.0[self.encoder.outputs[1]];
        self.decoders
            .iter()
            .map(|d| {
                let acts = d.forward(&[feat, skip])?;
                Ok(acts.0[d.outputs[0]].clone())
            })
            .collect()
    }

    /// Single variant prediction.
    pub fn forward_variant(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let enc = self.encoder.forward(&[x])?;
        let skip = &enc.0[self.encoder.outputs[0]];
        let feat = &enc.0[self.encoder.outputs[1]];
        let d = &self.decoders[i];
        let acts = d.forward(&[feat, skip])?;
        Ok(acts.0[d.outputs[0]].clone())
    }
}

/// Stacks images into a [B,1,H,W] batch tensor.
pub fn batch_images(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::config("empty batch"))?;
    let (h, w) = (first.h(), first.w());
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::shape(format!(
            "image size {}x{} must be divisible by 4",
            h, w
        )));
    }
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.h() != h || img.w() != w {
            return Err(Error::shape("inconsistent image sizes in batch"));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::from_data(images.len(), 1, h, w, data)
}

/// Thresholds a [B,1,H,W] prediction batch at 0.5 into binary masks.
pub fn threshold_predictions(pred: &Tensor) -> Vec<Mask> {
    (0..pred.n)
        .map(|n| {
            let mut m = Mask::new(pred.h, pred.w);
            for h in 0..pred.h {
                for w in 0..pred.w {
                    if pred.get(n, 0, h, w) >= 0.5 {
                        m.set(h, w, 1);
                    }
                }
            }
            m
        })
        .collect()
}
