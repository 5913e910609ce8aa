//! Central finite-difference checks for every parameter gradient.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::nn::graph::{Activations, Op, OperatorGraph};
use crate::nn::net::MultiPathNet;
use crate::nn::tensor::Tensor;
use crate::nn::train::batch_soft_dice;

pub const FD_STEP: f64 = 1e-4;
const COORDS_PER_PARAM: usize = 20;

/// How a (possibly multi-output) graph is reduced to a scalar loss.
pub enum Scalarizer<'a> {
    /// Soft Dice of the single [B,1,H,W] output against reference masks.
    SoftDice(Vec<&'a Mask>),
    /// Seeded random-weighted sum of every output element; exercises the
    /// full Jacobian of operators whose outputs are not probabilities.
    WeightedSum(u64),
}

fn weights_for(t: &Tensor, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..t.data.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

fn scalarize(outputs: &[&Tensor], scal: &Scalarizer) -> Result<(f64, Vec<Tensor>)> {
    match scal {
        Scalarizer::SoftDice(refs) => {
            if outputs.len() != 1 {
                return Err(Error::shape("soft-dice scalarizer needs one output"));
            }
            let (loss, grad) = batch_soft_dice(outputs[0], refs)?;
            Ok((loss, vec![grad]))
        }
        Scalarizer::WeightedSum(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(outputs.len());
            for out in outputs {
                let w = weights_for(out, &mut rng);
                total += out.data.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let mut g = Tensor::zeros(out.n, out.c, out.h, out.w);
                g.data.copy_from_slice(&w);
                grads.push(g);
            }
            Ok((total, grads))
        }
    }
}

/// Activation signs of every ReLU input. Central differences are only
/// meaningful where the loss is smooth; a coordinate whose perturbation
/// flips any ReLU across its kink is skipped by the checks below.
fn relu_signs(graph: &OperatorGraph, acts: &Activations) -> Vec<bool> {
    let mut signs = Vec::new();
    for node in &graph.nodes {
        if matches!(node.op, Op::Relu) {
            signs.extend(acts.0[node.inputs[0]].data.iter().map(|&v| v > 0.0));
        }
    }
    signs
}

fn graph_loss(
    graph: &OperatorGraph,
    inputs: &[&Tensor],
    scal: &Scalarizer,
) -> Result<(f64, Vec<bool>)> {
    let acts = graph.forward(inputs)?;
    let outs: Vec<&Tensor> = graph.outputs.iter().map(|&i| &acts.0[i]).collect();
    Ok((scalarize(&outs, scal)?.0, relu_signs(graph, &acts)))
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Max relative error between analytic and central-FD gradients over a
/// random sample of at least 20 coordinates per parameter.
#[allow(clippy::needless_range_loop)]
pub fn gradient_check(
    graph: &mut OperatorGraph,
    inputs: &[&Tensor],
    scal: &Scalarizer,
    seed: u64,
) -> Result<f64> {
    let acts = graph.forward(inputs)?;
    let outs: Vec<&Tensor> = graph.outputs.iter().map(|&i| &acts.0[i]).collect();
    let (loss, out_grads) = scalarize(&outs, scal)?;
    if !loss.is_finite() {
        return Err(Error::config("gradient_check: non-finite loss"));
    }
    graph.zero_grads();
    graph.backward(&acts, &out_grads)?;
    let analytic: Vec<Vec<f64>> = graph.params.iter().map(|p| p.grad.clone()).collect();
    let base_signs = relu_signs(graph, &acts);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    for pi in 0..graph.params.len() {
        let len = graph.params[pi].data.len();
        let mut coords: Vec<usize> = (0..len).collect();
        coords.shuffle(&mut rng);
        coords.truncate(COORDS_PER_PARAM.max(1).min(len));
        for j in coords {
            let orig = graph.params[pi].data[j];
            graph.params[pi].data[j] = orig + FD_STEP;
            let (lp, signs_p) = graph_loss(graph, inputs, scal)?;
            graph.params[pi].data[j] = orig - FD_STEP;
            let (lm, signs_m) = graph_loss(graph, inputs, scal)?;
            graph.params[pi].data[j] = orig;
            if signs_p != base_signs || signs_m != base_signs {
                continue;
            }
            let fd = (lp - lm) / (2.0 * FD_STEP);
            if !fd.is_finite() {
                return Err(Error::config("gradient_check: non-finite FD value"));
            }
            max_err = max_err.max(relative_error(analytic[pi][j], fd));
        }
    }
    Ok(max_err)
}

fn net_loss(net: &MultiPathNet, x: &Tensor, refs: &[&Mask]) -> Result<(f64, Vec<bool>)> {
    let enc_acts = net.encoder.forward(&[x])?;
    let mut signs = relu_signs(&net.encoder, &enc_acts);
    let skip = &enc_acts.0[net.encoder.outputs[0]];
    let feat = &enc_acts.0[net.encoder.outputs[1]];
    let mut total = 0.0;
    for d in &net.decoders {
        let dec_acts = d.forward(&[feat, skip])?;
        signs.extend(relu_signs(d, &dec_acts));
        total += batch_soft_dice(&dec_acts.0[d.outputs[0]], refs)?.0;
    }
    Ok((total, signs))
}

/// Full multi-path check: loss is the sum of every decoder's soft Dice, so
/// encoder gradients accumulate across all paths.
pub fn gradient_check_net(
    net: &mut MultiPathNet,
    x: &Tensor,
    refs: &[&Mask],
    seed: u64,
) -> Result<f64> {
    net.encoder.zero_grads();
    for d in &mut net.decoders {
        d.zero_grads();
    }
    let enc_acts = net.encoder.forward(&[x])?;
    let skip = enc_acts.0[net.encoder.outputs[0]].clone();
    let feat = enc_acts.0[net.encoder.outputs[1]].clone();
    for d in &mut net.decoders {
        let dec_acts = d.forward(&[&feat, &skip])?;
        let pred = &dec_acts.0[d.outputs[0]];
        let (_, grad) = batch_soft_dice(pred, refs)?;
        let input_grads = d.backward(&dec_acts, &[grad])?;
        net.encoder
            .backward(&enc_acts, &[input_grads[1].clone(), input_grads[0].clone()])?;
    }
    let enc_analytic: Vec<Vec<f64>> = net.encoder.params.iter().map(|p| p.grad.clone()).collect();
    let dec_analytic: Vec<Vec<Vec<f64>>> = net
        .decoders
        .iter()
        .map(|d| d.params.iter().map(|p| p.grad.clone()).collect())
        .collect();
    let base_signs = net_loss(net, x, refs)?.1;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    // (graph selector, param index) pairs: encoder is usize::MAX.
    let mut targets: Vec<(usize, usize)> = Vec::new();
    for pi in 0..net.encoder.params.len() {
        targets.push((usize::MAX, pi));
    }
    for (di, d) in net.decoders.iter().enumerate() {
        for pi in 0..d.params.len() {
            targets.push((di, pi));
        }
    }
    for (sel, pi) in targets {
        let len = if sel == usize::MAX {
            net.encoder.params[pi].data.len()
        } else {
            net.decoders[sel].params[pi].data.len()
        };
        let mut coords: Vec<usize> = (0..len).collect();
        coords.shuffle(&mut rng);
        coords.truncate(COORDS_PER_PARAM.max(1).min(len));
        for j in coords {
            let read = |net: &MultiPathNet| {
                if sel == usize::MAX {
                    net.encoder.params[pi].data[j]
                } else {
                    net.decoders[sel].params[pi].data[j]
                }
            };
            let write = |net: &mut MultiPathNet, v: f64| {
                if sel == usize::MAX {
                    net.encoder.params[pi].data[j] = v;
                } else {
                    net.decoders[sel].params[pi].data[j] = v;
                }
            };
            let orig = read(net);
            write(net, orig + FD_STEP);
            let (lp, signs_p) = net_loss(net, x, refs)?;
            write(net, orig - FD_STEP);
            let (lm, signs_m) = net_loss(net, x, refs)?;
            write(net, orig);
            if signs_p != base_signs || signs_m != base_signs {
                continue;
            }
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let analytic = if sel == usize::MAX {
                enc_analytic[pi][j]
            } else {
                dec_analytic[sel][pi][j]
            };
            max_err = max_err.max(relative_error(analytic, fd));
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::net::build_decoder;
    use rand::Rng;

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(n, c, h, w);
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        t
    }

    fn random_refs(n: usize, h: usize, w: usize, seed: u64) -> Vec<Mask> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut m = Mask::new(h, w);
                for r in 0..h {
                    for c in 0..w {
                        if rng.gen_bool(0.4) {
                            m.set(r, c, 1);
                        }
                    }
                }
                m
            })
            .collect()
    }

    fn init(g: &mut OperatorGraph, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.init_params(&mut rng);
    }

    #[test]
    fn identity_conv_is_machine_exact() {
        let mut g = OperatorGraph::new();
        let x = g.add_input("x");
        let c = g.add_conv("id", x, 1, 1, 1, 1, 0);
        g.set_output(c);
        g.params[0].data[0] = 1.0;
        let input = random_tensor(1, 1, 8, 8, 1);
        let err = gradient_check(&mut g, &[&input], &Scalarizer::WeightedSum(7), 3).unwrap();
        assert!(err < 1e-7, "err {}", err);
    }

    #[test]
    fn single_conv_with_soft_dice() {
        let mut g = OperatorGraph::new();
        let x = g.add_input("x");
        let c = g.add_conv("conv", x, 1, 1, 3, 1, 1);
        let s = g.add_sigmoid("sig", c);
        g.set_output(s);
        init(&mut g, 2);
        let input = random_tensor(2, 1, 8, 8, 1);
        let refs = random_refs(2, 8, 8, 5);
        let refs: Vec<&Mask> = refs.iter().collect();
        let err = gradient_check(&mut g, &[&input], &Scalarizer::SoftDice(refs), 3).unwrap();
        assert!(err < 1e-4, "err {}", err);
    }

    #[test]
    fn each_operator_type_passes() {
        // relu
        let mut g = OperatorGraph::new();
        let x = g.add_input("x");
        let r = g.add_relu("relu", x);
        g.set_output(r);
        let input = random_tensor(1, 2, 6, 6, 10);
        let err = gradient_check(&mut g, &[&input], &Scalarizer::WeightedSum(1), 4).unwrap();
        assert!(err < 1e-4, "relu err {}", err);

        // sigmoid
        let mut g = OperatorGraph::new();
        let x = g.add_input("x");
        let s = g.add_sigmoid("sig", x);
        g.set_output(s);
        let err = gradient_check(&mut g, &[&input], &Scalarizer::WeightedSum(2), 4).unwrap();
        assert!(err < 1e-4, "sigmoid err {}", err);

        // upsample + conv (stride 2), concat, add
        let mut g = OperatorGraph::new();
        let a = g.add_input("a");
        let c1 = g.add_conv("down", a, 2, 4, 3, 2, 1);
        let r1 = g.add_relu("relu", c1);
        let u = g.add_upsample2x("up", r1);
        let c2 = g.add_conv("mix", u, 4, 2, 3, 1, 1);
        let cat = g.add_concat("cat", c2, a);
        let c3 = g.add_conv("head", cat, 4, 2, 1, 1, 0);
        let sum = g.add_add("res", c3, a);
        g.set_output(sum);
        init(&mut g, 3);
        let err = gradient_check(&mut g, &[&input], &Scalarizer::WeightedSum(5), 4).unwrap();
        assert!(err < 1e-4, "composite err {}", err);
    }

    #[test]
    fn decoder_graph_passes() {
        let mut g = build_decoder("dec");
        init(&mut g, 4);
        let feat = random_tensor(1, 16, 4, 4, 20);
        let skip = random_tensor(1, 8, 16, 16, 21);
        let refs = random_refs(1, 16, 16, 22);
        let refs: Vec<&Mask> = refs.iter().collect();
        let err = gradient_check(&mut g, &[&feat, &skip], &Scalarizer::SoftDice(refs), 6).unwrap();
        assert!(err < 1e-4, "decoder err {}", err);
    }

    #[test]
    fn full_net_alpha2_passes() {
        let mut net = MultiPathNet::new(2, 77).unwrap();
        let x = random_tensor(1, 1, 16, 16, 30);
        let refs = random_refs(1, 16, 16, 31);
        let refs: Vec<&Mask> = refs.iter().collect();
        let err = gradient_check_net(&mut net, &x, &refs, 8).unwrap();
        assert!(err < 1e-3, "net err {}", err);
    }
}
