//! Central finite differences against the tape's reverse sweep, for every
//! primitive and for the three training losses end to end.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checks::CheckReport;
use super::train::init_model;
use super::RunConfig;
use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};
use crate::models::{batch_targets, masked_nll, ClassSpec, LossKind, Network, IMAGE_SIDE};

pub const GRAD_TOL: f64 = 1e-3;
const STEP: f64 = 1e-6;
/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-6;

type Builder<'a> = dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId, AutodiffError> + 'a;

fn scalar_at(inputs: &[Tensor], f: &Builder) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let root = f(&mut tape, &ids).expect("builder succeeds on perturbed inputs");
    tape.value(root).item()
}

/// Outcome of one finite-difference comparison.
enum Probe {
    Checked(f64),
    /// The one-sided slopes disagree: a ReLU or max-pool switch lies within
    /// one step of the point, so the function is not differentiable there.
    Kink,
}

fn probe(inputs: &mut [Tensor], at: (usize, usize), analytic: f64, f: &Builder) -> Probe {
    let (t, i) = at;
    let x = inputs[t].data()[i];
    let mut eval = |v: f64| {
        inputs[t].data_mut()[i] = v;
        scalar_at(inputs, f)
    };
    let plus = eval(x + STEP);
    let minus = eval(x - STEP);
    let mid = eval(x);
    let numeric = (plus - minus) / (2.0 * STEP);
    let (fwd, bwd) = ((plus - mid) / STEP, (mid - minus) / STEP);
    if (fwd - bwd).abs() > GRAD_TOL * fwd.abs().max(bwd.abs()).max(1e-3) {
        return Probe::Kink;
    }
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    Probe::Checked(rel)
}

/// Compares the reverse sweep of the scalar `f(inputs)` with central
/// differences at `coords` (tensor, flat index).
fn check_case(
    report: &mut CheckReport,
    kinks: &mut usize,
    name: &str,
    instance: usize,
    mut inputs: Vec<Tensor>,
    coords: &[(usize, usize)],
    f: &Builder,
) {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = match f(&mut tape, &ids) {
        Ok(r) => r,
        Err(e) => {
            report.failures += 1;
            report.counterexamples.push(format!("{name} #{instance}: forward failed: {e}"));
            return;
        }
    };
    let grads = tape.backward(root).expect("scalar root");
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| grads.get(id).cloned().expect("input gradient"))
        .collect();
    for &(t, i) in coords {
        let a = analytic[t].data()[i];
        match probe(&mut inputs, (t, i), a, f) {
            Probe::Checked(rel) => {
                report.comparisons += 1;
                if rel > report.max_error || rel.is_nan() {
                    report.max_error = rel;
                }
                if !(rel < GRAD_TOL) {
                    report.failures += 1;
                    if report.counterexamples.len() < 10 {
                        report.counterexamples.push(format!(
                            "{name} #{instance}: input {t}[{i}] analytic {a:e}, relative error {rel:e}"
                        ));
                    }
                }
            }
            Probe::Kink => *kinks += 1,
        }
    }
}

fn all_coords(inputs: &[Tensor]) -> Vec<(usize, usize)> {
    inputs
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.len()).map(move |i| (t, i)))
        .collect()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Values of either sign bounded away from 0 by at least 0.1.
fn off_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Distinct values, at least 0.05 apart, in random order.
fn spread(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05 + rng.gen_range(0.0..0.05)).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).expect("shape")
}

/// Reduces any output to a scalar through a fixed random projection, so
/// every output entry contributes with a distinct weight.
fn project(
    tape: &mut Tape,
    out: NodeId,
    weights: &Tensor,
) -> Result<NodeId, AutodiffError> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

type PrimitiveOp = Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId, AutodiffError>>;

struct Primitive {
    name: &'static str,
    inputs: Vec<Tensor>,
    out_shape: Vec<usize>,
    op: PrimitiveOp,
}

fn primitives(rng: &mut ChaCha8Rng) -> Vec<Primitive> {
    let r = rng.gen_range(1..=3);
    let c = rng.gen_range(1..=4);
    let k = rng.gen_range(1..=4);
    let n = rng.gen_range(1..=3);
    let mat = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(s, -1.0, 1.0, rng);
    let mut v = Vec::new();
    let mut add = |name, inputs, out_shape: Vec<usize>, op: PrimitiveOp| {
        v.push(Primitive { name, inputs, out_shape, op })
    };
    add("add", vec![mat(rng, &[r, c]), mat(rng, &[r, c])], vec![r, c], Box::new(|t, x| t.add(x[0], x[1])));
    add("sub", vec![mat(rng, &[r, c]), mat(rng, &[r, c])], vec![r, c], Box::new(|t, x| t.sub(x[0], x[1])));
    add("mul", vec![mat(rng, &[r, c]), mat(rng, &[r, c])], vec![r, c], Box::new(|t, x| t.mul(x[0], x[1])));
    let s = rng.gen_range(-2.0..2.0);
    add("scalar_mul", vec![mat(rng, &[r, c])], vec![r, c], Box::new(move |t, x| Ok(t.scalar_mul(x[0], s))));
    add("add_scalar", vec![mat(rng, &[r, c])], vec![r, c], Box::new(move |t, x| Ok(t.add_scalar(x[0], s))));
    add("matmul", vec![mat(rng, &[r, k]), mat(rng, &[k, c])], vec![r, c], Box::new(|t, x| t.matmul(x[0], x[1])));
    add("add_bias", vec![mat(rng, &[r, c]), mat(rng, &[c])], vec![r, c], Box::new(|t, x| t.add_bias(x[0], x[1])));
    let (ch, o, side, ks) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(4..=6), rng.gen_range(1..=3));
    add(
        "conv2d",
        vec![mat(rng, &[r, ch, side, side]), mat(rng, &[o, ch, ks, ks]), mat(rng, &[o])],
        vec![r, o, side - ks + 1, side - ks + 1],
        Box::new(|t, x| t.conv2d(x[0], x[1], x[2])),
    );
    let half = rng.gen_range(1..=3);
    add(
        "maxpool2x2",
        vec![spread(&[r, 2, 2 * half, 2 * half], rng)],
        vec![r, 2, half, half],
        Box::new(|t, x| t.maxpool2x2(x[0])),
    );
    add("relu", vec![off_zero(&[r, c], rng)], vec![r, c], Box::new(|t, x| Ok(t.relu(x[0]))));
    add("sigmoid", vec![uniform(&[r, c], -4.0, 4.0, rng)], vec![r, c], Box::new(|t, x| Ok(t.sigmoid(x[0]))));
    add("softmax", vec![uniform(&[r, c + 1], -3.0, 3.0, rng)], vec![r, c + 1], Box::new(|t, x| Ok(t.softmax(x[0]))));
    add("log", vec![uniform(&[r, c], 0.2, 3.0, rng)], vec![r, c], Box::new(|t, x| t.log(x[0])));
    add(
        "clamp_min",
        vec![off_zero(&[r, c], rng)],
        vec![r, c],
        Box::new(|t, x| Ok(t.clamp_min(x[0], 0.0))),
    );
    add("sum", vec![mat(rng, &[r, c])], vec![], Box::new(|t, x| Ok(t.sum(x[0]))));
    add("mean", vec![mat(rng, &[r, c])], vec![], Box::new(|t, x| Ok(t.mean(x[0]))));
    add("concat", vec![mat(rng, &[r, c]), mat(rng, &[r, k])], vec![r, c + k], Box::new(|t, x| t.concat(x[0], x[1])));
    add("reshape", vec![mat(rng, &[r, c, 2])], vec![r, 2 * c], Box::new(move |t, x| t.reshape(x[0], &[r, 2 * c])));
    let cols: Vec<usize> = (0..c + 1).map(|_| rng.gen_range(0..c)).collect();
    let width = cols.len();
    add(
        "select_cols",
        vec![mat(rng, &[r, c])],
        vec![r, width],
        Box::new(move |t, x| t.select_cols(x[0], &cols)),
    );
    add(
        "normalize_rows",
        vec![uniform(&[r, c + 1], 0.1, 2.0, rng)],
        vec![r, c + 1],
        Box::new(|t, x| t.normalize_rows(x[0])),
    );
    add(
        "factorize",
        vec![uniform(&[r, n], 0.05, 0.95, rng)],
        vec![r, 1 << n],
        Box::new(|t, x| t.factorize(x[0])),
    );
    v
}

/// Names of every primitive the suite covers.
pub fn primitive_names() -> Vec<&'static str> {
    primitives(&mut ChaCha8Rng::seed_from_u64(0)).iter().map(|p| p.name).collect()
}

fn random_images(batch: usize, rng: &mut impl Rng) -> Tensor {
    uniform(&[batch, 1, IMAGE_SIDE, IMAGE_SIDE], 0.0, 1.0, rng)
}

/// Full loss for `kind` as a function of the model parameters.
fn pipeline_case(
    kind: LossKind,
    rng: &mut ChaCha8Rng,
) -> (Vec<Tensor>, Vec<(usize, usize)>, Box<Builder<'static>>) {
    let config = RunConfig {
        shared_encoder: rng.gen_bool(0.5),
        ..RunConfig::with_loss(kind)
    };
    let model = init_model(&config, rng);
    let batch = 3;
    let red = random_images(batch, rng);
    let green = random_images(batch, rng);
    let mut labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..2)).collect();
    labels[0] = 1;
    let spec = ClassSpec::traffic_light();
    let (mask, weights) = batch_targets(kind, &spec, &labels);
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let mut coords = Vec::new();
    for (t, p) in params.iter().enumerate() {
        for _ in 0..2 {
            coords.push((t, rng.gen_range(0..p.len())));
        }
    }
    let f = move |tape: &mut Tape, ids: &[NodeId]| {
        let r = tape.constant(red.clone());
        let g = tape.constant(green.clone());
        let q = model.world_probs_on(tape, ids, r, g)?;
        masked_nll(tape, q, mask.clone(), weights.clone())
    };
    (params, coords, Box::new(f))
}

/// Runs `instances` random instances of every primitive and of the
/// semantic, truncated and disjunctive pipelines.
pub fn gradient_check(instances: usize, seed: u64) -> CheckReport {
    let start = Instant::now();
    let mut total = CheckReport::new("gradients", 0, GRAD_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinks = 0usize;
    for name in primitive_names() {
        let mut report = CheckReport::new(name, instances, GRAD_TOL);
        for instance in 0..instances {
            let prim = primitives(&mut rng).into_iter().find(|p| p.name == name).expect("known primitive");
            let proj = uniform(&prim.out_shape, -1.0, 1.0, &mut rng);
            let op = prim.op;
            let f = move |t: &mut Tape, x: &[NodeId]| {
                let out = op(t, x)?;
                if t.value(out).is_scalar() {
                    Ok(out)
                } else {
                    project(t, out, &proj)
                }
            };
            let coords = all_coords(&prim.inputs);
            check_case(&mut report, &mut kinks, name, instance, prim.inputs, &coords, &f);
        }
        total.merge(report);
    }
    for kind in LossKind::ALL {
        let name = match kind {
            LossKind::Semantic => "semantic pipeline",
            LossKind::TruncatedSemantic => "truncated pipeline",
            LossKind::Disjunctive => "disjunctive pipeline",
        };
        let mut report = CheckReport::new(name, instances, GRAD_TOL);
        for instance in 0..instances {
            let (params, coords, f) = pipeline_case(kind, &mut rng);
            check_case(&mut report, &mut kinks, name, instance, params, &coords, &*f);
        }
        total.merge(report);
    }
    if kinks > 0 {
        total.counterexamples.push(format!("note: {kinks} probes skipped at non-differentiable points"));
    }
    total.elapsed = start.elapsed();
    total
}
