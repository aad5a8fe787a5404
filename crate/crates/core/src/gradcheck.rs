//! Central finite-difference check of every backward rule, in `f64`.
//!
//! Each case builds a small graph (every input ≤ 64 elements), reduces its
//! output to a scalar with a fixed random projection, and compares the
//! tape's gradients against `(f(x + ε) − f(x − ε)) / 2ε` for every element of
//! every differentiable input.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{aspp_forward, attention_gate, ConvParams, GateParams};
use crate::tensor::{ConvGeometry, Graph, OpKind, Shape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Corrupt one backward rule, to demonstrate the checker catches it.
    pub fault: Option<OpKind>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            epsilon: 1e-3,
            tolerance: 1e-3,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub elements: usize,
    pub passed: bool,
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

type Builder = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    /// Which inputs receive gradients; the rest are constants.
    differentiable: Vec<bool>,
    build: Box<Builder>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced ≥ 0.05 apart, so no window max is within ε of a tie.
fn well_separated(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<f64> {
    let shape = shape.into();
    let mut values: Vec<f64> = (0..shape.numel()).map(|i| i as f64 * 0.05 - 1.0).collect();
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
    Tensor::from_vec(shape, values).expect("sized from shape")
}

fn conv(weight: Var, bias: Option<Var>, geom: ConvGeometry) -> ConvParams {
    ConvParams { weight, bias, geom }
}

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let labels: Vec<u8> = (0..16).map(|_| rng.random_range(0..2u8)).collect();
    vec![
        Case {
            name: "conv2d",
            inputs: vec![
                uniform(rng, [1, 2, 4, 4], -1.0, 1.0),
                uniform(rng, [2, 2, 3, 3], -1.0, 1.0),
                uniform(rng, [2, 1, 1, 1], -1.0, 1.0),
            ],
            differentiable: vec![true; 3],
            build: Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), ConvGeometry::same(3, 1))),
        },
        Case {
            name: "conv2d (dilation 2)",
            inputs: vec![
                uniform(rng, [1, 1, 7, 7], -1.0, 1.0),
                uniform(rng, [2, 1, 3, 3], -1.0, 1.0),
                uniform(rng, [2, 1, 1, 1], -1.0, 1.0),
            ],
            differentiable: vec![true; 3],
            build: Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), ConvGeometry::same(3, 2))),
        },
        Case {
            name: "conv2d (1x1 stride 2)",
            inputs: vec![uniform(rng, [1, 3, 4, 4], -1.0, 1.0), uniform(rng, [2, 3, 1, 1], -1.0, 1.0)],
            differentiable: vec![true; 2],
            build: Box::new(|g, v| g.conv2d(v[0], v[1], None, ConvGeometry::pointwise(2))),
        },
        Case {
            name: "transposed_conv2d",
            inputs: vec![
                uniform(rng, [1, 2, 3, 3], -1.0, 1.0),
                uniform(rng, [2, 3, 2, 2], -1.0, 1.0),
                uniform(rng, [3, 1, 1, 1], -1.0, 1.0),
            ],
            differentiable: vec![true; 3],
            build: Box::new(|g, v| {
                let geom = ConvGeometry {
                    kernel_size: 2,
                    stride: 2,
                    padding: 0,
                    dilation: 1,
                };
                g.transposed_conv2d(v[0], v[1], Some(v[2]), geom)
            }),
        },
        Case {
            name: "max_pool2d",
            inputs: vec![well_separated(rng, [1, 2, 4, 4])],
            differentiable: vec![true],
            build: Box::new(|g, v| g.max_pool2d(v[0], 2)),
        },
        Case {
            name: "upsample_nearest",
            inputs: vec![uniform(rng, [1, 2, 3, 3], -1.0, 1.0)],
            differentiable: vec![true],
            build: Box::new(|g, v| g.upsample_nearest(v[0], 2)),
        },
        Case {
            name: "relu",
            inputs: vec![away_from_zero(rng, [1, 2, 4, 4])],
            differentiable: vec![true],
            build: Box::new(|g, v| Ok(g.relu(v[0]))),
        },
        Case {
            name: "sigmoid",
            inputs: vec![uniform(rng, [1, 2, 4, 4], -4.0, 4.0)],
            differentiable: vec![true],
            build: Box::new(|g, v| Ok(g.sigmoid(v[0]))),
        },
        Case {
            name: "softmax_channels",
            inputs: vec![uniform(rng, [1, 3, 4, 4], -2.0, 2.0)],
            differentiable: vec![true],
            build: Box::new(|g, v| Ok(g.softmax_channels(v[0]))),
        },
        Case {
            name: "concat_channels",
            inputs: vec![uniform(rng, [1, 2, 3, 3], -1.0, 1.0), uniform(rng, [1, 1, 3, 3], -1.0, 1.0)],
            differentiable: vec![true; 2],
            build: Box::new(|g, v| g.concat_channels(&[v[0], v[1]])),
        },
        Case {
            name: "add",
            inputs: vec![uniform(rng, [1, 2, 3, 3], -1.0, 1.0), uniform(rng, [1, 2, 3, 3], -1.0, 1.0)],
            differentiable: vec![true; 2],
            build: Box::new(|g, v| g.add(v[0], v[1])),
        },
        Case {
            name: "mul",
            inputs: vec![uniform(rng, [1, 2, 3, 3], -1.0, 1.0), uniform(rng, [1, 2, 3, 3], -1.0, 1.0)],
            differentiable: vec![true; 2],
            build: Box::new(|g, v| g.mul(v[0], v[1])),
        },
        Case {
            name: "mul_broadcast",
            inputs: vec![uniform(rng, [1, 3, 3, 3], -1.0, 1.0), uniform(rng, [1, 1, 3, 3], 0.0, 1.0)],
            differentiable: vec![true; 2],
            build: Box::new(|g, v| g.mul_broadcast(v[0], v[1])),
        },
        Case {
            name: "sum",
            inputs: vec![uniform(rng, [1, 2, 4, 4], -1.0, 1.0)],
            differentiable: vec![true],
            build: Box::new(|g, v| Ok(g.sum(v[0]))),
        },
        Case {
            name: "softmax_cross_entropy",
            inputs: vec![uniform(rng, [1, 2, 4, 4], -3.0, 3.0)],
            differentiable: vec![true],
            build: Box::new(move |g, v| g.softmax_cross_entropy(v[0], &labels)),
        },
        Case {
            name: "attention_gate (F = A + αA)",
            inputs: vec![
                uniform(rng, [1, 2, 4, 4], -1.0, 1.0),
                uniform(rng, [1, 3, 2, 2], -1.0, 1.0),
                uniform(rng, [2, 2, 1, 1], -1.0, 1.0),
                uniform(rng, [2, 1, 1, 1], -0.5, 0.5),
                uniform(rng, [2, 3, 1, 1], -1.0, 1.0),
                uniform(rng, [2, 1, 1, 1], -0.5, 0.5),
                uniform(rng, [1, 2, 1, 1], -1.0, 1.0),
                uniform(rng, [1, 1, 1, 1], -0.5, 0.5),
            ],
            differentiable: vec![true; 8],
            build: Box::new(|g, v| {
                let p = GateParams {
                    theta: conv(v[2], Some(v[3]), ConvGeometry::pointwise(2)),
                    phi: conv(v[4], Some(v[5]), ConvGeometry::pointwise(1)),
                    psi: conv(v[6], Some(v[7]), ConvGeometry::pointwise(1)),
                };
                Ok(attention_gate(g, v[0], v[1], &p)?.output)
            }),
        },
        Case {
            name: "aspp (project of concatenated dilated branches)",
            inputs: vec![
                uniform(rng, [1, 2, 4, 4], -1.0, 1.0),
                uniform(rng, [2, 2, 3, 3], -1.0, 1.0),
                uniform(rng, [2, 1, 1, 1], -0.5, 0.5),
                uniform(rng, [1, 2, 3, 3], -1.0, 1.0),
                uniform(rng, [1, 1, 1, 1], -0.5, 0.5),
                uniform(rng, [2, 3, 1, 1], -1.0, 1.0),
                uniform(rng, [2, 1, 1, 1], -0.5, 0.5),
            ],
            differentiable: vec![true; 7],
            build: Box::new(|g, v| {
                let branches = [
                    conv(v[1], Some(v[2]), ConvGeometry::same(3, 1)),
                    conv(v[3], Some(v[4]), ConvGeometry::same(3, 3)),
                ];
                let project = conv(v[5], Some(v[6]), ConvGeometry::pointwise(1));
                aspp_forward(g, v[0], &branches, &project)
            }),
        },
    ]
}

/// Scalar objective `Σ r ⊙ y` (or `y` itself when already scalar).
fn objective(g: &mut Graph<f64>, y: Var, projection: &Option<Tensor<f64>>) -> Result<Var, TensorError> {
    match projection {
        None => Ok(y),
        Some(r) => {
            let r = g.constant(r.clone());
            let ry = g.mul(y, r)?;
            Ok(g.sum(ry))
        }
    }
}

fn evaluate(case: &Case, inputs: &[Tensor<f64>], projection: &Option<Tensor<f64>>) -> Result<f64, TensorError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let y = (case.build)(&mut g, &vars)?;
    let loss = objective(&mut g, y, projection)?;
    Ok(g.value(loss).item())
}

fn check_case(case: &Case, opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<GradcheckResult, TensorError> {
    let mut g = Graph::new();
    g.inject_backward_fault(opts.fault);
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .zip(&case.differentiable)
        .map(|(t, &d)| if d { g.parameter(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let y = (case.build)(&mut g, &vars)?;
    let out_shape = g.shape(y);
    let projection = (out_shape.numel() != 1).then(|| uniform(rng, out_shape, -1.0, 1.0));
    let loss = objective(&mut g, y, &projection)?;
    g.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut elements = 0;
    for (i, &var) in vars.iter().enumerate() {
        if !case.differentiable[i] {
            continue;
        }
        let analytic = g
            .grad(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(case.inputs[i].shape()));
        for j in 0..case.inputs[i].numel() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[j] += opts.epsilon;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[j] -= opts.epsilon;
            let numeric =
                (evaluate(case, &plus, &projection)? - evaluate(case, &minus, &projection)?) / (2.0 * opts.epsilon);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
            elements += 1;
        }
    }
    Ok(GradcheckResult {
        name: case.name.to_owned(),
        max_rel_error: worst,
        elements,
        passed: worst < opts.tolerance,
    })
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub results: Vec<GradcheckResult>,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

/// Runs every case. Errors only if a case fails to build (a bug).
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport, TensorError> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cases = cases(&mut rng);
    let mut results = Vec::with_capacity(cases.len());
    for case in &cases {
        results.push(check_case(case, opts, &mut rng)?);
    }
    Ok(GradcheckReport {
        results,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes() {
        let report = run_gradcheck(&GradcheckOptions::default()).unwrap();
        for r in &report.results {
            assert!(r.passed, "{} max rel error {}", r.name, r.max_rel_error);
        }
        assert!(report.results.iter().all(|r| r.elements <= 64 * 8));
    }

    #[test]
    fn corrupted_rule_is_caught() {
        let opts = GradcheckOptions {
            fault: Some(OpKind::Sigmoid),
            ..Default::default()
        };
        let report = run_gradcheck(&opts).unwrap();
        let sig = report.results.iter().find(|r| r.name == "sigmoid").unwrap();
        assert!(!sig.passed);
        let relu = report.results.iter().find(|r| r.name == "relu").unwrap();
        assert!(relu.passed);
    }
}
