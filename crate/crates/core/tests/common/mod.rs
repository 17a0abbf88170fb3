#![allow(dead_code)]

use distillkit::losses::{
    at_loss, at_loss_grad, attention_map, attention_map_grad, cross_entropy, cross_entropy_grad,
    kd_loss, kd_loss_grad, total_loss,
};
use distillkit::netblocks::{BlockSpec, Model, ModelSpec, WidthConfig};
use distillkit::nn::gradcheck::{avoid_relu6_kinks, finite_difference, DEFAULT_STEP};
use distillkit::nn::layer::{BatchNorm, Conv2d, Dense};
use distillkit::nn::{Layer, Mode};
use distillkit::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRADCHECK_TOL: f64 = 1e-4;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`; insensitive to entries that are zero up
/// to rounding.
pub fn rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let diff = analytic.sub(numeric).unwrap().max_abs();
    let scale = analytic.max_abs().max(numeric.max_abs());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug)]
pub struct Check {
    pub name: String,
    pub rel: f64,
}

/// `<r, layer(x)>` checked against the layer's backward for the input and
/// every parameter.
fn check_layer(
    name: &str,
    layer: Layer<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Vec<Check> {
    let mut l = layer;
    let y = l.forward(x, mode).unwrap();
    let r = random(y.shape(), rng);
    let grads = l.backward(&r).unwrap();
    let objective =
        |l: &mut Layer<f64>, x: &Tensor<f64>| l.forward(x, mode).unwrap().dot(&r).unwrap();

    let mut out = Vec::new();
    let mut probe = l.clone();
    let fd = finite_difference(|t| objective(&mut probe, t), x, DEFAULT_STEP);
    out.push(Check {
        name: format!("{name}/input"),
        rel: rel_err(&grads.input_grad, &fd),
    });
    let names = l.param_names();
    for (p, g) in grads.param_grads.iter().enumerate() {
        let base = l.params()[p].clone();
        let fd = finite_difference(
            |t| {
                let mut probe = l.clone();
                *probe.params_mut()[p] = t.clone();
                objective(&mut probe, x)
            },
            &base,
            DEFAULT_STEP,
        );
        out.push(Check {
            name: format!("{name}/{}", names[p]),
            rel: rel_err(g, &fd),
        });
    }
    out
}

/// Stem, one expanding inverted residual with a skip, one projecting
/// inverted residual and a classifier, at float64.
pub fn tiny_network(seed: u64) -> Model<f64> {
    let spec = ModelSpec {
        name: "gradcheck".into(),
        family: WidthConfig::micro(8, 2, 6),
        blocks_removed: 0,
        input_shape: [3, 6, 6],
        num_classes: 4,
        blocks: vec![
            BlockSpec::conv_bn_relu(0, 3, 4, 3, 1),
            BlockSpec::inverted_residual(1, 4, 4, 1, 3),
            BlockSpec::inverted_residual(2, 4, 5, 2, 1),
            BlockSpec::classifier(3, 5, 4),
        ],
        attention_source: 1,
    };
    spec.validate().unwrap();
    Model::new(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

struct Objective {
    labels: Vec<usize>,
    teacher_logits: Tensor<f64>,
    teacher_map: Tensor<f64>,
    alpha: f64,
    temperature: f64,
    gamma: f64,
    power: u32,
}

impl Objective {
    fn value(&self, m: &mut Model<f64>, x: &Tensor<f64>) -> f64 {
        let (logits, act) = m.forward_with_tap(x, Mode::Train, 1).unwrap();
        let ce = cross_entropy(&logits, &self.labels).unwrap();
        let kl = kd_loss(&logits, &self.teacher_logits, self.temperature).unwrap();
        let at = at_loss(&attention_map(&act, self.power).unwrap(), &self.teacher_map).unwrap();
        total_loss(ce, kl, at, self.alpha, self.gamma)
            .unwrap()
            .total
    }

    fn gradients(&self, m: &mut Model<f64>, x: &Tensor<f64>) -> (Vec<Tensor<f64>>, Tensor<f64>) {
        let (logits, act) = m.forward_with_tap(x, Mode::Train, 1).unwrap();
        let mut g = cross_entropy_grad(&logits, &self.labels)
            .unwrap()
            .scale(1.0 - self.alpha);
        g.axpy(
            self.alpha,
            &kd_loss_grad(&logits, &self.teacher_logits, self.temperature).unwrap(),
        )
        .unwrap();
        let map = attention_map(&act, self.power).unwrap();
        let g_map = at_loss_grad(&map, &self.teacher_map)
            .unwrap()
            .scale(self.gamma);
        let g_act = attention_map_grad(&act, self.power, &g_map).unwrap();
        let grads = m.backward(&g, Some((1, &g_act))).unwrap();
        (grads.params, grads.input)
    }
}

/// Distillation objective (with and without the attention term) through the
/// whole network: input gradient and every parameter tensor.
fn check_network(name: &str, gamma: f64, rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut model = tiny_network(rng.gen());
    let mut x = random(&[3, 3, 6, 6], rng);
    avoid_relu6_kinks(&mut x, 1e-3);
    let obj = Objective {
        labels: vec![0, 3, 1],
        teacher_logits: random(&[3, 4], rng).scale(3.0),
        teacher_map: attention_map(&random(&[3, 4, 6, 6], rng), 2).unwrap(),
        alpha: 0.4,
        temperature: 2.5,
        gamma,
        power: 2,
    };
    let (params, input) = obj.gradients(&mut model, &x);
    let mut out = Vec::new();
    let mut probe = model.clone();
    let fd = finite_difference(|t| obj.value(&mut probe, t), &x, DEFAULT_STEP);
    out.push(Check {
        name: format!("{name}/input"),
        rel: rel_err(&input, &fd),
    });
    let names = model.param_names();
    for (p, g) in params.iter().enumerate() {
        let base = model.params()[p].clone();
        let fd = finite_difference(
            |t| {
                let mut probe = model.clone();
                *probe.params_mut()[p] = t.clone();
                obj.value(&mut probe, &x)
            },
            &base,
            DEFAULT_STEP,
        );
        out.push(Check {
            name: format!("{name}/{}", names[p]),
            rel: rel_err(g, &fd),
        });
    }
    out
}

/// Finite-difference checks of every primitive, both losses on their own,
/// and both composed objectives through a small inverted-residual network.
pub fn gradcheck_suite(seed: u64) -> Vec<Check> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let x = random(&[2, 3, 5, 5], rng);
    for (stride, padding) in [(1, 1), (2, 1), (1, 0)] {
        let conv = Layer::Conv(Conv2d::new(
            random(&[4, 3, 3, 3], rng),
            stride,
            padding,
            false,
        ));
        out.extend(check_layer(
            &format!("conv2d_s{stride}p{padding}"),
            conv,
            &x,
            Mode::Train,
            rng,
        ));
        let dw = Layer::Conv(Conv2d::new(
            random(&[3, 1, 3, 3], rng),
            stride,
            padding,
            true,
        ));
        out.extend(check_layer(
            &format!("depthwise_s{stride}p{padding}"),
            dw,
            &x,
            Mode::Train,
            rng,
        ));
    }
    let pw = Layer::Conv(Conv2d::new(random(&[5, 3, 1, 1], rng), 1, 0, false));
    out.extend(check_layer("pointwise", pw, &x, Mode::Train, rng));

    for mode in [Mode::Train, Mode::Eval] {
        let mut bn = BatchNorm::new(3);
        bn.gamma = random(&[3], rng);
        bn.beta = random(&[3], rng);
        bn.stats.mean = random(&[3], rng);
        bn.stats.var = random(&[3], rng).map(|v| v.abs() + 0.5);
        out.extend(check_layer(
            &format!("batchnorm_{mode:?}"),
            Layer::BatchNorm(bn),
            &x,
            mode,
            rng,
        ));
    }

    let mut wide = random(&[2, 3, 5, 5], rng).scale(8.0);
    avoid_relu6_kinks(&mut wide, 1e-3);
    out.extend(check_layer(
        "relu6",
        Layer::relu6(),
        &wide,
        Mode::Train,
        rng,
    ));
    out.extend(check_layer(
        "global_avg_pool",
        Layer::global_avg_pool(),
        &x,
        Mode::Train,
        rng,
    ));
    let dense = Layer::Dense(Dense::new(random(&[6, 4], rng), random(&[4], rng)));
    out.extend(check_layer(
        "dense",
        dense,
        &random(&[3, 6], rng),
        Mode::Train,
        rng,
    ));

    let z = random(&[4, 10], rng).scale(3.0);
    let zt = random(&[4, 10], rng).scale(3.0);
    let labels = [2, 9, 0, 5];
    let fd = finite_difference(|t| cross_entropy(t, &labels).unwrap(), &z, DEFAULT_STEP);
    out.push(Check {
        name: "cross_entropy".into(),
        rel: rel_err(&cross_entropy_grad(&z, &labels).unwrap(), &fd),
    });
    for t in [1.0, 2.5, 8.0] {
        let fd = finite_difference(|s| kd_loss(s, &zt, t).unwrap(), &z, DEFAULT_STEP);
        out.push(Check {
            name: format!("kd_loss_T{t}"),
            rel: rel_err(&kd_loss_grad(&z, &zt, t).unwrap(), &fd),
        });
    }
    let act = random(&[2, 4, 3, 3], rng);
    let target = attention_map(&random(&[2, 4, 3, 3], rng), 2).unwrap();
    let f = |a: &Tensor<f64>| at_loss(&attention_map(a, 2).unwrap(), &target).unwrap();
    let g_map = at_loss_grad(&attention_map(&act, 2).unwrap(), &target).unwrap();
    out.push(Check {
        name: "attention_transfer".into(),
        rel: rel_err(
            &attention_map_grad(&act, 2, &g_map).unwrap(),
            &finite_difference(f, &act, DEFAULT_STEP),
        ),
    });

    out.extend(check_network("network_kd", 0.0, rng));
    out.extend(check_network("network_kd_at", 0.8, rng));
    out
}
