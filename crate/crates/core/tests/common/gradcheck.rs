use robustrec::diffcore::{Tape, Tensor, Var};
use robustrec::error::Result;

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// Relative error with an absolute floor for gradients near zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn eval(f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.value(out).item()
}

/// Largest relative error between tape gradients and central differences
/// over every entry of every input.
pub fn max_rel_error(f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    assert_eq!(tape.value(out).shape(), [1, 1], "gradient checks need a scalar output");
    let grads = tape.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.rows(), input.cols()));
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(f, &plus) - eval(f, &minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Contracts a tensor output to a scalar with fixed weights so every
/// entry's gradient is exercised.
pub fn weighted_sum(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.value(out).shape();
    let w = Tensor::from_fn(shape[0], shape[1], |r, c| 0.3 + 0.7 * ((r * 31 + c * 17) % 11) as f64 / 11.0);
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

use rand::Rng as _;
use robustrec::aspects::AspectMatrices;
use robustrec::diffcore::ParamSet;
use robustrec::models::{Batch, Cer, CerConfig, Efm, EfmConfig, LossInput, Model, Recommender};
use robustrec::rng::{self, Rng};

pub const FIXTURES: u64 = 50;

fn random_tensor(r: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

/// Uniform values at least `gap` away from every point in `kinks`.
fn away_from(r: &mut Rng, rows: usize, cols: usize, kinks: &[f64], gap: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| loop {
        let x: f64 = r.random_range(-2.0..2.0);
        if kinks.iter().all(|k| (x - k).abs() > gap) {
            break x;
        }
    })
}

type Case = (Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>, Vec<Tensor>);

fn unary(f: fn(&mut Tape, Var) -> Result<Var>) -> Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>> {
    Box::new(move |t, v| {
        let o = f(t, v[0])?;
        weighted_sum(t, o)
    })
}

fn binary(f: fn(&mut Tape, Var, Var) -> Result<Var>) -> Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>> {
    Box::new(move |t, v| {
        let o = f(t, v[0], v[1])?;
        weighted_sum(t, o)
    })
}

fn primitive_case(name: &str, r: &mut Rng) -> Case {
    let n = r.random_range(1..5usize);
    let m = r.random_range(1..5usize);
    let k = r.random_range(1..5usize);
    let mut t = |rows, cols| random_tensor(r, rows, cols, -2.0, 2.0);
    match name {
        "matmul" => (binary(Tape::matmul), vec![t(n, k), t(k, m)]),
        "transpose" => (unary(Tape::transpose), vec![t(n, m)]),
        "add" => (binary(Tape::add), vec![t(n, m), t(n, m)]),
        "add_row" => (binary(Tape::add), vec![t(n, m), t(1, m)]),
        "sub" => (binary(Tape::sub), vec![t(n, m), t(n, m)]),
        "mul" => (binary(Tape::mul), vec![t(n, m), t(n, m)]),
        "scale" => {
            let factor = r.random_range(-3.0..3.0);
            let x = random_tensor(r, n, m, -2.0, 2.0);
            (
                Box::new(move |tp: &mut Tape, v: &[Var]| {
                    let o = tp.scale(v[0], factor)?;
                    weighted_sum(tp, o)
                }),
                vec![x],
            )
        }
        "sigmoid" => (unary(Tape::sigmoid), vec![t(n, m)]),
        "relu" => (unary(Tape::relu), vec![away_from(r, n, m, &[0.0], 1e-2)]),
        "exp" => (unary(Tape::exp), vec![t(n, m)]),
        "log" => (unary(Tape::log), vec![random_tensor(r, n, m, 0.2, 3.0)]),
        "softplus" => (unary(Tape::softplus), vec![t(n, m)]),
        "square" => (unary(Tape::square), vec![t(n, m)]),
        "sum" => (Box::new(|tp: &mut Tape, v: &[Var]| tp.sum(v[0])), vec![t(n, m)]),
        "mean" => (Box::new(|tp: &mut Tape, v: &[Var]| tp.mean(v[0])), vec![t(n, m)]),
        "row_sum" => (unary(Tape::row_sum), vec![t(n, m)]),
        "concat_rows" => (binary(Tape::concat_rows), vec![t(n, m), t(k, m)]),
        "concat_cols" => (binary(Tape::concat_cols), vec![t(n, m), t(n, k)]),
        "gather_rows" => {
            let rows: Vec<usize> = (0..r.random_range(1..7usize)).map(|_| r.random_range(0..n)).collect();
            let x = random_tensor(r, n, m, -2.0, 2.0);
            (
                Box::new(move |tp: &mut Tape, v: &[Var]| {
                    let o = tp.gather_rows(v[0], &rows)?;
                    weighted_sum(tp, o)
                }),
                vec![x],
            )
        }
        "clip" => (
            Box::new(|tp: &mut Tape, v: &[Var]| {
                let o = tp.clip(v[0], -1.0, 1.0)?;
                weighted_sum(tp, o)
            }),
            vec![away_from(r, n, m, &[-1.0, 1.0], 1e-2)],
        ),
        "composition" => {
            // depth >= 6 chain mixing most primitives
            let w = random_tensor(r, k, m, -1.0, 1.0);
            let b = random_tensor(r, 1, m, -1.0, 1.0);
            let x = random_tensor(r, n, k, -1.0, 1.0);
            (
                Box::new(|tp: &mut Tape, v: &[Var]| {
                    let h = tp.matmul(v[0], v[1])?;
                    let h = tp.add(h, v[2])?;
                    let h = tp.sigmoid(h)?;
                    let s = tp.softplus(h)?;
                    let h = tp.mul(h, s)?;
                    let h = tp.square(h)?;
                    let e = tp.exp(h)?;
                    let h = tp.log(e)?;
                    let hx = tp.concat_cols(h, v[0])?;
                    let r = tp.row_sum(hx)?;
                    let r = tp.scale(r, 0.5)?;
                    tp.mean(r)
                }),
                vec![x, w, b],
            )
        }
        other => panic!("unknown primitive {other}"),
    }
}

pub const PRIMITIVES: [&str; 20] = [
    "matmul",
    "transpose",
    "add",
    "add_row",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "softplus",
    "square",
    "sum",
    "mean",
    "row_sum",
    "concat_rows",
    "concat_cols",
    "gather_rows",
    "clip",
];

/// Worst relative error of one primitive over `FIXTURES` random fixtures.
pub fn primitive_error(name: &str) -> f64 {
    let mut r = rng::stream(7, name);
    (0..FIXTURES)
        .map(|_| {
            let (f, inputs) = primitive_case(name, &mut r);
            max_rel_error(f.as_ref(), &inputs)
        })
        .fold(0.0, f64::max)
}

pub fn composition_error() -> f64 {
    primitive_error("composition")
}

pub fn tiny_model(kind: &str) -> Model {
    match kind {
        "EFM" => Model::Efm(Efm::new(EfmConfig {
            rank: 3,
            aux_rank: 2,
            k_top_features: 2,
            ..EfmConfig::default()
        })),
        _ => Model::Cer(Cer::new(CerConfig {
            hidden1: 5,
            hidden2: 3,
            ..CerConfig::default()
        })),
    }
}

fn model_loss(model: &Model, params: &ParamSet, y: &Tensor, batch: &Batch, aspects: &AspectMatrices) -> f64 {
    let mut tape = Tape::new();
    let vars = params.register_constant(&mut tape);
    let x = tape.constant(aspects.x.clone());
    let y = tape.constant(y.clone());
    let l = model.loss(&mut tape, &vars, batch, LossInput { x, y, observed: aspects }).unwrap();
    tape.value(l).item()
}

/// Worst relative error of a model loss with respect to every parameter
/// and every entry of `Y`, over `FIXTURES` random fixtures.
pub fn model_error(kind: &str) -> f64 {
    let model = tiny_model(kind);
    let mut r = rng::stream(13, kind);
    let (nu, nv, nf) = (4, 5, 3);
    let mut worst: f64 = 0.0;
    for seed in 0..FIXTURES {
        let aspects = AspectMatrices {
            x: random_tensor(&mut r, nu, nf, 0.0, 5.0),
            y: random_tensor(&mut r, nv, nf, 0.0, 5.0),
            rating_scale: 5,
        };
        let mut batch = Batch::default();
        for _ in 0..6 {
            let rating = if r.random_bool(0.5) { f64::from(r.random_range(1..=5u32)) } else { 0.0 };
            batch.push(r.random_range(0..nu), r.random_range(0..nv), rating);
        }
        let params = model.init_params(nu, nv, nf, &mut rng::seeded(seed));

        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let x = tape.constant(aspects.x.clone());
        let y = tape.variable(aspects.y.clone());
        let loss = model.loss(&mut tape, &vars, &batch, LossInput { x, y, observed: &aspects }).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        let y_grad = grads.take(y).unwrap_or_else(|| Tensor::zeros(nv, nf));
        let p_grads = vars.collect_grads(&mut grads, &params).unwrap();

        for (i, g) in p_grads.tensors().iter().enumerate() {
            for j in 0..g.len() {
                let mut plus = params.clone();
                plus.tensors_mut()[i].data_mut()[j] += H;
                let mut minus = params.clone();
                minus.tensors_mut()[i].data_mut()[j] -= H;
                let numeric = (model_loss(&model, &plus, &aspects.y, &batch, &aspects)
                    - model_loss(&model, &minus, &aspects.y, &batch, &aspects))
                    / (2.0 * H);
                worst = worst.max(rel_err(g.data()[j], numeric));
            }
        }
        for j in 0..y_grad.len() {
            let mut plus = aspects.y.clone();
            plus.data_mut()[j] += H;
            let mut minus = aspects.y.clone();
            minus.data_mut()[j] -= H;
            let numeric = (model_loss(&model, &params, &plus, &batch, &aspects)
                - model_loss(&model, &params, &minus, &batch, &aspects))
                / (2.0 * H);
            worst = worst.max(rel_err(y_grad.data()[j], numeric));
        }
    }
    worst
}
