//! Central finite-difference checks of the backward pass.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::layers::{Linear, RecurrentStack};
use super::loss::{masked_synthesis, SiSnrLoss};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::dsp::{StftConfig, StftPlan};
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-5;
/// Denominator floor for the relative error. Below it the comparison is absolute: a loss of
/// magnitude ~10 carries roundoff near 1e-15 * 10 / eps ~ 1e-9 in a central difference, so
/// smaller derivatives cannot be resolved to 1e-4 relative.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub nonzero: usize,
    /// Coordinates whose derivative was below [`REL_FLOOR`] (compared absolutely).
    pub floored: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backward-pass parameter gradients of the scalar built by `build` with central
/// differences. With `coords = Some(n)`, `n` scalar coordinates are drawn uniformly over all
/// parameters; otherwise every coordinate is checked.
pub fn check_params<F>(store: &ParamStore, build: F, coords: Option<usize>, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s, true, seed);
        let root = build(&mut g)?;
        Ok(g.scalar(root))
    };
    let mut g = Graph::new(store, true, seed);
    let root = build(&mut g)?;
    let grads = g.backward(root)?;
    drop(g);

    let mut index: Vec<(ParamId, usize)> = Vec::new();
    for id in store.ids() {
        for k in 0..store.get(id).len() {
            index.push((id, k));
        }
    }
    let picked: Vec<usize> = match coords {
        Some(n) if n < index.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut v = sample(&mut rng, index.len(), n).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..index.len()).collect(),
    };
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
        worst_values: (0.0, 0.0),
        nonzero: 0,
        floored: 0,
    };
    for &p in &picked {
        let (id, k) = index[p];
        let analytic = grads.params.get(id).map_or(0.0, |t| t.data[k]);
        let orig = work.get(id).data[k];
        work.get_mut(id).data[k] = orig + eps;
        let fp = eval(&work)?;
        work.get_mut(id).data[k] = orig - eps;
        let fm = eval(&work)?;
        work.get_mut(id).data[k] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = relative_error(analytic, numeric);
        if analytic != 0.0 {
            report.nonzero += 1;
        }
        if analytic.abs().max(numeric.abs()) < REL_FLOOR {
            report.floored += 1;
        }
        report.checked += 1;
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst = Some((store.name(id).to_string(), k));
            report.worst_values = (analytic, numeric);
        }
    }
    Ok(report)
}

/// Named per-op results of [`op_suite`].
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

type Case = (&'static str, ParamStore, Box<dyn Fn(&mut Graph) -> Result<Var>>);

/// `sum(y * r)` with a fixed random `r`, so every output element gets a distinct weight.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let [r, c] = g.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(Tensor::uniform(r, c, 1.0, &mut rng));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn rand_store(shapes: &[(&str, usize, usize)], rng: &mut ChaCha8Rng) -> (ParamStore, Vec<ParamId>) {
    let mut s = ParamStore::new();
    let ids = shapes
        .iter()
        .map(|&(n, r, c)| s.add(n, Tensor::uniform(r, c, 1.0, rng)))
        .collect();
    (s, ids)
}

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Case> = Vec::new();

    macro_rules! case {
        ($name:expr, $shapes:expr, |$g:ident, $v:ident| $body:expr) => {{
            let (store, ids) = rand_store(&$shapes, &mut rng);
            let ws = rng.random::<u64>();
            let f = move |$g: &mut Graph| -> Result<Var> {
                let $v: Vec<Var> = ids.iter().map(|&i| $g.param(i)).collect();
                let y = $body?;
                weighted_sum($g, y, ws)
            };
            out.push(($name, store, Box::new(f)));
        }};
    }

    case!("matmul", [("a", 3, 4), ("b", 4, 5)], |g, v| g.matmul(v[0], v[1]));
    case!("matmul_ta", [("a", 4, 3), ("b", 4, 5)], |g, v| g.matmul_t(v[0], true, v[1], false));
    case!("matmul_tb", [("a", 3, 4), ("b", 5, 4)], |g, v| g.matmul_t(v[0], false, v[1], true));
    case!("matmul_tatb", [("a", 4, 3), ("b", 5, 4)], |g, v| g.matmul_t(v[0], true, v[1], true));
    case!("add", [("a", 3, 4), ("b", 3, 4)], |g, v| g.add(v[0], v[1]));
    case!("sub", [("a", 3, 4), ("b", 3, 4)], |g, v| g.sub(v[0], v[1]));
    case!("mul", [("a", 3, 4), ("b", 3, 4)], |g, v| g.mul(v[0], v[1]));
    case!("add_row", [("a", 3, 4), ("b", 1, 4)], |g, v| g.add_row(v[0], v[1]));
    case!("scale", [("a", 3, 4)], |g, v| Ok::<_, crate::Error>(g.scale(v[0], -1.7)));
    case!("add_scalar", [("a", 3, 4)], |g, v| Ok::<_, crate::Error>(g.add_scalar(v[0], 0.3)));
    case!("sigmoid", [("a", 3, 4)], |g, v| Ok::<_, crate::Error>(g.sigmoid(v[0])));
    case!("tanh", [("a", 3, 4)], |g, v| Ok::<_, crate::Error>(g.tanh(v[0])));
    case!("log", [("a", 3, 4)], |g, v| {
        let p = g.mul(v[0], v[0])?;
        let p = g.add_scalar(p, 0.5);
        Ok::<_, crate::Error>(g.log(p))
    });
    case!("softmax_rows", [("a", 3, 5)], |g, v| Ok::<_, crate::Error>(g.softmax_rows(v[0])));
    case!("concat_cols", [("a", 3, 2), ("b", 3, 4)], |g, v| g.concat_cols(&[v[0], v[1], v[0]]));
    case!("concat_rows", [("a", 2, 3), ("b", 4, 3)], |g, v| g.concat_rows(&[v[1], v[0]]));
    case!("slice_cols", [("a", 3, 6)], |g, v| g.slice_cols(v[0], 1, 4));
    case!("slice_rows", [("a", 6, 3)], |g, v| g.slice_rows(v[0], 2, 5));
    case!("mean_rows", [("a", 5, 3)], |g, v| g.mean_rows(v[0]));
    case!("sum", [("a", 3, 4)], |g, v| {
        let s = g.sum(v[0]);
        let s2 = g.mul(s, s)?;
        Ok::<_, crate::Error>(s2)
    });
    case!("reshape", [("a", 3, 4)], |g, v| g.reshape(v[0], 2, 6));
    case!("transpose", [("a", 3, 4)], |g, v| Ok::<_, crate::Error>(g.transpose(v[0])));
    case!("complex_abs", [("re", 3, 4), ("im", 3, 4)], |g, v| g.complex_abs(v[0], v[1], 1e-3));
    case!("dropout", [("a", 4, 4)], |g, v| Ok::<_, crate::Error>(g.dropout(v[0], 0.3)));
    case!("lstm", [("gx", 6, 12), ("wh", 3, 12)], |g, v| g.lstm(v[0], v[1]));

    let plan = StftPlan::new(StftConfig {
        fft_size: 16,
        hop: 8,
        ..StftConfig::default()
    })
    .expect("valid plan");
    {
        let plan = plan.clone();
        case!("istft", [("re", 6, 9), ("im", 6, 9)], |g, v| g.istft(v[0], v[1], &plan, 40));
    }
    {
        let reference: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (store, ids) = rand_store(&[("est", 1, 50)], &mut rng);
        let f = move |g: &mut Graph| -> Result<Var> {
            let e = g.param(ids[0]);
            SiSnrLoss::default().node(g, e, &reference)
        };
        out.push(("si_snr", store, Box::new(f)));
    }
    {
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let reference: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = plan.analyze(&x);
        let frames = spec.len() / 9;
        let (store, ids) = rand_store(&[("mask", frames, 9)], &mut rng);
        let plan = plan.clone();
        let f = move |g: &mut Graph| -> Result<Var> {
            let m = g.param(ids[0]);
            let m = g.sigmoid(m);
            let y = masked_synthesis(g, m, &spec, &plan, 40)?;
            SiSnrLoss::default().node(g, y, &reference)
        };
        out.push(("masked_synthesis", store, Box::new(f)));
    }
    {
        let mut store = ParamStore::new();
        let l1 = Linear::new(&mut store, "l1", 4, 6, &mut rng);
        let l2 = Linear::new(&mut store, "l2", 6, 5, &mut rng);
        let l3 = Linear::new(&mut store, "l3", 5, 2, &mut rng);
        let x = Tensor::uniform(3, 4, 1.0, &mut rng);
        let f = move |g: &mut Graph| -> Result<Var> {
            let xv = g.constant(x.clone());
            let h = l1.forward(g, xv)?;
            let h = g.tanh(h);
            let h = l2.forward(g, h)?;
            let h = g.sigmoid(h);
            let y = l3.forward(g, h)?;
            Ok(g.sum(y))
        };
        out.push(("three_layer_net", store, Box::new(f)));
    }
    {
        let mut store = ParamStore::new();
        let stack = RecurrentStack::new(&mut store, "rnn", 3, 4, 2, 0.2, &mut rng);
        let x = Tensor::uniform(5, 3, 1.0, &mut rng);
        let ws = rng.random::<u64>();
        let f = move |g: &mut Graph| -> Result<Var> {
            let xv = g.constant(x.clone());
            let y = stack.forward(g, xv)?;
            weighted_sum(g, y, ws)
        };
        out.push(("lstm_stack", store, Box::new(f)));
    }
    out
}

/// Finite-difference check of every op on small random tensors.
pub fn op_suite(seed: u64) -> Result<Vec<SuiteResult>> {
    cases(seed)
        .into_iter()
        .map(|(name, store, f)| {
            let report = check_params(&store, f, None, DEFAULT_EPS, seed)?;
            Ok(SuiteResult { name, report })
        })
        .collect()
}
