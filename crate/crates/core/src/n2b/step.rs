//! Single optimization steps of the two training stages.

use serde::{Deserialize, Serialize};

use super::nets::{DnNet, NENet, NetError};
use super::TrainError;
use crate::lattice;
use crate::noise;
use crate::scalar::Scalar;
use crate::tensor::{Adam, Gradients, Graph, ParamSet, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Convergence,
    Supervised,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Initial => "initial",
            Self::Convergence => "convergence",
            Self::Supervised => "supervised",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "initial" => Ok(Self::Initial),
            "convergence" => Ok(Self::Convergence),
            "supervised" => Ok(Self::Supervised),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

/// One loss-curve sample. `l_n2b` holds the supervised loss in the
/// supervised variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub stage: Stage,
    pub l_n2b: f64,
    pub l_n2c: Option<f64>,
}

/// Per-step instrumentation of a convergence step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub dn_forwards: u64,
    pub ne_forwards: u64,
    /// `‖∂L_n2b/∂θ_F‖`
    pub n2b_grad_dn: f64,
    /// `‖∂L_n2c/∂θ_H‖`
    pub n2c_grad_ne: f64,
    /// `d - c == ñ` held bit for bit.
    pub transplant_exact: bool,
    /// `x == y_b + n_b` held bit for bit.
    pub label_exact: bool,
}

/// Adam optimizers for both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers<T> {
    pub dn: Adam<T>,
    pub ne: Adam<T>,
}

fn finite_loss(value: f64, what: &'static str, iteration: u64) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NonFinite {
            loss: what,
            iteration,
            value,
        })
    }
}

fn total_norm<T: Scalar>(grads: &Gradients<T>, vars: &[Var]) -> f64 {
    vars.iter()
        .map(|&v| grads.norm(v).to_f64().unwrap_or(f64::NAN).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn apply<T: Scalar>(params: &mut ParamSet<T>, opt: &mut Adam<T>, passes: &[(&Gradients<T>, &[Var])]) -> Result<(), TrainError> {
    params.zero_grad();
    for (grads, vars) in passes {
        params.accumulate(grads, vars);
    }
    opt.step(params)?;
    Ok(())
}

fn expect_aligned<T: Scalar>(pairs: &[(&Tensor<T>, &Tensor<T>)]) -> Result<(), TrainError> {
    for (a, b) in pairs {
        a.expect_same_shape(b, "batch")?;
    }
    Ok(())
}

fn item<T: Scalar>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).item().to_f64().unwrap_or(f64::NAN)
}

/// Initial stage: trains `S = H ∘ (id - F)` end to end on blurred labels.
/// `ñ = H(x - F(x))`, `ỹ = x - ñ`, `L_n2b = mean|ỹ - y_b|`.
pub fn initial_step<T: Scalar>(
    dn: &mut DnNet<T>,
    ne: &mut NENet<T>,
    opt: &mut Optimizers<T>,
    x: &Tensor<T>,
    y_b: &Tensor<T>,
    iteration: u64,
) -> Result<StepRecord, TrainError> {
    expect_aligned(&[(x, y_b)])?;
    let mut g = Graph::new();
    let vf = dn.params.bind(&mut g);
    let vh = ne.params.bind(&mut g);
    let xv = g.constant(x.clone());
    let yb = g.constant(y_b.clone());
    let f = dn.forward(&mut g, &vf, xv)?;
    let n_hat = g.sub(xv, f)?;
    let n_tilde = ne.forward(&mut g, &vh, n_hat)?;
    let y_tilde = g.sub(xv, n_tilde)?;
    let loss = g.l1_loss(y_tilde, yb)?;
    let l = finite_loss(item(&g, loss), "l_n2b", iteration)?;
    let grads = g.backward(loss)?;
    apply(&mut dn.params, &mut opt.dn, &[(&grads, &vf)])?;
    apply(&mut ne.params, &mut opt.ne, &[(&grads, &vh)])?;
    Ok(StepRecord {
        iteration,
        stage: Stage::Initial,
        l_n2b: l,
        l_n2c: None,
    })
}

/// One convergence-stage iteration.
///
/// `n̂ = x - F(x)`, `ñ = H(n̂)`, `d = c + ñ`, `ĉ = F(d)`,
/// `L_n2c = mean|ĉ - c|`, `L_n2b = mean|ñ - n_b|`.
///
/// `ñ` always enters `d` as a detached (and lattice-snapped) constant.
/// With `interrupt` set, `n̂` is also detached before NENet, so each loss
/// reaches exactly one network; clearing it gives the N2B_v ablation, where
/// `L_n2b` also updates `θ_F`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_step<T: Scalar>(
    dn: &mut DnNet<T>,
    ne: &mut NENet<T>,
    opt: &mut Optimizers<T>,
    x: &Tensor<T>,
    y_b: &Tensor<T>,
    c: &Tensor<T>,
    interrupt: bool,
    iteration: u64,
) -> Result<(StepRecord, StepDiagnostics), TrainError> {
    expect_aligned(&[(x, y_b), (x, c)])?;
    let (dn0, ne0) = (dn.forward_count(), ne.forward_count());
    let mut g = Graph::new();
    let vf = dn.params.bind(&mut g);
    let vh = ne.params.bind(&mut g);
    let xv = g.constant(x.clone());

    let n_b = x.zip_with(y_b, "n_b", |a, b| a - b)?;
    let label_exact = n_b
        .data()
        .iter()
        .zip(y_b.data())
        .zip(x.data())
        .all(|((&n, &y), &xv)| y + n == xv);
    let n_b = g.constant(n_b);

    let f_x = dn.forward(&mut g, &vf, xv)?;
    let n_hat = g.sub(xv, f_x)?;
    let ne_in = if interrupt { g.detach(n_hat)? } else { n_hat };
    let n_tilde = ne.forward(&mut g, &vh, ne_in)?;
    let l_n2b = g.l1_loss(n_tilde, n_b)?;

    let mut moved = g.value(n_tilde).clone();
    snap_tensor(&mut moved);
    let d = noise::transplant(c, &moved)?;
    let transplant_exact = d
        .data()
        .iter()
        .zip(c.data())
        .zip(moved.data())
        .all(|((&d, &c), &n)| d - c == n);
    let dv = g.constant(d);
    let cv = g.constant(c.clone());
    let c_hat = dn.forward(&mut g, &vf, dv)?;
    let l_n2c = g.l1_loss(c_hat, cv)?;

    let lb = finite_loss(item(&g, l_n2b), "l_n2b", iteration)?;
    let lc = finite_loss(item(&g, l_n2c), "l_n2c", iteration)?;
    let grads_b = g.backward(l_n2b)?;
    let grads_c = g.backward(l_n2c)?;
    let diag = StepDiagnostics {
        dn_forwards: dn.forward_count() - dn0,
        ne_forwards: ne.forward_count() - ne0,
        n2b_grad_dn: total_norm(&grads_b, &vf),
        n2c_grad_ne: total_norm(&grads_c, &vh),
        transplant_exact,
        label_exact,
    };
    if interrupt {
        apply(&mut dn.params, &mut opt.dn, &[(&grads_c, &vf)])?;
    } else {
        apply(&mut dn.params, &mut opt.dn, &[(&grads_c, &vf), (&grads_b, &vf)])?;
    }
    apply(&mut ne.params, &mut opt.ne, &[(&grads_b, &vh)])?;
    Ok((
        StepRecord {
            iteration,
            stage: Stage::Convergence,
            l_n2b: lb,
            l_n2c: Some(lc),
        },
        diag,
    ))
}

/// Baseline: DnNet alone on true pairs, `mean|F(x) - y|`.
pub fn supervised_step<T: Scalar>(
    dn: &mut DnNet<T>,
    opt: &mut Adam<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    iteration: u64,
) -> Result<StepRecord, TrainError> {
    expect_aligned(&[(x, y)])?;
    let mut g = Graph::new();
    let vf = dn.params.bind(&mut g);
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let f = dn.forward(&mut g, &vf, xv)?;
    let loss = g.l1_loss(f, yv)?;
    let l = finite_loss(item(&g, loss), "l_sup", iteration)?;
    let grads = g.backward(loss)?;
    apply(&mut dn.params, opt, &[(&grads, &vf)])?;
    Ok(StepRecord {
        iteration,
        stage: Stage::Supervised,
        l_n2b: l,
        l_n2c: None,
    })
}

fn snap_tensor<T: Scalar>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        let s = lattice::snap(v.to_f32().unwrap_or(f32::NAN));
        *v = T::lit(s as f64);
    }
}

impl From<NetError> for TrainError {
    fn from(e: NetError) -> Self {
        TrainError::Net(e)
    }
}
