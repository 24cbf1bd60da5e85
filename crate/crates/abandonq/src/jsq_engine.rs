//! Ground truth for JSQ: truncated stationary solve, event simulation with
//! batch means, and the pathwise coupling monitor (pooled single server
//! inside JSQ inside the infinite-server system).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Error, Result};
use crate::model_core::{jsq_route, QueueParams};
use crate::ssq_exact::{log_sum_exp, stationary_pmf_with_support, LatticePmf};

/// Largest number of states the exact solve accepts.
pub const STATE_BUDGET: u64 = 2_000_000;
const RESIDUAL_TARGET: f64 = 1e-10;

/// Stationary law on the box {0..=cap}^n, row-major with coordinate 0 most
/// significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPmf {
    pub n: usize,
    pub cap: usize,
    pub log_probs: Vec<f64>,
    /// Max-norm of pi Q on the box.
    pub residual: f64,
    /// Stationary flow sum_x pi(x) (rate out of the box from x).
    pub leak: f64,
    pub sweeps: usize,
}

impl JointPmf {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn coords(&self, mut idx: usize) -> Vec<i64> {
        let side = self.cap + 1;
        let mut x = vec![0i64; self.n];
        for k in (0..self.n).rev() {
            x[k] = (idx % side) as i64;
            idx /= side;
        }
        x
    }

    pub fn index(&self, x: &[i64]) -> Option<usize> {
        index_of(x, self.cap)
    }

    pub fn prob(&self, x: &[i64]) -> f64 {
        self.index(x).map_or(0.0, |i| self.log_probs[i].exp())
    }

    /// (state, ln probability) for every state of the box.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<i64>, f64)> + '_ {
        (0..self.len()).map(move |i| (self.coords(i), self.log_probs[i]))
    }

    /// E f(q) by exact summation.
    pub fn expect(&self, f: impl Fn(&[i64]) -> f64) -> f64 {
        self.iter().map(|(x, l)| if l == f64::NEG_INFINITY { 0.0 } else { l.exp() * f(&x) }).sum()
    }

    /// Law of the total queue length, on the single-server normalization
    /// (offset (lambda - mu)/gamma, scale sqrt(gamma/lambda)).
    pub fn sum_marginal(&self, params: &QueueParams) -> LatticePmf {
        let mut buckets = vec![Vec::new(); self.n * self.cap + 1];
        for (x, l) in self.iter() {
            buckets[x.iter().sum::<i64>() as usize].push(l);
        }
        let lp = buckets.into_iter().map(log_sum_exp).collect();
        LatticePmf::from_log_probs(lp, params.fluid_center(), params.diffusion_scale(), self.leak)
    }

    /// Sparse (state, probability) list of states with probability above `floor`.
    pub fn triplets(&self, floor: f64) -> Vec<(Vec<i64>, f64)> {
        self.iter().map(|(x, l)| (x, l.exp())).filter(|(_, p)| *p > floor).collect()
    }
}

fn index_of(x: &[i64], cap: usize) -> Option<usize> {
    let mut idx = 0usize;
    for &v in x {
        if v < 0 || v as usize > cap {
            return None;
        }
        idx = idx * (cap + 1) + v as usize;
    }
    Some(idx)
}

fn coords_into(mut idx: usize, cap: usize, out: &mut [i64]) {
    for k in (0..out.len()).rev() {
        out[k] = (idx % (cap + 1)) as i64;
        idx /= cap + 1;
    }
}

/// Stationary law of JSQ on the box {0..=cap}^n. Transitions leaving the box
/// are dropped; their stationary flow is reported as `leak`.
pub fn exact_stationary_small(params: &QueueParams, cap: usize) -> Result<JointPmf> {
    exact_stationary_with(params, cap, 200_000)
}

pub fn exact_stationary_with(params: &QueueParams, cap: usize, max_sweeps: usize) -> Result<JointPmf> {
    let n = params.n();
    if n > 3 {
        return invalid(format!("exact solve supports n <= 3, got n = {n}"));
    }
    if cap == 0 {
        return invalid("cap must be >= 1");
    }
    let states = ((cap + 1) as u64).saturating_pow(n as u32);
    if states > STATE_BUDGET {
        return Err(Error::StateBudget { states, budget: STATE_BUDGET });
    }
    let size = states as usize;
    let (lambda, gamma) = (params.lambda, params.gamma);
    let mus = &params.mus;

    // out-rates inside the box and dropped rates
    let mut out = vec![0.0; size];
    let mut dropped = vec![0.0; size];
    let mut x = vec![0i64; n];
    for s in 0..size {
        coords_into(s, cap, &mut x);
        let j = jsq_route(&x);
        if x[j] as usize == cap {
            dropped[s] += lambda;
        } else {
            out[s] += lambda;
        }
        for i in 0..n {
            if x[i] > 0 {
                out[s] += mus[i] + gamma * x[i] as f64;
            }
        }
    }

    // start from the pooled single-server law spread evenly over each level
    let pooled = params.pooled();
    let spmf = stationary_pmf_with_support(&pooled, 1e-12, (n * cap) as u64)?;
    let mut count = vec![0usize; n * cap + 1];
    for s in 0..size {
        coords_into(s, cap, &mut x);
        count[x.iter().sum::<i64>() as usize] += 1;
    }
    let mut pi: Vec<f64> = (0..size)
        .map(|s| {
            coords_into(s, cap, &mut x);
            let t = x.iter().sum::<i64>() as usize;
            (spmf.prob(t) / count[t] as f64).max(1e-300)
        })
        .collect();
    normalize(&mut pi);

    let inflow = |pi: &[f64], s: usize, x: &mut [i64], y: &mut [i64]| -> f64 {
        coords_into(s, cap, x);
        let mut acc = 0.0;
        for i in 0..n {
            // arrival from x - e_i routed to i
            if x[i] > 0 {
                y.copy_from_slice(x);
                y[i] -= 1;
                if jsq_route(y) == i {
                    acc += pi[index_of(y, cap).expect("in box")] * lambda;
                }
            }
            // departure from x + e_i
            if (x[i] as usize) < cap {
                y.copy_from_slice(x);
                y[i] += 1;
                acc += pi[index_of(y, cap).expect("in box")] * (mus[i] + gamma * y[i] as f64);
            }
        }
        acc
    };

    let mut y = vec![0i64; n];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        for s in 0..size {
            let v = inflow(&pi, s, &mut x, &mut y) / out[s];
            pi[s] = v;
        }
        normalize(&mut pi);
        sweeps += 1;
        if sweeps % 10 == 0 || sweeps == max_sweeps {
            residual = (0..size)
                .map(|s| (inflow(&pi, s, &mut x, &mut y) - pi[s] * out[s]).abs())
                .fold(0.0, f64::max);
            if residual <= RESIDUAL_TARGET {
                break;
            }
        }
    }
    if residual > RESIDUAL_TARGET {
        return Err(Error::NoConvergence { residual, iterations: sweeps });
    }
    let leak = pi.iter().zip(&dropped).map(|(p, d)| p * d).sum();
    Ok(JointPmf {
        n,
        cap,
        log_probs: pi.iter().map(|p| p.ln()).collect(),
        residual,
        leak,
        sweeps,
    })
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// n sqrt(gamma)/sqrt(lambda) (q - (lambda - mu)/(n gamma) 1), projected on phi.
pub fn projection(params: &QueueParams, phi: &[f64], q: &[i64]) -> f64 {
    let n = params.n() as f64;
    let c = params.fluid_center() / n;
    let s = n * (params.gamma / params.lambda).sqrt();
    phi.iter().zip(q).map(|(f, x)| f * s * (*x as f64 - c)).sum()
}

fn check_unit(phi: &[f64], n: usize) -> Result<()> {
    if phi.len() != n {
        return invalid(format!("direction has {} coordinates, model has n = {n}", phi.len()));
    }
    let norm: f64 = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return invalid(format!("direction must have unit norm, got {norm}"));
    }
    Ok(())
}

/// P(<q~, phi> > a) by exact summation over the joint law.
pub fn projected_tail(params: &QueueParams, pmf: &JointPmf, phi: &[f64], a: f64) -> Result<f64> {
    check_unit(phi, pmf.n)?;
    Ok(pmf.expect(|q| (projection(params, phi, q) > a) as u8 as f64))
}

/// Quantities the simulator and the exact solve can both report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimand {
    /// P(<q~, phi> > a).
    TailProj { phi: Vec<f64>, a: f64 },
    /// E ||q - mean(q) 1||^p.
    PerpMoment { p: f64 },
    /// sum_i P(q_i = 0).
    SumZeroMass,
    /// P(sum_i q_i = 0).
    TotalEmpty,
    /// E |sum_i q_i - (lambda - mu)/gamma|^p.
    QhatSumMoment { p: f64 },
    /// E q_i.
    MeanQueue { i: usize },
}

impl Estimand {
    pub fn name(&self) -> String {
        match self {
            Estimand::TailProj { a, .. } => format!("tail_proj_a{a}"),
            Estimand::PerpMoment { p } => format!("perp_moment_p{p}"),
            Estimand::SumZeroMass => "sum_zero_mass".into(),
            Estimand::TotalEmpty => "total_empty".into(),
            Estimand::QhatSumMoment { p } => format!("qhat_sum_moment_p{p}"),
            Estimand::MeanQueue { i } => format!("mean_queue_{i}"),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            Estimand::PerpMoment { p } | Estimand::QhatSumMoment { p } => {
                if !(*p >= 1.0 && *p <= 64.0) {
                    return invalid(format!("moment order must lie in [1, 64], got {p}"));
                }
            }
            Estimand::TailProj { phi, .. } => check_unit(phi, n)?,
            Estimand::MeanQueue { i } => {
                if *i >= n {
                    return invalid(format!("queue index {i} out of range"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The integrand evaluated at state q.
    pub fn value(&self, params: &QueueParams, q: &[i64]) -> f64 {
        match self {
            Estimand::TailProj { phi, a } => (projection(params, phi, q) > *a) as u8 as f64,
            Estimand::PerpMoment { p } => {
                let m = q.iter().sum::<i64>() as f64 / q.len() as f64;
                let s: f64 = q.iter().map(|x| (*x as f64 - m).powi(2)).sum();
                s.sqrt().powf(*p)
            }
            Estimand::SumZeroMass => q.iter().filter(|x| **x == 0).count() as f64,
            Estimand::TotalEmpty => (q.iter().all(|x| *x == 0)) as u8 as f64,
            Estimand::QhatSumMoment { p } => {
                (q.iter().sum::<i64>() as f64 - params.fluid_center()).abs().powf(*p)
            }
            Estimand::MeanQueue { i } => q[*i] as f64,
        }
    }
}

/// Exact value of an estimand under a solved joint law.
pub fn exact_estimand(params: &QueueParams, pmf: &JointPmf, e: &Estimand) -> Result<f64> {
    e.check(pmf.n)?;
    Ok(pmf.expect(|q| e.value(params, q)))
}

/// Time-average estimate with a batch-means 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub value: f64,
    pub ci_halfwidth: f64,
    pub batches: usize,
    pub seed: u64,
    pub horizon: f64,
    pub burn_in: f64,
}

pub const BATCHES: usize = 30;

// stream ids of the counter-based generator, one per subsystem
const STREAM_SIM: u64 = 1;
const STREAM_ARRIVAL: u64 = 11;
const STREAM_PATIENCE: u64 = 12;
const STREAM_SERVICE: u64 = 13;

fn rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn exp_sample(r: &mut ChaCha20Rng, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = r.gen();
    -(1.0 - u).ln() / rate
}

/// Event-driven simulation from the empty state; time averages over
/// (burn_in, horizon] split into 30 equal batches.
pub fn simulate_stationary(
    params: &QueueParams,
    horizon: f64,
    burn_in: f64,
    seed: u64,
    estimands: &[Estimand],
) -> Result<BTreeMap<String, SimEstimate>> {
    if !(burn_in > 0.0 && horizon > burn_in && horizon.is_finite()) {
        return invalid(format!("need horizon > burn_in > 0, got horizon {horizon}, burn_in {burn_in}"));
    }
    let n = params.n();
    for e in estimands {
        e.check(n)?;
    }
    let mut r = rng(seed, STREAM_SIM);
    let mut q = vec![0i64; n];
    let mut t = 0.0;
    let width = (horizon - burn_in) / BATCHES as f64;
    let mut sums = vec![vec![0.0; BATCHES]; estimands.len()];
    let mut values: Vec<f64> = estimands.iter().map(|e| e.value(params, &q)).collect();
    while t < horizon {
        let dep: Vec<f64> =
            (0..n).map(|i| if q[i] > 0 { params.mus[i] + params.gamma * q[i] as f64 } else { 0.0 }).collect();
        let total = params.lambda + dep.iter().sum::<f64>();
        let dt = exp_sample(&mut r, total);
        // credit the holding interval to the batches it overlaps
        let (mut lo, hi) = (t.max(burn_in), (t + dt).min(horizon));
        while lo < hi {
            let mut b = (((lo - burn_in) / width) as usize).min(BATCHES - 1);
            let mut end = burn_in + (b + 1) as f64 * width;
            if end <= lo && b + 1 < BATCHES {
                // lo sits on a boundary that rounded down
                b += 1;
                end = burn_in + (b + 1) as f64 * width;
            }
            if b == BATCHES - 1 || end <= lo {
                end = hi;
            }
            let end = end.min(hi);
            for (k, v) in values.iter().enumerate() {
                sums[k][b] += v * (end - lo);
            }
            lo = end;
        }
        t += dt;
        if t >= horizon {
            break;
        }
        let mut u = r.gen::<f64>() * total;
        if u < params.lambda {
            let j = jsq_route(&q);
            q[j] += 1;
        } else {
            u -= params.lambda;
            let mut i = 0;
            while i + 1 < n && u >= dep[i] {
                u -= dep[i];
                i += 1;
            }
            // guard against rounding landing on an empty queue
            while q[i] == 0 {
                i = (i + 1) % n;
            }
            q[i] -= 1;
        }
        for (k, e) in estimands.iter().enumerate() {
            values[k] = e.value(params, &q);
        }
    }
    let tq = StudentsT::new(0.0, 1.0, (BATCHES - 1) as f64).expect("dof > 0").inverse_cdf(0.975);
    let mut out = BTreeMap::new();
    for (k, e) in estimands.iter().enumerate() {
        let means: Vec<f64> = sums[k].iter().map(|s| s / width).collect();
        let m = means.iter().sum::<f64>() / BATCHES as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
        out.insert(
            e.name(),
            SimEstimate {
                value: m,
                ci_halfwidth: tq * (var / BATCHES as f64).sqrt(),
                batches: BATCHES,
                seed,
                horizon,
                burn_in,
            },
        );
    }
    Ok(out)
}

/// Outcome of a coupling run with zero inclusion violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub epochs: u64,
    pub violations: u64,
    pub final_time: f64,
    pub max_ssq: usize,
    pub max_jsq: usize,
    pub max_infinite: usize,
    /// Epochs at which the JSQ and infinite-server label sets coincide.
    pub jsq_equals_infinite: u64,
}

/// Run pooled SSQ, JSQ and the infinite-server system on one event stream.
///
/// Arrivals and their patience clocks are shared; service events come from
/// one Poisson(mu) stream with server label i drawn w.p. mu_i/mu. JSQ serves
/// the head of queue i (the event is lost if it is empty); the pooled queue,
/// when nonempty, serves the same customer if it holds it and its own head
/// otherwise; the infinite-server system has no service. After every event
/// the label sets must satisfy SSQ within JSQ within infinite-server.
pub fn coupling_dominance(params: &QueueParams, horizon: f64, max_epochs: u64, seed: u64) -> Result<CouplingReport> {
    if !(horizon > 0.0) {
        return invalid(format!("horizon must be > 0, got {horizon}"));
    }
    let n = params.n();
    let mu = params.mu();
    let mut ra = rng(seed, STREAM_ARRIVAL);
    let mut rp = rng(seed, STREAM_PATIENCE);
    let mut rs = rng(seed, STREAM_SERVICE);

    let mut jsq: Vec<VecDeque<u64>> = vec![VecDeque::new(); n];
    let mut ssq: VecDeque<u64> = VecDeque::new();
    // status bits per label: 1 = in infinite-server, 2 = in JSQ, 4 = in SSQ
    let mut status: Vec<u8> = Vec::new();
    let mut alive: Vec<u64> = Vec::new();
    let mut deadlines: BinaryHeap<Reverse<(OrdF64, u64)>> = BinaryHeap::new();

    let mut t = 0.0;
    let mut next_arrival = exp_sample(&mut ra, params.lambda);
    let mut next_service = exp_sample(&mut rs, mu);
    let mut rep = CouplingReport {
        epochs: 0,
        violations: 0,
        final_time: 0.0,
        max_ssq: 0,
        max_jsq: 0,
        max_infinite: 0,
        jsq_equals_infinite: 0,
    };
    while rep.epochs < max_epochs {
        let next_abandon = deadlines.peek().map_or(f64::INFINITY, |d| d.0 .0 .0);
        let tn = next_arrival.min(next_service).min(next_abandon);
        if tn > horizon {
            break;
        }
        t = tn;
        if tn == next_arrival {
            let c = status.len() as u64;
            status.push(1 | 2 | 4);
            alive.push(c);
            let lens: Vec<i64> = jsq.iter().map(|d| d.len() as i64).collect();
            jsq[jsq_route(&lens)].push_back(c);
            ssq.push_back(c);
            deadlines.push(Reverse((OrdF64(t + exp_sample(&mut rp, params.gamma)), c)));
            next_arrival = t + exp_sample(&mut ra, params.lambda);
        } else if tn == next_service {
            let u: f64 = rs.gen::<f64>() * mu;
            let mut i = 0;
            let mut acc = params.mus[0];
            while i + 1 < n && u >= acc {
                i += 1;
                acc += params.mus[i];
            }
            let served = jsq[i].pop_front();
            if let Some(c) = served {
                status[c as usize] &= !2;
            }
            if !ssq.is_empty() {
                let pick = served.filter(|c| status[*c as usize] & 4 != 0);
                let c = match pick {
                    Some(c) => {
                        let pos = ssq.iter().position(|x| *x == c).expect("status bit says present");
                        ssq.remove(pos).expect("position valid")
                    }
                    None => ssq.pop_front().expect("nonempty"),
                };
                status[c as usize] &= !4;
            }
            next_service = t + exp_sample(&mut rs, mu);
        } else {
            let Reverse((_, c)) = deadlines.pop().expect("peeked");
            let st = status[c as usize];
            if st & 2 != 0 {
                for d in jsq.iter_mut() {
                    if let Some(pos) = d.iter().position(|x| *x == c) {
                        d.remove(pos);
                    }
                }
            }
            if st & 4 != 0 {
                let pos = ssq.iter().position(|x| *x == c).expect("status bit says present");
                ssq.remove(pos);
            }
            status[c as usize] = 0;
            alive.retain(|x| *x != c);
        }
        rep.epochs += 1;

        // inclusion check straight from the queue contents
        let jsq_len: usize = jsq.iter().map(|d| d.len()).sum();
        for c in ssq.iter() {
            if !jsq.iter().any(|d| d.contains(c)) {
                return Err(Error::CouplingViolation {
                    epoch: rep.epochs,
                    trace: format!("t={t}: customer {c} in pooled queue {ssq:?} but not in JSQ {jsq:?}"),
                });
            }
        }
        for d in jsq.iter() {
            for c in d.iter() {
                if status[*c as usize] & 1 == 0 {
                    return Err(Error::CouplingViolation {
                        epoch: rep.epochs,
                        trace: format!("t={t}: customer {c} in JSQ but abandoned from the infinite-server system"),
                    });
                }
            }
        }
        if jsq_len == alive.len() {
            rep.jsq_equals_infinite += 1;
        }
        rep.max_ssq = rep.max_ssq.max(ssq.len());
        rep.max_jsq = rep.max_jsq.max(jsq_len);
        rep.max_infinite = rep.max_infinite.max(alive.len());
    }
    rep.final_time = t;
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl Ord for OrdF64 {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}
