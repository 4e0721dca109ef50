//! In-process simulation of the hub-and-spoke fitting protocol.
//!
//! Sites never share rows, outcomes or coefficient vectors. Setup exchanges
//! one curvature scalar per (site, feature) in each direction. Each cycle,
//! every site refits its own intercept locally, then for each feature sends
//! one scalar `db = gamma_j b_j - u_j` to the hub and receives back one step
//! factor, chosen by the sign of its `db`.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::ResidualizedSite;
use crate::model::StackedCoefficients;
use crate::penalty::{part_norms, shrink_factor};
use crate::solver::site_least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    SiteToHub,
    HubToSite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Eigenvalue,
    Db,
    StepSizes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Scalar(f64),
    Pair(f64, f64),
}

impl Payload {
    pub fn scalars(&self) -> usize {
        match self {
            Payload::Scalar(_) => 1,
            Payload::Pair(..) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    /// 0 for setup, then one round per coordinate cycle.
    pub round: usize,
    pub direction: Direction,
    pub site_id: u32,
    /// 0-based feature index.
    pub feature: usize,
    pub payload_kind: PayloadKind,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCount {
    pub round: usize,
    pub upstream: usize,
    pub downstream: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    pub messages: Vec<ProtocolMessage>,
    pub scalar_counts: Vec<RoundCount>,
}

impl MessageLog {
    fn push(&mut self, msg: ProtocolMessage) {
        if self.scalar_counts.last().map(|c| c.round) != Some(msg.round) {
            self.scalar_counts.push(RoundCount {
                round: msg.round,
                upstream: 0,
                downstream: 0,
            });
        }
        let count = self.scalar_counts.last_mut().expect("just pushed");
        match msg.direction {
            Direction::SiteToHub => count.upstream += msg.payload.scalars(),
            Direction::HubToSite => count.downstream += msg.payload.scalars(),
        }
        self.messages.push(msg);
    }

    /// One JSON object per message, newline terminated.
    pub fn write_json_lines<W: Write>(&self, mut out: W) -> Result<()> {
        for m in &self.messages {
            serde_json::to_writer(&mut out, m)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_json_lines(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
    }
}

/// How the hub returns step factors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepBroadcast {
    /// Each site receives only the factor matching the sign of its `db`.
    #[default]
    PerSite,
    /// Each site receives both factors and picks locally.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FedInit {
    /// Each site's own (ridge-stabilized) unpenalized fit.
    LocalFit,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub lambda: f64,
    pub cycles: usize,
    pub init: FedInit,
    pub broadcast: StepBroadcast,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            cycles: 100,
            init: FedInit::LocalFit,
            broadcast: StepBroadcast::PerSite,
        }
    }
}

/// Step factors `(1 - lambda/||dB+||)_+` and `(1 - lambda/||dB-||)_+`.
/// An empty part gets factor 0, except that `lambda = 0` always gives 1.
/// The factors depend on `db` alone; `gamma_j` is already folded into it.
pub fn hub_step(db: &DVector<f64>, lambda: f64, _gamma_j: f64) -> (f64, f64) {
    if lambda == 0.0 {
        return (1.0, 1.0);
    }
    let (pos, neg) = part_norms(db);
    (shrink_factor(lambda, pos), shrink_factor(lambda, neg))
}

/// Private state held by one site.
#[derive(Debug, Clone)]
pub struct SiteState {
    data: ResidualizedSite,
    coef: DVector<f64>,
    resid: DVector<f64>,
    gamma: DVector<f64>,
}

impl SiteState {
    pub fn new(data: ResidualizedSite, coef: DVector<f64>) -> Result<Self> {
        if coef.len() != data.p() + 1 {
            return Err(Error::DimensionMismatch("initial coefficients do not match the site".into()));
        }
        let resid = data.residuals(&coef);
        let gamma = DVector::zeros(data.p() + 1);
        Ok(Self {
            data,
            coef,
            resid,
            gamma,
        })
    }

    pub fn site_id(&self) -> u32 {
        self.data.site_id
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coef
    }

    /// Local curvature bound for feature `j` (0-based).
    pub fn local_eigenvalue(&self, j: usize) -> f64 {
        self.data.curvature(j + 1)
    }

    pub fn receive_gamma(&mut self, j: usize, gamma: f64) {
        self.gamma[j + 1] = gamma;
    }

    fn grad(&self, block: usize) -> f64 {
        self.data.grad_from_residuals(block, &self.resid)
    }

    fn shift(&mut self, block: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        for i in 0..self.data.n() {
            let x = if block == 0 { 1.0 } else { self.data.x[(i, block - 1)] };
            self.resid[i] -= self.data.contrast[i] * x * delta;
        }
    }

    pub fn update_intercept(&mut self) {
        let curv = self.data.curvature(0);
        let delta = -self.grad(0) / curv;
        self.coef[0] += delta;
        self.shift(0, delta);
    }

    /// `db = gamma_j b_j - u_j` for feature `j`.
    pub fn db(&self, j: usize) -> f64 {
        self.gamma[j + 1] * self.coef[j + 1] - self.grad(j + 1)
    }

    /// Applies the received factor: `b_j <- (b_j - u_j/gamma_j) * factor`.
    /// Returns the new coefficient.
    pub fn site_block_update(&mut self, j: usize, factor: f64) -> f64 {
        let block = j + 1;
        let gamma = self.gamma[block];
        let old = self.coef[block];
        let new = (old - self.grad(block) / gamma) * factor;
        self.coef[block] = new;
        self.shift(block, new - old);
        new
    }
}

fn pick_factor(db: f64, steps: (f64, f64)) -> f64 {
    if db >= 0.0 {
        steps.0
    } else {
        steps.1
    }
}

/// Runs the protocol for a fixed number of cycles at one lambda.
pub fn run_federated_fit(sites: &[ResidualizedSite], cfg: &FedConfig) -> Result<(StackedCoefficients, MessageLog)> {
    let first = sites.first().ok_or(Error::NoSites)?;
    let p = first.p();
    if let Some(s) = sites.iter().find(|s| s.p() != p) {
        return Err(Error::DimensionMismatch(format!("site {} feature count", s.site_id)));
    }
    if !(cfg.lambda >= 0.0) || !cfg.lambda.is_finite() {
        return Err(Error::InvalidParameter("lambda must be finite and non-negative".into()));
    }
    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by_key(|&k| sites[k].site_id);
    if order.windows(2).any(|w| sites[w[0]].site_id == sites[w[1]].site_id) {
        return Err(Error::DuplicateSite(sites[order[0]].site_id));
    }

    let mut states = sites
        .iter()
        .map(|s| {
            let init = match cfg.init {
                FedInit::LocalFit => site_least_squares(s)?,
                FedInit::Zero => DVector::zeros(p + 1),
            };
            SiteState::new(s.clone(), init)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut log = MessageLog::default();

    // Setup: curvature bounds up, their maxima down.
    for j in 0..p {
        let mut gamma_j: f64 = 0.0;
        for &k in &order {
            let e = states[k].local_eigenvalue(j);
            log.push(ProtocolMessage {
                round: 0,
                direction: Direction::SiteToHub,
                site_id: states[k].site_id(),
                feature: j,
                payload_kind: PayloadKind::Eigenvalue,
                payload: Payload::Scalar(e),
            });
            gamma_j = gamma_j.max(e);
        }
        if !(gamma_j > 0.0) {
            return Err(Error::ZeroCurvature(j + 1));
        }
        for &k in &order {
            log.push(ProtocolMessage {
                round: 0,
                direction: Direction::HubToSite,
                site_id: states[k].site_id(),
                feature: j,
                payload_kind: PayloadKind::Eigenvalue,
                payload: Payload::Scalar(gamma_j),
            });
            states[k].receive_gamma(j, gamma_j);
        }
    }

    let mut db = DVector::zeros(sites.len());
    for round in 1..=cfg.cycles {
        for &k in &order {
            states[k].update_intercept();
        }
        for j in 0..p {
            for &k in &order {
                db[k] = states[k].db(j);
                log.push(ProtocolMessage {
                    round,
                    direction: Direction::SiteToHub,
                    site_id: states[k].site_id(),
                    feature: j,
                    payload_kind: PayloadKind::Db,
                    payload: Payload::Scalar(db[k]),
                });
            }
            let steps = hub_step(&db, cfg.lambda, states[order[0]].gamma[j + 1]);
            for &k in &order {
                let payload = match cfg.broadcast {
                    StepBroadcast::PerSite => Payload::Scalar(pick_factor(db[k], steps)),
                    StepBroadcast::Both => Payload::Pair(steps.0, steps.1),
                };
                log.push(ProtocolMessage {
                    round,
                    direction: Direction::HubToSite,
                    site_id: states[k].site_id(),
                    feature: j,
                    payload_kind: PayloadKind::StepSizes,
                    payload,
                });
                let factor = match payload {
                    Payload::Scalar(f) => f,
                    Payload::Pair(pos, neg) => pick_factor(db[k], (pos, neg)),
                };
                states[k].site_block_update(j, factor);
            }
        }
    }

    let per_site: Vec<DVector<f64>> = states.iter().map(|s| s.coef.clone()).collect();
    Ok((StackedCoefficients::from_sites(&per_site)?, log))
}

/// Checks every payload against the protocol's allowed shapes and returns
/// scalar totals per round.
pub fn message_accounting(log: &MessageLog) -> Result<Vec<RoundCount>> {
    for (i, m) in log.messages.iter().enumerate() {
        let ok = match (m.direction, m.payload_kind, m.payload) {
            (Direction::SiteToHub, PayloadKind::Eigenvalue | PayloadKind::Db, Payload::Scalar(_)) => true,
            (Direction::HubToSite, PayloadKind::Eigenvalue, Payload::Scalar(_)) => m.round == 0,
            (Direction::HubToSite, PayloadKind::StepSizes, p) => {
                let (a, b) = match p {
                    Payload::Scalar(a) => (a, a),
                    Payload::Pair(a, b) => (a, b),
                };
                (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)
            }
            _ => false,
        };
        if !ok {
            return Err(Error::PrivacyViolation(format!(
                "message {i} ({:?} {:?}) carries a disallowed payload",
                m.direction, m.payload_kind
            )));
        }
    }
    let mut counts: Vec<RoundCount> = Vec::new();
    for m in &log.messages {
        if counts.last().map(|c| c.round) != Some(m.round) {
            counts.push(RoundCount {
                round: m.round,
                upstream: 0,
                downstream: 0,
            });
        }
        let c = counts.last_mut().expect("just pushed");
        match m.direction {
            Direction::SiteToHub => c.upstream += m.payload.scalars(),
            Direction::HubToSite => c.downstream += m.payload.scalars(),
        }
    }
    Ok(counts)
}
