//! Simulated neighbor-to-neighbor message layer.
//!
//! Each subsystem is an agent that only sees its own vector, its static
//! routing schema and the messages delivered to its inbox. Averaging runs in
//! synchronous rounds:
//!
//! * a consensus pair is a symmetric exchange: both ends send their entry and
//!   average locally;
//! * a star with several copies gathers the copies at the owner, which
//!   averages and scatters the mean back.
//!
//! Either way every coupling row costs exactly two floats per averaging.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ConsensusGroup, PartitionedNlp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommError {
    #[error("problem is not in consensus form")]
    NotConsensus,
}

/// Mean of a consensus group, summed owner first and then copies in row order.
pub fn consensus_mean(owner: f64, copies: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = owner;
    let mut k = 1usize;
    for v in copies {
        sum += v;
        k += 1;
    }
    sum / k as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Coupling rows routed over this edge.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Role {
    /// Owns group `group` at local coordinate `coord`.
    Owner { group: usize, coord: usize },
    /// Copy of row `row`, owned by `owner`; `pair` when the group has one copy.
    Copier {
        row: usize,
        coord: usize,
        owner: usize,
        pair: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGraph {
    pub n_subsystems: usize,
    pub n_coupling: usize,
    pub edges: Vec<Edge>,
    groups: Vec<ConsensusGroup>,
    roles: Vec<Vec<Role>>,
}

impl CouplingGraph {
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (i.min(j), i.max(j));
        self.edges.iter().position(|e| e.a == a && e.b == b)
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|e| {
                if e.a == i {
                    Some(e.b)
                } else if e.b == i {
                    Some(e.a)
                } else {
                    None
                }
            })
            .collect()
    }
}

pub fn build_graph(problem: &PartitionedNlp) -> Result<CouplingGraph, CommError> {
    let map = problem.consensus.as_ref().ok_or(CommError::NotConsensus)?;
    let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for p in &map.pairs {
        let (i, j) = (p.owner.subsystem, p.copier.subsystem);
        edges.entry((i.min(j), i.max(j))).or_default().push(p.row);
    }
    let mut roles = vec![Vec::new(); problem.n_subsystems()];
    for (gi, g) in map.groups.iter().enumerate() {
        roles[g.owner.subsystem].push(Role::Owner {
            group: gi,
            coord: g.owner.coord,
        });
        for &(row, c) in &g.copies {
            roles[c.subsystem].push(Role::Copier {
                row,
                coord: c.coord,
                owner: g.owner.subsystem,
                pair: g.copies.len() == 1,
            });
        }
    }
    Ok(CouplingGraph {
        n_subsystems: problem.n_subsystems(),
        n_coupling: problem.n_coupling(),
        edges: edges
            .into_iter()
            .map(|((a, b), mut rows)| {
                rows.sort_unstable();
                Edge { a, b, rows }
            })
            .collect(),
        groups: map.groups.clone(),
        roles,
    })
}

/// One float travelling from `from` to `to`, tagged with its coupling row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub row: usize,
    /// Local coordinate of the sender the value was read from, or of the mean.
    pub coord: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EdgeStats {
    pub a: usize,
    pub b: usize,
    pub floats: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CommStats {
    pub floats_sent_total: usize,
    /// Floats sent during each averaging round, in order.
    pub floats_per_inner_iteration: Vec<usize>,
    pub flags_sent: usize,
    pub messages_sent: usize,
    pub flag_reductions: usize,
    /// Floats spent on max-reductions of residual norms.
    pub reduction_floats: usize,
    pub per_edge: Vec<EdgeStats>,
    /// Coupling updates were solved centrally, outside this layer.
    pub centralized: bool,
}

impl CommStats {
    pub fn merge(&mut self, other: &CommStats) {
        self.floats_sent_total += other.floats_sent_total;
        self.floats_per_inner_iteration
            .extend_from_slice(&other.floats_per_inner_iteration);
        self.flags_sent += other.flags_sent;
        self.messages_sent += other.messages_sent;
        self.flag_reductions += other.flag_reductions;
        self.reduction_floats += other.reduction_floats;
        self.centralized |= other.centralized;
        for e in &other.per_edge {
            match self.per_edge.iter_mut().find(|x| x.a == e.a && x.b == e.b) {
                Some(x) => x.floats += e.floats,
                None => self.per_edge.push(e.clone()),
            }
        }
    }
}

/// Message router plus counters.
#[derive(Debug, Clone)]
pub struct CommLayer {
    graph: Option<CouplingGraph>,
    n_subsystems: usize,
    pub stats: CommStats,
    log: Vec<Message>,
}

impl CommLayer {
    pub fn new(problem: &PartitionedNlp) -> Self {
        let graph = build_graph(problem).ok();
        let per_edge = graph
            .as_ref()
            .map(|g| {
                g.edges
                    .iter()
                    .map(|e| EdgeStats {
                        a: e.a,
                        b: e.b,
                        floats: 0,
                    })
                    .collect()
            })
            .unwrap_or_default();
        CommLayer {
            stats: CommStats {
                per_edge,
                centralized: graph.is_none() && problem.n_coupling() > 0,
                ..CommStats::default()
            },
            graph,
            n_subsystems: problem.n_subsystems(),
            log: Vec::new(),
        }
    }

    pub fn graph(&self) -> Option<&CouplingGraph> {
        self.graph.as_ref()
    }

    /// Messages of the most recent averaging round.
    pub fn last_round(&self) -> &[Message] {
        &self.log
    }

    /// Marks a coupling update that bypassed the layer.
    pub fn record_centralized(&mut self) {
        self.stats.centralized = true;
    }

    fn deliver(&mut self, outbox: Vec<Message>, inboxes: &mut [Vec<Message>]) -> usize {
        let mut sent = 0;
        let mut links: Vec<(usize, usize)> = Vec::new();
        for m in outbox {
            if let Some(k) = self.graph.as_ref().and_then(|g| g.edge_index(m.from, m.to)) {
                self.stats.per_edge[k].floats += 1;
            }
            if !links.contains(&(m.from, m.to)) {
                links.push((m.from, m.to));
            }
            sent += 1;
            self.log.push(m);
            inboxes[m.to].push(m);
        }
        self.stats.messages_sent += links.len();
        sent
    }

    /// Averaging of paired entries through message passing.
    pub fn exchange_and_average(&mut self, s: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, CommError> {
        let graph = self.graph.clone().ok_or(CommError::NotConsensus)?;
        self.log.clear();
        let n = self.n_subsystems;
        // Unpaired coordinates keep their local value.
        let mut s_bar: Vec<DVector<f64>> = s.to_vec();

        // Round 1: copies report to owners; pair owners answer symmetrically.
        let mut outbox = Vec::new();
        for (i, si) in s.iter().enumerate() {
            for role in &graph.roles[i] {
                match *role {
                    Role::Copier {
                        row, coord, owner, ..
                    } => outbox.push(Message {
                        from: i,
                        to: owner,
                        row,
                        coord,
                        value: si[coord],
                    }),
                    Role::Owner { group, coord } => {
                        let g = &graph.groups[group];
                        if let [(row, copy)] = g.copies[..] {
                            outbox.push(Message {
                                from: i,
                                to: copy.subsystem,
                                row,
                                coord,
                                value: si[coord],
                            });
                        }
                    }
                }
            }
        }
        let mut inbox = vec![Vec::new(); n];
        let mut sent = self.deliver(outbox, &mut inbox);

        // Local averaging; stars scatter the mean in round 2.
        let mut scatter = Vec::new();
        for i in 0..n {
            let received = |row: usize| {
                inbox[i]
                    .iter()
                    .find(|m| m.row == row)
                    .map(|m| m.value)
                    .expect("routing schema guarantees delivery")
            };
            for role in &graph.roles[i] {
                match *role {
                    Role::Owner { group, coord } => {
                        let g = &graph.groups[group];
                        let mean = consensus_mean(s[i][coord], g.copies.iter().map(|&(row, _)| received(row)));
                        s_bar[i][coord] = mean;
                        if g.copies.len() > 1 {
                            for &(row, copy) in &g.copies {
                                scatter.push(Message {
                                    from: i,
                                    to: copy.subsystem,
                                    row,
                                    coord,
                                    value: mean,
                                });
                            }
                        }
                    }
                    Role::Copier {
                        row,
                        coord,
                        pair: true,
                        ..
                    } => {
                        s_bar[i][coord] = consensus_mean(received(row), [s[i][coord]]);
                    }
                    Role::Copier { .. } => {}
                }
            }
        }
        let mut inbox2 = vec![Vec::new(); n];
        sent += self.deliver(scatter, &mut inbox2);
        for i in 0..n {
            for role in &graph.roles[i] {
                if let Role::Copier {
                    row,
                    coord,
                    pair: false,
                    ..
                } = *role
                {
                    s_bar[i][coord] = inbox2[i]
                        .iter()
                        .find(|m| m.row == row)
                        .map(|m| m.value)
                        .expect("owner scatters to every copy");
                }
            }
        }
        self.stats.floats_sent_total += sent;
        self.stats.floats_per_inner_iteration.push(sent);
        Ok(s_bar)
    }

    /// Maximum over one float per subsystem.
    pub fn allreduce_max(&mut self, values: &[f64]) -> f64 {
        self.stats.reduction_floats += values.len();
        values.iter().copied().fold(0.0, f64::max)
    }

    /// Logical AND over one flag per subsystem; costs one flag each.
    pub fn allreduce_flags(&mut self, flags: &[bool]) -> bool {
        self.stats.flags_sent += flags.len();
        self.stats.flag_reductions += 1;
        flags.iter().all(|&f| f)
    }
}
