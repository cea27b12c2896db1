//! Synthetic road network in the style of a link-based route-choice MDP.
//!
//! A state `s(a, b)` means "currently on link `b`, having arrived from link
//! `a`". Actions 0..=5 move onto the successors of `b`, ordered from the
//! rightmost turn; slots beyond the successor count self-loop. Action 6
//! parks, which is only meaningful on the dummy sink link: from a sink state
//! it moves to an absorbing parked state, elsewhere it self-loops.
//!
//! State features (in parameter order):
//! 0. time to traverse `b`,
//! 1. right turn from `a` to `b`: 0 if yes, 1 if no,
//! 2. 0 if `b` is the sink, 1 otherwise,
//! 3. u-turn from `a` to `b`: 0 if yes, 1 if no.
//!
//! The parked state has all-zero features.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvKind, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::reward::{Bounds, RewardModel};

/// Virtual ground truth (traverse time, right turn, link penalty, u-turn).
pub const ROADNET_GROUND_TRUTH: [f64; 4] = [-2.0, -1.0, -1.0, ROADNET_UTURN_WEIGHT];
/// The u-turn weight is frozen, not learned.
pub const ROADNET_UTURN_WEIGHT: f64 = -20.0;

const MAX_SUCCESSORS: usize = 5;
const MOVE_ACTIONS: usize = 6;
const PARK_ACTION: usize = 6;
const N_ACTIONS: usize = 7;
const LEARNED_BOUND: (f64, f64) = (-2.5, 2.5);

#[derive(Debug, Clone, PartialEq)]
pub struct Successor {
    pub link: usize,
    pub traverse_time: f64,
    pub right_turn: bool,
    pub u_turn: bool,
}

/// Directed links with ordered successor lists and one dummy sink link.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetworkGraph {
    successors: Vec<Vec<Successor>>,
    sink: usize,
}

impl RoadNetworkGraph {
    pub fn new(successors: Vec<Vec<Successor>>, sink: usize) -> Result<Self> {
        let graph = Self { successors, sink };
        graph.validate()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<()> {
        let n = self.successors.len();
        if self.sink >= n {
            return Err(Error::InvalidRoadNetwork(format!("sink {} out of range", self.sink)));
        }
        if !self.successors[self.sink].is_empty() {
            return Err(Error::InvalidRoadNetwork("the sink link cannot have successors".into()));
        }
        for (link, succ) in self.successors.iter().enumerate() {
            if succ.len() > MAX_SUCCESSORS {
                return Err(Error::InvalidRoadNetwork(format!(
                    "link {link} connects to {} links (at most {MAX_SUCCESSORS} allowed)",
                    succ.len()
                )));
            }
            for s in succ {
                if s.link >= n {
                    return Err(Error::InvalidRoadNetwork(format!(
                        "link {link} has unknown successor {}",
                        s.link
                    )));
                }
                if !s.traverse_time.is_finite() {
                    return Err(Error::InvalidRoadNetwork(format!("link {link}: bad traverse time")));
                }
            }
        }
        if !self.successors.iter().flatten().any(|s| s.link == self.sink) {
            return Err(Error::InvalidRoadNetwork("no link leads to the sink".into()));
        }
        Ok(())
    }

    /// Number of links including the dummy sink.
    pub fn n_links(&self) -> usize {
        self.successors.len()
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn successors(&self, link: usize) -> &[Successor] {
        &self.successors[link]
    }

    /// Random planar network with `n_links` directed road links (even,
    /// ≥ 6) on a jittered grid, plus a dummy sink attached to a random
    /// destination node.
    pub fn generate(n_links: usize, seed: u64) -> Result<Self> {
        if n_links < 6 || n_links % 2 != 0 {
            return Err(Error::InvalidRoadNetwork(format!(
                "generator needs an even link count >= 6, got {n_links}"
            )));
        }
        let roads = n_links / 2;
        let (rows, cols) = grid_shape(roads).ok_or_else(|| {
            Error::InvalidRoadNetwork(format!("no grid layout for {roads} roads"))
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_nodes = rows * cols;
        let pos: Vec<(f64, f64)> = (0..n_nodes)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                (
                    c as f64 + rng.random_range(-0.2..0.2),
                    r as f64 + rng.random_range(-0.2..0.2),
                )
            })
            .collect();

        let mut candidates = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    candidates.push((i, i + 1));
                }
                if r + 1 < rows {
                    candidates.push((i, i + cols));
                }
            }
        }
        candidates.shuffle(&mut rng);

        // random spanning tree first, then extra roads
        let mut parent: Vec<usize> = (0..n_nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut chosen = Vec::with_capacity(roads);
        let mut rest = Vec::new();
        for &(u, v) in &candidates {
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru != rv {
                parent[ru] = rv;
                chosen.push((u, v));
            } else {
                rest.push((u, v));
            }
        }
        chosen.extend(rest.into_iter().take(roads - chosen.len()));
        chosen.sort_unstable();

        // link ids: 2k is u→v, 2k+1 is v→u
        let mut links: Vec<(usize, usize)> = Vec::with_capacity(n_links);
        for &(u, v) in &chosen {
            links.push((u, v));
            links.push((v, u));
        }
        let time: Vec<f64> = links
            .iter()
            .map(|&(u, v)| {
                let (dx, dy) = (pos[v].0 - pos[u].0, pos[v].1 - pos[u].1);
                (dx * dx + dy * dy).sqrt() * rng.random_range(0.8..1.2)
            })
            .collect();
        let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for (id, &(u, _)) in links.iter().enumerate() {
            outgoing[u].push(id);
        }
        let destination = rng.random_range(0..n_nodes);
        let sink = n_links;

        let mut successors = Vec::with_capacity(n_links + 1);
        for &(u, v) in &links {
            let heading = (pos[v].0 - pos[u].0, pos[v].1 - pos[u].1);
            let mut succ: Vec<(f64, Successor)> = outgoing[v]
                .iter()
                .map(|&next| {
                    let w = links[next].1;
                    let dir = (pos[w].0 - pos[v].0, pos[w].1 - pos[v].1);
                    let u_turn = w == u;
                    let angle = if u_turn {
                        PI
                    } else {
                        let cross = heading.0 * dir.1 - heading.1 * dir.0;
                        let dot = heading.0 * dir.0 + heading.1 * dir.1;
                        cross.atan2(dot)
                    };
                    let right_turn = !u_turn && (-0.75 * PI..=-0.25 * PI).contains(&angle);
                    (
                        angle,
                        Successor {
                            link: next,
                            traverse_time: time[next],
                            right_turn,
                            u_turn,
                        },
                    )
                })
                .collect();
            // negative angles are clockwise: rightmost first
            succ.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut ordered: Vec<Successor> = succ.into_iter().map(|(_, s)| s).collect();
            if v == destination {
                ordered.push(Successor {
                    link: sink,
                    traverse_time: 0.0,
                    right_turn: false,
                    u_turn: false,
                });
            }
            successors.push(ordered);
        }
        successors.push(Vec::new());
        Self::new(successors, sink)
    }

    /// Builds the link-pair MDP with the linear four-feature reward family.
    pub fn to_environment(&self, discount: f64) -> Result<EnvironmentSpec> {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut pairs: Vec<(usize, usize, &Successor)> = Vec::new();
        for (a, succ) in self.successors.iter().enumerate() {
            for s in succ {
                index.entry((a, s.link)).or_insert_with(|| {
                    pairs.push((a, s.link, s));
                    pairs.len() - 1
                });
            }
        }
        let parked = pairs.len();
        let n_states = parked + 1;

        let mut rows = Vec::with_capacity(n_states * N_ACTIONS);
        let mut features = Vec::with_capacity(n_states);
        for (s, &(_, b, arrival)) in pairs.iter().enumerate() {
            let succ = &self.successors[b];
            for action in 0..N_ACTIONS {
                let next = if action < MOVE_ACTIONS {
                    succ.get(action).map_or(s, |c| index[&(b, c.link)])
                } else if action == PARK_ACTION && b == self.sink {
                    parked
                } else {
                    s
                };
                rows.push(vec![(next, 1.0)]);
            }
            features.push(vec![
                arrival.traverse_time,
                if arrival.right_turn { 0.0 } else { 1.0 },
                if b == self.sink { 0.0 } else { 1.0 },
                if arrival.u_turn { 0.0 } else { 1.0 },
            ]);
        }
        for _ in 0..N_ACTIONS {
            rows.push(vec![(parked, 1.0)]);
        }
        features.push(vec![0.0; 4]);

        let starts: Vec<usize> = pairs
            .iter()
            .enumerate()
            .filter(|(_, &(_, b, _))| b != self.sink)
            .map(|(s, _)| s)
            .collect();
        if starts.is_empty() {
            return Err(Error::InvalidRoadNetwork("no non-sink states".into()));
        }
        let mdp = TabularMdp::from_sparse(
            n_states,
            N_ACTIONS,
            rows,
            discount,
            TabularMdp::uniform_start(starts),
        )?;
        let mut lo = vec![LEARNED_BOUND.0; 3];
        let mut hi = vec![LEARNED_BOUND.1; 3];
        lo.push(ROADNET_UTURN_WEIGHT);
        hi.push(ROADNET_UTURN_WEIGHT);
        EnvironmentSpec::new(
            EnvKind::Roadnet,
            mdp,
            features,
            RewardModel::LinearFeatures { n_features: 4 },
            Bounds::new(lo, hi)?,
            Some(ROADNET_GROUND_TRUTH.to_vec()),
        )
    }
}

/// Smallest near-square grid whose spanning tree fits in `roads` edges and
/// which has at least `roads` candidate edges.
fn grid_shape(roads: usize) -> Option<(usize, usize)> {
    (1..=roads + 1)
        .flat_map(|r| (r..=r + 2).map(move |c| (r, c)))
        .find(|&(r, c)| {
            let edges = 2 * r * c - r - c;
            r * c >= 2 && r * c - 1 <= roads && edges >= roads
        })
}

/// Synthetic road network with `n_links` road links.
pub fn build_roadnet(n_links: usize, seed: u64, discount: f64) -> Result<EnvironmentSpec> {
    RoadNetworkGraph::generate(n_links, seed)?.to_environment(discount)
}

/// Parses an edge list with header `src_link,dst_link,traverse_time,right_turn,u_turn`.
///
/// Link ids are arbitrary integers. Row order within a source link is the
/// action order (rightmost turn first). `right_turn` and `u_turn` are 1 for
/// yes and 0 for no. One row of the form `sink,<link_id>,,,` names the dummy
/// sink link.
pub fn parse_roadnet_csv(text: &str) -> Result<RoadNetworkGraph> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut ids: HashMap<u64, usize> = HashMap::new();
    let intern = |raw: &str, ids: &mut HashMap<u64, usize>| -> Result<usize> {
        let id: u64 = raw
            .parse()
            .map_err(|_| Error::InvalidRoadNetwork(format!("bad link id {raw:?}")))?;
        let next = ids.len();
        Ok(*ids.entry(id).or_insert(next))
    };
    let mut edges: Vec<(usize, usize, f64, bool, bool)> = Vec::new();
    let mut sink = None;
    let flag = |raw: Option<&str>| -> Result<bool> {
        match raw.unwrap_or("") {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(Error::InvalidRoadNetwork(format!("bad flag {other:?}"))),
        }
    };
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let src = record.get(0).unwrap_or("");
        let dst = record
            .get(1)
            .ok_or_else(|| Error::InvalidRoadNetwork(format!("row {}: missing dst_link", line + 2)))?;
        if src == "sink" {
            if sink.is_some() {
                return Err(Error::InvalidRoadNetwork("more than one sink line".into()));
            }
            sink = Some(intern(dst, &mut ids)?);
            continue;
        }
        let a = intern(src, &mut ids)?;
        let b = intern(dst, &mut ids)?;
        let time: f64 = record
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::InvalidRoadNetwork(format!("row {}: bad traverse_time", line + 2)))?;
        edges.push((a, b, time, flag(record.get(3))?, flag(record.get(4))?));
    }
    let sink = sink.ok_or_else(|| Error::InvalidRoadNetwork("missing sink line".into()))?;
    let mut successors = vec![Vec::new(); ids.len()];
    for (a, b, traverse_time, right_turn, u_turn) in edges {
        successors[a].push(Successor {
            link: b,
            traverse_time,
            right_turn,
            u_turn,
        });
    }
    RoadNetworkGraph::new(successors, sink)
}

pub fn import_roadnet(path: impl AsRef<Path>, discount: f64) -> Result<EnvironmentSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_roadnet_csv(&text)?.to_environment(discount)
}
