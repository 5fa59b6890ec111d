//! Seeded generator of desk-scale graphs with planted black-market motifs and
//! label-correlated attributes. Each motif is one seller hub wired to its
//! transaction, service and camouflage accounts, plus fraudster buyers
//! attached to the transaction and service accounts; camouflage accounts also
//! blend into the normal background.

use crate::error::{Error, Result};
use crate::graph::{self, Graph, ATTR_COUNT};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_normal: usize,
    pub n_motifs: usize,
    pub transaction_accounts: usize,
    pub service_accounts: usize,
    pub camouflage_accounts: usize,
    pub buyer_accounts: usize,
    /// Background edges per normal node (clamped to the ids available so far).
    pub background_edges: usize,
    pub informative: (usize, usize),
    pub p_informative_bma: f64,
    pub p_informative_other: f64,
    pub p_background_attr: f64,
    pub observed_fraction: f64,
    pub seed: u64,
}

pub fn default_config() -> SynthConfig {
    SynthConfig {
        n_normal: 1800,
        n_motifs: 20,
        transaction_accounts: 3,
        service_accounts: 2,
        camouflage_accounts: 2,
        buyer_accounts: 2,
        background_edges: 3,
        informative: (1, 3),
        p_informative_bma: 0.8,
        p_informative_other: 0.1,
        p_background_attr: 0.3,
        observed_fraction: 0.5,
        seed: 0,
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_informative_bma", self.p_informative_bma),
            ("p_informative_other", self.p_informative_other),
            ("p_background_attr", self.p_background_attr),
            ("observed_fraction", self.observed_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        let (a, b) = self.informative;
        if a == b || a >= ATTR_COUNT || b >= ATTR_COUNT {
            return Err(Error::config(format!(
                "informative indices must be distinct and in 0..{ATTR_COUNT}, got ({a}, {b})"
            )));
        }
        Ok(())
    }

    pub fn nodes_per_motif(&self) -> usize {
        1 + self.transaction_accounts
            + self.service_accounts
            + self.camouflage_accounts
            + self.buyer_accounts
    }

    pub fn node_count(&self) -> usize {
        self.n_normal + self.n_motifs * self.nodes_per_motif()
    }

    /// Seller + transaction + service accounts are ground-truth BMAs.
    pub fn bma_count(&self) -> usize {
        self.n_motifs * (1 + self.transaction_accounts + self.service_accounts)
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    /// Graph carrying the observed labels only.
    pub graph: Graph,
    pub edges: Vec<(u32, u32)>,
    pub ground_truth: Vec<u8>,
    pub observed: Vec<bool>,
}

impl SynthOutput {
    pub fn observed_labels(&self) -> Vec<(u32, u8)> {
        (0..self.ground_truth.len())
            .filter(|&i| self.observed[i])
            .map(|i| (i as u32, self.ground_truth[i]))
            .collect()
    }

    /// Nodes whose labels were withheld from training, with ground truth.
    pub fn test_nodes(&self) -> Vec<(u32, u8)> {
        (0..self.ground_truth.len())
            .filter(|&i| !self.observed[i])
            .map(|i| (i as u32, self.ground_truth[i]))
            .collect()
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.node_count();
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut ground_truth = vec![0u8; n];

    // Sparse background: each normal node attaches to earlier normal nodes.
    for i in 1..config.n_normal {
        let m = config.background_edges.min(i);
        if m == 0 {
            continue;
        }
        let mut targets: Vec<u32> = rand::seq::index::sample(&mut rng, i, m)
            .into_iter()
            .map(|t| t as u32)
            .collect();
        targets.sort_unstable();
        for t in targets {
            edges.push((i as u32, t));
        }
    }

    // Planted motifs.
    let mut next = config.n_normal as u32;
    for _ in 0..config.n_motifs {
        let seller = next;
        next += 1;
        let transactions: Vec<u32> = (0..config.transaction_accounts)
            .map(|_| {
                let id = next;
                next += 1;
                id
            })
            .collect();
        let services: Vec<u32> = (0..config.service_accounts)
            .map(|_| {
                let id = next;
                next += 1;
                id
            })
            .collect();
        let camouflages: Vec<u32> = (0..config.camouflage_accounts)
            .map(|_| {
                let id = next;
                next += 1;
                id
            })
            .collect();
        let buyers: Vec<u32> = (0..config.buyer_accounts)
            .map(|_| {
                let id = next;
                next += 1;
                id
            })
            .collect();

        ground_truth[seller as usize] = 1;
        for &t in &transactions {
            ground_truth[t as usize] = 1;
            edges.push((seller, t));
        }
        for &s in &services {
            ground_truth[s as usize] = 1;
            edges.push((seller, s));
        }
        for &c in &camouflages {
            edges.push((seller, c));
            // Camouflage accounts blend into the background.
            let picks = 2.min(config.n_normal);
            if picks > 0 {
                let normals = rand::seq::index::sample(&mut rng, config.n_normal, picks);
                for t in normals {
                    edges.push((c, t as u32));
                }
            }
        }
        for &b in &buyers {
            for &t in &transactions {
                edges.push((b, t));
            }
            for &s in &services {
                edges.push((b, s));
            }
        }
    }
    debug_assert_eq!(next as usize, n);

    // Attributes: the informative pair tracks the label, everything else is
    // background noise.
    let (ia, ib) = config.informative;
    let mut attrs = vec![[0u8; ATTR_COUNT]; n];
    for (i, row) in attrs.iter_mut().enumerate() {
        for (d, slot) in row.iter_mut().enumerate() {
            let p = if d == ia || d == ib {
                if ground_truth[i] == 1 {
                    config.p_informative_bma
                } else {
                    config.p_informative_other
                }
            } else {
                config.p_background_attr
            };
            *slot = (rng.random_range(0.0..1.0) < p) as u8;
        }
    }

    // Stratified observed-label mask.
    let mut observed = vec![false; n];
    for class in [1u8, 0u8] {
        let mut members: Vec<usize> = (0..n).filter(|&i| ground_truth[i] == class).collect();
        let take = ((members.len() as f64) * config.observed_fraction).round() as usize;
        let take = take.min(members.len());
        if take > 0 {
            let picked = rand::seq::index::sample(&mut rng, members.len(), take);
            for idx in picked {
                observed[members[idx]] = true;
            }
        }
        members.clear();
    }

    let observed_labels: Vec<(u32, u8)> = (0..n)
        .filter(|&i| observed[i])
        .map(|i| (i as u32, ground_truth[i]))
        .collect();
    let graph = Graph::build(n, &edges, attrs, &observed_labels)?;
    Ok(SynthOutput {
        graph,
        edges,
        ground_truth,
        observed,
    })
}

/// Write the dataset file quartet: edges.tsv, attrs.csv, labels.csv (observed
/// labels only) and ground_truth.csv (evaluation only, never fed to training).
pub fn write_dataset(dir: &Path, out: &SynthOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    graph::write_edges_tsv(&dir.join("edges.tsv"), &out.edges)?;
    let attrs: Vec<[u8; ATTR_COUNT]> = (0..out.graph.node_count())
        .map(|i| *out.graph.attrs(i))
        .collect();
    graph::write_attrs_csv(&dir.join("attrs.csv"), &attrs)?;
    graph::write_labels_csv(&dir.join("labels.csv"), &out.observed_labels())?;
    let truth: Vec<(u32, u8)> = out
        .ground_truth
        .iter()
        .enumerate()
        .map(|(i, &y)| (i as u32, y))
        .collect();
    graph::write_labels_csv(&dir.join("ground_truth.csv"), &truth)?;
    Ok(())
}
