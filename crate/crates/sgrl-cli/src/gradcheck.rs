//! The `gradcheck` subcommand: verify every training gradient against
//! 64-bit central finite differences on small random graphs and report the
//! worst relative error per objective.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgrl_core::contrastive::{
    mi_loss_and_grad, sample_pairs_sss, ContrastiveEncoder,
};
use sgrl_core::encoder::{ig_loss_and_grad, EncoderConfig, IgEncoder};
use sgrl_core::error::{Error, Result};
use sgrl_core::graph::{precompute_subgraphs, Graph, ATTR_COUNT};
use sgrl_core::ssa::{gmml_loss_and_grad, PseudoLabelSpec, SsaEncoder};
use sgrl_core::tape::grad_check;

const TOLERANCE: f64 = 1e-4;
const EPS_FD: f64 = 1e-5;
const SEEDS: u64 = 5;

fn random_graph(n: usize, seed: u64) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(u32, u32)> = (1..n as u32)
        .map(|i| (i, rng.random_range(0..i)))
        .collect();
    for _ in 0..n / 2 {
        edges.push((
            rng.random_range(0..n as u32),
            rng.random_range(0..n as u32),
        ));
    }
    let attrs: Vec<[u8; ATTR_COUNT]> = (0..n)
        .map(|_| {
            let mut a = [0u8; ATTR_COUNT];
            for slot in a.iter_mut() {
                *slot = rng.random_range(0..2u32) as u8;
            }
            a
        })
        .collect();
    Graph::build(n, &edges, attrs, &[])
}

/// Offset parameters away from the zero-bias init, where RELU kinks sit
/// exactly at the evaluation point.
fn generic_point(flat: &mut [f64], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
}

pub fn run_all() -> Result<()> {
    let cfg = EncoderConfig::attribute_based(2, 4);
    let mut failures = 0;

    let mut report = |name: &str, worst: f64| {
        let status = if worst < TOLERANCE { "PASS" } else { "FAIL" };
        println!("{name}: max_rel_err={worst:.3e} tolerance={TOLERANCE:.0e} {status}");
        if worst >= TOLERANCE {
            failures += 1;
        }
    };

    // Supervised BCE objective.
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let graph = random_graph(10, 100 + seed)?;
        let labeled: Vec<(u32, u8)> = (0..10).map(|i| (i as u32, (i % 2) as u8)).collect();
        let template = IgEncoder::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let mut flat = template.flat_params();
        generic_point(&mut flat, seed);
        let err = grad_check(
            |p| ig_loss_and_grad(&template, &graph, &labeled, p).map(|(l, _)| l),
            |p| ig_loss_and_grad(&template, &graph, &labeled, p).map(|(_, g)| g),
            &flat,
            EPS_FD,
        )?;
        worst = worst.max(err);
    }
    report("supervised-bce", worst);

    // Contrastive MI objective (the same loss shape serves both pair
    // samplers).
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let graph = random_graph(10, 200 + seed)?;
        let index = precompute_subgraphs(&graph, 1)?;
        let batch = sample_pairs_sss(&index, 1, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let template =
            ContrastiveEncoder::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(40 + seed))?;
        let mut flat = template.flat_params();
        generic_point(&mut flat, seed);
        let err = grad_check(
            |p| mi_loss_and_grad(&template, &graph, &batch, p).map(|(l, _)| l),
            |p| mi_loss_and_grad(&template, &graph, &batch, p).map(|(_, g)| g),
            &flat,
            EPS_FD,
        )?;
        worst = worst.max(err);
    }
    report("contrastive-mi", worst);

    // Masked attribute-prediction objective.
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let graph = random_graph(10, 300 + seed)?;
        let spec = PseudoLabelSpec {
            idx_a: 1,
            idx_b: 3,
            importance: [0.0; ATTR_COUNT],
        };
        let template = SsaEncoder::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let mut flat = template.flat_params();
        generic_point(&mut flat, seed);
        let err = grad_check(
            |p| gmml_loss_and_grad(&template, &graph, &spec, p).map(|(l, _)| l),
            |p| gmml_loss_and_grad(&template, &graph, &spec, p).map(|(_, g)| g),
            &flat,
            EPS_FD,
        )?;
        worst = worst.max(err);
    }
    report("masked-attribute", worst);

    if failures > 0 {
        return Err(Error::check(format!(
            "{failures} gradient check(s) exceeded {TOLERANCE:.0e}"
        )));
    }
    Ok(())
}
