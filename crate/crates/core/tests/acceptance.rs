//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::time::Instant;

use kimura_core::experiments::*;
use kimura_core::families::{InitialData, OperatorFamily};
use kimura_core::harness::{EstimateReport, Verdict};
use kimura_core::solver::Scheme;

fn session(operator: OperatorFamily, refinements: Vec<usize>, dt: f64, t_end: f64) -> Session {
    let setup = Setup {
        operator,
        grid: GridSpec {
            cells: refinements[0],
            layers: 10,
            refinements,
        },
        scheme: SchemeSpec {
            scheme: Scheme::CrankNicolson,
            dt,
            t_end,
            save_every: 1,
        },
        initial: InitialData::Profile { tilt: 0.0 },
        initial_alt: InitialData::BesselMode,
    };
    Session::new(setup, "acceptance", 20240601).expect("session")
}

fn zero_weight_1d() -> Session {
    session(
        OperatorFamily::Model {
            n: 1,
            m: 0,
            n0: 1,
            b: 0.0,
            radius: 1.0,
        },
        vec![64, 128, 256],
        1e-3,
        0.6,
    )
}

fn product_2d() -> Session {
    session(
        OperatorFamily::Model {
            n: 2,
            m: 0,
            n0: 2,
            b: 0.0,
            radius: 1.0,
        },
        vec![32, 64],
        2e-3,
        0.6,
    )
}

fn positive_1d() -> Session {
    session(
        OperatorFamily::Model {
            n: 1,
            m: 0,
            n0: 0,
            b: 0.5,
            radius: 1.0,
        },
        vec![64, 128, 256],
        1e-3,
        0.6,
    )
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn summarize(reports: &[EstimateReport]) -> Outcome {
    let pass = reports.iter().all(|r| r.verdict == Verdict::Pass);
    let detail = reports
        .iter()
        .map(|r| {
            let consts: Vec<String> = r
                .constants
                .iter()
                .map(|(k, v)| format!("{k}={v:.4e}"))
                .collect();
            let mut s = format!("[{} {}] {}", r.tag, r.verdict.label(), consts.join(" "));
            if !r.flags.is_empty() {
                s.push_str(&format!(" flags: {}", r.flags.join("; ")));
            }
            s
        })
        .collect::<Vec<_>>()
        .join("\n    ");
    Outcome { pass, detail }
}

fn run(s: &Session, exps: &[Experiment]) -> Vec<EstimateReport> {
    exps.iter()
        .map(|e| s.run(e).unwrap_or_else(|err| panic!("{}: {err}", e.name())))
        .collect()
}

fn main() {
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let z1 = zero_weight_1d();
    let z2 = product_2d();
    let p1 = positive_1d();
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (
            1,
            "conjugation identity",
            Box::new(|| summarize(&run(&z1, &[Experiment::Conjugation(Default::default())]))),
        ),
        (
            2,
            "eigen benchmark",
            Box::new(|| summarize(&run(&z1, &[Experiment::EigenBenchmark(Default::default())]))),
        ),
        (
            3,
            "boundary vanishing rate",
            Box::new(|| {
                let mut r = run(&z1, &[Experiment::VanishingExponent(Default::default())]);
                r.extend(run(
                    &z2,
                    &[Experiment::VanishingExponent(VanishingParams {
                        tolerance: 0.1,
                        ..Default::default()
                    })],
                ));
                summarize(&r)
            }),
        ),
        (
            4,
            "derivative bounds",
            Box::new(|| {
                let mut r = run(&z1, &[Experiment::DerivativeBound(Default::default())]);
                r.extend(run(&z2, &[Experiment::DerivativeBound(Default::default())]));
                summarize(&r)
            }),
        ),
        (
            5,
            "Carleson, Hopf-Oleinik and quotient constants",
            Box::new(|| {
                summarize(&run(
                    &z1,
                    &[Experiment::BoundaryHarnack(Default::default())],
                ))
            }),
        ),
        (
            6,
            "Holder quotient",
            Box::new(|| summarize(&run(&z1, &[Experiment::Holder(Default::default())]))),
        ),
        (
            7,
            "Monte Carlo cross-validation",
            Box::new(|| summarize(&run(&z1, &[Experiment::MonteCarlo(Default::default())]))),
        ),
        (
            8,
            "singular measure",
            Box::new(|| {
                summarize(&run(
                    &z1,
                    &[Experiment::SingularMeasure(Default::default())],
                ))
            }),
        ),
        (
            9,
            "Hardy inequality",
            Box::new(|| summarize(&run(&p1, &[Experiment::Hardy(Default::default())]))),
        ),
        (
            10,
            "Garding probe",
            Box::new(|| summarize(&run(&z1, &[Experiment::Garding(Default::default())]))),
        ),
        (
            11,
            "commutator identity",
            Box::new(|| summarize(&run(&z1, &[Experiment::Commutator(Default::default())]))),
        ),
        (
            12,
            "energy and Sobolev estimates, maximum principle",
            Box::new(|| {
                let e = |x: Vec<u32>, y: Vec<u32>, n: usize| {
                    let mut s = vec![(vec![0; n], y.clone())];
                    s.push((x, y));
                    Experiment::Energy(EnergyParams {
                        sobolev: s,
                        ..Default::default()
                    })
                };
                let mut r = run(&z1, &[e(vec![1], vec![], 1)]);
                r.extend(run(&z2, &[e(vec![1, 0], vec![], 2)]));
                r.extend(run(&p1, &[e(vec![1], vec![], 1)]));
                summarize(&r)
            }),
        ),
    ];
    let mut failed = 0;
    for (k, name, f) in &criteria {
        if filter.is_some_and(|c| c != *k) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {k:>2}: {verdict}  {name} ({:.1} s)",
            start.elapsed().as_secs_f64()
        );
        println!("    {}", out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
