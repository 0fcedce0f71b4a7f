//! Cost-bound sweep over a sequence of information patterns.
//!
//! Patterns are solved in input order. When an earlier pattern with strictly
//! less mode information has a result, it is lifted onto the current pattern
//! and used as the starting point, with its cost level as the upper end of the
//! bisection. Patterns carrying the same information as that earlier one are
//! skipped when choosing the start, so equivalent patterns see identical
//! inputs.

use std::io::Write;

use crate::mode_atlas::InfoPattern;
use crate::model::PlantModel;
use crate::synthesis::{synthesize_neighboring, synthesize_warm, SynthesisConfig, SynthesisError, SynthesisResult};

pub const CSV_HEADER: &str = "pattern,feasible,gamma_bound,iterations,globally_equivalent_all";

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub name: String,
    pub globally_equivalent_all: bool,
    pub outcome: Result<SynthesisResult, SynthesisError>,
    /// Index of the pattern whose result seeded this one.
    pub warm_from: Option<usize>,
}

impl SweepRow {
    pub fn gamma(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.gamma)
    }

    pub fn iterations(&self) -> usize {
        self.outcome.as_ref().map_or(0, |r| r.diagnostics.iterations)
    }
}

fn strictly_coarser(a: &InfoPattern, b: &InfoPattern) -> bool {
    matches!((a.is_refined_by(b), b.is_refined_by(a)), (Ok(true), Ok(false)))
}

/// Runs the sweep; per-pattern failures are kept in the rows.
pub fn run_sweep(model: &PlantModel, patterns: &[(String, InfoPattern)], config: &SynthesisConfig) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = Vec::with_capacity(patterns.len());
    for (k, (name, pattern)) in patterns.iter().enumerate() {
        let seed = (0..k)
            .rev()
            .find(|&j| rows[j].outcome.is_ok() && strictly_coarser(&patterns[j].1, pattern));
        let outcome = match seed {
            Some(j) => {
                let coarse = rows[j].outcome.as_ref().expect("checked above");
                synthesize_warm(model, pattern, config, coarse)
            }
            None => synthesize_neighboring(model, pattern, config),
        };
        if config.solver.verbose {
            match &outcome {
                Ok(r) => eprintln!("sweep {name}: gamma {:.6}", r.gamma),
                Err(e) => eprintln!("sweep {name}: {e}"),
            }
        }
        rows.push(SweepRow {
            name: name.clone(),
            globally_equivalent_all: pattern.all_globally_equivalent(),
            outcome,
            warm_from: seed,
        });
    }
    rows
}

/// Writes the sweep table; numbers use `{}` formatting, which is
/// locale-independent and round-trips.
pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        let gamma = row.gamma().map_or(String::new(), |g| g.to_string());
        writeln!(
            out,
            "{},{},{},{},{}",
            row.name,
            row.outcome.is_ok(),
            gamma,
            row.iterations(),
            row.globally_equivalent_all
        )?;
    }
    Ok(())
}
