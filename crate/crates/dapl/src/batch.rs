//! Seed sweeps: the same program simulated under many seeds. Runs are
//! independent, so the sweep is data-parallel when the `parallel` feature is
//! on (the default) and a plain sequential map otherwise. Results come back
//! in seed order either way.

use crate::ast::Program;
use crate::sim::{run, RunResult, SimConfig};

pub fn run_batch(program: &Program, base: &SimConfig, seeds: &[u64]) -> Vec<RunResult> {
    let one = |seed: &u64| run(program, &SimConfig { seed: *seed, ..base.clone() });
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(one).collect()
    }
}
