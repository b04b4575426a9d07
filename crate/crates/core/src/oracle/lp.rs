//! Multi-user deadline feasibility as a linear program: each job's bits are
//! split across the slots of its window, and every slot's time shares sum
//! to at most one.

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use super::Job;
use crate::error::{Error, Result};

/// Returns bits per job per slot, or `None` when no split meets every
/// deadline. `rho[user][slot]`.
pub fn multi_user_schedule(
    jobs: &[Job],
    rho: &[Vec<f64>],
    tau: f64,
) -> Result<Option<Vec<Vec<f64>>>> {
    let k = rho.first().map_or(0, Vec::len);
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    // vars[j] = (slot, variable) pairs; a variable is the fraction of job j
    // carried in that slot.
    let mut vars = Vec::with_capacity(jobs.len());
    let mut per_slot: Vec<Vec<(microlp::Variable, f64)>> = vec![Vec::new(); k];
    for job in jobs {
        let mut row = Vec::new();
        for slot in job.release..job.deadline.min(k) {
            let cap = rho[job.user][slot] * tau;
            if cap <= 0.0 {
                continue;
            }
            let v = problem.add_var(0.0, (0.0, 1.0));
            per_slot[slot].push((v, job.bits / cap));
            row.push((slot, v));
        }
        if row.is_empty() {
            return Ok(None);
        }
        let terms: Vec<_> = row.iter().map(|&(_, v)| (v, 1.0)).collect();
        problem.add_constraint(terms.as_slice(), ComparisonOp::Eq, 1.0);
        vars.push(row);
    }
    for terms in per_slot.iter().filter(|t| !t.is_empty()) {
        problem.add_constraint(terms.as_slice(), ComparisonOp::Le, 1.0 + 1e-9);
    }
    let solution = match problem.solve() {
        Ok(outcome) => match outcome.into_solution() {
            Ok(s) => s,
            Err(_) => return Err(Error::Solver("LP solve interrupted".into())),
        },
        Err(microlp::Error::Infeasible) => return Ok(None),
        Err(e) => return Err(Error::Solver(e.to_string())),
    };
    let mut bits = vec![vec![0.0; k]; jobs.len()];
    for (j, row) in vars.iter().enumerate() {
        for &(slot, v) in row {
            bits[j][slot] = solution.var_value(v).max(0.0) * jobs[j].bits;
        }
    }
    Ok(Some(bits))
}
