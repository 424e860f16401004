use alloc::vec::Vec;

use crate::envs::{GridAction, GridLayout};
use crate::error::{Error, Result};

/// Shortest action sequence from `from` to the goal using only `actions`.
///
/// Among equally short plans the lexicographically first one under the
/// order of `actions` is returned: at every cell the first action that
/// decreases the remaining distance is taken.
pub fn bfs_plan(layout: &GridLayout, from: (usize, usize), actions: &[GridAction]) -> Result<Vec<GridAction>> {
    let n = layout.size();
    let dist = layout.distances_to_goal(actions);
    let mut remaining = dist[from.0 * n + from.1]
        .ok_or_else(|| Error::Planning(alloc::format!("goal unreachable from {from:?} with the given action set")))?;
    let mut plan = Vec::with_capacity(remaining);
    let mut cell = from;
    while remaining > 0 {
        let (a, next) = actions
            .iter()
            .find_map(|&a| {
                let next = layout.target(cell, a)?;
                (dist[next.0 * n + next.1] == Some(remaining - 1)).then_some((a, next))
            })
            .ok_or_else(|| Error::Planning("distance field is inconsistent".into()))?;
        plan.push(a);
        cell = next;
        remaining -= 1;
    }
    Ok(plan)
}
