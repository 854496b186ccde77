//! Per-agent state featurization for the pursuit domain.

use serde::{Deserialize, Serialize};

use crate::pursuit::{wrap_delta, WorldState};

/// Offsets are clamped to this radius when turned into emission symbols.
pub const SYMBOL_RADIUS: i32 = 2;
/// Number of distinct emission symbols, `(2 * SYMBOL_RADIUS + 1)^2`.
pub const NUM_SYMBOLS: usize = ((2 * SYMBOL_RADIUS + 1) * (2 * SYMBOL_RADIUS + 1)) as usize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    /// Append a one-hot of the agent's decoded latent role.
    pub role_feature: bool,
}

impl FeatureFlags {
    /// Feature dimensionality for `k` agents.
    pub fn dims(&self, k: usize) -> usize {
        let base = 2 + 2 * k.saturating_sub(1) + k;
        if self.role_feature {
            base + k
        } else {
            base
        }
    }
}

/// Feature vector of predator `agent`:
///
/// * prey minus own position (2),
/// * each other predator minus own position, in index order (`2(K-1)`),
/// * one-hot of the agent's own index (`K`),
/// * one-hot of `roles[agent]` if role features are on (`K`).
///
/// All offsets are toroidally wrapped, so the vector is invariant under global
/// translations of the world.
pub fn featurize(
    world: &WorldState,
    agent: usize,
    flags: FeatureFlags,
    roles: Option<&[usize]>,
) -> Vec<f64> {
    let k = world.num_predators();
    let g = world.grid_side;
    let me = world.predators[agent];
    let mut x = Vec::with_capacity(flags.dims(k));
    let (dx, dy) = wrap_delta(me, world.prey, g);
    x.extend([dx as f64, dy as f64]);
    for (j, &other) in world.predators.iter().enumerate() {
        if j != agent {
            let (dx, dy) = wrap_delta(me, other, g);
            x.extend([dx as f64, dy as f64]);
        }
    }
    x.extend((0..k).map(|j| if j == agent { 1.0 } else { 0.0 }));
    if flags.role_feature {
        let role = roles.map(|r| r[agent]);
        x.extend((0..k).map(|j| if Some(j) == role { 1.0 } else { 0.0 }));
    }
    x
}

/// Emission symbol of predator `agent`: its offset from the prey, each
/// coordinate clamped to `[-SYMBOL_RADIUS, SYMBOL_RADIUS]`.
pub fn offset_symbol(world: &WorldState, agent: usize) -> usize {
    let (dx, dy) = wrap_delta(world.prey, world.predators[agent], world.grid_side);
    let r = SYMBOL_RADIUS;
    let side = 2 * r + 1;
    ((dx.clamp(-r, r) + r) * side + (dy.clamp(-r, r) + r)) as usize
}

/// Inverse of the symbol map, for reporting.
pub fn symbol_offset(symbol: usize) -> (i32, i32) {
    let side = 2 * SYMBOL_RADIUS + 1;
    let s = symbol as i32;
    (s / side - SYMBOL_RADIUS, s % side - SYMBOL_RADIUS)
}
