//! Crafting chain on a grid: build a bridge over the river and mine the gem.
//!
//! Tech tree: grass → rope; wood + rope → bridge; bridge applied at the river;
//! wood → stick; wood + stick → wood pickaxe; stone needs a wood pickaxe;
//! stick + stone → stone pickaxe; the gem needs a stone pickaxe and lies across
//! the river, so `goto_gem` only works once the bridge is built. Crafting
//! needs the agent to face the crafting table. Resource sources are not
//! consumed. Inventory counts saturate at [`INVENTORY_CAP`].

use super::grid::{approaches_free, distinct_cells, facing, front, go_to, Grid, GridWorld, EAST, NORTH, SOUTH, WEST};
use super::rules::Tracker;
use crate::factored::{Factor, FactorSchema};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const AGENT_POS: usize = 0;
pub const AGENT_DIR: usize = 1;
pub const GRASS: usize = 2;
pub const WOOD: usize = 3;
pub const STONE: usize = 4;
pub const ROPE: usize = 5;
pub const BRIDGE: usize = 6;
pub const STICK: usize = 7;
pub const WOOD_PICKAXE: usize = 8;
pub const STONE_PICKAXE: usize = 9;
pub const GEM: usize = 10;
pub const BRIDGE_BUILT: usize = 11;
pub const GRASS_POS: usize = 12;
pub const TREE_POS: usize = 13;
pub const STONE_POS: usize = 14;
pub const TABLE_POS: usize = 15;
pub const RIVER_POS: usize = 16;
pub const GEM_POS: usize = 17;

pub const INVENTORY_CAP: usize = 4;

pub const GOTO_GRASS: usize = 0;
pub const GOTO_TREE: usize = 1;
pub const GOTO_STONE: usize = 2;
pub const GOTO_TABLE: usize = 3;
pub const GOTO_RIVER: usize = 4;
pub const GOTO_GEM: usize = 5;
pub const PICK: usize = 6;
pub const APPLY: usize = 7;
pub const CRAFT_ROPE: usize = 8;
pub const CRAFT_BRIDGE: usize = 9;
pub const CRAFT_STICK: usize = 10;
pub const CRAFT_WOOD_PICKAXE: usize = 11;
pub const CRAFT_STONE_PICKAXE: usize = 12;

const ACTIONS: &[&str] = &[
    "goto_grass",
    "goto_tree",
    "goto_stone",
    "goto_table",
    "goto_river",
    "goto_gem",
    "pick",
    "apply_bridge",
    "craft_rope",
    "craft_bridge",
    "craft_stick",
    "craft_wood_pickaxe",
    "craft_stone_pickaxe",
];
const STAGES: &[&str] = &[
    "rope",
    "bridge_crafted",
    "bridge_built",
    "stick",
    "wood_pickaxe",
    "stone",
    "stone_pickaxe",
    "gem",
];

/// Approach side of grass, tree, stone, table, river and gem.
const SIDES: [usize; 6] = [SOUTH, SOUTH, EAST, WEST, NORTH, SOUTH];
const ENTITY_POS: [usize; 6] = [GRASS_POS, TREE_POS, STONE_POS, TABLE_POS, RIVER_POS, GEM_POS];

/// `(output, ingredients)` per craft action, in action order.
const RECIPES: [(usize, &[usize]); 5] = [
    (ROPE, &[GRASS]),
    (BRIDGE, &[WOOD, ROPE]),
    (STICK, &[WOOD]),
    (WOOD_PICKAXE, &[WOOD, STICK]),
    (STONE_PICKAXE, &[STICK, STONE]),
];

#[derive(Clone, Debug)]
pub struct Minecraft2d {
    grid: Grid,
    schema: FactorSchema,
}

impl Minecraft2d {
    pub fn new(size: usize) -> Self {
        let grid = Grid { size };
        let cells = grid.cells();
        let inv = INVENTORY_CAP + 1;
        let mut factors = vec![Factor::categorical("agent_pos", cells), Factor::categorical("agent_dir", 4)];
        for name in ["grass", "wood", "stone", "rope", "bridge", "stick", "wood_pickaxe", "stone_pickaxe", "gem"] {
            factors.push(Factor::categorical(name, inv));
        }
        factors.push(Factor::categorical("bridge_built", 2));
        for name in ["grass_pos", "tree_pos", "stone_pos", "table_pos", "river_pos", "gem_pos"] {
            factors.push(Factor::categorical(name, cells));
        }
        let schema = FactorSchema::new(factors, ACTIONS.len()).expect("valid schema");
        Self { grid, schema }
    }
}

fn recipe_writes(k: usize) -> &'static [usize] {
    match k {
        0 => &[GRASS, ROPE],
        1 => &[WOOD, ROPE, BRIDGE],
        2 => &[WOOD, STICK],
        3 => &[WOOD, STICK, WOOD_PICKAXE],
        _ => &[STONE, STICK, STONE_PICKAXE],
    }
}

impl GridWorld for Minecraft2d {
    fn name(&self) -> &'static str {
        "minecraft2d"
    }

    fn schema(&self) -> &FactorSchema {
        &self.schema
    }

    fn grid(&self) -> Grid {
        self.grid
    }

    fn default_max_steps(&self) -> usize {
        100
    }

    fn action_names(&self) -> &'static [&'static str] {
        ACTIONS
    }

    fn writes(&self, action: usize) -> &'static [usize] {
        match action {
            GOTO_GRASS..=GOTO_GEM => &[AGENT_POS, AGENT_DIR],
            PICK => &[GRASS, WOOD, STONE, GEM],
            APPLY => &[BRIDGE, BRIDGE_BUILT],
            _ => recipe_writes(action - CRAFT_ROPE),
        }
    }

    fn apply(&self, action: usize, t: &mut Tracker) {
        let g = self.grid;
        match action {
            GOTO_GRASS..=GOTO_GEM => {
                let k = action - GOTO_GRASS;
                if action == GOTO_GEM && !t.guard(|r| r.get(BRIDGE_BUILT) == 1) {
                    return;
                }
                go_to(g, t, AGENT_POS, AGENT_DIR, ENTITY_POS[k], SIDES[k]);
            }
            PICK => {
                let got = t.check(|r| {
                    let cell = front(g, r, AGENT_POS, AGENT_DIR)?;
                    if cell == r.get(GRASS_POS) {
                        Some(GRASS)
                    } else if cell == r.get(TREE_POS) {
                        Some(WOOD)
                    } else if cell == r.get(STONE_POS) {
                        (r.get(WOOD_PICKAXE) > 0).then_some(STONE)
                    } else if cell == r.get(GEM_POS) {
                        (r.get(STONE_PICKAXE) > 0).then_some(GEM)
                    } else {
                        None
                    }
                });
                if let Some(item) = got {
                    t.set(item, |r| (r.get(item) + 1).min(INVENTORY_CAP));
                }
            }
            APPLY => {
                if t.guard(|r| {
                    r.get(BRIDGE) > 0 && r.get(BRIDGE_BUILT) == 0 && facing(g, r, AGENT_POS, AGENT_DIR, RIVER_POS)
                }) {
                    t.set(BRIDGE, |r| r.get(BRIDGE) - 1);
                    t.set(BRIDGE_BUILT, |_| 1);
                }
            }
            _ => {
                let (out, ingredients) = RECIPES[action - CRAFT_ROPE];
                if t.guard(|r| {
                    ingredients.iter().all(|&i| r.get(i) > 0)
                        && r.get(out) < INVENTORY_CAP
                        && facing(g, r, AGENT_POS, AGENT_DIR, TABLE_POS)
                }) {
                    for &i in ingredients {
                        t.set(i, |r| r.get(i) - 1);
                    }
                    t.set(out, |r| r.get(out) + 1);
                }
            }
        }
    }

    fn sample_layout(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let c = distinct_cells(self.grid, 7, rng);
        let mut s = vec![0; 18];
        s[AGENT_POS] = c[0];
        s[AGENT_DIR] = rng.random_range(0..4);
        for (k, &f) in ENTITY_POS.iter().enumerate() {
            s[f] = c[k + 1];
        }
        s
    }

    fn approachable(&self, s: &[usize]) -> bool {
        let entities: Vec<usize> = ENTITY_POS.iter().map(|&f| s[f]).collect();
        let approaches: Vec<(usize, usize)> = entities.iter().copied().zip(SIDES).collect();
        approaches_free(self.grid, &approaches, &entities)
    }

    fn stage_names(&self) -> &'static [&'static str] {
        STAGES
    }

    fn stage_reached(&self, stage: usize, s: &[usize]) -> bool {
        match stage {
            0 => s[ROPE] > 0,
            1 => s[BRIDGE] > 0,
            2 => s[BRIDGE_BUILT] == 1,
            3 => s[STICK] > 0,
            4 => s[WOOD_PICKAXE] > 0,
            5 => s[STONE] > 0,
            6 => s[STONE_PICKAXE] > 0,
            _ => s[GEM] > 0,
        }
    }

    fn scripted(&self, s: &[usize]) -> usize {
        let facing = |target: usize| self.grid.step(s[AGENT_POS], s[AGENT_DIR]) == Some(s[target]);
        let gather = |src: usize, goto: usize| if facing(src) { PICK } else { goto };
        let craft = |act: usize| if facing(TABLE_POS) { act } else { GOTO_TABLE };
        if s[BRIDGE_BUILT] == 0 {
            if s[BRIDGE] > 0 {
                return if facing(RIVER_POS) { APPLY } else { GOTO_RIVER };
            }
            if s[ROPE] == 0 {
                return if s[GRASS] == 0 { gather(GRASS_POS, GOTO_GRASS) } else { craft(CRAFT_ROPE) };
            }
            return if s[WOOD] == 0 { gather(TREE_POS, GOTO_TREE) } else { craft(CRAFT_BRIDGE) };
        }
        if s[STONE_PICKAXE] > 0 {
            return if facing(GEM_POS) { PICK } else { GOTO_GEM };
        }
        if s[STICK] == 0 {
            return if s[WOOD] == 0 { gather(TREE_POS, GOTO_TREE) } else { craft(CRAFT_STICK) };
        }
        if s[WOOD_PICKAXE] == 0 {
            return if s[WOOD] == 0 { gather(TREE_POS, GOTO_TREE) } else { craft(CRAFT_WOOD_PICKAXE) };
        }
        if s[STONE] == 0 {
            return gather(STONE_POS, GOTO_STONE);
        }
        craft(CRAFT_STONE_PICKAXE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::grid::{transition, GridConfig, GridEnv};
    use crate::envs::FactoredEnv;
    use std::collections::{HashSet, VecDeque};

    fn at_table(w: &Minecraft2d) -> Vec<usize> {
        let mut e = GridEnv::new(w.clone(), GridConfig::default());
        e.reset(1);
        let (s, _, _) = transition(w, e.classes(), GOTO_TABLE);
        s
    }

    #[test]
    fn craft_rope_consumes_grass() {
        let w = Minecraft2d::new(10);
        let mut s = at_table(&w);
        s[GRASS] = 2;
        let (n, g, fired) = transition(&w, &s, CRAFT_ROPE);
        assert!(fired);
        assert_eq!((n[GRASS], n[ROPE]), (1, 1));
        for i in [GRASS, AGENT_POS, TABLE_POS, 18] {
            assert!(g.get(i, ROPE), "missing edge {i}");
        }
        assert!(!g.get(TREE_POS, ROPE));
    }

    #[test]
    fn stone_pickaxe_needs_stick() {
        let w = Minecraft2d::new(10);
        let mut s = at_table(&w);
        s[STONE] = 1;
        let (n, _, fired) = transition(&w, &s, CRAFT_STONE_PICKAXE);
        assert!(!fired);
        assert_eq!(n, s);
    }

    /// Breadth-first search over primitive actions on a small grid.
    #[test]
    fn shortest_solution_is_long() {
        let w = Minecraft2d::new(6);
        let mut e = GridEnv::new(w.clone(), GridConfig { size: 6, ..Default::default() });
        e.reset(0);
        let start = e.classes().to_vec();
        let mut seen = HashSet::from([start.clone()]);
        let mut queue = VecDeque::from([(start, 0usize)]);
        let mut best = None;
        while let Some((s, d)) = queue.pop_front() {
            if s[GEM] > 0 {
                best = Some(d);
                break;
            }
            for a in 0..ACTIONS.len() {
                let (n, _, _) = transition(&w, &s, a);
                if seen.insert(n.clone()) {
                    queue.push_back((n, d + 1));
                }
            }
        }
        let d = best.expect("gem reachable");
        assert!(d >= 12, "solved in {d} steps");
    }

    #[test]
    fn scripted_policy_collects_gem() {
        let mut e = GridEnv::new(Minecraft2d::new(10), GridConfig::default());
        for seed in 0..20 {
            e.reset(seed);
            loop {
                let st = e.step(e.scripted_action()).unwrap();
                if st.done {
                    assert_eq!(st.reward, 1.0, "seed {seed}");
                    break;
                }
            }
            assert_eq!(e.stage(), 8);
        }
    }
}
