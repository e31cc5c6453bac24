use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::TimeGrid;

/// Channel index of the state noise `W`.
pub const CHANNEL_W: u64 = 0;
/// Channel index of the observation noise `Y` (Brownian under `P`).
pub const CHANNEL_Y: u64 = 1;

/// Brownian increments `ΔW`, `ΔY` for every path and step, drawn under the
/// reference measure.
///
/// Stream layout: a ChaCha8 key derived from `seed`, stream number
/// `2 * path + channel`, and the block position fixed by the step index
/// (Box–Muller pairs consume steps `2i` and `2i + 1` together). Each cell is a
/// pure function of `(seed, path, step, channel)`, so regeneration is
/// bit-identical for any worker count.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseEnsemble {
    grid: TimeGrid,
    paths: usize,
    seed: u64,
    dw: Vec<f64>,
    dy: Vec<f64>,
}

impl NoiseEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn dw(&self, path: usize, step: usize) -> f64 {
        self.dw[path * self.grid.steps() + step]
    }

    #[inline]
    pub fn dy(&self, path: usize, step: usize) -> f64 {
        self.dy[path * self.grid.steps() + step]
    }

    pub fn dw_path(&self, path: usize) -> &[f64] {
        let n = self.grid.steps();
        &self.dw[path * n..(path + 1) * n]
    }

    pub fn dy_path(&self, path: usize) -> &[f64] {
        let n = self.grid.steps();
        &self.dy[path * n..(path + 1) * n]
    }

    /// Overwrites observation increments of one path; used to probe adaptedness.
    pub fn with_dy_path(mut self, path: usize, increments: &[f64]) -> Self {
        let n = self.grid.steps();
        self.dy[path * n..(path + 1) * n].copy_from_slice(increments);
        self
    }

    /// The first `paths` paths of this ensemble.
    pub fn truncated(&self, paths: usize) -> Self {
        let n = self.grid.steps();
        let paths = paths.min(self.paths);
        Self {
            grid: self.grid,
            paths,
            seed: self.seed,
            dw: self.dw[..paths * n].to_vec(),
            dy: self.dy[..paths * n].to_vec(),
        }
    }
}

/// Draws the increment ensemble for `(grid, paths, seed)`.
pub fn sample_noise(grid: TimeGrid, paths: usize, seed: u64) -> NoiseEnsemble {
    assert!(paths >= 1, "need at least one path");
    let n = grid.steps();
    let scale = grid.dt().sqrt();
    let mut dw = vec![0.0; paths * n];
    let mut dy = vec![0.0; paths * n];
    dw.par_chunks_mut(n)
        .zip(dy.par_chunks_mut(n))
        .enumerate()
        .for_each(|(path, (w, y))| {
            fill_channel(w, seed, path as u64, CHANNEL_W, scale);
            fill_channel(y, seed, path as u64, CHANNEL_Y, scale);
        });
    NoiseEnsemble {
        grid,
        paths,
        seed,
        dw,
        dy,
    }
}

fn fill_channel(out: &mut [f64], seed: u64, path: u64, channel: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * path + channel);
    for pair in out.chunks_mut(2) {
        // (0, 1] keeps the logarithm finite
        let u1 = 1.0 - rng.gen::<f64>();
        let u2 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        pair[0] = scale * r * (TAU * u2).cos();
        if pair.len() > 1 {
            pair[1] = scale * r * (TAU * u2).sin();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_increments() {
        let g = TimeGrid::new(1, 1.0).unwrap();
        assert_eq!(sample_noise(g, 1, 42), sample_noise(g, 1, 42));
        assert_ne!(sample_noise(g, 1, 42).dw, sample_noise(g, 1, 43).dw);
    }

    #[test]
    fn worker_count_does_not_change_draws() {
        let g = TimeGrid::new(16, 1.0).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let eight = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap();
        let a = one.install(|| sample_noise(g, 300, 5));
        let b = eight.install(|| sample_noise(g, 300, 5));
        assert_eq!(a, b);
    }

    #[test]
    fn paths_are_prefix_stable() {
        // a cell depends only on (seed, path, step, channel), not on M
        let g = TimeGrid::new(8, 1.0).unwrap();
        let small = sample_noise(g, 3, 11);
        let large = sample_noise(g, 10, 11);
        assert_eq!(small, large.truncated(3));
    }

    #[test]
    fn increments_are_centred_and_uncorrelated() {
        let g = TimeGrid::new(64, 1.0).unwrap();
        let m = 100_000;
        let e = sample_noise(g, m, 7);
        let cells = (m * 64) as f64;
        let dt = g.dt();
        let mean_w = e.dw.iter().sum::<f64>() / cells;
        assert!(mean_w.abs() <= 4.0 / cells.sqrt() * dt.sqrt(), "{mean_w}");
        let var_w = e.dw.iter().map(|v| v * v).sum::<f64>() / cells;
        assert!((var_w / dt - 1.0).abs() < 0.01);
        let corr = e.dw.iter().zip(&e.dy).map(|(a, b)| a * b).sum::<f64>() / cells / dt;
        assert!(corr.abs() <= 4.0 / cells.sqrt(), "{corr}");
    }
}
