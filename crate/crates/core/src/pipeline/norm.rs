use serde::{Deserialize, Serialize};

use crate::schema::{INPUT_DIM, OUTPUT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Per-channel z-score statistics for the model's input and output layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

/// Population mean and std of each column; zero-variance columns get std 1.
fn column_stats<const N: usize>(rows: &[[f64; N]]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; N];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; N];
    for r in rows {
        for c in 0..N {
            var[c] += (r[c] - mean[c]).powi(2);
        }
    }
    let std = var
        .into_iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = (v / n).sqrt();
            if s > 1e-12 * (1.0 + m.abs()) { s } else { 1.0 }
        })
        .collect();
    (mean, std)
}

impl NormStats {
    /// Fit on the packed input and output rows of the training split.
    pub fn fit(inputs: &[[f64; INPUT_DIM]], outputs: &[[f64; OUTPUT_DIM]]) -> Self {
        assert!(!inputs.is_empty() && !outputs.is_empty(), "cannot fit statistics on an empty split");
        let (input_mean, input_std) = column_stats(inputs);
        let (output_mean, output_std) = column_stats(outputs);
        NormStats { input_mean, input_std, output_mean, output_std }
    }

    /// Statistics that leave every value unchanged.
    pub fn identity(d_in: usize, d_out: usize) -> Self {
        NormStats {
            input_mean: vec![0.0; d_in],
            input_std: vec![1.0; d_in],
            output_mean: vec![0.0; d_out],
            output_std: vec![1.0; d_out],
        }
    }

    /// Normalise or restore a row-major block whose rows are input vectors.
    pub fn zscore_input(&self, block: &mut [f64], dir: Direction) {
        apply(&self.input_mean, &self.input_std, block, dir);
    }

    /// Same as [`Self::zscore_input`] for output-layout rows.
    pub fn zscore_output(&self, block: &mut [f64], dir: Direction) {
        apply(&self.output_mean, &self.output_std, block, dir);
    }
}

fn apply(mean: &[f64], std: &[f64], block: &mut [f64], dir: Direction) {
    let d = mean.len();
    assert_eq!(block.len() % d, 0, "block width does not match the statistics");
    for row in block.chunks_exact_mut(d) {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
            *v = match dir {
                Direction::Forward => (*v - m) / s,
                Direction::Inverse => *v * s + m,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(n: usize, seed: u64) -> (Vec<[f64; INPUT_DIM]>, Vec<[f64; OUTPUT_DIM]>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let i = (0..n).map(|_| std::array::from_fn(|c| rng.gen_range(-5.0..5.0) * c as f64 + 20.0)).collect();
        let o = (0..n).map(|_| std::array::from_fn(|c| rng.gen_range(0.0..100.0) + c as f64)).collect();
        (i, o)
    }

    #[test]
    fn normalized_training_rows_are_standard() {
        let (inp, out) = rows(500, 1);
        let stats = NormStats::fit(&inp, &out);
        let mut flat: Vec<f64> = out.iter().flatten().copied().collect();
        stats.zscore_output(&mut flat, Direction::Forward);
        for c in 0..OUTPUT_DIM {
            let col: Vec<f64> = flat.iter().skip(c).step_by(OUTPUT_DIM).copied().collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let s = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let (mut inp, out) = rows(50, 2);
        inp.iter_mut().for_each(|r| r[0] = 7.5);
        let stats = NormStats::fit(&inp, &out);
        assert_eq!(stats.input_std[0], 1.0);
        let mut flat: Vec<f64> = inp.iter().flatten().copied().collect();
        stats.zscore_input(&mut flat, Direction::Forward);
        assert!(flat.iter().step_by(INPUT_DIM).all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn forward_inverse_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, INPUT_DIM * 3)) {
            let (inp, out) = rows(40, 3);
            let stats = NormStats::fit(&inp, &out);
            let mut block = vals.clone();
            stats.zscore_input(&mut block, Direction::Forward);
            stats.zscore_input(&mut block, Direction::Inverse);
            for (a, b) in block.iter().zip(&vals) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
