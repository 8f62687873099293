//! Small fixed patch encoders used when no precomputed embeddings exist.
//!
//! Both split their input into non-overlapping 16x16 patches, project each
//! patch linearly with fixed pseudo-random weights, and mean-pool. Because
//! the projection is linear, pooling commutes with it: the embedding is the
//! projection of the mean patch plus the bias.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::mel::{FLOOR_DB, N_FRAMES, N_MELS};
use crate::features::MelSpectrogram;

pub const PATCH: usize = 16;
pub const EMBED_DIM: usize = 768;
pub const IMAGE_SIZE: usize = 224;

const AUDIO_SEED: u64 = 0x5eed_a0d1_0000_0001;
const IMAGE_SEED: u64 = 0x5eed_1a6e_0000_0002;

/// Linear patch projection `in_dim -> EMBED_DIM`, row-major `[in][out]`.
struct PatchProjection {
    in_dim: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl PatchProjection {
    fn new(in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (3.0 / in_dim as f32).sqrt();
        let weights = (0..in_dim * EMBED_DIM)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..EMBED_DIM)
            .map(|_| rng.random_range(-0.1f32..0.1))
            .collect();
        PatchProjection {
            in_dim,
            weights,
            bias,
        }
    }

    fn project(&self, mean_patch: &[f64]) -> Vec<f32> {
        let mut out: Vec<f64> = self.bias.iter().map(|&b| b as f64).collect();
        for (i, &x) in mean_patch.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.weights[i * EMBED_DIM..(i + 1) * EMBED_DIM];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w as f64;
            }
        }
        debug_assert_eq!(mean_patch.len(), self.in_dim);
        out.into_iter().map(|v| v as f32).collect()
    }

    fn bias(&self) -> &[f32] {
        &self.bias
    }
}

fn audio_projection() -> &'static PatchProjection {
    static P: OnceLock<PatchProjection> = OnceLock::new();
    P.get_or_init(|| PatchProjection::new(PATCH * PATCH, AUDIO_SEED))
}

fn image_projection() -> &'static PatchProjection {
    static P: OnceLock<PatchProjection> = OnceLock::new();
    P.get_or_init(|| PatchProjection::new(3 * PATCH * PATCH, IMAGE_SEED))
}

/// 768-d audio embedding of a mel spectrogram's non-padded region.
///
/// Values are mapped to `(dB - floor) / 100` so silence is zero. The last
/// patch column of a clip whose length is not a multiple of 16 frames is
/// completed with silence rather than with padding content.
pub fn encode_audio_builtin(m: &MelSpectrogram) -> Vec<f32> {
    let real = m.real_frames().min(N_FRAMES);
    let cols = real.div_ceil(PATCH).max(1);
    let rows = N_MELS / PATCH;
    let mut mean = vec![0.0f64; PATCH * PATCH];
    for pr in 0..rows {
        for pc in 0..cols {
            for i in 0..PATCH {
                for j in 0..PATCH {
                    let t = pc * PATCH + j;
                    if t >= real {
                        continue;
                    }
                    let v = (m.get(pr * PATCH + i, t) - FLOOR_DB) as f64 / 100.0;
                    mean[i * PATCH + j] += v;
                }
            }
        }
    }
    let n = (rows * cols) as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    audio_projection().project(&mean)
}

/// 768-d image embedding of a `[3, 224, 224]` channel-major tensor.
pub fn encode_image_builtin(img: &[f32]) -> Vec<f32> {
    assert_eq!(
        img.len(),
        3 * IMAGE_SIZE * IMAGE_SIZE,
        "image tensor must be [3, 224, 224]"
    );
    let grid = IMAGE_SIZE / PATCH;
    let mut mean = vec![0.0f64; 3 * PATCH * PATCH];
    for c in 0..3 {
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let v = img[(c * IMAGE_SIZE + y) * IMAGE_SIZE + x] as f64;
                mean[(c * PATCH + y % PATCH) * PATCH + x % PATCH] += v;
            }
        }
    }
    let n = (grid * grid) as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    image_projection().project(&mean)
}

pub fn audio_bias() -> &'static [f32] {
    audio_projection().bias()
}

pub fn image_bias() -> &'static [f32] {
    image_projection().bias()
}
