//! Moving-squares clips for next-frame prediction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dgp::stream_rng;
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoKind {
    /// Inputs carry clipped Gaussian pixel noise.
    NoisySquares,
    /// Noise-free inputs.
    ShiftedSquares,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoSpec {
    pub kind: VideoKind,
    /// Input frames per sequence; the target is the frame after them.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive range of squares per sequence.
    pub squares: [usize; 2],
    /// Inclusive range of square side lengths.
    pub size: [usize; 2],
    /// Inclusive range of per-axis speed magnitudes, pixels per frame.
    pub speed: [usize; 2],
    /// Fixed `[dx, dy]` velocity for every square, overriding `speed`.
    pub velocity: Option<[i64; 2]>,
    /// Standard deviation of the pixel noise (noisy kind only).
    pub noise: f64,
    pub seed: u64,
}

impl Default for VideoSpec {
    fn default() -> Self {
        VideoSpec {
            kind: VideoKind::NoisySquares,
            frames: 10,
            height: 40,
            width: 40,
            squares: [2, 2],
            size: [4, 8],
            speed: [2, 3],
            velocity: None,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl VideoSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [usize; 2]| r[0] <= r[1];
        if self.frames < 2 {
            return Err(Error::invalid("video needs at least 2 input frames"));
        }
        if !(ordered(self.squares) && ordered(self.size) && ordered(self.speed)) {
            return Err(Error::invalid(
                "video ranges must be [low, high] with low <= high",
            ));
        }
        if self.squares[1] == 0 || self.size[0] == 0 {
            return Err(Error::invalid(
                "video needs at least one square of positive size",
            ));
        }
        if self.size[1] > self.height.min(self.width) {
            return Err(Error::invalid(format!(
                "square size {} does not fit a {}×{} frame",
                self.size[1], self.height, self.width
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::invalid("noise must be finite and >= 0"));
        }
        Ok(())
    }
}

struct Square {
    row: i64,
    col: i64,
    side: i64,
    dy: i64,
    dx: i64,
}

fn render(squares: &[Square], t: i64, h: usize, w: usize, out: &mut [f64]) {
    for s in squares {
        let r0 = s.row + s.dy * t;
        let c0 = s.col + s.dx * t;
        for r in r0.max(0)..(r0 + s.side).min(h as i64) {
            for c in c0.max(0)..(c0 + s.side).min(w as i64) {
                out[r as usize * w + c as usize] = 1.0;
            }
        }
    }
}

/// One clip: `frames + 1` clean binary frames, the first `frames` optionally noised.
fn clip(spec: &VideoSpec, index: usize) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (spec.height, spec.width);
    let mut rng = stream_rng(spec.seed, index as u64);
    let count = rng.gen_range(spec.squares[0]..=spec.squares[1]);
    let velocity = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mag = rng.gen_range(spec.speed[0]..=spec.speed[1]) as i64;
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    };
    let squares: Vec<Square> = (0..count)
        .map(|_| {
            let side = rng.gen_range(spec.size[0]..=spec.size[1]);
            // placed fully inside the window on the target frame, so squares
            // may enter from outside during the input frames
            let row = rng.gen_range(0..=h - side) as i64;
            let col = rng.gen_range(0..=w - side) as i64;
            let (dx, dy) = match spec.velocity {
                Some([dx, dy]) => (dx, dy),
                None => (velocity(&mut rng), velocity(&mut rng)),
            };
            let t = spec.frames as i64;
            Square {
                row: row - dy * t,
                col: col - dx * t,
                side: side as i64,
                dy,
                dx,
            }
        })
        .collect();
    let px = h * w;
    let mut inputs = vec![0.0; spec.frames * px];
    for t in 0..spec.frames {
        render(&squares, t as i64, h, w, &mut inputs[t * px..(t + 1) * px]);
    }
    let mut target = vec![0.0; px];
    render(&squares, spec.frames as i64, h, w, &mut target);
    if spec.kind == VideoKind::NoisySquares && spec.noise > 0.0 {
        for v in inputs.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = (*v + spec.noise * n).clamp(0.0, 1.0);
        }
    }
    (inputs, target)
}

/// Returns inputs `[N×T×H×W×1]` and next-frame targets `[N×H×W×1]` with
/// values in `{0, 1}`. Sequence `i` draws from stream `i` of the seed.
pub fn generate_video(spec: &VideoSpec, n_sequences: usize) -> Result<(Tensor, Tensor)> {
    spec.validate()?;
    if n_sequences == 0 {
        return Err(Error::invalid("need at least one sequence"));
    }
    let idx: Vec<usize> = (0..n_sequences).collect();
    let clips = parallel::map(&idx, |&i| clip(spec, i));
    let (h, w, t) = (spec.height, spec.width, spec.frames);
    let mut inputs = Vec::with_capacity(n_sequences * t * h * w);
    let mut targets = Vec::with_capacity(n_sequences * h * w);
    for (x, y) in clips {
        inputs.extend(x);
        targets.extend(y);
    }
    Ok((
        Tensor::new(vec![n_sequences, t, h, w, 1], inputs)?,
        Tensor::new(vec![n_sequences, h, w, 1], targets)?,
    ))
}
