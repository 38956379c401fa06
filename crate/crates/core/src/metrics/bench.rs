use std::time::Instant;

use super::report::MeanStd;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    /// Optimizer iterations (or forward passes) per second.
    pub inference_fps: MeanStd,
    pub iterations: MeanStd,
    /// Corrected frames per second.
    pub frame_fps: f64,
    pub samples: usize,
}

impl BenchReport {
    pub fn to_text(&self, method: &str) -> String {
        format!(
            "method,inference_fps,inference_fps_std,iterations,iterations_std,frame_fps,samples\n{method},{:.3},{:.3},{:.3},{:.3},{:.3},{}\n",
            self.inference_fps.mean,
            self.inference_fps.std,
            self.iterations.mean,
            self.iterations.std,
            self.frame_fps,
            self.samples
        )
    }
}

/// Time `step(i)` for `warmup` untimed then `samples` timed calls. `step`
/// returns the iterations it spent; everything outside it (data loading,
/// rendering for display) is excluded by construction.
///
/// For a one-shot method the frame rate is measured directly; otherwise it
/// is the per-iteration rate divided by the mean iteration count.
pub fn bench(warmup: usize, samples: usize, one_shot: bool, mut step: impl FnMut(usize) -> Result<u32>) -> Result<BenchReport> {
    for i in 0..warmup {
        step(i)?;
    }
    let mut rates = Vec::with_capacity(samples);
    let mut frame_rates = Vec::with_capacity(samples);
    let mut iters = Vec::with_capacity(samples);
    for i in 0..samples {
        let t0 = Instant::now();
        let n = step(warmup + i)?;
        let dt = t0.elapsed().as_secs_f64().max(1e-9);
        rates.push(n.max(1) as f64 / dt);
        frame_rates.push(1.0 / dt);
        iters.push(n as f64);
    }
    let inference_fps = MeanStd::of(&rates);
    let iterations = MeanStd::of(&iters);
    let frame_fps = if one_shot { MeanStd::of(&frame_rates).mean } else { inference_fps.mean / iterations.mean.max(1.0) };
    Ok(BenchReport { inference_fps, iterations, frame_fps, samples })
}
