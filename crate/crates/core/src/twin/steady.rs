/// Streaming steady-state test: converged once `window` consecutive
/// per-step changes all stay below `eps` on every channel.
#[derive(Debug, Clone)]
pub struct SteadyDetector {
    eps: f64,
    window: usize,
    prev: Option<Vec<f64>>,
    quiet: usize,
    steps: usize,
}

impl SteadyDetector {
    pub fn new(eps: f64, window: usize) -> Self {
        SteadyDetector { eps, window, prev: None, quiet: 0, steps: 0 }
    }

    /// Feed the next frame. The first frame is the reference and counts as
    /// step 0. Returns true at the first step satisfying the criterion.
    pub fn push(&mut self, frame: &[f64]) -> bool {
        if let Some(prev) = &self.prev {
            self.steps += 1;
            let quiet = prev.iter().zip(frame).all(|(a, b)| (b - a).abs() < self.eps);
            self.quiet = if quiet { self.quiet + 1 } else { 0 };
        }
        self.prev = Some(frame.to_vec());
        self.quiet >= self.window
    }

    /// Steps seen after the reference frame.
    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Offline form of [`SteadyDetector`] over `trajectory[0..]`, with frame 0 as
/// the reference. Returns the first converged step.
pub fn detect_steady_state(trajectory: &[Vec<f64>], eps: f64, window: usize) -> (bool, Option<usize>) {
    assert!(window >= 2, "window must be at least 2");
    let mut d = SteadyDetector::new(eps, window);
    for (i, f) in trajectory.iter().enumerate() {
        if d.push(f) {
            return (true, Some(i));
        }
    }
    (false, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_converges_at_window() {
        let traj = vec![vec![1.0, -2.0]; 100];
        assert_eq!(detect_steady_state(&traj, 1e-3, 30), (true, Some(30)));
        assert_eq!(detect_steady_state(&traj[..30], 1e-3, 30), (false, None));
    }

    #[test]
    fn steep_ramp_never_converges() {
        let traj: Vec<Vec<f64>> = (0..500).map(|t| vec![0.0, 2e-3 * t as f64]).collect();
        assert_eq!(detect_steady_state(&traj, 1e-3, 30), (false, None));
    }

    #[test]
    fn one_spike_restarts_the_count() {
        let mut traj = vec![vec![0.0]; 100];
        traj[20][0] = 1.0;
        // Steps 20 and 21 are loud; quiet from 22 on.
        assert_eq!(detect_steady_state(&traj, 1e-3, 30), (true, Some(51)));
    }

    #[test]
    fn exponential_decay_matches_slope_threshold() {
        // x(t) = A exp(-t/τ); per-step change ≈ (A/τ) exp(-t/τ) drops below
        // eps at t* = τ ln(A / (eps τ)), and the detector fires `window` later.
        let (a, tau, eps, window) = (5.0, 40.0, 1e-3, 30usize);
        let traj: Vec<Vec<f64>> = (0..2000).map(|t| vec![a * (-(t as f64) / tau).exp()]).collect();
        let (ok, step) = detect_steady_state(&traj, eps, window);
        assert!(ok);
        let t_star = tau * (a / (eps * tau)).ln();
        let step = step.unwrap() as f64;
        assert!((step - t_star).abs() <= window as f64 + 1.0, "step {step}, t* {t_star}");
        assert!(step >= t_star);
    }

    #[test]
    fn any_channel_can_hold_it_open() {
        let traj: Vec<Vec<f64>> = (0..200).map(|t| vec![0.0, if t % 2 == 0 { 0.0 } else { 0.01 }]).collect();
        assert_eq!(detect_steady_state(&traj, 1e-3, 10), (false, None));
    }
}
