//! The two synchronization engines.
//!
//! Sender-receiver: a sliding window of (local ticks, reference us) pairs
//! fitted by ordinary least squares; the fitted line is the tag's software
//! clock estimate of reference time.
//!
//! Event-based: an integral controller adjusts a rate multiplier so that
//! the software clock's progress over one burst matches the mean event
//! period. Only the rate multiplier needs to survive power loss.
//!
//! The regression line's (offset, slope) and the controller's
//! (rate_multiplier, gain) are kept in distinct types; the source material
//! reuses the same two Greek letters for both.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SyncError {
    /// All local-clock values in the window are equal (vertical line).
    #[error("degenerate regression window: fewer than two distinct local clock values")]
    DegenerateWindow,
    /// `predict` called before any successful fit.
    #[error("regression not fitted")]
    NotFitted,
    /// Last BlockWrite observed without a preceding first BlockWrite.
    #[error("last event received with no stored first event")]
    MissingFirstEvent,
}

/// Ordinary least-squares fit of reference time against local ticks.
///
/// Returns `(offset_us, slope_us_per_tick)` minimizing the sum of squared
/// residuals. Sums are accumulated in 128-bit integers so the result is
/// exact up to the final divisions.
pub fn ls_regress(window: &[(u64, u64)]) -> Result<(f64, f64), SyncError> {
    if window.len() < 2 {
        return Err(SyncError::DegenerateWindow);
    }
    let mut sums = RegressionSums::default();
    for &(cw, cr) in window {
        sums.add(cw, cr);
    }
    sums.solve(window.len())
}

/// Signed synchronization error: predicted minus reference, microseconds.
pub fn sync_error(predicted_us: f64, reference_us: f64) -> f64 {
    predicted_us - reference_us
}

/// Theoretical integral-gain upper bound `2 / (B * f)` for an event period
/// of `B` seconds and a clock frequency of `f` Hz.
pub fn convergence_bound(b_s: f64, f_hz: f64) -> f64 {
    assert!(b_s > 0.0 && f_hz > 0.0);
    2.0 / (b_s * f_hz)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct RegressionSums {
    sum_x: i128,
    sum_y: i128,
    sum_xx: i128,
    sum_xy: i128,
}

impl RegressionSums {
    fn add(&mut self, x: u64, y: u64) {
        let (x, y) = (x as i128, y as i128);
        self.sum_x += x;
        self.sum_y += y;
        self.sum_xx += x * x;
        self.sum_xy += x * y;
    }

    fn remove(&mut self, x: u64, y: u64) {
        let (x, y) = (x as i128, y as i128);
        self.sum_x -= x;
        self.sum_y -= y;
        self.sum_xx -= x * x;
        self.sum_xy -= x * y;
    }

    fn solve(&self, n: usize) -> Result<(f64, f64), SyncError> {
        let n = n as i128;
        let denom = n * self.sum_xx - self.sum_x * self.sum_x;
        if denom == 0 {
            return Err(SyncError::DegenerateWindow);
        }
        let numer = n * self.sum_xy - self.sum_x * self.sum_y;
        let slope = numer as f64 / denom as f64;
        let offset = (self.sum_y as f64 - slope * self.sum_x as f64) / n as f64;
        Ok((offset, slope))
    }
}

/// Sliding window of (C_w ticks, C_r us) pairs with its fitted line.
///
/// Window maintenance is incremental over exact integer sums, so the
/// coefficients are bit-identical to a batch refit of the stored window.
#[derive(Debug, Clone)]
pub struct RegressionState {
    window: VecDeque<(u64, u64)>,
    window_size: usize,
    sums: RegressionSums,
    offset: f64,
    slope: f64,
    fitted: bool,
}

impl RegressionState {
    /// `window_size` pairs are retained, oldest evicted first.
    pub fn new(window_size: usize) -> Self {
        assert!(window_size >= 2);
        RegressionState {
            window: VecDeque::with_capacity(window_size),
            window_size,
            sums: RegressionSums::default(),
            offset: 0.0,
            slope: 0.0,
            fitted: false,
        }
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.window_size
    }

    pub fn window(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.window.iter().copied()
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn coefficients(&self) -> Option<(f64, f64)> {
        self.fitted.then_some((self.offset, self.slope))
    }

    /// Insert a new pair, evicting the oldest if the window is full, and
    /// refit. The fit is kept when the window degenerates mid-stream only
    /// if one existed before; a degenerate first fit leaves the state
    /// unfitted.
    pub fn push(&mut self, cw: u64, cr_us: u64) {
        if self.window.len() == self.window_size {
            let (ox, oy) = self.window.pop_front().expect("window is full");
            self.sums.remove(ox, oy);
        }
        self.window.push_back((cw, cr_us));
        self.sums.add(cw, cr_us);
        if let Ok((offset, slope)) = self.sums.solve(self.window.len()) {
            self.offset = offset;
            self.slope = slope;
            self.fitted = true;
        }
    }

    /// Software-clock estimate of reference time at local reading `cw`.
    pub fn predict(&self, cw: u64) -> Result<f64, SyncError> {
        if !self.fitted {
            return Err(SyncError::NotFitted);
        }
        Ok(self.offset + self.slope * cw as f64)
    }

    /// Drop all pairs and the fit (volatile state lost on power failure).
    pub fn clear(&mut self) {
        self.window.clear();
        self.sums = RegressionSums::default();
        self.fitted = false;
    }
}

/// Integral-controller state for event-based synchronization.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Rate multiplier scaling local ticks into software-clock ticks.
    pub rate_multiplier: f64,
    /// Constant integral gain applied to the per-burst error.
    pub gain: f64,
    /// Mean event period, ticks.
    pub mu_e: f64,
    /// Local time of the first BlockWrite; unset between bursts.
    pub t_f: Option<u64>,
    /// Accumulated software-clock progress, ticks.
    pub software_elapsed: f64,
    /// Admissible rate-multiplier range, `f_nom/f_max ..= f_nom/f_min`.
    pub clamp_min: f64,
    pub clamp_max: f64,
}

impl ControllerState {
    pub fn new(gain: f64, mu_e: f64, clamp_min: f64, clamp_max: f64) -> Self {
        assert!(clamp_min <= 1.0 && 1.0 <= clamp_max);
        ControllerState {
            rate_multiplier: 1.0,
            gain,
            mu_e,
            t_f: None,
            software_elapsed: 0.0,
            clamp_min,
            clamp_max,
        }
    }

    /// Store the local time of the first BlockWrite. A repeated first
    /// event overwrites the stored value (burst restart).
    pub fn on_first_blockwrite(&mut self, cw_now: u64) {
        self.t_f = Some(cw_now);
    }

    /// Consume the last BlockWrite of a burst: compute the estimation
    /// error, apply the integral correction, clamp, and clear `t_f`.
    ///
    /// Returns the per-burst error gamma in real-valued ticks.
    pub fn on_last_blockwrite(&mut self, cw_now: u64) -> Result<f64, SyncError> {
        let t_f = self.t_f.ok_or(SyncError::MissingFirstEvent)?;
        debug_assert!(cw_now >= t_f);
        let elapsed = (cw_now - t_f) as f64;
        let gamma = self.rate_multiplier * elapsed - self.mu_e;
        self.software_elapsed += self.rate_multiplier * elapsed;
        self.rate_multiplier =
            (self.rate_multiplier - self.gain * gamma).clamp(self.clamp_min, self.clamp_max);
        self.t_f = None;
        Ok(gamma)
    }

    /// Software-clock progress for `cw_elapsed` local ticks at the current
    /// rate. Real-valued; the caller quantizes for display.
    pub fn software_now(&self, cw_elapsed: f64) -> f64 {
        self.rate_multiplier * cw_elapsed
    }

    /// Volatile fields lost on power failure; the rate multiplier is the
    /// only part of the state worth persisting.
    pub fn clear_volatile(&mut self) {
        self.t_f = None;
        self.software_elapsed = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regress_exact_linear_data() {
        let window: Vec<(u64, u64)> = (0..8).map(|x| (x, 5 + 2 * x)).collect();
        let (offset, slope) = ls_regress(&window).unwrap();
        assert!((offset - 5.0).abs() < 1e-9);
        assert!((slope - 2.0).abs() < 1e-9);
    }

    #[test]
    fn regress_rejects_repeated_cw() {
        let window = vec![(7, 10), (7, 20), (7, 30)];
        assert_eq!(ls_regress(&window), Err(SyncError::DegenerateWindow));
    }

    #[test]
    fn regress_rejects_single_pair() {
        assert_eq!(ls_regress(&[(1, 2)]), Err(SyncError::DegenerateWindow));
    }

    #[test]
    fn predict_identity_line() {
        let mut st = RegressionState::new(2);
        st.push(0, 0);
        st.push(1, 1);
        assert_eq!(st.predict(100).unwrap(), 100.0);
    }

    #[test]
    fn predict_direct_evaluation() {
        // offset 5, slope 2
        let mut st = RegressionState::new(4);
        st.push(0, 5);
        st.push(1, 7);
        st.push(2, 9);
        assert!((st.predict(7).unwrap() - 19.0).abs() < 1e-9);
    }

    #[test]
    fn predict_unfitted_fails() {
        let st = RegressionState::new(8);
        assert_eq!(st.predict(0), Err(SyncError::NotFitted));
    }

    #[test]
    fn sync_error_sign_convention() {
        assert_eq!(sync_error(100.0, 100.0), 0.0);
        assert_eq!(sync_error(100.0, 90.0), 10.0);
        assert_eq!(sync_error(90.0, 100.0), -10.0);
    }

    #[test]
    fn incremental_matches_batch_refit() {
        let mut st = RegressionState::new(8);
        let pairs: Vec<(u64, u64)> = (0..40u64)
            .map(|k| (1000 + 31 * k, 32_000 + 992 * k + (k * k) % 13))
            .collect();
        for (i, &(cw, cr)) in pairs.iter().enumerate() {
            st.push(cw, cr);
            let lo = (i + 1).saturating_sub(8);
            let batch = ls_regress(&pairs[lo..=i]);
            match batch {
                Ok((o, s)) => {
                    let (io, is) = st.coefficients().unwrap();
                    assert_eq!(o, io);
                    assert_eq!(s, is);
                }
                Err(_) => assert!(!st.is_fitted()),
            }
        }
    }

    #[test]
    fn controller_zero_error_fixed_point() {
        let mut c = ControllerState::new(1e-4, 7086.0, 0.9, 1.1);
        c.on_first_blockwrite(0);
        let gamma = c.on_last_blockwrite(7086).unwrap();
        assert_eq!(gamma, 0.0);
        assert_eq!(c.rate_multiplier, 1.0);
        assert_eq!(c.t_f, None);
    }

    #[test]
    fn controller_single_update() {
        let mut c = ControllerState::new(1e-4, 7086.0, 0.9, 1.1);
        c.on_first_blockwrite(0);
        let gamma = c.on_last_blockwrite(7186).unwrap();
        assert!((gamma - 100.0).abs() < 1e-12);
        assert!((c.rate_multiplier - 0.99).abs() < 1e-12);
    }

    #[test]
    fn controller_converges_to_rate_fixed_point() {
        // Local clock sees 7186 ticks per true period; the fixed point of
        // the update is alpha = mu_e / 7186.
        let mut c = ControllerState::new(1e-4, 7086.0, 0.9, 1.1);
        let mut cw = 0u64;
        let mut last_gamma = f64::INFINITY;
        for k in 0..200 {
            c.on_first_blockwrite(cw);
            cw += 7186;
            last_gamma = c.on_last_blockwrite(cw).unwrap();
            if k > 50 {
                assert!(last_gamma.abs() < 1.0, "burst {k}: gamma {last_gamma}");
            }
        }
        assert!((c.rate_multiplier - 7086.0 / 7186.0).abs() < 1e-6);
        assert!(last_gamma.abs() < 1e-6);
    }

    #[test]
    fn controller_missing_first_event() {
        let mut c = ControllerState::new(1e-4, 7086.0, 0.9, 1.1);
        assert_eq!(c.on_last_blockwrite(100), Err(SyncError::MissingFirstEvent));
    }

    #[test]
    fn controller_duplicate_first_event_restarts_burst() {
        let mut c = ControllerState::new(1e-4, 7086.0, 0.9, 1.1);
        c.on_first_blockwrite(0);
        c.on_first_blockwrite(12345);
        assert_eq!(c.t_f, Some(12345));
    }

    #[test]
    fn software_now_scales_by_rate() {
        let mut c = ControllerState::new(1e-4, 7086.0, 0.4, 1.1);
        assert_eq!(c.software_now(500.0), 500.0);
        c.rate_multiplier = 0.5;
        assert_eq!(c.software_now(100.0), 50.0);
        c.rate_multiplier = 7086.0 / 7186.0;
        assert!((c.software_now(7186.0) - 7086.0).abs() < 1e-9);
    }

    #[test]
    fn convergence_bound_values() {
        assert!((convergence_bound(0.22676, 32_000.0) - 0.000276).abs() < 1e-6);
        assert_eq!(convergence_bound(1.0, 2.0), 1.0);
        assert!((convergence_bound(0.22676, 31_250.0) - 0.0002822).abs() < 1e-6);
    }

    #[test]
    fn rate_multiplier_clamps() {
        let mut c = ControllerState::new(1.0, 7086.0, 0.95, 1.05);
        c.on_first_blockwrite(0);
        // Huge error with gain 1 would push alpha far below the clamp.
        c.on_last_blockwrite(20_000).unwrap();
        assert_eq!(c.rate_multiplier, 0.95);
    }
}
