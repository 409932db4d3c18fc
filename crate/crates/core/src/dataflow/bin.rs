/// Bin boundaries for an extent and a bin-count budget.
///
/// Bin `k` covers `[start + k*step, start + (k+1)*step)`; values are mapped to
/// `k = floor((v - start) / step)` clamped into `0..nbins`, so the maximum of
/// the extent lands in the last bin instead of opening a new one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinLayout {
    pub start: f64,
    pub step: f64,
    pub nbins: u64,
}

const MULTIPLIERS: [f64; 4] = [1.0, 2.0, 5.0, 10.0];

/// `mult * 10^exp`, computed by division for negative exponents so that steps
/// such as 0.2 come out as the nearest double rather than `2 * 0.1`.
fn scaled(mult: f64, exp: i32) -> f64 {
    if exp >= 0 {
        mult * 10f64.powi(exp)
    } else {
        mult / 10f64.powi(-exp)
    }
}

impl BinLayout {
    pub fn new(lo: f64, hi: f64, maxbins: f64) -> BinLayout {
        let m = if maxbins.is_finite() { maxbins.max(1.0) } else { 1.0 };
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut exp = (span / m).log10().floor() as i32;
        let mut idx = 0;
        let mut step = scaled(MULTIPLIERS[idx], exp);
        // smallest nice step whose bin count fits, then keep stepping up the
        // 1-2-5 ladder until the bins aligned to `start` also fit
        loop {
            let start = step * (lo / step).floor();
            let fits_span = (span / step).ceil() <= m;
            let fits_aligned = ((hi - start) / step).ceil() <= m;
            if fits_span && fits_aligned {
                let nbins = (((hi - start) / step).ceil() as u64).max(1);
                return BinLayout { start, step, nbins };
            }
            idx += 1;
            if idx == MULTIPLIERS.len() {
                idx = 1;
                exp += 1;
            }
            step = scaled(MULTIPLIERS[idx], exp);
        }
    }

    /// Index of the bin holding `v`.
    pub fn index(&self, v: f64) -> f64 {
        let k = ((v - self.start) / self.step).floor();
        k.clamp(0.0, (self.nbins - 1) as f64)
    }

    /// `(bin0, bin1)` for `v`.
    pub fn bounds(&self, v: f64) -> (f64, f64) {
        let bin0 = self.start + self.step * self.index(v);
        (bin0, bin0 + self.step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousand_over_ten_bins() {
        let b = BinLayout::new(0.0, 1000.0, 10.0);
        assert_eq!((b.start, b.step, b.nbins), (0.0, 100.0, 10));
        assert_eq!(b.bounds(1000.0), (900.0, 1000.0));
        assert_eq!(b.bounds(0.0), (0.0, 100.0));
        assert_eq!(b.bounds(250.0), (200.0, 300.0));
    }

    #[test]
    fn unaligned_minimum_widens_step() {
        // span 100 fits 10 bins of 10, but starting at 0 needs 11
        let b = BinLayout::new(5.0, 105.0, 10.0);
        assert_eq!(b.step, 20.0);
        assert_eq!(b.start, 0.0);
        assert!(b.nbins <= 10);
    }

    #[test]
    fn degenerate_and_fractional() {
        let b = BinLayout::new(3.0, 3.0, 10.0);
        assert_eq!(b.nbins, 1);
        assert_eq!(b.bounds(3.0).0, b.start);
        let b = BinLayout::new(0.0, 1.0, 5.0);
        assert_eq!(b.step, 0.2);
        assert_eq!(b.nbins, 5);
    }

    #[test]
    fn never_exceeds_maxbins() {
        for &(lo, hi) in &[(-37.5, 912.25), (0.001, 0.0093), (-1e6, 3.0), (17.0, 18.0)] {
            for m in 1..=60 {
                let b = BinLayout::new(lo, hi, m as f64);
                assert!(b.nbins as f64 <= m as f64, "{lo} {hi} {m} -> {b:?}");
                assert!(b.start <= lo);
            }
        }
    }
}
