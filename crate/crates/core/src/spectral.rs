//! Frequency analysis of the seasonal part and top-k period selection.

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Series;

/// The selected frequencies, their periods, and their amplitudes.
///
/// Frequency 1 is always present so the top pyramid level covers the
/// whole window; the remaining slots are filled by amplitude rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSet {
    pub k: usize,
    /// Strictly ascending, each in 1..=ceil(L/2), first always 1.
    pub frequencies: Vec<usize>,
    /// ceil(L / f) per frequency; strictly descending.
    pub periods: Vec<usize>,
    /// Channel-averaged spectrum amplitude at each frequency.
    pub amplitudes: Vec<f64>,
}

impl PeriodSet {
    pub fn level_count(&self) -> usize {
        self.k
    }
}

fn half_spectrum_len(len: usize) -> usize {
    len.div_ceil(2) + 1
}

/// Channel-averaged DFT magnitudes for frequencies 0..=ceil(L/2).
///
/// Index j holds the amplitude of the j-th frequency; only j >= 1 takes
/// part in period selection.
pub fn amplitude_spectrum(x: &Series) -> Result<Vec<f64>> {
    let len = x.len();
    if len < 4 {
        return Err(Error::SeriesTooShort { need: 4, got: len });
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(len);
    let out_len = half_spectrum_len(len);
    let mut amps = vec![0.0; out_len];
    for c in 0..x.channels() {
        let mut buf: Vec<Complex64> = (0..len)
            .map(|t| Complex64::new(x.get(t, c), 0.0))
            .collect();
        fft.process(&mut buf);
        for (j, amp) in amps.iter_mut().enumerate() {
            *amp += buf[j].norm();
        }
    }
    for amp in amps.iter_mut() {
        *amp /= x.channels() as f64;
    }
    Ok(amps)
}

/// Picks the k dominant frequencies from an amplitude spectrum.
///
/// Frequency 1 is forced into the set; the other k-1 slots go to the
/// largest amplitudes among frequencies 2..=ceil(L/2), lower frequency
/// winning ties. Frequencies whose period ceil(L/f) duplicates one
/// already chosen are skipped so periods stay strictly descending.
pub fn select_periods(amplitudes: &[f64], k: usize, len: usize) -> Result<PeriodSet> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    if amplitudes.len() != half_spectrum_len(len) {
        return Err(Error::InvalidArgument(format!(
            "amplitude array of length {} does not match series length {len}",
            amplitudes.len()
        )));
    }
    let max_freq = len.div_ceil(2);
    let mut candidates: Vec<usize> = (2..=max_freq).collect();
    candidates.sort_by(|&a, &b| {
        amplitudes[b]
            .partial_cmp(&amplitudes[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut freqs = vec![1usize];
    let mut periods = vec![len];
    for f in candidates {
        if freqs.len() == k {
            break;
        }
        let p = len.div_ceil(f);
        if periods.contains(&p) {
            continue;
        }
        freqs.push(f);
        periods.push(p);
    }
    if freqs.len() < k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} distinct periods available for length {len}",
            freqs.len()
        )));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&i| freqs[i]);
    let frequencies: Vec<usize> = order.iter().map(|&i| freqs[i]).collect();
    let periods: Vec<usize> = frequencies.iter().map(|&f| len.div_ceil(f)).collect();
    let amps = frequencies.iter().map(|&f| amplitudes[f]).collect();
    Ok(PeriodSet {
        k,
        frequencies,
        periods,
        amplitudes: amps,
    })
}

/// Convenience composition of [`amplitude_spectrum`] and [`select_periods`].
pub fn detect_periods(x: &Series, k: usize) -> Result<PeriodSet> {
    let amps = amplitude_spectrum(x)?;
    select_periods(&amps, k, x.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    /// Direct O(L^2) DFT magnitude oracle, independent of the FFT path.
    fn dft_amplitude_oracle(x: &Series) -> Vec<f64> {
        let len = x.len();
        let out_len = len.div_ceil(2) + 1;
        let mut amps = vec![0.0; out_len];
        for c in 0..x.channels() {
            for (j, amp) in amps.iter_mut().enumerate() {
                let mut re = 0.0;
                let mut im = 0.0;
                for t in 0..len {
                    let angle = -TAU * (j * t) as f64 / len as f64;
                    re += x.get(t, c) * angle.cos();
                    im += x.get(t, c) * angle.sin();
                }
                *amp += (re * re + im * im).sqrt();
            }
        }
        for amp in amps.iter_mut() {
            *amp /= x.channels() as f64;
        }
        amps
    }

    fn tone(len: usize, freq: usize, amp: f64) -> Series {
        Series::from_fn(len, 1, |t, _| amp * (TAU * (freq * t) as f64 / len as f64).sin())
    }

    #[test]
    fn single_tone_peak() {
        let x = tone(64, 4, 1.0);
        let amps = amplitude_spectrum(&x).unwrap();
        let argmax = (1..amps.len()).max_by(|&a, &b| amps[a].partial_cmp(&amps[b]).unwrap());
        assert_eq!(argmax, Some(4));
    }

    #[test]
    fn constant_series_no_nonzero_frequency() {
        let x = Series::from_fn(16, 1, |_, _| 3.5);
        let amps = amplitude_spectrum(&x).unwrap();
        for &a in &amps[1..] {
            assert!(a.abs() < 1e-9);
        }
    }

    #[test]
    fn two_tone_ordering() {
        let len = 64;
        let x = Series::from_fn(len, 1, |t, _| {
            let p = TAU * t as f64 / len as f64;
            2.0 * (2.0 * p).sin() + 1.0 * (8.0 * p).sin()
        });
        let amps = amplitude_spectrum(&x).unwrap();
        for (j, &a) in amps.iter().enumerate().skip(1) {
            if j != 2 && j != 8 {
                assert!(amps[2] > a && amps[8] > a, "leakage at {j}: {a}");
            }
        }
        assert!(amps[2] > amps[8]);
    }

    #[test]
    fn matches_direct_dft_oracle() {
        for len in [7usize, 12, 16, 33] {
            let x = Series::from_fn(len, 2, |t, c| {
                ((t * (c + 2)) as f64 * 0.7).sin() + 0.3 * (t as f64).cos()
            });
            let got = amplitude_spectrum(&x).unwrap();
            let want = dft_amplitude_oracle(&x);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-8, "len {len}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn rejects_short_series() {
        let x = Series::from_fn(3, 1, |t, _| t as f64);
        assert!(amplitude_spectrum(&x).is_err());
    }

    #[test]
    fn select_injects_frequency_one() {
        // spectrum peaking at 4 then 8; frequency 1 has zero amplitude
        let x = Series::from_fn(64, 1, |t, _| {
            let p = TAU * t as f64 / 64.0;
            2.0 * (4.0 * p).sin() + 1.0 * (8.0 * p).sin()
        });
        let amps = amplitude_spectrum(&x).unwrap();
        let ps = select_periods(&amps, 3, 64).unwrap();
        assert_eq!(ps.frequencies, vec![1, 4, 8]);
        assert_eq!(ps.periods, vec![64, 16, 8]);
    }

    #[test]
    fn select_k2_minimal() {
        let x = tone(32, 5, 1.0);
        let ps = detect_periods(&x, 2).unwrap();
        assert_eq!(ps.frequencies, vec![1, 5]);
        assert_eq!(ps.periods, vec![32, 7]);
    }

    #[test]
    fn tie_break_prefers_lower_frequency() {
        let len = 16;
        let mut amps = vec![0.0; len / 2 + 1];
        amps[3] = 1.0;
        amps[6] = 1.0;
        let ps = select_periods(&amps, 2, len).unwrap();
        assert_eq!(ps.frequencies, vec![1, 3]);
    }

    #[test]
    fn skips_duplicate_periods() {
        // for L = 16, f = 6 and f = 7 both give period 3
        let len = 16;
        let mut amps = vec![0.0; len / 2 + 1];
        amps[6] = 3.0;
        amps[7] = 2.0;
        amps[2] = 1.0;
        let ps = select_periods(&amps, 3, len).unwrap();
        assert_eq!(ps.frequencies, vec![1, 2, 6]);
        assert_eq!(ps.periods, vec![16, 8, 3]);
    }

    #[test]
    fn k_exceeding_available_errors() {
        let len = 8;
        let amps = vec![1.0; len / 2 + 1];
        // distinct periods from {2,3,4}: ceil(8/2)=4, ceil(8/3)=3, ceil(8/4)=2 -> 4 total with f=1
        assert!(select_periods(&amps, 4, len).is_ok());
        assert!(select_periods(&amps, 5, len).is_err());
    }

    #[test]
    fn noiseless_tone_recovery_sweep() {
        for len in [16usize, 32, 64] {
            for freq in 2..=len / 4 {
                let ps = detect_periods(&tone(len, freq, 1.0), 2).unwrap();
                assert_eq!(ps.frequencies[1], freq, "len {len} freq {freq}");
            }
        }
    }
}
