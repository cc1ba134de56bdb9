//! Kernel scaling benchmark, pipeline throughput and resident-memory probes.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ssd::{causal_ssd_linear, causal_ssd_quadratic, ncssd_forward, ncssd_quadratic, ScanInputs};
use crate::tensor::Tensor;

/// Largest tolerated `‖a − b‖∞ / ‖b‖∞` between the fast and quadratic forms
/// before timing.
pub const AGREEMENT_TOL: f64 = 1e-5;

/// Short kernels are rerun until one sample covers at least this long.
const MIN_SAMPLE: Duration = Duration::from_millis(20);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub length: usize,
    /// Median seconds per call.
    pub ncssd_s: f64,
    pub quadratic_s: f64,
    /// Relative disagreement measured before timing.
    pub ncssd_rel_err: f64,
    pub causal_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub width: usize,
    pub state_dim: usize,
    pub trials: usize,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of ln(time) against ln(L).
    pub ncssd_slope: f64,
    pub quadratic_slope: f64,
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,ncssd_s,quadratic_s,ncssd_rel_err,causal_rel_err\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.9e},{:.9e},{:.3e},{:.3e}",
                r.length, r.ncssd_s, r.quadratic_s, r.ncssd_rel_err, r.causal_rel_err
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "D={} N={} trials={}\n{:>8} {:>14} {:>14} {:>10}\n",
            self.width, self.state_dim, self.trials, "L", "ncssd (ms)", "quadratic (ms)", "ratio"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>8} {:>14.4} {:>14.4} {:>10.1}",
                r.length,
                r.ncssd_s * 1e3,
                r.quadratic_s * 1e3,
                r.quadratic_s / r.ncssd_s
            );
        }
        let _ = writeln!(
            out,
            "log-log slope: ncssd {:.3}, quadratic {:.3}",
            self.ncssd_slope, self.quadratic_slope
        );
        out
    }
}

/// Random f32 scan inputs with transitions in `[0.9, 1.0)` so long decay
/// products stay representable.
pub fn random_scan_f32(l: usize, d: usize, n: usize, seed: u64) -> Result<ScanInputs<f32>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut uni = |shape: Vec<usize>, lo: f32, hi: f32| Tensor::from_fn(shape, |_| rng.random_range(lo..hi));
    let x = uni(vec![l, d], -1.0, 1.0)?;
    let a = uni(vec![l], 0.9, 1.0)?;
    let b = uni(vec![l, n], -1.0, 1.0)?;
    let c = uni(vec![l, n], -1.0, 1.0)?;
    ScanInputs::new(x, a, b, c)
}

fn rel_err(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let diff = a.max_abs_diff(b).map_or(f64::INFINITY, |v| v as f64);
    diff / (b.max_abs() as f64).max(f64::MIN_POSITIVE)
}

/// Median seconds per call of `f` over `trials` samples. Each sample repeats
/// `f` until it spans at least [`MIN_SAMPLE`]; one untimed warm-up call runs
/// first.
pub fn time_median<F: FnMut()>(trials: usize, mut f: F) -> f64 {
    f();
    let start = Instant::now();
    f();
    let once = start.elapsed().max(Duration::from_nanos(1));
    let reps = (MIN_SAMPLE.as_secs_f64() / once.as_secs_f64()).ceil().max(1.0) as usize;
    let mut samples: Vec<f64> = (0..trials.max(1))
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                f();
            }
            t.elapsed().as_secs_f64() / reps as f64
        })
        .collect();
    median(&mut samples)
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Times `ncssd_forward` and `causal_ssd_quadratic` at every length in
/// `lengths` (f32, `d` channels, state size `n`) and fits log-log slopes.
///
/// Before timing each length, checks that `ncssd_forward` agrees with
/// `ncssd_quadratic` and `causal_ssd_linear` with `causal_ssd_quadratic`
/// within [`AGREEMENT_TOL`]; a disagreement aborts with a domain error.
/// Runs on whatever thread pool is current.
pub fn bench_kernels(lengths: &[usize], d: usize, n: usize, trials: usize) -> Result<ScalingReport> {
    if lengths.len() < 2 || lengths.windows(2).any(|w| w[0] >= w[1]) || lengths[0] == 0 {
        return Err(Error::Config(
            "bench lengths must be at least two strictly ascending positive values".into(),
        ));
    }
    let mut rows = Vec::with_capacity(lengths.len());
    for (k, &l) in lengths.iter().enumerate() {
        let s = random_scan_f32(l, d, n, 0x5eed + k as u64)?;
        let nc = ncssd_forward(&s, false)?.y;
        let ncq = ncssd_quadratic(&s, false)?.y;
        let cl = causal_ssd_linear(&s)?.y;
        let cq = causal_ssd_quadratic(&s)?.y;
        let (ncssd_rel_err, causal_rel_err) = (rel_err(&nc, &ncq), rel_err(&cl, &cq));
        if !(ncssd_rel_err < AGREEMENT_TOL && causal_rel_err < AGREEMENT_TOL) {
            return Err(Error::domain(format!(
                "L={l}: kernel forms disagree (ncssd {ncssd_rel_err:.2e}, causal {causal_rel_err:.2e})"
            )));
        }
        let ncssd_s = time_median(trials, || {
            std::hint::black_box(ncssd_forward(std::hint::black_box(&s), false).unwrap());
        });
        let quadratic_s = time_median(trials, || {
            std::hint::black_box(causal_ssd_quadratic(std::hint::black_box(&s)).unwrap());
        });
        rows.push(ScalingRow {
            length: l,
            ncssd_s,
            quadratic_s,
            ncssd_rel_err,
            causal_rel_err,
        });
    }
    let ls: Vec<f64> = rows.iter().map(|r| r.length as f64).collect();
    let nt: Vec<f64> = rows.iter().map(|r| r.ncssd_s).collect();
    let qt: Vec<f64> = rows.iter().map(|r| r.quadratic_s).collect();
    Ok(ScalingReport {
        width: d,
        state_dim: n,
        trials,
        ncssd_slope: loglog_slope(&ls, &nt),
        quadratic_slope: loglog_slope(&ls, &qt),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FpsReport {
    /// Reciprocal of the median timed run.
    pub fps: f64,
    pub median_s: f64,
    /// Excluded from the median.
    pub warmup_s: f64,
    pub runs_s: Vec<f64>,
}

pub const MIN_FPS_RUNS: usize = 5;

/// Runs `f` once as a warm-up, then `runs` timed calls, and reports frames
/// per second from the median timed call. `runs` must be at least
/// [`MIN_FPS_RUNS`].
pub fn measure_fps<F: FnMut() -> Result<()>>(runs: usize, mut f: F) -> Result<FpsReport> {
    if runs < MIN_FPS_RUNS {
        return Err(Error::Config(format!(
            "fps needs at least {MIN_FPS_RUNS} timed runs, got {runs}"
        )));
    }
    let t = Instant::now();
    f()?;
    let warmup_s = t.elapsed().as_secs_f64();
    let mut runs_s = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        f()?;
        runs_s.push(t.elapsed().as_secs_f64());
    }
    let median_s = median(&mut runs_s.clone());
    Ok(FpsReport {
        fps: 1.0 / median_s.max(f64::MIN_POSITIVE),
        median_s,
        warmup_s,
        runs_s,
    })
}

fn status_kb(field: &str) -> Option<u64> {
    let text = std::fs::read_to_string("/proc/self/status").ok()?;
    text.lines()
        .find(|l| l.starts_with(field))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

/// Current resident set in MB, where `/proc/self/status` is available.
pub fn resident_mb() -> Option<f64> {
    status_kb("VmRSS:").map(|kb| kb as f64 / 1024.0)
}

/// Peak resident set in MB since start (or the last reset).
pub fn peak_resident_mb() -> Option<f64> {
    status_kb("VmHWM:").map(|kb| kb as f64 / 1024.0)
}

/// Runs `f` and returns its result with the growth of peak resident memory
/// over the resident size before the call, in MB. The peak mark is reset
/// first where the kernel allows it; otherwise an earlier, higher peak can
/// inflate the figure. `None` when `/proc` is unavailable.
pub fn measure_peak_rss_delta<R>(f: impl FnOnce() -> R) -> (R, Option<f64>) {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
    let before = resident_mb();
    let out = f();
    let delta = match (before, peak_resident_mb()) {
        (Some(b), Some(p)) => Some((p - b).max(0.0)),
        _ => None,
    };
    (out, delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_laws() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn fps_excludes_slow_warmup() {
        let mut calls = 0;
        let r = measure_fps(5, || {
            calls += 1;
            if calls == 1 {
                std::thread::sleep(Duration::from_millis(200));
            } else {
                std::thread::sleep(Duration::from_millis(2));
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 6);
        assert_eq!(r.runs_s.len(), 5);
        assert!(r.warmup_s >= 0.2);
        assert!(r.median_s < 0.1, "{}", r.median_s);
        assert!(measure_fps(4, || Ok(())).is_err());
    }

    #[test]
    fn small_scaling_report() {
        let r = bench_kernels(&[32, 64], 8, 4, 1).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.ncssd_s > 0.0 && row.quadratic_s > 0.0));
        assert_eq!(r.to_csv().lines().count(), 3);
        assert!(r.to_table().contains("slope"));
        assert!(bench_kernels(&[64, 32], 8, 4, 1).is_err());
    }

    #[test]
    fn memory_probe_sees_allocation() {
        let (_, delta) = measure_peak_rss_delta(|| {
            let v = vec![1u8; 64 << 20];
            std::hint::black_box(&v);
            v.iter().map(|&b| b as u64).sum::<u64>()
        });
        if let Some(d) = delta {
            assert!(d >= 0.0);
        }
    }
}
